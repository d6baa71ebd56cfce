#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "core/span_model.hpp"

namespace spanforge {

// Confidence head over a span hypothesis: q = sigma(eta1*crf_evidence +
// eta2*log P_start + eta3*log P_end + intercept). The intercept keeps the
// head expressive: the three evidence terms are all <= 0, so without it q
// could never exceed one half.
struct ConfidenceParams {
    double eta1 = 1.0;
    double eta2 = 1.0;
    double eta3 = 1.0;
    double intercept = 0.0;
};

enum class CalibrationMode {
    Logit,    // q' = sigma(logit(q)/T): standard scaling, identity at T=1
    Literal,  // q' = sigma(ln(q)/T): the published transform, not identity at T=1
};

CalibrationMode calibration_mode_from_name(const std::string& name);
std::string calibration_mode_name(CalibrationMode mode);

struct TemperatureModel {
    double temperature = 1.0;
    CalibrationMode mode = CalibrationMode::Logit;
};

struct RiskCoveragePoint {
    double threshold = 0.0;
    double coverage = 0.0;  // fraction of predictions kept at this threshold
    double risk = 0.0;      // error rate among the kept predictions
};

using RiskCoverageCurve = std::vector<RiskCoveragePoint>;

double span_confidence(const SpanHypothesis& hyp, const ConfidenceParams& params);

// Fit eta and the intercept by minimizing BCE of q against match labels
// (1 iff the hypothesis overlapped a gold span at IoU >= 0.5). Deterministic.
// A single-class label set falls back to eta=(1,1,1) with the intercept set
// to the label base rate, and warns.
ConfidenceParams fit_eta(std::span<const SpanHypothesis> hypotheses, std::span<const int> labels);

double apply_temperature(double q, const TemperatureModel& model);

// Scalar search for T over log T in [-3, 3] minimizing BCE of the scaled
// confidence against outcomes. Needs >= 20 points; a single-class outcome
// set yields T=1 with a warning.
TemperatureModel fit_temperature(std::span<const double> confidences, std::span<const int> outcomes,
                                 CalibrationMode mode);

// One point per unique score threshold (plus threshold 0 = full coverage),
// ascending in threshold; outcome 1 means the prediction was correct.
RiskCoverageCurve risk_coverage(std::span<const double> scores, std::span<const int> outcomes);

// Diagnostics shared with evalkit-driven reports.
struct CalibrationReport {
    CalibrationMode mode = CalibrationMode::Logit;
    double temperature = 1.0;
    ConfidenceParams eta;
    double ece_before = 0.0, ece_after = 0.0;
    double brier_before = 0.0, brier_after = 0.0;
    RiskCoverageCurve curve;
    double span_min_score = -1e30;  // operating threshold chosen on validation
};

std::string calibration_report_json(const CalibrationReport& report);

}  // namespace spanforge
