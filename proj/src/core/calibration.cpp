#include "core/calibration.hpp"

#include <algorithm>
#include <cmath>

#include "core/autodiff.hpp"
#include "core/errors.hpp"
#include "core/logging.hpp"
#include "core/optimizer.hpp"
#include "core/strings.hpp"
#include "json.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;
using ordered_json = nlohmann::ordered_json;

namespace {

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double bce(double q, int outcome) {
    const double p = std::min(1.0 - 1e-12, std::max(1e-12, q));
    return outcome ? -std::log(p) : -std::log(1.0 - p);
}

}  // namespace

CalibrationMode calibration_mode_from_name(const std::string& name) {
    if (name == "logit") return CalibrationMode::Logit;
    if (name == "literal") return CalibrationMode::Literal;
    throw ValidationError("unknown calibration mode '" + name + "' (expected logit or literal)");
}

std::string calibration_mode_name(CalibrationMode mode) {
    return mode == CalibrationMode::Logit ? "logit" : "literal";
}

double span_confidence(const SpanHypothesis& hyp, const ConfidenceParams& params) {
    if (!std::isfinite(params.eta1) || !std::isfinite(params.eta2) || !std::isfinite(params.eta3) ||
        !std::isfinite(params.intercept))
        throw ContractError("span_confidence: non-finite confidence parameters");
    return logistic(params.eta1 * hyp.crf_evidence + params.eta2 * hyp.log_p_start +
                    params.eta3 * hyp.log_p_end + params.intercept);
}

ConfidenceParams fit_eta(std::span<const SpanHypothesis> hypotheses, std::span<const int> labels) {
    if (hypotheses.size() != labels.size())
        throw ContractError("fit_eta: hypothesis and label counts differ");
    if (hypotheses.empty()) throw ValidationError("fit_eta: no validation hypotheses");

    std::size_t positives = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("fit_eta: labels must be 0 or 1");
        positives += static_cast<std::size_t>(y);
    }
    if (positives == 0 || positives == labels.size()) {
        const double rate = static_cast<double>(positives) / static_cast<double>(labels.size());
        const double clipped = std::min(1.0 - 1e-6, std::max(1e-6, rate));
        logging::warnf("fit_eta: single-class validation labels (rate %.3f); using unit weights",
                       rate);
        return ConfidenceParams{1.0, 1.0, 1.0, std::log(clipped / (1.0 - clipped))};
    }

    Parameter w("eta.w", Tensor::vector({1.0, 1.0, 1.0}));
    Parameter b("eta.b", Tensor::scalar(0.0));
    std::vector<Parameter*> params = {&w, &b};
    numcore::AdamWConfig acfg;
    acfg.lr = 0.05;
    acfg.weight_decay = 0.0;
    numcore::AdamW opt(acfg);

    Tensor feats = Tensor::zeros({static_cast<std::int64_t>(hypotheses.size()), 3});
    for (std::size_t i = 0; i < hypotheses.size(); ++i) {
        feats.at(static_cast<std::int64_t>(i), 0) = hypotheses[i].crf_evidence;
        feats.at(static_cast<std::int64_t>(i), 1) = hypotheses[i].log_p_start;
        feats.at(static_cast<std::int64_t>(i), 2) = hypotheses[i].log_p_end;
    }

    for (int step = 0; step < 400; ++step) {
        Graph g;
        Var z = numcore::sadd(g.param(b), numcore::matmul(g.constant(feats), g.param(w)));
        std::vector<Var> losses;
        losses.reserve(hypotheses.size());
        for (std::size_t i = 0; i < hypotheses.size(); ++i) {
            Var zi = numcore::sum(numcore::gather(z, {static_cast<std::int64_t>(i)}));
            losses.push_back(numcore::bce_with_logit(zi, static_cast<double>(labels[i])));
        }
        Var loss = numcore::mean(numcore::pack(losses));
        opt.zero_grad(params);
        g.backward(loss);
        opt.step(params);
    }
    return ConfidenceParams{w.value[0], w.value[1], w.value[2], b.value[0]};
}

double apply_temperature(double q, const TemperatureModel& model) {
    if (!(q > 0.0 && q < 1.0))
        throw ContractError("apply_temperature: q must lie strictly inside (0,1), got " +
                            format_double(q));
    if (!(model.temperature > 0.0)) throw ContractError("apply_temperature: T must be positive");
    if (model.mode == CalibrationMode::Logit)
        return logistic(std::log(q / (1.0 - q)) / model.temperature);
    return logistic(std::log(q) / model.temperature);
}

TemperatureModel fit_temperature(std::span<const double> confidences, std::span<const int> outcomes,
                                 CalibrationMode mode) {
    if (confidences.size() != outcomes.size())
        throw ContractError("fit_temperature: confidence and outcome counts differ");
    if (confidences.size() < 20)
        throw ValidationError("fit_temperature: needs at least 20 validation points, got " +
                              std::to_string(confidences.size()));
    std::size_t positives = 0;
    for (int y : outcomes) {
        if (y != 0 && y != 1) throw ContractError("fit_temperature: outcomes must be 0 or 1");
        positives += static_cast<std::size_t>(y);
    }
    if (positives == 0 || positives == outcomes.size()) {
        logging::warnf("fit_temperature: single-class outcomes; keeping T=1");
        return TemperatureModel{1.0, mode};
    }

    auto objective = [&](double log_t) {
        TemperatureModel m{std::exp(log_t), mode};
        double s = 0.0;
        for (std::size_t i = 0; i < confidences.size(); ++i)
            s += bce(apply_temperature(confidences[i], m), outcomes[i]);
        return s / static_cast<double>(confidences.size());
    };

    // Coarse grid, then ternary refinement inside the best bracket.
    const int grid = 61;
    double best_lt = 0.0, best_val = std::numeric_limits<double>::infinity();
    for (int i = 0; i < grid; ++i) {
        const double lt = -3.0 + 6.0 * static_cast<double>(i) / static_cast<double>(grid - 1);
        const double v = objective(lt);
        if (v < best_val) {
            best_val = v;
            best_lt = lt;
        }
    }
    double lo = std::max(-3.0, best_lt - 0.1), hi = std::min(3.0, best_lt + 0.1);
    for (int it = 0; it < 60; ++it) {
        const double m1 = lo + (hi - lo) / 3.0, m2 = hi - (hi - lo) / 3.0;
        if (objective(m1) <= objective(m2))
            hi = m2;
        else
            lo = m1;
    }
    return TemperatureModel{std::exp(0.5 * (lo + hi)), mode};
}

RiskCoverageCurve risk_coverage(std::span<const double> scores, std::span<const int> outcomes) {
    if (scores.empty()) throw ValidationError("risk_coverage: empty input");
    if (scores.size() != outcomes.size())
        throw ContractError("risk_coverage: score and outcome counts differ");
    for (int y : outcomes)
        if (y != 0 && y != 1) throw ContractError("risk_coverage: outcomes must be 0 or 1");

    std::vector<double> thresholds(scores.begin(), scores.end());
    std::sort(thresholds.begin(), thresholds.end());
    thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
    if (thresholds.empty() || thresholds.front() > 0.0) thresholds.insert(thresholds.begin(), 0.0);

    RiskCoverageCurve curve;
    curve.reserve(thresholds.size());
    const double n = static_cast<double>(scores.size());
    for (double thr : thresholds) {
        std::size_t covered = 0, wrong = 0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (scores[i] >= thr) {
                ++covered;
                wrong += static_cast<std::size_t>(outcomes[i] == 0);
            }
        }
        RiskCoveragePoint pt;
        pt.threshold = thr;
        pt.coverage = static_cast<double>(covered) / n;
        pt.risk = covered == 0 ? 0.0 : static_cast<double>(wrong) / static_cast<double>(covered);
        curve.push_back(pt);
    }
    return curve;
}

std::string calibration_report_json(const CalibrationReport& report) {
    ordered_json j;
    j["mode"] = calibration_mode_name(report.mode);
    j["T"] = report.temperature;
    j["eta"] = {report.eta.eta1, report.eta.eta2, report.eta.eta3};
    j["intercept"] = report.eta.intercept;
    j["ece_before"] = report.ece_before;
    j["ece_after"] = report.ece_after;
    j["brier_before"] = report.brier_before;
    j["brier_after"] = report.brier_after;
    j["span_min_score"] = report.span_min_score;
    j["curve"] = ordered_json::array();
    for (const RiskCoveragePoint& pt : report.curve) {
        ordered_json p;
        p["threshold"] = pt.threshold;
        p["coverage"] = pt.coverage;
        p["risk"] = pt.risk;
        j["curve"].push_back(p);
    }
    return j.dump();
}

}  // namespace spanforge
