#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "core/docmodel.hpp"
#include "core/span_model.hpp"

namespace spanforge {

// Global TP/FP/FN tallies; kept raw so grouped reports stay additive.
struct ConfusionCounts {
    std::int64_t tp = 0;
    std::int64_t fp = 0;
    std::int64_t fn = 0;

    // No gold positives and no predicted positives: conventionally perfect.
    bool degenerate() const { return tp == 0 && fp == 0 && fn == 0; }
    double precision() const;
    double recall() const;
    double f1() const;  // 1.0 when degenerate
};

// Paragraph-level classification with AI as the positive class.
ConfusionCounts f1_ai_counts(std::span<const double> posteriors, std::span<const int> gold_labels,
                             double threshold = 0.5);
double f1_ai(std::span<const double> posteriors, std::span<const int> gold_labels,
             double threshold = 0.5);

// Probability a random positive outscores a random negative (ties 0.5).
// Exact pairwise up to 1e4 points, rank-based beyond.
double auroc(std::span<const double> scores, std::span<const int> labels);

struct SpanMatchMode {
    enum class Kind { Exact, Partial } kind = Kind::Exact;
    double iou_min = 0.5;  // only read for Partial

    static SpanMatchMode exact() { return {Kind::Exact, 0.5}; }
    static SpanMatchMode partial(double iou_min = 0.5) { return {Kind::Partial, iou_min}; }
};

// Span.paragraph must be globally unique per unit; matching never crosses it.
// Partial mode matches greedily in descending IoU order, one-to-one.
ConfusionCounts span_f1_counts(std::span<const Span> pred, std::span<const Span> gold,
                               const SpanMatchMode& mode);
double span_f1(std::span<const Span> pred, std::span<const Span> gold, const SpanMatchMode& mode);

// Expected calibration error over equal-width bins on [0,1]; empty bins skip.
double ece(std::span<const double> confidences, std::span<const int> outcomes, std::int64_t bins = 10);

// Mean squared error between confidence and outcome.
double brier(std::span<const double> confidences, std::span<const int> outcomes);

// One evaluation unit (a paragraph) with its group keys and predictions.
struct EvalRecord {
    std::string unit_id;
    std::string section_role;
    std::string discipline;
    std::string generator;
    std::string intensity;
    int gold_label = 0;
    std::vector<Span> gold_spans;  // paragraph field = globally unique unit index
    double posterior = 0.0;
    std::vector<SpanHypothesis> pred_spans;  // confidence carries q' when calibrated
};

enum class GroupBy { Section, Discipline, Generator, Intensity };
GroupBy group_by_from_name(const std::string& name);
std::string group_by_name(GroupBy g);

struct GroupMetrics {
    std::string group;  // "overall" for the corpus-wide row
    std::int64_t units = 0;
    ConfusionCounts para;          // paragraph classification at 0.5
    std::optional<double> auroc_;  // absent when a group is single-class
    ConfusionCounts span_exact;
    ConfusionCounts span_partial;
    std::optional<double> ece_;  // absent when no spans carry confidence
    std::optional<double> brier_;
};

struct MetricReport {
    GroupMetrics overall;
    std::vector<GroupMetrics> groups;  // sorted by group key
    GroupBy grouped_by = GroupBy::Section;
};

// Span-confidence outcomes: a predicted span counts as correct when it
// passes the partial criterion against the unit's gold spans.
MetricReport breakdown_report(std::span<const EvalRecord> records, GroupBy group_by);

std::string report_json(const MetricReport& report);
std::string report_csv(const MetricReport& report);

}  // namespace spanforge
