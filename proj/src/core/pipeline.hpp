#pragma once

#include <optional>
#include <string>
#include <vector>

#include "core/corpus_gen.hpp"
#include "core/evalkit.hpp"
#include "core/trainer.hpp"

namespace spanforge {

// Resolved settings for one run: master seed fanned out to corpus generation,
// parameter init and batching, plus the trainer/model/decode knobs and the
// stage-level options. Flat key=value text, unknown keys rejected.
struct RunConfig {
    std::uint64_t seed = 1234;
    TrainConfig trainer;
    CorpusConfig gen;
    std::string split_scheme = "random:0.8,0.1";
    CalibrationMode cal_mode = CalibrationMode::Logit;
    GroupBy group_by = GroupBy::Section;

    void validate() const;
    bool apply_key(const std::string& key, const std::string& value);
    std::string canonical_text() const;
    static RunConfig from_text(const std::string& text);
    static RunConfig from_file(const std::string& path);
};

// ---- annotations -------------------------------------------------------------

struct AnnotationSpan {
    std::int64_t paragraph = 0;
    std::int64_t begin = 0, end = 0;
    double joint_score = 0.0;
    std::optional<double> q;        // confidence (eta head)
    std::optional<double> q_prime;  // temperature-scaled; only after calibration
};

struct AnnotationParagraph {
    std::int64_t paragraph = 0;
    double p_ai = 0.0, p_agg = 0.0, p_reconciled = 0.0, p_smoothed = 0.0;
};

struct DocAnnotations {
    std::string doc;
    std::vector<AnnotationParagraph> paragraphs;  // one per paragraph, in order
    std::vector<AnnotationSpan> spans;            // sorted by (paragraph, begin)
};

using AnnotationSet = std::vector<DocAnnotations>;

AnnotationSet annotations_from_decodes(std::span<const DocumentDecode> decodes, bool calibrated);
// JSONL: per document, one paragraph record then that paragraph's span
// records; stable field order; byte-identical across runs.
void write_annotations(const std::string& path, const AnnotationSet& annotations);
AnnotationSet read_annotations(const std::string& path);

// ---- evaluation plumbing --------------------------------------------------------

// Joins gold paragraphs with annotations by document id (corpus order).
// Every labeled paragraph becomes one EvalRecord; paragraph indices are
// remapped to globally unique unit ids so span matching never crosses units.
std::vector<EvalRecord> eval_records(const Corpus& docs, const AnnotationSet& annotations);

// Confidence/outcome pairs over all annotated spans (q' when present, else q);
// outcome = partial overlap (IoU >= 0.5) with a gold span of the same unit.
void span_outcomes(const Corpus& docs, const AnnotationSet& annotations,
                   std::vector<double>& confidences, std::vector<int>& outcomes);

// ---- stages ------------------------------------------------------------------------

// Named split of the generated corpus: "train", "val", "test" or "all".
Corpus select_split(const Corpus& full, const RunConfig& rc, const std::string& split_name);

Corpus stage_gen(const RunConfig& rc);

TrainResult stage_train(const RunConfig& rc, const Corpus& full);

// Fits eta + temperature on the validation split of `full` and picks the
// joint-score operating threshold by sweeping validation span F1 (partial).
CalibrationReport stage_calibrate(const RunConfig& rc, const Corpus& full, const Checkpoint& best);

CalibrationReport load_calibration(const std::string& path);

struct DetectResult {
    Corpus docs;  // the decoded split, in output order
    std::vector<DocumentDecode> decodes;
    AnnotationSet annotations;
};

// Decodes a split with optional calibration; q is always emitted (default
// eta when uncalibrated), q' only when `cal` is present. Spans below the
// calibrated operating threshold are dropped.
DetectResult stage_detect(const RunConfig& rc, const Corpus& full, const std::string& split_name,
                          const Checkpoint& ckpt, const CalibrationReport* cal);

MetricReport stage_eval(const Corpus& docs, const AnnotationSet& annotations, GroupBy group_by);

// Plot-ready selective-prediction table from annotated span confidences.
RiskCoverageCurve stage_risk_coverage(const Corpus& docs, const AnnotationSet& annotations);
std::string risk_coverage_csv(const RiskCoverageCurve& curve);

}  // namespace spanforge
