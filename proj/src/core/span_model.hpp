#pragma once

#include <span>
#include <vector>

#include "core/autodiff.hpp"
#include "core/docmodel.hpp"

namespace spanforge {

// Tag order everywhere: O=0, B=1, I=2 (matches Tag enum).
inline constexpr double kMaskScore = -1e30;

// Trainable CRF state. The structural mask (no start at I, no O->I) is
// constant and applied additively; it is never part of the parameters.
struct CrfParams {
    numcore::Parameter transitions;  // 3x3, row = from, col = to
    numcore::Parameter start;        // 3

    static CrfParams init();
};

// Mask helpers: return a copy with the forbidden entries pushed to kMaskScore.
numcore::Tensor masked_transitions(const numcore::Tensor& transitions);
numcore::Tensor masked_start(const numcore::Tensor& start);

// ---- value-level lattice ops (decode/eval; caller chooses masking) -----------

double crf_log_partition(const numcore::Tensor& emissions, const numcore::Tensor& transitions,
                         const numcore::Tensor& start);
double crf_gold_score(const numcore::Tensor& emissions, const numcore::Tensor& transitions,
                      const numcore::Tensor& start, const std::vector<Tag>& gold);
// Ties break toward O, then B, then I.
std::vector<Tag> crf_viterbi(const numcore::Tensor& emissions, const numcore::Tensor& transitions,
                             const numcore::Tensor& start);
// (T x 3) posteriors from forward-backward; rows sum to 1.
numcore::Tensor crf_marginals(const numcore::Tensor& emissions, const numcore::Tensor& transitions,
                              const numcore::Tensor& start);

// ---- differentiable training losses (mask always applied) ---------------------

// NLL = logZ - score(gold) over the masked lattice. Gold must satisfy the mask.
numcore::Var crf_nll(numcore::Var emissions, numcore::Var transitions, numcore::Var start,
                     const std::vector<Tag>& gold);

// Differentiable masked marginals (for the consistency penalty); (T x 3).
numcore::Var crf_marginals_graph(numcore::Var emissions, numcore::Var transitions, numcore::Var start);

// ---- pointer boundary heads -----------------------------------------------------

struct PointerParams {
    numcore::Parameter w_start, w_end;  // (d)
    numcore::Parameter b_start, b_end;  // scalars

    static PointerParams init(std::int64_t dim);
};

struct PointerLogits {
    numcore::Var start, end;  // (T) each
};

// logits[t] = w' x_t + b over token representations (T x d).
PointerLogits pointer_logits(numcore::Var tokens, PointerParams& params, numcore::Graph& g);

// Mean-over-token BCE for start indicators plus the same for ends.
numcore::Var pointer_loss(const PointerLogits& logits, const std::vector<Span>& gold_spans);

// Probability-space form (clipped at 1e-12), for callers holding P rather
// than logits. Equal to pointer_loss on matching inputs.
double pointer_loss_value(const numcore::Tensor& p_start, const numcore::Tensor& p_end,
                          const std::vector<Span>& gold_spans);

// ---- joint span scoring and NMS ---------------------------------------------------

struct SpanHypothesis {
    Span span;
    double joint_score = 0.0;
    double crf_evidence = 0.0;  // sum over tokens of log(P_B + P_I)
    double log_p_start = 0.0;
    double log_p_end = 0.0;
    double confidence = 0.0;  // q, set by the calibration stage
    double calibrated = 0.0;  // q', set by the calibration stage
    bool confidence_set = false;
};

struct DecodeConfig {
    double phi = 0.5;           // boundary weight
    double delta_nms = 0.5;     // IoU suppression threshold
    std::int64_t max_span_len = 64;
    std::int64_t max_candidates = 256;
    double min_joint_score = -1e30;  // tuned on validation by the calibrate stage
};

// All spans (b,e) with e-b+1 <= max length, scored
//   sum_t log(P_B(t)+P_I(t)) + phi*(log P_start(b) + log P_end(e)),
// thresholded at min score, sorted by score desc (ties: earlier start, shorter).
std::vector<SpanHypothesis> enumerate_candidates(const numcore::Tensor& marginals,
                                                 const numcore::Tensor& p_start,
                                                 const numcore::Tensor& p_end,
                                                 const DecodeConfig& cfg);

// Greedy suppression at IoU >= delta; input re-sorted with the canonical
// tie-break so equal-score order never depends on caller ordering.
std::vector<SpanHypothesis> nms(std::vector<SpanHypothesis> candidates, double delta_nms);

// Token IoU of two closed intervals.
double span_iou(const Span& a, const Span& b);

}  // namespace spanforge
