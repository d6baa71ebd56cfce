#pragma once

#include <span>
#include <string>
#include <vector>

#include "core/autodiff.hpp"
#include "core/style_encoder.hpp"

namespace spanforge {

// Logistic head mapping a fused paragraph vector to P_ai, the probability
// that the paragraph contains machine-written text.
struct ParagraphHead {
    numcore::Parameter weight;  // (d)
    numcore::Parameter bias;    // scalar

    static ParagraphHead init(std::int64_t dim);
};

// logit = w' h + b for one paragraph vector (d).
numcore::Var paragraph_logit(numcore::Var h_para, ParagraphHead& head, numcore::Graph& g);

// Value-level P_ai for decode paths that do not need gradients.
double paragraph_prob(const numcore::Tensor& h_para, const ParagraphHead& head);

struct AggregatorKind {
    enum class Kind { Mean, Max, TopK } kind = Kind::Mean;
    std::int64_t k = 1;  // only read for TopK

    static AggregatorKind mean() { return {Kind::Mean, 1}; }
    static AggregatorKind max() { return {Kind::Max, 1}; }
    static AggregatorKind topk(std::int64_t k);
    // "mean" | "max" | "topk:K"
    static AggregatorKind parse(const std::string& text);
    std::string name() const;
};

struct SmoothingConfig {
    double beta = 0.3;
    std::int64_t iterations = 1;
};

// Collapse per-token inside-probabilities to one paragraph score.
// TopK averages the k largest values, with k clipped to the list length.
double aggregate(std::span<const double> pi, const AggregatorKind& kind);

// Convex fusion of the paragraph head with the aggregated token evidence:
// (1-gamma)*aggregated + gamma*p_ai.
double reconcile(double p_ai, double aggregated, double gamma);

// Per iteration: p_i <- (1-beta)*p_i + beta*mean over graph neighbors,
// self excluded. Isolated nodes pass through unchanged.
std::vector<double> smooth(std::vector<double> posteriors, const DocGraph& graph,
                           const SmoothingConfig& cfg);

// Squared paragraph-token disagreement, averaged when batched.
double consistency_penalty(double p_ai, double aggregated);
double consistency_penalty(std::span<const double> p_ai, std::span<const double> aggregated);

// Differentiable batched form over two equal-length 1-D vectors.
numcore::Var consistency_penalty_graph(numcore::Var p_ai, numcore::Var aggregated);

}  // namespace spanforge
