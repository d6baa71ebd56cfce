#include "core/consistency.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"
#include "core/strings.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

ParagraphHead ParagraphHead::init(std::int64_t dim) {
    if (dim < 1) throw ContractError("ParagraphHead::init: dim must be positive");
    return ParagraphHead{Parameter("phead.weight", Tensor::zeros({dim})),
                         Parameter("phead.bias", Tensor::scalar(0.0))};
}

Var paragraph_logit(Var h_para, ParagraphHead& head, Graph& g) {
    if (h_para.val().rank() != 1) throw ContractError("paragraph_logit: expected a 1-D paragraph vector");
    if (h_para.val().dim(0) != head.weight.value.dim(0))
        throw ContractError("paragraph_logit: vector dim " + std::to_string(h_para.val().dim(0)) +
                            " does not match head dim " + std::to_string(head.weight.value.dim(0)));
    return numcore::add(numcore::dot(h_para, g.param(head.weight)), g.param(head.bias));
}

double paragraph_prob(const Tensor& h_para, const ParagraphHead& head) {
    if (h_para.rank() != 1 || h_para.dim(0) != head.weight.value.dim(0))
        throw ContractError("paragraph_prob: vector shape does not match the head");
    double z = head.bias.value[0];
    for (std::int64_t i = 0; i < h_para.dim(0); ++i) z += h_para[i] * head.weight.value[i];
    return 1.0 / (1.0 + std::exp(-z));
}

AggregatorKind AggregatorKind::topk(std::int64_t k) {
    if (k < 1) throw ContractError("AggregatorKind::topk: k must be >= 1");
    return {Kind::TopK, k};
}

AggregatorKind AggregatorKind::parse(const std::string& text) {
    if (text == "mean") return mean();
    if (text == "max") return max();
    if (text.rfind("topk:", 0) == 0)
        return topk(parse_int(text.substr(5), "aggregator k"));
    throw ValidationError("unknown aggregator '" + text + "' (expected mean, max, or topk:K)");
}

std::string AggregatorKind::name() const {
    switch (kind) {
        case Kind::Mean: return "mean";
        case Kind::Max: return "max";
        case Kind::TopK: return "topk:" + std::to_string(k);
    }
    throw ContractError("AggregatorKind::name: unreachable");
}

double aggregate(std::span<const double> pi, const AggregatorKind& kind) {
    if (pi.empty()) throw ContractError("aggregate: empty probability list");
    switch (kind.kind) {
        case AggregatorKind::Kind::Mean: {
            double s = 0.0;
            for (double v : pi) s += v;
            return s / static_cast<double>(pi.size());
        }
        case AggregatorKind::Kind::Max:
            return *std::max_element(pi.begin(), pi.end());
        case AggregatorKind::Kind::TopK: {
            const std::size_t k = std::min<std::size_t>(static_cast<std::size_t>(kind.k), pi.size());
            std::vector<double> v(pi.begin(), pi.end());
            std::partial_sort(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end(),
                              std::greater<double>());
            double s = 0.0;
            for (std::size_t i = 0; i < k; ++i) s += v[i];
            return s / static_cast<double>(k);
        }
    }
    throw ContractError("aggregate: unreachable");
}

double reconcile(double p_ai, double aggregated, double gamma) {
    if (gamma < 0.0 || gamma > 1.0) throw ContractError("reconcile: gamma must lie in [0,1]");
    if (p_ai < 0.0 || p_ai > 1.0 || aggregated < 0.0 || aggregated > 1.0)
        throw ContractError("reconcile: inputs must lie in [0,1]");
    return (1.0 - gamma) * aggregated + gamma * p_ai;
}

std::vector<double> smooth(std::vector<double> posteriors, const DocGraph& graph,
                           const SmoothingConfig& cfg) {
    if (cfg.beta < 0.0 || cfg.beta >= 1.0) throw ContractError("smooth: beta must lie in [0,1)");
    if (cfg.iterations < 0) throw ContractError("smooth: iterations must be >= 0");
    if (static_cast<std::int64_t>(posteriors.size()) != graph.node_count)
        throw ContractError("smooth: got " + std::to_string(posteriors.size()) + " posteriors for " +
                            std::to_string(graph.node_count) + " nodes");
    std::vector<double> next(posteriors.size());
    for (std::int64_t it = 0; it < cfg.iterations; ++it) {
        for (std::size_t i = 0; i < posteriors.size(); ++i) {
            double s = 0.0;
            std::int64_t n = 0;
            for (std::int64_t j : graph.neighbors[i]) {
                if (j == static_cast<std::int64_t>(i)) continue;  // self-loop excluded here
                s += posteriors[static_cast<std::size_t>(j)];
                ++n;
            }
            next[i] = n == 0 ? posteriors[i]
                             : (1.0 - cfg.beta) * posteriors[i] + cfg.beta * s / static_cast<double>(n);
        }
        posteriors.swap(next);
    }
    return posteriors;
}

double consistency_penalty(double p_ai, double aggregated) {
    if (p_ai < 0.0 || p_ai > 1.0 || aggregated < 0.0 || aggregated > 1.0)
        throw ContractError("consistency_penalty: inputs must lie in [0,1]");
    const double d = p_ai - aggregated;
    return d * d;
}

double consistency_penalty(std::span<const double> p_ai, std::span<const double> aggregated) {
    if (p_ai.size() != aggregated.size() || p_ai.empty())
        throw ContractError("consistency_penalty: batch sizes differ or are empty");
    double s = 0.0;
    for (std::size_t i = 0; i < p_ai.size(); ++i) s += consistency_penalty(p_ai[i], aggregated[i]);
    return s / static_cast<double>(p_ai.size());
}

Var consistency_penalty_graph(Var p_ai, Var aggregated) {
    if (p_ai.val().rank() != 1 || aggregated.val().rank() != 1 ||
        p_ai.val().dim(0) != aggregated.val().dim(0) || p_ai.val().dim(0) < 1)
        throw ContractError("consistency_penalty_graph: expected equal-length 1-D inputs");
    Var d = numcore::sub(p_ai, aggregated);
    return numcore::mean(numcore::mul(d, d));
}

}  // namespace spanforge
