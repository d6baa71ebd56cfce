#pragma once

#include <array>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include "core/autodiff.hpp"
#include "core/docmodel.hpp"
#include "core/rng.hpp"

namespace spanforge {

// Source of paragraph/token vectors. Implementations must be deterministic per
// input and keep a fixed dimension for the lifetime of a run.
class EmbeddingProvider {
public:
    virtual ~EmbeddingProvider() = default;
    virtual std::int64_t dim() const = 0;
    // (T x d); T may be zero.
    virtual numcore::Tensor token_vectors(const Document& doc, std::int64_t para) const = 0;
    // (d); zero vector for an empty paragraph (sets the empty-input flag).
    virtual numcore::Tensor paragraph_vector(const Document& doc, std::int64_t para) const = 0;

    bool empty_input_seen() const { return empty_seen_; }

protected:
    void note_empty() const { empty_seen_ = true; }

private:
    mutable bool empty_seen_ = false;
};

// Character-3-gram feature hashing with +-1 signs, L2-normalized per token;
// paragraph vector is the mean of token vectors.
class HashedProvider final : public EmbeddingProvider {
public:
    HashedProvider(std::int64_t d, std::uint64_t seed);
    std::int64_t dim() const override { return d_; }
    numcore::Tensor token_vectors(const Document& doc, std::int64_t para) const override;
    numcore::Tensor paragraph_vector(const Document& doc, std::int64_t para) const override;

    numcore::Tensor token_vector(const std::string& token) const;

private:
    std::int64_t d_;
    std::uint64_t seed_;
};

// Precomputed embeddings loaded from disk (e.g. transformer outputs).
// File format: first line "dim=<d>", then "<doc_id>#<p>\t<d floats>" rows;
// optional token rows keyed "<doc_id>#<p>#<t>".
class ExternalProvider final : public EmbeddingProvider {
public:
    static std::unique_ptr<ExternalProvider> load(const std::string& path);
    std::int64_t dim() const override { return d_; }
    numcore::Tensor token_vectors(const Document& doc, std::int64_t para) const override;
    numcore::Tensor paragraph_vector(const Document& doc, std::int64_t para) const override;

private:
    std::int64_t d_ = 0;
    std::unordered_map<std::string, std::vector<double>> rows_;
    const std::vector<double>& lookup(const std::string& key) const;
};

// Mean of paragraph vectors over the given section members.
numcore::Tensor section_vector(const EmbeddingProvider& provider, const Document& doc,
                               std::span<const std::int64_t> member_paragraphs);

// ---- fusion (weighted combination of current / context / section) ----------

struct FusionWeights {
    numcore::Parameter logits;  // 3 raw logits; weights = softmax(logits)

    static FusionWeights init_default();  // weights start near (0.75, 0.15, 0.10)
    numcore::Var weights(numcore::Graph& g) { return numcore::softmax(g.param(logits)); }
    std::array<double, 3> values() const;  // current weights, for reporting
};

// h_para = w_cur*h_cur + w_ctx*(h_prev + h_next) + w_sec*h_sec.
// Missing neighbors at document boundaries are zero vectors.
numcore::Var fuse(numcore::Var h_cur, numcore::Var h_prev, numcore::Var h_next, numcore::Var h_sec,
                  numcore::Var weights3);

// ---- document graph ----------------------------------------------------------

struct DocGraph {
    std::int64_t node_count = 0;
    std::vector<std::pair<std::int64_t, std::int64_t>> adjacency;     // consecutive paragraphs
    std::vector<std::pair<std::int64_t, std::int64_t>> same_section;  // all intra-section pairs
    // Union of both edge sets plus the self-loop, per node, sorted and unique.
    std::vector<std::vector<std::int64_t>> neighbors;
};

DocGraph build_graph(const Document& doc);

// ---- graph attention encoder ---------------------------------------------------

struct GatConfig {
    std::int64_t layers = 2;
    std::int64_t hidden = 64;
    std::int64_t heads = 1;
    double dropout = 0.1;
    double leaky_slope = 0.2;
};

// One W (d_in x d_head) and one a (2*d_head) per head.
struct GatLayer {
    std::vector<numcore::Parameter*> W;
    std::vector<numcore::Parameter*> a;
};

// Stacked attention layers over the document graph. h_nodes is (N x d_in).
// Attention dropout fires only when training=true (rng required then); the
// self coefficient never drops, so no node is ever fully severed.
numcore::Var graph_encode(numcore::Var h_nodes, const DocGraph& graph, const GatConfig& cfg,
                          std::span<const GatLayer> layers, bool training = false, Rng* rng = nullptr);

}  // namespace spanforge
