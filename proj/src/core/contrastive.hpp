#pragma once

#include <map>
#include <optional>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "core/autodiff.hpp"
#include "core/rng.hpp"

namespace spanforge {

struct ContrastiveConfig {
    double temperature = 0.07;  // tau
    double lambda_sep = 0.5;    // inter-cluster separation weight
    double alpha = 0.5;         // cluster-loss weight inside the style loss
    std::int64_t negative_cap = 32;
    bool with_positive = false;  // denominator mode; false = formula as printed
};

// EMA centroids keyed by (section role, source). Centroids are stored values,
// never graph parameters, so they are structurally gradient-detached.
class PrototypeBank {
public:
    PrototypeBank(std::int64_t dim, double rho = 0.05, std::int64_t min_support = 4);

    std::int64_t dim() const { return dim_; }
    double rho() const { return rho_; }
    std::int64_t min_support() const { return min_support_; }

    bool initialized(const std::string& role, int source) const;
    // Both sources present for this role (cluster_loss precondition).
    bool pair_ready(const std::string& role) const;
    const numcore::Tensor& centroid(const std::string& role, int source) const;
    std::int64_t absorbed(const std::string& role, int source) const;

    // Checkpoint plumbing: deterministic ordering.
    struct Entry {
        std::string role;
        int source;
        numcore::Tensor centroid;
        std::int64_t absorbed;
    };
    std::vector<Entry> entries() const;
    void restore(const Entry& e);

private:
    friend void update_prototypes(PrototypeBank&,
                                  std::span<const struct GroupUpdate>);
    struct Slot {
        numcore::Tensor centroid;
        std::int64_t absorbed = 0;
    };
    std::int64_t dim_;
    double rho_;
    std::int64_t min_support_;
    std::map<std::pair<std::string, int>, Slot> slots_;
};

// ---- pair sampling -----------------------------------------------------------

struct GroupTag {
    std::string role;
    int source = 0;  // 0 human, 1 ai
};

struct AnchorPairs {
    std::vector<std::int64_t> anchor;
    std::vector<std::int64_t> positive;
    std::vector<std::vector<std::int64_t>> negatives;
    std::int64_t skipped_no_positive = 0;
    std::int64_t skipped_no_negative = 0;
};

// Positives share (role, source); negatives differ in role or source.
// Anchors without a positive peer or without negatives are skipped.
AnchorPairs pair_sampler(std::span<const GroupTag> batch, std::int64_t negative_cap, Rng& rng);

// ---- losses --------------------------------------------------------------------

// InfoNCE over cosine similarity. negatives must be non-empty.
numcore::Var info_nce(numcore::Var anchor, numcore::Var positive,
                      std::span<const numcore::Var> negatives, double tau,
                      bool with_positive = false);

// ||h - mu_{c,y}||^2 - lambda * ||mu_{c,y} - mu_{c,y'}||^2 with prototypes as constants.
numcore::Var cluster_loss(numcore::Var h, const PrototypeBank& bank, const std::string& role,
                          int source, double lambda);

// L_style = L_inst + alpha * L_clu; absent parts contribute zero.
numcore::Var style_loss(numcore::Graph& g, std::optional<numcore::Var> l_inst,
                        std::optional<numcore::Var> l_clu, double alpha);

// ---- prototype maintenance -----------------------------------------------------

struct GroupUpdate {
    std::string role;
    int source = 0;
    std::vector<numcore::Tensor> embeddings;
};

// EMA update per Algorithm: groups with >= min_support members move the
// centroid toward the mean of L2-normalized embeddings and renormalize;
// first-time groups initialize to the normalized mean; small groups are inert.
void update_prototypes(PrototypeBank& bank, std::span<const GroupUpdate> groups);

// ---- batch orchestration ---------------------------------------------------------

struct StyleBatchItem {
    numcore::Var h;
    GroupTag tag;
};

struct StyleBatchLoss {
    numcore::Var loss;                  // L_inst + alpha * L_clu (means over valid anchors)
    std::int64_t instance_anchors = 0;  // anchors contributing to L_inst
    std::int64_t cluster_anchors = 0;   // items contributing to L_clu
    std::int64_t skipped = 0;           // anchors without positive or negatives
};

StyleBatchLoss style_loss_batch(numcore::Graph& g, std::span<const StyleBatchItem> batch,
                                const PrototypeBank& bank, const ContrastiveConfig& cfg, Rng& rng);

}  // namespace spanforge
