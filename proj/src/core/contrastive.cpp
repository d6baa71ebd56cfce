#include "core/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "core/logging.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Tensor;
using numcore::Var;

PrototypeBank::PrototypeBank(std::int64_t dim, double rho, std::int64_t min_support)
    : dim_(dim), rho_(rho), min_support_(min_support) {
    if (dim < 1) throw ContractError("PrototypeBank: dimension must be positive");
    if (rho <= 0.0 || rho > 1.0) throw ValidationError("prototype momentum must be in (0,1]");
    if (min_support < 1) throw ValidationError("prototype min support must be >= 1");
}

bool PrototypeBank::initialized(const std::string& role, int source) const {
    return slots_.count({role, source}) > 0;
}

bool PrototypeBank::pair_ready(const std::string& role) const {
    return initialized(role, 0) && initialized(role, 1);
}

const Tensor& PrototypeBank::centroid(const std::string& role, int source) const {
    auto it = slots_.find({role, source});
    if (it == slots_.end())
        throw ContractError("prototype (" + role + "," + (source ? "ai" : "human") + ") is uninitialized");
    return it->second.centroid;
}

std::int64_t PrototypeBank::absorbed(const std::string& role, int source) const {
    auto it = slots_.find({role, source});
    return it == slots_.end() ? 0 : it->second.absorbed;
}

std::vector<PrototypeBank::Entry> PrototypeBank::entries() const {
    std::vector<Entry> out;
    for (const auto& [key, slot] : slots_) out.push_back({key.first, key.second, slot.centroid, slot.absorbed});
    return out;
}

void PrototypeBank::restore(const Entry& e) {
    if (e.centroid.numel() != dim_) throw ContractError("prototype restore: dimension mismatch");
    slots_[{e.role, e.source}] = Slot{e.centroid, e.absorbed};
}

AnchorPairs pair_sampler(std::span<const GroupTag> batch, std::int64_t negative_cap, Rng& rng) {
    AnchorPairs out;
    auto n = static_cast<std::int64_t>(batch.size());
    for (std::int64_t i = 0; i < n; ++i) {
        std::vector<std::int64_t> peers, negs;
        for (std::int64_t j = 0; j < n; ++j) {
            if (j == i) continue;
            bool same = batch[static_cast<std::size_t>(j)].role == batch[static_cast<std::size_t>(i)].role &&
                        batch[static_cast<std::size_t>(j)].source == batch[static_cast<std::size_t>(i)].source;
            (same ? peers : negs).push_back(j);
        }
        if (peers.empty()) {
            ++out.skipped_no_positive;
            continue;
        }
        if (negs.empty()) {
            ++out.skipped_no_negative;
            continue;
        }
        std::int64_t pos = peers[rng.below(peers.size())];
        if (negative_cap > 0 && static_cast<std::int64_t>(negs.size()) > negative_cap) {
            rng.shuffle(negs);
            negs.resize(static_cast<std::size_t>(negative_cap));
            std::sort(negs.begin(), negs.end());
        }
        out.anchor.push_back(i);
        out.positive.push_back(pos);
        out.negatives.push_back(std::move(negs));
    }
    return out;
}

namespace {

// Cosine similarity as a graph op; rejects zero-norm inputs.
Var cosine(Var a, Var b) {
    Graph& g = *a.graph();
    Var na = numcore::sum_sq(a);
    Var nb = numcore::sum_sq(b);
    if (g.value(na).item() <= 0.0 || g.value(nb).item() <= 0.0)
        throw ContractError("cosine similarity over a zero-norm embedding");
    return numcore::div(numcore::dot(a, b), numcore::mul(numcore::sqrt(na), numcore::sqrt(nb)));
}

Tensor normalized(const Tensor& v) {
    double norm = 0.0;
    for (std::int64_t i = 0; i < v.numel(); ++i) norm += v[i] * v[i];
    norm = std::sqrt(norm);
    Tensor out(v.shape());
    if (norm < 1e-12) return out;  // degenerate input contributes a zero row
    for (std::int64_t i = 0; i < v.numel(); ++i) out[i] = v[i] / norm;
    return out;
}

}  // namespace

Var info_nce(Var anchor, Var positive, std::span<const Var> negatives, double tau, bool with_positive) {
    if (negatives.empty()) throw ContractError("info_nce: needs at least one negative");
    if (tau <= 0.0) throw ValidationError("info_nce: temperature must be positive");
    Graph& g = *anchor.graph();
    Var pos_sim = cosine(anchor, positive);
    std::vector<Var> den_terms;
    if (with_positive) den_terms.push_back(numcore::scale(pos_sim, 1.0 / tau));
    for (const Var& neg : negatives) den_terms.push_back(numcore::scale(cosine(anchor, neg), 1.0 / tau));
    Var den = numcore::logsumexp(numcore::pack(den_terms));
    (void)g;
    return numcore::sub(den, numcore::scale(pos_sim, 1.0 / tau));
}

Var cluster_loss(Var h, const PrototypeBank& bank, const std::string& role, int source, double lambda) {
    Graph& g = *h.graph();
    Var mu = g.constant(bank.centroid(role, source));
    Var mu_other = g.constant(bank.centroid(role, 1 - source));
    Var compact = numcore::sum_sq(numcore::sub(h, mu));
    Var separate = numcore::sum_sq(numcore::sub(mu, mu_other));
    return numcore::sub(compact, numcore::scale(separate, lambda));
}

Var style_loss(Graph& g, std::optional<Var> l_inst, std::optional<Var> l_clu, double alpha) {
    if (!l_inst && !l_clu) {
        logging::warnf("style loss: no valid anchors in batch; contributing 0");
        return g.scalar(0.0);
    }
    if (!l_clu) return *l_inst;
    Var clu = numcore::scale(*l_clu, alpha);
    return l_inst ? numcore::add(*l_inst, clu) : clu;
}

void update_prototypes(PrototypeBank& bank, std::span<const GroupUpdate> groups) {
    for (const GroupUpdate& grp : groups) {
        if (static_cast<std::int64_t>(grp.embeddings.size()) < bank.min_support_) continue;
        Tensor mean = Tensor::zeros({bank.dim_});
        for (const Tensor& e : grp.embeddings) {
            if (e.numel() != bank.dim_) throw ContractError("update_prototypes: embedding dimension mismatch");
            Tensor u = normalized(e);
            for (std::int64_t i = 0; i < bank.dim_; ++i) mean[i] += u[i];
        }
        for (std::int64_t i = 0; i < bank.dim_; ++i) mean[i] /= static_cast<double>(grp.embeddings.size());

        auto key = std::make_pair(grp.role, grp.source);
        auto it = bank.slots_.find(key);
        if (it == bank.slots_.end()) {
            Tensor init = normalized(mean);
            bank.slots_[key] = PrototypeBank::Slot{std::move(init),
                                                   static_cast<std::int64_t>(grp.embeddings.size())};
            continue;
        }
        Tensor& mu = it->second.centroid;
        for (std::int64_t i = 0; i < bank.dim_; ++i)
            mu[i] = (1.0 - bank.rho_) * mu[i] + bank.rho_ * mean[i];
        Tensor renorm = normalized(mu);
        bool degenerate = true;
        for (std::int64_t i = 0; i < bank.dim_; ++i) degenerate = degenerate && renorm[i] == 0.0;
        if (!degenerate) mu = std::move(renorm);  // keep previous direction if EMA collapsed to zero
        it->second.absorbed += static_cast<std::int64_t>(grp.embeddings.size());
    }
}

StyleBatchLoss style_loss_batch(Graph& g, std::span<const StyleBatchItem> batch, const PrototypeBank& bank,
                                const ContrastiveConfig& cfg, Rng& rng) {
    std::vector<GroupTag> tags;
    tags.reserve(batch.size());
    for (const StyleBatchItem& it : batch) tags.push_back(it.tag);
    AnchorPairs pairs = pair_sampler(tags, cfg.negative_cap, rng);

    StyleBatchLoss out;
    out.skipped = pairs.skipped_no_positive + pairs.skipped_no_negative;

    std::optional<Var> l_inst;
    if (!pairs.anchor.empty()) {
        std::vector<Var> terms;
        for (std::size_t k = 0; k < pairs.anchor.size(); ++k) {
            std::vector<Var> negs;
            for (std::int64_t j : pairs.negatives[k]) negs.push_back(batch[static_cast<std::size_t>(j)].h);
            terms.push_back(info_nce(batch[static_cast<std::size_t>(pairs.anchor[k])].h,
                                     batch[static_cast<std::size_t>(pairs.positive[k])].h, negs,
                                     cfg.temperature, cfg.with_positive));
        }
        l_inst = numcore::mean(numcore::pack(terms));
        out.instance_anchors = static_cast<std::int64_t>(terms.size());
    }

    std::optional<Var> l_clu;
    {
        std::vector<Var> terms;
        for (const StyleBatchItem& it : batch) {
            if (!bank.pair_ready(it.tag.role)) continue;
            terms.push_back(cluster_loss(it.h, bank, it.tag.role, it.tag.source, cfg.lambda_sep));
        }
        if (!terms.empty()) {
            l_clu = numcore::mean(numcore::pack(terms));
            out.cluster_anchors = static_cast<std::int64_t>(terms.size());
        }
    }

    out.loss = style_loss(g, l_inst, l_clu, cfg.alpha);
    return out;
}

}  // namespace spanforge
