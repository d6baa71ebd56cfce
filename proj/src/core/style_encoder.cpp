#include "core/style_encoder.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "core/logging.hpp"
#include "core/strings.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Tensor;
using numcore::Var;

namespace {

std::uint64_t mix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

const Paragraph& para_at(const Document& doc, std::int64_t para) {
    if (para < 0 || para >= static_cast<std::int64_t>(doc.paragraphs.size()))
        throw ContractError("paragraph index " + std::to_string(para) + " out of range in document '" + doc.id + "'");
    return doc.paragraphs[static_cast<std::size_t>(para)];
}

}  // namespace

HashedProvider::HashedProvider(std::int64_t d, std::uint64_t seed) : d_(d), seed_(mix64(seed)) {
    if (d < 8) throw ValidationError("hashed embeddings need dimension >= 8, got " + std::to_string(d));
}

Tensor HashedProvider::token_vector(const std::string& token) const {
    Tensor v = Tensor::zeros({d_});
    auto add_gram = [&](const char* p, std::size_t len) {
        std::uint64_t h = mix64(fnv1a64(p, len) ^ seed_);
        auto bucket = static_cast<std::int64_t>(h % static_cast<std::uint64_t>(d_));
        v[bucket] += (h >> 63) ? 1.0 : -1.0;
    };
    if (token.size() < 3) {
        add_gram(token.data(), token.size());
    } else {
        for (std::size_t i = 0; i + 3 <= token.size(); ++i) add_gram(token.data() + i, 3);
    }
    double norm = 0.0;
    for (std::int64_t i = 0; i < d_; ++i) norm += v[i] * v[i];
    if (norm > 0.0) {
        norm = std::sqrt(norm);
        for (std::int64_t i = 0; i < d_; ++i) v[i] /= norm;
    }
    return v;
}

Tensor HashedProvider::token_vectors(const Document& doc, std::int64_t para) const {
    const Paragraph& p = para_at(doc, para);
    Tensor out = Tensor::zeros({p.size(), d_});
    for (std::int64_t t = 0; t < p.size(); ++t) {
        Tensor v = token_vector(p.tokens[static_cast<std::size_t>(t)]);
        for (std::int64_t j = 0; j < d_; ++j) out.at(t, j) = v[j];
    }
    return out;
}

Tensor HashedProvider::paragraph_vector(const Document& doc, std::int64_t para) const {
    const Paragraph& p = para_at(doc, para);
    Tensor pooled = Tensor::zeros({d_});
    if (p.tokens.empty()) {
        note_empty();
        logging::warnf("empty paragraph %lld in document '%s'; using zero embedding",
                       static_cast<long long>(para), doc.id.c_str());
        return pooled;
    }
    Tensor tv = token_vectors(doc, para);
    for (std::int64_t t = 0; t < p.size(); ++t)
        for (std::int64_t j = 0; j < d_; ++j) pooled[j] += tv.at(t, j);
    for (std::int64_t j = 0; j < d_; ++j) pooled[j] /= static_cast<double>(p.size());
    return pooled;
}

std::unique_ptr<ExternalProvider> ExternalProvider::load(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open embedding file '" + path + "'");
    auto provider = std::unique_ptr<ExternalProvider>(new ExternalProvider());
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string_view sv = trim(line);
        if (sv.empty()) continue;
        std::string where = path + ":" + std::to_string(lineno);
        if (lineno == 1) {
            if (!sv.starts_with("dim="))
                throw ValidationError(where + ": embedding file must start with 'dim=<d>'");
            provider->d_ = parse_int(sv.substr(4), where);
            if (provider->d_ < 1) throw ValidationError(where + ": bad dimension");
            continue;
        }
        auto tab = sv.find('\t');
        if (tab == std::string_view::npos)
            throw ValidationError(where + ": expected '<key>\\t<floats>'");
        std::string key(trim(sv.substr(0, tab)));
        std::vector<double> vals;
        for (const std::string& part : split(sv.substr(tab + 1), ' ')) {
            std::string_view t = trim(part);
            if (!t.empty()) vals.push_back(parse_double(t, where));
        }
        if (static_cast<std::int64_t>(vals.size()) != provider->d_)
            throw ValidationError(where + ": row '" + key + "' has " + std::to_string(vals.size()) +
                                  " values, expected " + std::to_string(provider->d_));
        provider->rows_[key] = std::move(vals);
    }
    if (provider->d_ == 0) throw ValidationError(path + ": empty embedding file");
    return provider;
}

const std::vector<double>& ExternalProvider::lookup(const std::string& key) const {
    auto it = rows_.find(key);
    if (it == rows_.end()) throw ValidationError("embedding key '" + key + "' not found");
    return it->second;
}

Tensor ExternalProvider::paragraph_vector(const Document& doc, std::int64_t para) const {
    para_at(doc, para);
    const auto& row = lookup(doc.id + "#" + std::to_string(para));
    return Tensor({d_}, row);
}

Tensor ExternalProvider::token_vectors(const Document& doc, std::int64_t para) const {
    const Paragraph& p = para_at(doc, para);
    Tensor out = Tensor::zeros({p.size(), d_});
    for (std::int64_t t = 0; t < p.size(); ++t) {
        const auto& row = lookup(doc.id + "#" + std::to_string(para) + "#" + std::to_string(t));
        for (std::int64_t j = 0; j < d_; ++j) out.at(t, j) = row[static_cast<std::size_t>(j)];
    }
    return out;
}

Tensor section_vector(const EmbeddingProvider& provider, const Document& doc,
                      std::span<const std::int64_t> member_paragraphs) {
    Tensor acc = Tensor::zeros({provider.dim()});
    if (member_paragraphs.empty()) return acc;
    for (std::int64_t pi : member_paragraphs) {
        Tensor v = provider.paragraph_vector(doc, pi);
        for (std::int64_t j = 0; j < provider.dim(); ++j) acc[j] += v[j];
    }
    for (std::int64_t j = 0; j < provider.dim(); ++j) acc[j] /= static_cast<double>(member_paragraphs.size());
    return acc;
}

FusionWeights FusionWeights::init_default() {
    FusionWeights w;
    w.logits = numcore::Parameter(
        "fusion_logits", Tensor::vector({std::log(0.75), std::log(0.15), std::log(0.10)}));
    return w;
}

std::array<double, 3> FusionWeights::values() const {
    double mx = std::max({logits.value[0], logits.value[1], logits.value[2]});
    std::array<double, 3> w{};
    double z = 0.0;
    for (int i = 0; i < 3; ++i) {
        w[static_cast<std::size_t>(i)] = std::exp(logits.value[i] - mx);
        z += w[static_cast<std::size_t>(i)];
    }
    for (auto& x : w) x /= z;
    return w;
}

Var fuse(Var h_cur, Var h_prev, Var h_next, Var h_sec, Var weights3) {
    Graph& g = *h_cur.graph();
    const Tensor& c = g.value(h_cur);
    if (!c.same_shape(g.value(h_prev)) || !c.same_shape(g.value(h_next)) || !c.same_shape(g.value(h_sec)))
        throw ContractError("fuse: mismatched vector dimensions");
    if (g.value(weights3).numel() != 3) throw ContractError("fuse: weights must have 3 components");
    Var w_cur = numcore::gather(weights3, {0});
    Var w_ctx = numcore::gather(weights3, {1});
    Var w_sec = numcore::gather(weights3, {2});
    Var ctx = numcore::add(h_prev, h_next);
    return numcore::add(numcore::add(numcore::smul(w_cur, h_cur), numcore::smul(w_ctx, ctx)),
                        numcore::smul(w_sec, h_sec));
}

DocGraph build_graph(const Document& doc) {
    DocGraph g;
    g.node_count = static_cast<std::int64_t>(doc.paragraphs.size());
    g.neighbors.assign(static_cast<std::size_t>(g.node_count), {});
    for (std::int64_t i = 0; i + 1 < g.node_count; ++i) g.adjacency.push_back({i, i + 1});
    for (std::int64_t i = 0; i < g.node_count; ++i)
        for (std::int64_t j = i + 1; j < g.node_count; ++j)
            if (doc.paragraphs[static_cast<std::size_t>(i)].section_id ==
                doc.paragraphs[static_cast<std::size_t>(j)].section_id)
                g.same_section.push_back({i, j});
    for (std::int64_t i = 0; i < g.node_count; ++i) g.neighbors[static_cast<std::size_t>(i)].push_back(i);
    auto link = [&](std::int64_t a, std::int64_t b) {
        g.neighbors[static_cast<std::size_t>(a)].push_back(b);
        g.neighbors[static_cast<std::size_t>(b)].push_back(a);
    };
    for (auto [a, b] : g.adjacency) link(a, b);
    for (auto [a, b] : g.same_section) link(a, b);
    for (auto& nb : g.neighbors) {
        std::sort(nb.begin(), nb.end());
        nb.erase(std::unique(nb.begin(), nb.end()), nb.end());
    }
    return g;
}

Var graph_encode(Var h_nodes, const DocGraph& graph, const GatConfig& cfg,
                 std::span<const GatLayer> layers, bool training, Rng* rng) {
    Graph& g = *h_nodes.graph();
    const Tensor& h0 = g.value(h_nodes);
    if (h0.rank() != 2 || h0.rows() != graph.node_count)
        throw ContractError("graph_encode: expected one row per graph node");
    if (static_cast<std::int64_t>(layers.size()) != cfg.layers)
        throw ContractError("graph_encode: layer parameter count mismatch");
    if (cfg.hidden % cfg.heads != 0) throw ContractError("graph_encode: hidden must divide by heads");
    if (training && cfg.dropout > 0.0 && rng == nullptr)
        throw ContractError("graph_encode: training with dropout needs an rng");
    for (std::int64_t i = 0; i < graph.node_count; ++i) {
        const auto& nb = graph.neighbors[static_cast<std::size_t>(i)];
        if (!std::binary_search(nb.begin(), nb.end(), i))
            throw ContractError("graph_encode: node " + std::to_string(i) + " lacks a self-loop");
    }

    const std::int64_t dh = cfg.hidden / cfg.heads;
    Var H = h_nodes;
    for (std::int64_t l = 0; l < cfg.layers; ++l) {
        const GatLayer& lp = layers[static_cast<std::size_t>(l)];
        if (static_cast<std::int64_t>(lp.W.size()) != cfg.heads ||
            static_cast<std::int64_t>(lp.a.size()) != cfg.heads)
            throw ContractError("graph_encode: head parameter count mismatch at layer " + std::to_string(l));
        Var layer_out;  // (N x hidden), heads concatenated
        for (std::int64_t head = 0; head < cfg.heads; ++head) {
            Var W = g.param(*lp.W[static_cast<std::size_t>(head)]);
            Var a = g.param(*lp.a[static_cast<std::size_t>(head)]);
            if (g.value(a).numel() != 2 * dh)
                throw ContractError("graph_encode: attention vector must have length 2*hidden/heads");
            Var Wh = numcore::matmul(H, W);  // (N x dh)
            std::vector<std::int64_t> lo(static_cast<std::size_t>(dh)), hi(static_cast<std::size_t>(dh));
            for (std::int64_t j = 0; j < dh; ++j) {
                lo[static_cast<std::size_t>(j)] = j;
                hi[static_cast<std::size_t>(j)] = dh + j;
            }
            Var s1 = numcore::matmul(Wh, numcore::gather(a, lo));  // (N)
            Var s2 = numcore::matmul(Wh, numcore::gather(a, hi));  // (N)

            std::vector<Var> node_rows;
            node_rows.reserve(static_cast<std::size_t>(graph.node_count));
            for (std::int64_t i = 0; i < graph.node_count; ++i) {
                const auto& nb = graph.neighbors[static_cast<std::size_t>(i)];
                Var scores = numcore::sadd(numcore::gather(s1, {i}), numcore::gather(s2, nb));
                Var att = numcore::softmax(numcore::leaky_relu(scores, cfg.leaky_slope));
                if (training && cfg.dropout > 0.0) {
                    // The self coefficient is exempt: a fully severed node
                    // would emit an exactly-zero row (elu(0)=0), which the
                    // contrastive cosine rejects. Kept edges stay unbiased
                    // via inverse scaling; self needs none (never dropped).
                    Tensor mask = Tensor::zeros({static_cast<std::int64_t>(nb.size())});
                    for (std::int64_t k = 0; k < mask.numel(); ++k)
                        mask[k] = nb[static_cast<std::size_t>(k)] == i
                                      ? 1.0
                                      : (rng->bernoulli(cfg.dropout) ? 0.0 : 1.0 / (1.0 - cfg.dropout));
                    att = numcore::mul(att, g.constant(std::move(mask)));
                }
                node_rows.push_back(numcore::elu(numcore::matmul(att, numcore::rows(Wh, nb))));
            }
            Var head_out = numcore::stack_rows(node_rows);  // (N x dh)
            layer_out = head == 0 ? head_out : numcore::hconcat(layer_out, head_out);
        }
        H = layer_out;
    }
    return H;
}

}  // namespace spanforge
