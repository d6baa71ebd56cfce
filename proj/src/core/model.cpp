#include "core/model.hpp"

#include <algorithm>
#include <cmath>

#include "core/errors.hpp"
#include "core/logging.hpp"

namespace spanforge {

using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

void ModelConfig::validate() const {
    if (embed_dim < 8) throw ValidationError("model: embed_dim must be >= 8");
    if (hidden < 1) throw ValidationError("model: hidden must be >= 1");
    if (gat_layers < 1) throw ValidationError("model: gat_layers must be >= 1");
    if (gat_heads < 1) throw ValidationError("model: gat_heads must be >= 1");
    if (hidden % gat_heads != 0) throw ValidationError("model: hidden must divide by gat_heads");
    if (gat_dropout < 0.0 || gat_dropout >= 1.0)
        throw ValidationError("model: gat_dropout must lie in [0,1)");
    if (zeta < 0.0) throw ValidationError("model: zeta must be non-negative");
    if (gamma < 0.0 || gamma > 1.0) throw ValidationError("model: gamma must lie in [0,1]");
    if (proto_rho <= 0.0 || proto_rho > 1.0) throw ValidationError("model: proto_rho must lie in (0,1]");
    if (proto_min_support < 1) throw ValidationError("model: proto_min_support must be >= 1");
    if (contrastive.temperature <= 0.0) throw ValidationError("model: temperature must be positive");
}

namespace {

Tensor normal_matrix(Rng& rng, std::int64_t rows, std::int64_t cols, double scale) {
    Tensor t = Tensor::zeros({rows, cols});
    for (std::int64_t i = 0; i < rows * cols; ++i) t[i] = scale * rng.normal();
    return t;
}

Tensor normal_vector(Rng& rng, std::int64_t n, double scale) {
    Tensor t = Tensor::zeros({n});
    for (std::int64_t i = 0; i < n; ++i) t[i] = scale * rng.normal();
    return t;
}

}  // namespace

DetectorModel::DetectorModel(ModelConfig cfg, Rng init_rng)
    : cfg_(cfg),
      provider_(std::make_unique<HashedProvider>(cfg.embed_dim, cfg.hash_seed)),
      fusion_(FusionWeights::init_default()),
      emit_w_("emit.w", Tensor::zeros({cfg.token_feat_dim(), 3})),
      crf_(CrfParams::init()),
      pointer_(PointerParams::init(cfg.token_feat_dim())),
      phead_(ParagraphHead::init(cfg.styled_dim())),
      bank_(cfg.styled_dim(), cfg.proto_rho, cfg.proto_min_support) {
    cfg_.validate();
    const std::int64_t head_dim = cfg_.hidden / cfg_.gat_heads;
    std::int64_t in_dim = cfg_.embed_dim;
    for (std::int64_t l = 0; l < cfg_.gat_layers; ++l) {
        GatLayer layer;
        for (std::int64_t h = 0; h < cfg_.gat_heads; ++h) {
            const std::string base = "gat." + std::to_string(l) + "." + std::to_string(h);
            const double w_scale = 1.0 / std::sqrt(static_cast<double>(in_dim));
            gat_store_.emplace_back(base + ".W", normal_matrix(init_rng, in_dim, head_dim, w_scale));
            layer.W.push_back(&gat_store_.back());
            gat_store_.emplace_back(base + ".a", normal_vector(init_rng, 2 * head_dim, 0.1));
            layer.a.push_back(&gat_store_.back());
        }
        gat_.push_back(std::move(layer));
        in_dim = cfg_.hidden;
    }
    emit_w_.value = normal_matrix(init_rng, cfg_.token_feat_dim(), 3, 0.05);
}

void DetectorModel::set_provider(std::unique_ptr<EmbeddingProvider> p) {
    if (!p) throw ContractError("set_provider: null provider");
    if (p->dim() != cfg_.embed_dim)
        throw ValidationError("embedding provider dim " + std::to_string(p->dim()) +
                              " does not match configured embed_dim " +
                              std::to_string(cfg_.embed_dim));
    provider_ = std::move(p);
}

std::vector<Parameter*> DetectorModel::trainable(bool include_phead) {
    std::vector<Parameter*> out = {&fusion_.logits, &emit_w_, &crf_.transitions, &crf_.start,
                                   &pointer_.w_start, &pointer_.w_end, &pointer_.b_start,
                                   &pointer_.b_end};
    if (cfg_.use_graph)
        for (Parameter& p : gat_store_) out.push_back(&p);
    if (include_phead) {
        out.push_back(&phead_.weight);
        out.push_back(&phead_.bias);
    }
    return out;
}

std::vector<Parameter*> DetectorModel::named_parameters() {
    std::vector<Parameter*> out = trainable(true);
    if (!cfg_.use_graph)
        for (Parameter& p : gat_store_) out.push_back(&p);
    std::sort(out.begin(), out.end(),
              [](const Parameter* a, const Parameter* b) { return a->name < b->name; });
    return out;
}

DocumentEncoding encode_document(DetectorModel& model, const Document& doc, Graph& g, bool training,
                                 Rng* dropout_rng) {
    const std::int64_t P = static_cast<std::int64_t>(doc.paragraphs.size());
    if (P == 0) throw ValidationError("encode_document: document '" + doc.id + "' has no paragraphs");

    const EmbeddingProvider& prov = model.provider();
    std::vector<Var> para_vecs(static_cast<std::size_t>(P));
    for (std::int64_t p = 0; p < P; ++p)
        para_vecs[static_cast<std::size_t>(p)] = g.constant(prov.paragraph_vector(doc, p));

    // Per-section mean vectors, one per section id.
    std::vector<std::vector<std::int64_t>> members(doc.sections.size());
    for (std::int64_t p = 0; p < P; ++p)
        members[static_cast<std::size_t>(doc.paragraphs[static_cast<std::size_t>(p)].section_id)]
            .push_back(p);
    std::vector<Var> sec_vecs(doc.sections.size());
    for (std::size_t s = 0; s < doc.sections.size(); ++s) {
        sec_vecs[s] = members[s].empty() ? g.constant(Tensor::zeros({model.config().embed_dim}))
                                         : g.constant(section_vector(prov, doc, members[s]));
    }

    Var weights = model.fusion().weights(g);
    Var zero = g.constant(Tensor::zeros({model.config().embed_dim}));
    std::vector<Var> fused_rows;
    fused_rows.reserve(static_cast<std::size_t>(P));
    for (std::int64_t p = 0; p < P; ++p) {
        Var prev = p > 0 ? para_vecs[static_cast<std::size_t>(p - 1)] : zero;
        Var next = p + 1 < P ? para_vecs[static_cast<std::size_t>(p + 1)] : zero;
        const std::size_t sid = static_cast<std::size_t>(
            doc.paragraphs[static_cast<std::size_t>(p)].section_id);
        fused_rows.push_back(fuse(para_vecs[static_cast<std::size_t>(p)], prev, next, sec_vecs[sid],
                                  weights));
    }

    DocumentEncoding enc;
    enc.graph = build_graph(doc);
    enc.fused = numcore::stack_rows(fused_rows);
    if (model.config().use_graph) {
        GatConfig gcfg;
        gcfg.layers = model.config().gat_layers;
        gcfg.hidden = model.config().hidden;
        gcfg.heads = model.config().gat_heads;
        gcfg.dropout = model.config().gat_dropout;
        gcfg.leaky_slope = model.config().leaky_slope;
        enc.styled = graph_encode(enc.fused, enc.graph, gcfg, model.gat(), training, dropout_rng);
    } else {
        enc.styled = enc.fused;
    }
    return enc;
}

Var token_features(DetectorModel& model, const Document& doc, const DocumentEncoding& enc,
                   std::int64_t para, Graph& g) {
    if (para < 0 || para >= static_cast<std::int64_t>(doc.paragraphs.size()))
        throw ContractError("token_features: paragraph index out of range");
    const Tensor toks = model.provider().token_vectors(doc, para);
    if (toks.rows() == 0) throw ContractError("token_features: empty paragraph");
    const std::int64_t T = toks.rows(), d = toks.cols();
    Tensor prev = Tensor::zeros({T, d});
    Tensor next = Tensor::zeros({T, d});
    for (std::int64_t t = 0; t < T; ++t) {
        for (std::int64_t j = 0; j < d; ++j) {
            if (t > 0) prev.at(t, j) = toks.at(t - 1, j);
            if (t + 1 < T) next.at(t, j) = toks.at(t + 1, j);
        }
    }
    Var styled_row = numcore::row(enc.styled, para);
    Var window = numcore::hconcat(numcore::hconcat(g.constant(toks), g.constant(std::move(prev))),
                                  g.constant(std::move(next)));
    return numcore::hconcat(window, numcore::tile_rows(styled_row, toks.rows()));
}

DocumentDecode decode_document(DetectorModel& model, const Document& doc, const DecodeConfig& dcfg,
                               const ConfidenceParams* confidence,
                               const TemperatureModel* temperature) {
    validate_document(doc);
    Graph g;
    DocumentEncoding enc = encode_document(model, doc, g, /*training=*/false, nullptr);

    const Tensor trans_m = masked_transitions(model.crf().transitions.value);
    const Tensor start_m = masked_start(model.crf().start.value);

    DocumentDecode out;
    out.doc_id = doc.id;
    const std::int64_t P = static_cast<std::int64_t>(doc.paragraphs.size());
    std::vector<double> reconciled(static_cast<std::size_t>(P), 0.0);
    for (std::int64_t p = 0; p < P; ++p) {
        ParagraphDecode pd;
        const Tensor styled_row = numcore::row(enc.styled, p).val();
        pd.p_ai = paragraph_prob(styled_row, model.phead());

        const Paragraph& para = doc.paragraphs[static_cast<std::size_t>(p)];
        if (para.tokens.empty()) {
            logging::warnf("decode: skipping empty paragraph %lld of document '%s'",
                           static_cast<long long>(p), doc.id.c_str());
            pd.skipped_empty = true;
            pd.p_agg = pd.p_ai;  // no token evidence to aggregate
        } else {
            Var feats = token_features(model, doc, enc, p, g);
            const Tensor emissions = numcore::matmul(feats, g.param(model.emit_w())).val();
            const Tensor marg = crf_marginals(emissions, trans_m, start_m);

            PointerLogits lg = pointer_logits(feats, model.pointer(), g);
            const Tensor p_start = numcore::sigmoid(lg.start).val();
            const Tensor p_end = numcore::sigmoid(lg.end).val();

            std::vector<double> pi(static_cast<std::size_t>(marg.rows()));
            for (std::int64_t t = 0; t < marg.rows(); ++t)
                pi[static_cast<std::size_t>(t)] = marg.at(t, 1) + marg.at(t, 2);
            pd.p_agg = aggregate(pi, model.config().aggregator);

            std::vector<SpanHypothesis> cands = enumerate_candidates(marg, p_start, p_end, dcfg);
            cands = nms(std::move(cands), dcfg.delta_nms);
            // Emitted spans must be disjoint within a paragraph; NMS only
            // bounds IoU, so drop any survivor that still touches a keeper.
            std::vector<SpanHypothesis> disjoint;
            for (const SpanHypothesis& h : cands) {
                bool clash = false;
                for (const SpanHypothesis& k : disjoint)
                    if (h.span.begin <= k.span.end && k.span.begin <= h.span.end) clash = true;
                if (!clash) disjoint.push_back(h);
            }
            cands = std::move(disjoint);
            for (SpanHypothesis& h : cands) {
                h.span.paragraph = p;
                if (confidence) {
                    h.confidence = span_confidence(h, *confidence);
                    h.calibrated =
                        temperature ? apply_temperature(h.confidence, *temperature) : h.confidence;
                    h.confidence_set = true;
                }
            }
            std::sort(cands.begin(), cands.end(), [](const SpanHypothesis& a, const SpanHypothesis& b) {
                if (a.span.begin != b.span.begin) return a.span.begin < b.span.begin;
                return a.span.end < b.span.end;
            });
            pd.spans = std::move(cands);
        }
        pd.p_reconciled = reconcile(pd.p_ai, pd.p_agg, model.config().gamma);
        reconciled[static_cast<std::size_t>(p)] = pd.p_reconciled;
        out.paragraphs.push_back(std::move(pd));
    }

    const std::vector<double> smoothed = smooth(reconciled, enc.graph, model.config().smoothing);
    for (std::int64_t p = 0; p < P; ++p)
        out.paragraphs[static_cast<std::size_t>(p)].p_smoothed = smoothed[static_cast<std::size_t>(p)];
    return out;
}

}  // namespace spanforge
