#include <algorithm>
#include <cmath>
#include <set>

#include "core/corpus_gen.hpp"
#include "core/model.hpp"
#include "doctest.h"

using namespace spanforge;
using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

namespace {

Document two_section_doc() {
    Document doc;
    doc.id = "doc-a";
    doc.sections = {{"Introduction", 0}, {"Methods", 1}};
    Paragraph p0;
    p0.tokens = {"the", "quick", "brown", "fox", "jumps"};
    p0.section_id = 0;
    p0.gold_spans = {{0, 1, 3}};
    Paragraph p1;
    p1.tokens = {"over", "a", "lazy", "dog", "again", "today"};
    p1.section_id = 0;
    Paragraph p2;
    p2.tokens = {"we", "measure", "latency", "now"};
    p2.section_id = 1;
    p2.gold_spans = {{2, 0, 2}};
    doc.paragraphs = {p0, p1, p2};
    doc.meta = {"cs", "alpha", "Light", "{}"};
    return doc;
}

ModelConfig small_cfg() {
    ModelConfig cfg;
    cfg.embed_dim = 8;
    cfg.hidden = 8;
    cfg.gat_layers = 1;
    cfg.gat_heads = 1;
    return cfg;
}

}  // namespace

TEST_CASE("model config validation") {
    ModelConfig cfg = small_cfg();
    CHECK_NOTHROW(cfg.validate());
    SUBCASE("embed too small") {
        cfg.embed_dim = 4;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("heads must divide hidden") {
        cfg.hidden = 9;
        cfg.gat_heads = 2;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("dropout range") {
        cfg.gat_dropout = 1.0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("gamma range") {
        cfg.gamma = 1.5;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
    SUBCASE("rho range") {
        cfg.proto_rho = 0.0;
        CHECK_THROWS_AS(cfg.validate(), ValidationError);
    }
}

TEST_CASE("parameter registry is sorted, complete and respects the phead split") {
    DetectorModel model(small_cfg(), Rng(7));
    auto params = model.named_parameters();
    std::vector<std::string> names;
    for (Parameter* p : params) names.push_back(p->name);
    CHECK(std::is_sorted(names.begin(), names.end()));
    CHECK(std::set<std::string>(names.begin(), names.end()).size() == names.size());
    auto has = [&](const std::string& n) {
        return std::find(names.begin(), names.end(), n) != names.end();
    };
    CHECK(has("fusion_logits"));
    CHECK(has("gat.0.0.W"));
    CHECK(has("gat.0.0.a"));
    CHECK(has("emit.w"));
    CHECK(has("crf.transitions"));
    CHECK(has("crf.start"));
    CHECK(has("ptr.w_start"));
    CHECK(has("ptr.b_end"));
    CHECK(has("phead.weight"));
    CHECK(has("phead.bias"));

    auto main_only = model.trainable(false);
    for (Parameter* p : main_only) {
        CHECK(p->name != "phead.weight");
        CHECK(p->name != "phead.bias");
    }
    CHECK(model.trainable(true).size() == main_only.size() + 2);
}

TEST_CASE("graph ablation keeps attention parameters out of the optimizer") {
    ModelConfig cfg = small_cfg();
    cfg.use_graph = false;
    cfg.embed_dim = 12;
    cfg.hidden = 8;  // ignored when bypassed
    CHECK(cfg.styled_dim() == 12);
    CHECK(cfg.token_feat_dim() == 48);
    DetectorModel model(cfg, Rng(7));
    for (Parameter* p : model.trainable(true)) CHECK(p->name.substr(0, 4) != "gat.");
    // Checkpoints still carry them so the tensor table shape is config-stable.
    bool any_gat = false;
    for (Parameter* p : model.named_parameters()) any_gat |= p->name.substr(0, 4) == "gat.";
    CHECK(any_gat);
}

TEST_CASE("encode_document shapes and bypass equivalence") {
    Document doc = two_section_doc();

    ModelConfig cfg = small_cfg();
    DetectorModel model(cfg, Rng(7));
    Graph g;
    DocumentEncoding enc = encode_document(model, doc, g, false, nullptr);
    CHECK(enc.fused.val().dim(0) == 3);
    CHECK(enc.fused.val().dim(1) == cfg.embed_dim);
    CHECK(enc.styled.val().dim(0) == 3);
    CHECK(enc.styled.val().dim(1) == cfg.styled_dim());
    CHECK(enc.graph.node_count == 3);

    ModelConfig flat = cfg;
    flat.use_graph = false;
    DetectorModel bypass(flat, Rng(7));
    Graph g2;
    DocumentEncoding enc2 = encode_document(bypass, doc, g2, false, nullptr);
    for (std::int64_t i = 0; i < enc2.fused.val().numel(); ++i)
        CHECK(enc2.styled.val()[i] == doctest::Approx(enc2.fused.val()[i]).epsilon(1e-15));
}

TEST_CASE("token features lay out current, neighbor and styled blocks") {
    Document doc = two_section_doc();
    ModelConfig cfg = small_cfg();
    DetectorModel model(cfg, Rng(7));
    Graph g;
    DocumentEncoding enc = encode_document(model, doc, g, false, nullptr);
    Var feats = token_features(model, doc, enc, 0, g);
    CHECK(feats.val().dim(0) == 5);
    CHECK(feats.val().dim(1) == 3 * cfg.embed_dim + cfg.styled_dim());
    Tensor raw = model.provider().token_vectors(doc, 0);
    const std::int64_t E = cfg.embed_dim;
    for (std::int64_t t = 0; t < 5; ++t) {
        for (std::int64_t j = 0; j < E; ++j) {
            CHECK(feats.val().at(t, j) == doctest::Approx(raw.at(t, j)).epsilon(1e-15));
            double want_prev = t > 0 ? raw.at(t - 1, j) : 0.0;
            double want_next = t + 1 < 5 ? raw.at(t + 1, j) : 0.0;
            CHECK(feats.val().at(t, E + j) == doctest::Approx(want_prev).epsilon(1e-15));
            CHECK(feats.val().at(t, 2 * E + j) == doctest::Approx(want_next).epsilon(1e-15));
        }
        for (std::int64_t j = 0; j < cfg.styled_dim(); ++j)
            CHECK(feats.val().at(t, 3 * E + j) ==
                  doctest::Approx(enc.styled.val().at(0, j)).epsilon(1e-15));
    }
}

TEST_CASE("encode gradients reach fusion and attention parameters") {
    Document doc = two_section_doc();
    DetectorModel model(small_cfg(), Rng(7));
    Graph g;
    DocumentEncoding enc = encode_document(model, doc, g, false, nullptr);
    g.backward(numcore::sum_sq(enc.styled));
    double fusion_norm = 0.0;
    for (std::int64_t i = 0; i < model.fusion().logits.grad.numel(); ++i)
        fusion_norm += std::abs(model.fusion().logits.grad[i]);
    CHECK(fusion_norm > 0.0);
    double gat_norm = 0.0;
    for (Parameter* p : model.named_parameters())
        if (p->name.substr(0, 4) == "gat.")
            for (std::int64_t i = 0; i < p->grad.numel(); ++i) gat_norm += std::abs(p->grad[i]);
    CHECK(gat_norm > 0.0);
}

TEST_CASE("decode_document invariants on a synthetic corpus") {
    CorpusConfig cc;
    cc.doc_count = 4;
    cc.paragraphs_min = 3;
    cc.paragraphs_max = 5;
    cc.tokens_min = 10;
    cc.tokens_max = 18;
    cc.rng_seed = 11;
    Corpus corpus = synth_corpus(cc);

    DetectorModel model(small_cfg(), Rng(3));
    DecodeConfig dcfg;
    dcfg.min_joint_score = -1e9;  // keep some spans with an untrained model

    for (const Document& doc : corpus) {
        DocumentDecode dec = decode_document(model, doc, dcfg, nullptr, nullptr);
        CHECK(dec.doc_id == doc.id);
        REQUIRE(dec.paragraphs.size() == doc.paragraphs.size());
        for (std::size_t p = 0; p < dec.paragraphs.size(); ++p) {
            const ParagraphDecode& pd = dec.paragraphs[p];
            CHECK(pd.p_ai >= 0.0);
            CHECK(pd.p_ai <= 1.0);
            CHECK(pd.p_agg >= 0.0);
            CHECK(pd.p_agg <= 1.0);
            double lo = std::min(pd.p_ai, pd.p_agg), hi = std::max(pd.p_ai, pd.p_agg);
            CHECK(pd.p_reconciled >= lo - 1e-12);
            CHECK(pd.p_reconciled <= hi + 1e-12);
            CHECK(pd.p_smoothed >= 0.0);
            CHECK(pd.p_smoothed <= 1.0);
            std::int64_t T = doc.paragraphs[p].size();
            std::int64_t prev_end = -1;
            for (const SpanHypothesis& h : pd.spans) {
                CHECK(h.span.paragraph == static_cast<std::int64_t>(p));
                CHECK(h.span.begin >= 0);
                CHECK(h.span.begin <= h.span.end);
                CHECK(h.span.end < T);
                CHECK(h.span.begin > prev_end);  // sorted and disjoint
                prev_end = h.span.end;
                CHECK_FALSE(h.confidence_set);
            }
        }
    }
}

TEST_CASE("decode is deterministic and confidence stages are opt-in") {
    Document doc = two_section_doc();
    DetectorModel model(small_cfg(), Rng(3));
    DecodeConfig dcfg;
    dcfg.min_joint_score = -1e9;

    DocumentDecode a = decode_document(model, doc, dcfg, nullptr, nullptr);
    DocumentDecode b = decode_document(model, doc, dcfg, nullptr, nullptr);
    REQUIRE(a.paragraphs.size() == b.paragraphs.size());
    bool any_span = false;
    for (std::size_t p = 0; p < a.paragraphs.size(); ++p) {
        CHECK(a.paragraphs[p].p_smoothed == b.paragraphs[p].p_smoothed);
        REQUIRE(a.paragraphs[p].spans.size() == b.paragraphs[p].spans.size());
        for (std::size_t i = 0; i < a.paragraphs[p].spans.size(); ++i) {
            any_span = true;
            CHECK(a.paragraphs[p].spans[i].span == b.paragraphs[p].spans[i].span);
            CHECK(a.paragraphs[p].spans[i].joint_score == b.paragraphs[p].spans[i].joint_score);
        }
    }
    CHECK(any_span);

    ConfidenceParams eta;
    TemperatureModel temp;
    temp.temperature = 2.0;
    DocumentDecode c = decode_document(model, doc, dcfg, &eta, &temp);
    for (const ParagraphDecode& pd : c.paragraphs)
        for (const SpanHypothesis& h : pd.spans) {
            CHECK(h.confidence_set);
            CHECK(h.confidence > 0.0);
            CHECK(h.confidence < 1.0);
            CHECK(h.calibrated > 0.0);
            CHECK(h.calibrated < 1.0);
            CHECK(h.calibrated != h.confidence);  // T=2 moves every interior q
        }
}

TEST_CASE("decode skips empty paragraphs but still scores them") {
    Document doc = two_section_doc();
    Paragraph empty;
    empty.tokens = {};
    empty.section_id = 1;
    doc.paragraphs.push_back(empty);
    validate_document(doc);

    DetectorModel model(small_cfg(), Rng(3));
    DocumentDecode dec = decode_document(model, doc, DecodeConfig{}, nullptr, nullptr);
    REQUIRE(dec.paragraphs.size() == 4);
    const ParagraphDecode& pd = dec.paragraphs[3];
    CHECK(pd.skipped_empty);
    CHECK(pd.spans.empty());
    CHECK(pd.p_agg == doctest::Approx(pd.p_ai));
    CHECK(pd.p_smoothed >= 0.0);
    CHECK(pd.p_smoothed <= 1.0);
}

TEST_CASE("provider swap is dimension checked") {
    DetectorModel model(small_cfg(), Rng(3));
    CHECK_THROWS_AS(model.set_provider(std::make_unique<HashedProvider>(16, 1)), ValidationError);
    CHECK_NOTHROW(model.set_provider(std::make_unique<HashedProvider>(8, 1)));
}
