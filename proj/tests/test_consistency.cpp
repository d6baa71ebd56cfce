#include <cmath>
#include <random>
#include <vector>

#include "core/consistency.hpp"
#include "core/docmodel.hpp"
#include "core/errors.hpp"
#include "core/optimizer.hpp"
#include "core/style_encoder.hpp"
#include "doctest.h"

using namespace spanforge;
using numcore::Graph;
using numcore::Parameter;
using numcore::Tensor;
using numcore::Var;

namespace {

Document two_section_doc() {
    Document d;
    d.id = "doc0";
    d.sections = {Section{"Introduction", 0}, Section{"Methods", 1}};
    for (int p = 0; p < 4; ++p) {
        Paragraph para;
        para.tokens = {"a", "b"};
        para.section_id = p < 2 ? 0 : 1;
        d.paragraphs.push_back(para);
    }
    return d;
}

}  // namespace

TEST_CASE("aggregate agrees across kinds on a constant list") {
    const std::vector<double> pi = {0.7, 0.7, 0.7};
    CHECK(aggregate(pi, AggregatorKind::mean()) == doctest::Approx(0.7));
    CHECK(aggregate(pi, AggregatorKind::max()) == doctest::Approx(0.7));
    CHECK(aggregate(pi, AggregatorKind::topk(2)) == doctest::Approx(0.7));
}

TEST_CASE("aggregate max and topk follow their definitions") {
    CHECK(aggregate(std::vector<double>{0.1, 0.9}, AggregatorKind::max()) == doctest::Approx(0.9));
    // topk(2) of {0.9, 0.5, 0.1}: mean of the two largest.
    CHECK(aggregate(std::vector<double>{0.9, 0.5, 0.1}, AggregatorKind::topk(2)) == doctest::Approx(0.7));
    // k clips to the list length.
    CHECK(aggregate(std::vector<double>{0.2, 0.4}, AggregatorKind::topk(10)) == doctest::Approx(0.3));
}

TEST_CASE("aggregate stays inside the unit interval and rejects empty input") {
    std::mt19937_64 rng(501);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<double> pi(1 + rng() % 7);
        for (double& v : pi) v = u(rng);
        for (const auto& kind : {AggregatorKind::mean(), AggregatorKind::max(), AggregatorKind::topk(2)}) {
            const double a = aggregate(pi, kind);
            CHECK(a >= 0.0);
            CHECK(a <= 1.0);
        }
    }
    CHECK_THROWS_AS(aggregate(std::span<const double>{}, AggregatorKind::mean()), ContractError);
}

TEST_CASE("aggregator parsing round-trips and rejects junk") {
    CHECK(AggregatorKind::parse("mean").kind == AggregatorKind::Kind::Mean);
    CHECK(AggregatorKind::parse("max").kind == AggregatorKind::Kind::Max);
    const AggregatorKind tk = AggregatorKind::parse("topk:3");
    CHECK(tk.kind == AggregatorKind::Kind::TopK);
    CHECK(tk.k == 3);
    CHECK(AggregatorKind::parse("topk:3").name() == "topk:3");
    CHECK(AggregatorKind::parse("mean").name() == "mean");
    CHECK_THROWS_AS(AggregatorKind::parse("median"), ValidationError);
    CHECK_THROWS_AS(AggregatorKind::topk(0), ContractError);
}

TEST_CASE("reconcile interpolates between aggregated evidence and the head") {
    CHECK(reconcile(0.8, 0.4, 0.0) == doctest::Approx(0.4));
    CHECK(reconcile(0.8, 0.4, 1.0) == doctest::Approx(0.8));
    CHECK(reconcile(0.8, 0.4, 0.5) == doctest::Approx(0.6));
    CHECK_THROWS_AS(reconcile(1.2, 0.4, 0.5), ContractError);
    CHECK_THROWS_AS(reconcile(0.8, 0.4, 1.5), ContractError);
}

TEST_CASE("smoothing worked example: two connected nodes meet in the middle") {
    Document d;
    d.id = "pair";
    d.sections = {Section{"Introduction", 0}};
    for (int p = 0; p < 2; ++p) {
        Paragraph para;
        para.tokens = {"x"};
        para.section_id = 0;
        d.paragraphs.push_back(para);
    }
    const DocGraph g = build_graph(d);
    SmoothingConfig cfg;
    cfg.beta = 0.5;
    cfg.iterations = 1;
    const std::vector<double> out = smooth({0.0, 1.0}, g, cfg);
    CHECK(out[0] == doctest::Approx(0.5));
    CHECK(out[1] == doctest::Approx(0.5));
}

TEST_CASE("smoothing with beta zero or zero iterations is the identity") {
    const DocGraph g = build_graph(two_section_doc());
    const std::vector<double> p = {0.1, 0.9, 0.4, 0.7};
    SmoothingConfig zero_beta{0.0, 3};
    CHECK(smooth(p, g, zero_beta) == p);
    SmoothingConfig zero_iter{0.5, 0};
    CHECK(smooth(p, g, zero_iter) == p);
}

TEST_CASE("a constant field is a fixed point of smoothing") {
    const DocGraph g = build_graph(two_section_doc());
    SmoothingConfig cfg{0.3, 4};
    const std::vector<double> out = smooth({0.42, 0.42, 0.42, 0.42}, g, cfg);
    for (double v : out) CHECK(v == doctest::Approx(0.42).epsilon(1e-12));
}

TEST_CASE("smoothing never expands the posterior range") {
    std::mt19937_64 rng(502);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    const DocGraph g = build_graph(two_section_doc());
    for (int rep = 0; rep < 25; ++rep) {
        std::vector<double> p(4);
        for (double& v : p) v = u(rng);
        const double lo = *std::min_element(p.begin(), p.end());
        const double hi = *std::max_element(p.begin(), p.end());
        SmoothingConfig cfg{u(rng) * 0.99, 1 + static_cast<std::int64_t>(rng() % 3)};
        for (double v : smooth(p, g, cfg)) {
            CHECK(v >= lo - 1e-12);
            CHECK(v <= hi + 1e-12);
        }
    }
}

TEST_CASE("smoothing contracts total variation across edges") {
    std::mt19937_64 rng(503);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    // Larger random document: 8 paragraphs across 3 sections.
    Document d;
    d.id = "doc-tv";
    d.sections = {Section{"Introduction", 0}, Section{"Methods", 1}, Section{"Results", 2}};
    for (int p = 0; p < 8; ++p) {
        Paragraph para;
        para.tokens = {"x"};
        para.section_id = p < 3 ? 0 : (p < 5 ? 1 : 2);
        d.paragraphs.push_back(para);
    }
    const DocGraph g = build_graph(d);
    auto tv = [&](const std::vector<double>& p) {
        double s = 0.0;
        for (std::int64_t i = 0; i < g.node_count; ++i)
            for (std::int64_t j : g.neighbors[static_cast<std::size_t>(i)])
                if (j > i) s += std::abs(p[static_cast<std::size_t>(i)] - p[static_cast<std::size_t>(j)]);
        return s;
    };
    for (int rep = 0; rep < 20; ++rep) {
        std::vector<double> p(8);
        for (double& v : p) v = u(rng);
        SmoothingConfig cfg{0.3, 1};
        const std::vector<double> q = smooth(p, g, cfg);
        CHECK(tv(q) <= tv(p) + 1e-9);
    }
}

TEST_CASE("isolated nodes pass through smoothing unchanged") {
    DocGraph g;
    g.node_count = 3;
    g.adjacency = {{0, 1}};
    g.neighbors = {{0, 1}, {0, 1}, {2}};  // node 2 only has its self-loop
    SmoothingConfig cfg{0.5, 2};
    const std::vector<double> out = smooth({0.0, 1.0, 0.33}, g, cfg);
    CHECK(out[2] == doctest::Approx(0.33));
}

TEST_CASE("consistency penalty matches the worked arithmetic") {
    CHECK(consistency_penalty(0.5, 0.5) == doctest::Approx(0.0));
    CHECK(consistency_penalty(1.0, 0.0) == doctest::Approx(1.0));
    CHECK(consistency_penalty(0.8, 0.5) == doctest::Approx(0.09));
    const std::vector<double> a = {0.8, 1.0};
    const std::vector<double> b = {0.5, 0.0};
    CHECK(consistency_penalty(a, b) == doctest::Approx((0.09 + 1.0) / 2.0));
}

TEST_CASE("differentiable consistency penalty matches values and gradients") {
    Tensor pa = Tensor::vector({0.8, 1.0, 0.25});
    Tensor ag = Tensor::vector({0.5, 0.0, 0.25});
    Parameter ppa("pa", pa), pag("ag", ag);
    {
        Graph g;
        Var pen = consistency_penalty_graph(g.param(ppa), g.param(pag));
        const std::vector<double> av = {0.8, 1.0, 0.25};
        const std::vector<double> bv = {0.5, 0.0, 0.25};
        CHECK(pen.val().item() == doctest::Approx(consistency_penalty(av, bv)).epsilon(1e-12));
    }
    std::vector<Parameter*> params = {&ppa, &pag};
    auto loss = [&](bool accumulate) {
        Graph g;
        Var pen = consistency_penalty_graph(g.param(ppa), g.param(pag));
        if (accumulate) g.backward(pen);
        return pen.val().item();
    };
    CHECK(numcore::fd_check(loss, params, 1e-5) < 1e-7);
}

TEST_CASE("paragraph head produces calibrated-shape logistic outputs") {
    ParagraphHead head = ParagraphHead::init(3);
    Tensor h = Tensor::vector({1.0, -2.0, 0.5});
    // Zero weights: probability one half.
    CHECK(paragraph_prob(h, head) == doctest::Approx(0.5));
    head.weight.value[0] = 1.0;
    head.bias.value[0] = -1.0;
    // z = 1*1 - 1 = 0 -> 0.5; then push the bias.
    CHECK(paragraph_prob(h, head) == doctest::Approx(0.5));
    head.bias.value[0] = std::log(3.0);
    // z = 1*1 + ln 3
    CHECK(paragraph_prob(h, head) == doctest::Approx(1.0 / (1.0 + std::exp(-(1.0 + std::log(3.0))))));
}

TEST_CASE("paragraph head logit differentiates and trains to separate labels") {
    // Six paragraph vectors, linearly separable by the first coordinate.
    std::vector<Tensor> hs;
    std::vector<double> ys;
    for (int i = 0; i < 6; ++i) {
        const double x = i < 3 ? -1.0 : 1.0;
        hs.push_back(Tensor::vector({x, 0.3}));
        ys.push_back(i < 3 ? 0.0 : 1.0);
    }
    ParagraphHead head = ParagraphHead::init(2);
    numcore::AdamWConfig acfg;
    acfg.lr = 0.2;
    acfg.weight_decay = 0.0;
    numcore::AdamW opt(acfg);
    std::vector<Parameter*> params = {&head.weight, &head.bias};
    double last = 0.0;
    for (int step = 0; step < 60; ++step) {
        Graph g;
        std::vector<Var> losses;
        for (std::size_t i = 0; i < hs.size(); ++i) {
            Var z = paragraph_logit(g.constant(hs[i]), head, g);
            losses.push_back(numcore::bce_with_logit(z, ys[i]));
        }
        Var loss = numcore::mean(numcore::pack(losses));
        opt.zero_grad(params);
        g.backward(loss);
        opt.step(params);
        last = loss.val().item();
    }
    CHECK(last < 0.15);
    CHECK(paragraph_prob(hs[0], head) < 0.2);
    CHECK(paragraph_prob(hs[5], head) > 0.8);
}

TEST_CASE("consistency ops validate their inputs") {
    CHECK_THROWS_AS(consistency_penalty(1.2, 0.0), ContractError);
    CHECK_THROWS_AS(ParagraphHead::init(0), ContractError);
    DocGraph g;
    g.node_count = 2;
    g.neighbors = {{0, 1}, {0, 1}};
    CHECK_THROWS_AS(smooth({0.5}, g, SmoothingConfig{}), ContractError);
    CHECK_THROWS_AS(smooth({0.5, 0.5}, g, SmoothingConfig{1.0, 1}), ContractError);
}
