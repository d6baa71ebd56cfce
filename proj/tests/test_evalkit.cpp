#include <cmath>
#include <random>
#include <vector>

#include "core/calibration.hpp"
#include "core/errors.hpp"
#include "core/evalkit.hpp"
#include "doctest.h"
#include "json.hpp"

using namespace spanforge;

TEST_CASE("paragraph F1 on hand confusion matrices") {
    // Perfect predictions.
    const std::vector<double> perfect = {0.9, 0.1, 0.8, 0.2};
    const std::vector<int> gold = {1, 0, 1, 0};
    CHECK(f1_ai(perfect, gold) == doctest::Approx(1.0));

    // TP=2, FP=1, FN=1 -> P=R=2/3 -> F1=2/3.
    const std::vector<double> mixed = {0.9, 0.8, 0.7, 0.1};
    const std::vector<int> gold2 = {1, 1, 0, 1};
    const ConfusionCounts c = f1_ai_counts(mixed, gold2, 0.5);
    CHECK(c.tp == 2);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
    CHECK(c.f1() == doctest::Approx(2.0 / 3.0));

    // Nothing predicted positive while positives exist.
    const std::vector<double> timid = {0.1, 0.2, 0.3};
    const std::vector<int> gold3 = {1, 1, 0};
    CHECK(f1_ai(timid, gold3) == doctest::Approx(0.0));
}

TEST_CASE("degenerate F1 (no positives anywhere) reports one with a flag") {
    const std::vector<double> p = {0.1, 0.2};
    const std::vector<int> gold = {0, 0};
    const ConfusionCounts c = f1_ai_counts(p, gold, 0.5);
    CHECK(c.degenerate());
    CHECK(c.f1() == doctest::Approx(1.0));
}

TEST_CASE("f1_ai validates inputs") {
    CHECK_THROWS_AS(f1_ai(std::vector<double>{0.5}, std::vector<int>{1, 0}), ContractError);
    CHECK_THROWS_AS(f1_ai(std::vector<double>{0.5}, std::vector<int>{1}, 1.5), ContractError);
    CHECK_THROWS_AS(f1_ai(std::vector<double>{0.5}, std::vector<int>{2}), ContractError);
}

TEST_CASE("auroc on worked examples") {
    CHECK(auroc(std::vector<double>{0.9, 0.8, 0.2, 0.1}, std::vector<int>{1, 1, 0, 0}) ==
          doctest::Approx(1.0));
    CHECK(auroc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{1, 0, 1, 0}) ==
          doctest::Approx(0.5));
    // Pairs: (0.9 > 0.4), (0.6 > 0.4) -> both win.
    CHECK(auroc(std::vector<double>{0.9, 0.4, 0.6}, std::vector<int>{1, 0, 1}) == doctest::Approx(1.0));
    CHECK_THROWS_AS(auroc(std::vector<double>{0.9, 0.4}, std::vector<int>{1, 1}), ValidationError);
}

TEST_CASE("rank-based auroc path agrees with the analytic tie-corrected value") {
    // 11000 points forces the rank path: 6000 negatives at 0, 5000 positives
    // at 1, plus 100 positives also at 0 (half-credit ties with every negative).
    std::vector<double> scores;
    std::vector<int> labels;
    for (int i = 0; i < 6000; ++i) scores.push_back(0.0), labels.push_back(0);
    for (int i = 0; i < 5000; ++i) scores.push_back(1.0), labels.push_back(1);
    for (int i = 0; i < 100; ++i) scores.push_back(0.0), labels.push_back(1);
    const double expect = (5000.0 * 6000.0 + 0.5 * 100.0 * 6000.0) / (5100.0 * 6000.0);
    CHECK(auroc(scores, labels) == doctest::Approx(expect).epsilon(1e-12));
}

TEST_CASE("auroc is invariant under strictly monotone transforms of the scores") {
    std::mt19937_64 rng(601);
    std::uniform_real_distribution<double> u(0.02, 0.98);
    std::vector<double> scores(60);
    std::vector<int> labels(60);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        scores[i] = u(rng);
        labels[i] = rng() % 2 ? 1 : 0;
    }
    labels[0] = 1;
    labels[1] = 0;
    const double base = auroc(scores, labels);
    for (CalibrationMode mode : {CalibrationMode::Logit, CalibrationMode::Literal}) {
        for (double T : {0.3, 1.0, 2.7}) {
            TemperatureModel m{T, mode};
            std::vector<double> scaled(scores.size());
            for (std::size_t i = 0; i < scores.size(); ++i) scaled[i] = apply_temperature(scores[i], m);
            CHECK(auroc(scaled, labels) == doctest::Approx(base).epsilon(1e-12));
        }
    }
}

TEST_CASE("span F1 exact and partial on the worked two-span example") {
    const std::vector<Span> gold = {Span{0, 0, 4}, Span{0, 10, 14}};
    const std::vector<Span> pred = {Span{0, 0, 4}, Span{0, 11, 14}};
    CHECK(span_f1(pred, gold, SpanMatchMode::exact()) == doctest::Approx(0.5));
    // IoU((11,14),(10,14)) = 4/5 >= 0.5, so partial matches both.
    CHECK(span_f1(pred, gold, SpanMatchMode::partial()) == doctest::Approx(1.0));
    CHECK(span_f1(gold, gold, SpanMatchMode::exact()) == doctest::Approx(1.0));
}

TEST_CASE("span matching never crosses unit boundaries") {
    const std::vector<Span> gold = {Span{0, 0, 4}};
    const std::vector<Span> pred = {Span{1, 0, 4}};
    const ConfusionCounts c = span_f1_counts(pred, gold, SpanMatchMode::partial());
    CHECK(c.tp == 0);
    CHECK(c.fp == 1);
    CHECK(c.fn == 1);
}

TEST_CASE("partial matching is one-to-one greedy by descending IoU") {
    // Two predictions overlap one gold span; only the better one may match.
    const std::vector<Span> gold = {Span{0, 0, 9}};
    const std::vector<Span> pred = {Span{0, 0, 9}, Span{0, 2, 9}};
    const ConfusionCounts c = span_f1_counts(pred, gold, SpanMatchMode::partial());
    CHECK(c.tp == 1);
    CHECK(c.fp == 1);
    CHECK(c.fn == 0);
}

TEST_CASE("overlapping gold spans are rejected") {
    const std::vector<Span> gold = {Span{0, 0, 5}, Span{0, 3, 8}};
    CHECK_THROWS_AS(span_f1({}, gold, SpanMatchMode::exact()), ValidationError);
}

TEST_CASE("exact span F1 never exceeds partial span F1") {
    std::mt19937_64 rng(602);
    for (int rep = 0; rep < 30; ++rep) {
        std::vector<Span> gold, pred;
        for (int u = 0; u < 4; ++u) {
            std::int64_t cursor = 0;
            for (int s = 0; s < 3; ++s) {
                const std::int64_t b = cursor + static_cast<std::int64_t>(rng() % 4);
                const std::int64_t e = b + static_cast<std::int64_t>(rng() % 5);
                gold.push_back(Span{u, b, e});
                cursor = e + 2;
            }
            for (int s = 0; s < 3; ++s) {
                const std::int64_t b = static_cast<std::int64_t>(rng() % 20);
                pred.push_back(Span{u, b, b + static_cast<std::int64_t>(rng() % 5)});
            }
        }
        const double ex = span_f1(pred, gold, SpanMatchMode::exact());
        const double pa = span_f1(pred, gold, SpanMatchMode::partial());
        CHECK(ex <= pa + 1e-12);
    }
}

TEST_CASE("ece on hand-binned fixtures") {
    // Perfect confident predictions.
    std::vector<double> conf(8, 1.0);
    std::vector<int> out(8, 1);
    CHECK(ece(conf, out) == doctest::Approx(0.0));

    // Ten items at 0.9 with 60% correct, ten at 0.1 with 40% correct.
    std::vector<double> conf2;
    std::vector<int> out2;
    for (int i = 0; i < 10; ++i) {
        conf2.push_back(0.9);
        out2.push_back(i < 6 ? 1 : 0);
    }
    for (int i = 0; i < 10; ++i) {
        conf2.push_back(0.1);
        out2.push_back(i < 4 ? 1 : 0);
    }
    CHECK(ece(conf2, out2) == doctest::Approx(0.3).epsilon(1e-12));

    // Constant one-half confidences with balanced outcomes.
    std::vector<double> conf3(10, 0.5);
    std::vector<int> out3;
    for (int i = 0; i < 10; ++i) out3.push_back(i % 2);
    CHECK(ece(conf3, out3) == doctest::Approx(0.0));

    CHECK_THROWS_AS(ece({}, {}), ValidationError);
}

TEST_CASE("ece of a well-calibrated sample converges toward zero") {
    std::mt19937_64 rng(603);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::vector<double> conf(10000);
    std::vector<int> out(10000);
    for (std::size_t i = 0; i < conf.size(); ++i) {
        conf[i] = u(rng);
        out[i] = u(rng) < conf[i] ? 1 : 0;
    }
    CHECK(ece(conf, out) < 0.03);
}

TEST_CASE("brier score on worked fixtures") {
    std::vector<double> perfect = {1.0, 0.0, 1.0};
    std::vector<int> out = {1, 0, 1};
    CHECK(brier(perfect, out) == doctest::Approx(0.0));

    std::vector<double> half(6, 0.5);
    std::vector<int> any = {1, 0, 0, 1, 1, 0};
    CHECK(brier(half, any) == doctest::Approx(0.25));

    std::vector<double> two = {0.8, 0.3};
    std::vector<int> out2 = {1, 0};
    CHECK(brier(two, out2) == doctest::Approx(0.065).epsilon(1e-12));
}

namespace {

EvalRecord make_record(std::string id, std::string section, std::string intensity, int unit_index,
                       int gold_label, bool predict_positive) {
    EvalRecord r;
    r.unit_id = std::move(id);
    r.section_role = std::move(section);
    r.discipline = "physics";
    r.generator = "gen0";
    r.intensity = std::move(intensity);
    r.gold_label = gold_label;
    r.posterior = predict_positive ? 0.9 : 0.1;
    if (gold_label) r.gold_spans.push_back(Span{unit_index, 2, 6});
    if (predict_positive) {
        SpanHypothesis h;
        h.span = Span{unit_index, 2, 6};
        h.joint_score = -1.0;
        h.confidence = 0.8;
        h.calibrated = 0.8;
        h.confidence_set = true;
        r.pred_spans.push_back(h);
    }
    return r;
}

}  // namespace

TEST_CASE("breakdown with one group mirrors the overall row") {
    std::vector<EvalRecord> recs;
    recs.push_back(make_record("d0#0", "Methods", "moderate", 0, 1, true));
    recs.push_back(make_record("d0#1", "Methods", "moderate", 1, 0, false));
    recs.push_back(make_record("d0#2", "Methods", "moderate", 2, 1, false));
    const MetricReport rep = breakdown_report(recs, GroupBy::Section);
    REQUIRE(rep.groups.size() == 1);
    CHECK(rep.groups[0].group == "Methods");
    CHECK(rep.groups[0].para.tp == rep.overall.para.tp);
    CHECK(rep.groups[0].para.fn == rep.overall.para.fn);
    CHECK(rep.groups[0].span_exact.tp == rep.overall.span_exact.tp);
    CHECK(rep.groups[0].units == rep.overall.units);
}

TEST_CASE("group counts add up to the overall counts") {
    std::vector<EvalRecord> recs;
    int unit = 0;
    for (const char* section : {"Introduction", "Methods"}) {
        for (int k = 0; k < 4; ++k) {
            recs.push_back(make_record("d#" + std::to_string(unit), section,
                                       k % 2 ? "light" : "heavy", unit, k % 2, k % 3 != 0));
            ++unit;
        }
    }
    const MetricReport rep = breakdown_report(recs, GroupBy::Section);
    REQUIRE(rep.groups.size() == 2);
    std::int64_t tp = 0, fp = 0, fn = 0, units = 0;
    for (const GroupMetrics& g : rep.groups) {
        tp += g.para.tp;
        fp += g.para.fp;
        fn += g.para.fn;
        units += g.units;
    }
    CHECK(tp == rep.overall.para.tp);
    CHECK(fp == rep.overall.para.fp);
    CHECK(fn == rep.overall.para.fn);
    CHECK(units == rep.overall.units);
}

TEST_CASE("grouping by intensity produces one row per level") {
    std::vector<EvalRecord> recs;
    int unit = 0;
    for (const char* level : {"light", "moderate", "heavy", "full"}) {
        for (int k = 0; k < 3; ++k) {
            recs.push_back(make_record("d#" + std::to_string(unit), "Results", level, unit,
                                       k % 2, k % 2 == 1));
            ++unit;
        }
    }
    const MetricReport rep = breakdown_report(recs, GroupBy::Intensity);
    CHECK(rep.groups.size() == 4);
}

TEST_CASE("group key parsing accepts the four axes and rejects junk") {
    CHECK(group_by_from_name("section") == GroupBy::Section);
    CHECK(group_by_from_name("discipline") == GroupBy::Discipline);
    CHECK(group_by_from_name("generator") == GroupBy::Generator);
    CHECK(group_by_from_name("intensity") == GroupBy::Intensity);
    CHECK_THROWS_AS(group_by_from_name("venue"), ValidationError);
    CHECK(group_by_name(GroupBy::Intensity) == "intensity");
}

TEST_CASE("reports serialize to parseable JSON and aligned CSV") {
    std::vector<EvalRecord> recs;
    recs.push_back(make_record("d0#0", "Methods", "moderate", 0, 1, true));
    recs.push_back(make_record("d0#1", "Results", "light", 1, 0, false));
    const MetricReport rep = breakdown_report(recs, GroupBy::Section);

    const auto j = nlohmann::json::parse(report_json(rep));
    CHECK(j["group_by"] == "section");
    CHECK(j["overall"]["f1_ai"].is_number());
    CHECK(j["groups"].size() == 2);
    CHECK(j["overall"]["counts"]["para_tp"] == 1);

    const std::string csv = report_csv(rep);
    std::size_t lines = 0;
    for (char c : csv) lines += c == '\n';
    CHECK(lines == 4);  // header + overall + two groups
    CHECK(csv.rfind("group,units,f1_ai,auroc,", 0) == 0);
}

TEST_CASE("single-class groups omit auroc instead of failing") {
    std::vector<EvalRecord> recs;
    recs.push_back(make_record("d0#0", "Methods", "moderate", 0, 1, true));
    recs.push_back(make_record("d0#1", "Methods", "light", 1, 1, true));
    const MetricReport rep = breakdown_report(recs, GroupBy::Section);
    CHECK(!rep.overall.auroc_.has_value());
    const auto j = nlohmann::json::parse(report_json(rep));
    CHECK(j["overall"]["auroc"].is_null());
}
