#include "core/evalkit.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "core/errors.hpp"
#include "core/strings.hpp"
#include "json.hpp"

namespace spanforge {

using ordered_json = nlohmann::ordered_json;

double ConfusionCounts::precision() const {
    if (degenerate()) return 1.0;
    return tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
}

double ConfusionCounts::recall() const {
    if (degenerate()) return 1.0;
    return tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
}

double ConfusionCounts::f1() const {
    if (degenerate()) return 1.0;
    const double p = precision(), r = recall();
    return p + r == 0.0 ? 0.0 : 2.0 * p * r / (p + r);
}

ConfusionCounts f1_ai_counts(std::span<const double> posteriors, std::span<const int> gold_labels,
                             double threshold) {
    if (posteriors.size() != gold_labels.size())
        throw ContractError("f1_ai: posterior and label counts differ");
    if (!(threshold > 0.0 && threshold < 1.0))
        throw ContractError("f1_ai: threshold must lie in (0,1)");
    ConfusionCounts c;
    for (std::size_t i = 0; i < posteriors.size(); ++i) {
        if (gold_labels[i] != 0 && gold_labels[i] != 1)
            throw ContractError("f1_ai: labels must be 0 or 1");
        const bool pred = posteriors[i] >= threshold;
        const bool gold = gold_labels[i] == 1;
        if (pred && gold) ++c.tp;
        else if (pred && !gold) ++c.fp;
        else if (!pred && gold) ++c.fn;
    }
    return c;
}

double f1_ai(std::span<const double> posteriors, std::span<const int> gold_labels, double threshold) {
    return f1_ai_counts(posteriors, gold_labels, threshold).f1();
}

double auroc(std::span<const double> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) throw ContractError("auroc: score and label counts differ");
    std::size_t pos = 0, neg = 0;
    for (int y : labels) {
        if (y != 0 && y != 1) throw ContractError("auroc: labels must be 0 or 1");
        y == 1 ? ++pos : ++neg;
    }
    if (pos == 0 || neg == 0)
        throw ValidationError("auroc: both classes must be present (got " + std::to_string(pos) +
                              " positives, " + std::to_string(neg) + " negatives)");

    if (scores.size() <= 10000) {
        double wins = 0.0;
        for (std::size_t i = 0; i < scores.size(); ++i) {
            if (labels[i] != 1) continue;
            for (std::size_t j = 0; j < scores.size(); ++j) {
                if (labels[j] != 0) continue;
                if (scores[i] > scores[j]) wins += 1.0;
                else if (scores[i] == scores[j]) wins += 0.5;
            }
        }
        return wins / (static_cast<double>(pos) * static_cast<double>(neg));
    }

    // Rank-based Mann-Whitney with midranks for ties.
    std::vector<std::size_t> order(scores.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    std::vector<double> rank(scores.size());
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && scores[order[j + 1]] == scores[order[i]]) ++j;
        const double mid = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) rank[order[k]] = mid;
        i = j + 1;
    }
    double rank_sum = 0.0;
    for (std::size_t k = 0; k < scores.size(); ++k)
        if (labels[k] == 1) rank_sum += rank[k];
    const double u = rank_sum - static_cast<double>(pos) * (static_cast<double>(pos) + 1.0) / 2.0;
    return u / (static_cast<double>(pos) * static_cast<double>(neg));
}

namespace {

void check_gold_disjoint(std::span<const Span> gold) {
    std::vector<Span> sorted(gold.begin(), gold.end());
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        const Span& a = sorted[i - 1];
        const Span& b = sorted[i];
        if (a.paragraph == b.paragraph && b.begin <= a.end)
            throw ValidationError("span_f1: overlapping gold spans in unit " +
                                  std::to_string(a.paragraph));
    }
}

}  // namespace

ConfusionCounts span_f1_counts(std::span<const Span> pred, std::span<const Span> gold,
                               const SpanMatchMode& mode) {
    check_gold_disjoint(gold);
    ConfusionCounts c;
    if (mode.kind == SpanMatchMode::Kind::Exact) {
        std::vector<Span> gold_sorted(gold.begin(), gold.end());
        std::sort(gold_sorted.begin(), gold_sorted.end());
        for (const Span& p : pred) {
            const bool hit = std::binary_search(gold_sorted.begin(), gold_sorted.end(), p);
            hit ? ++c.tp : ++c.fp;
        }
        c.fn = static_cast<std::int64_t>(gold.size()) - c.tp;
        return c;
    }

    // Partial: greedy one-to-one matching in descending IoU order.
    struct PairIoU {
        double iou;
        std::size_t pi, gi;
    };
    std::vector<PairIoU> pairs;
    for (std::size_t pi = 0; pi < pred.size(); ++pi) {
        for (std::size_t gi = 0; gi < gold.size(); ++gi) {
            if (pred[pi].paragraph != gold[gi].paragraph) continue;
            const double iou = span_iou(pred[pi], gold[gi]);
            if (iou >= mode.iou_min) pairs.push_back({iou, pi, gi});
        }
    }
    std::sort(pairs.begin(), pairs.end(), [](const PairIoU& a, const PairIoU& b) {
        if (a.iou != b.iou) return a.iou > b.iou;
        if (a.pi != b.pi) return a.pi < b.pi;
        return a.gi < b.gi;
    });
    std::vector<char> pred_used(pred.size(), 0), gold_used(gold.size(), 0);
    for (const PairIoU& pr : pairs) {
        if (pred_used[pr.pi] || gold_used[pr.gi]) continue;
        pred_used[pr.pi] = gold_used[pr.gi] = 1;
        ++c.tp;
    }
    c.fp = static_cast<std::int64_t>(pred.size()) - c.tp;
    c.fn = static_cast<std::int64_t>(gold.size()) - c.tp;
    return c;
}

double span_f1(std::span<const Span> pred, std::span<const Span> gold, const SpanMatchMode& mode) {
    return span_f1_counts(pred, gold, mode).f1();
}

double ece(std::span<const double> confidences, std::span<const int> outcomes, std::int64_t bins) {
    if (confidences.empty()) throw ValidationError("ece: empty input");
    if (confidences.size() != outcomes.size())
        throw ContractError("ece: confidence and outcome counts differ");
    if (bins < 1) throw ContractError("ece: bins must be >= 1");
    std::vector<double> conf_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<double> acc_sum(static_cast<std::size_t>(bins), 0.0);
    std::vector<std::int64_t> count(static_cast<std::size_t>(bins), 0);
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double cf = confidences[i];
        if (cf < 0.0 || cf > 1.0) throw ContractError("ece: confidences must lie in [0,1]");
        if (outcomes[i] != 0 && outcomes[i] != 1) throw ContractError("ece: outcomes must be 0 or 1");
        auto b = static_cast<std::size_t>(std::min<std::int64_t>(
            bins - 1, static_cast<std::int64_t>(cf * static_cast<double>(bins))));
        conf_sum[b] += cf;
        acc_sum[b] += outcomes[i];
        ++count[b];
    }
    double e = 0.0;
    const double n = static_cast<double>(confidences.size());
    for (std::size_t b = 0; b < static_cast<std::size_t>(bins); ++b) {
        if (count[b] == 0) continue;
        const double nb = static_cast<double>(count[b]);
        e += (nb / n) * std::abs(acc_sum[b] / nb - conf_sum[b] / nb);
    }
    return e;
}

double brier(std::span<const double> confidences, std::span<const int> outcomes) {
    if (confidences.empty()) throw ContractError("brier: empty input");
    if (confidences.size() != outcomes.size())
        throw ContractError("brier: confidence and outcome counts differ");
    double s = 0.0;
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double d = confidences[i] - static_cast<double>(outcomes[i]);
        s += d * d;
    }
    return s / static_cast<double>(confidences.size());
}

GroupBy group_by_from_name(const std::string& name) {
    if (name == "section") return GroupBy::Section;
    if (name == "discipline") return GroupBy::Discipline;
    if (name == "generator") return GroupBy::Generator;
    if (name == "intensity") return GroupBy::Intensity;
    throw ValidationError("unknown group key '" + name +
                          "' (expected section, discipline, generator, or intensity)");
}

std::string group_by_name(GroupBy g) {
    switch (g) {
        case GroupBy::Section: return "section";
        case GroupBy::Discipline: return "discipline";
        case GroupBy::Generator: return "generator";
        case GroupBy::Intensity: return "intensity";
    }
    throw ContractError("group_by_name: unreachable");
}

namespace {

GroupMetrics metrics_for(std::string name, std::span<const EvalRecord* const> records) {
    GroupMetrics m;
    m.group = std::move(name);
    m.units = static_cast<std::int64_t>(records.size());

    std::vector<double> posteriors;
    std::vector<int> labels;
    std::vector<Span> pred_spans, gold_spans;
    std::vector<double> span_conf;
    std::vector<int> span_outcome;
    for (const EvalRecord* r : records) {
        posteriors.push_back(r->posterior);
        labels.push_back(r->gold_label);
        for (const Span& s : r->gold_spans) gold_spans.push_back(s);
        for (const SpanHypothesis& h : r->pred_spans) {
            pred_spans.push_back(h.span);
            if (h.confidence_set) {
                span_conf.push_back(h.calibrated);
                bool correct = false;
                for (const Span& gspan : r->gold_spans) {
                    if (gspan.paragraph == h.span.paragraph && span_iou(gspan, h.span) >= 0.5) {
                        correct = true;
                        break;
                    }
                }
                span_outcome.push_back(correct ? 1 : 0);
            }
        }
    }

    m.para = f1_ai_counts(posteriors, labels, 0.5);
    bool has_pos = false, has_neg = false;
    for (int y : labels) (y == 1 ? has_pos : has_neg) = true;
    if (has_pos && has_neg) m.auroc_ = auroc(posteriors, labels);
    m.span_exact = span_f1_counts(pred_spans, gold_spans, SpanMatchMode::exact());
    m.span_partial = span_f1_counts(pred_spans, gold_spans, SpanMatchMode::partial());
    if (!span_conf.empty()) {
        m.ece_ = ece(span_conf, span_outcome);
        m.brier_ = brier(span_conf, span_outcome);
    }
    return m;
}

const std::string& record_key(const EvalRecord& r, GroupBy g) {
    switch (g) {
        case GroupBy::Section: return r.section_role;
        case GroupBy::Discipline: return r.discipline;
        case GroupBy::Generator: return r.generator;
        case GroupBy::Intensity: return r.intensity;
    }
    throw ContractError("record_key: unreachable");
}

}  // namespace

MetricReport breakdown_report(std::span<const EvalRecord> records, GroupBy group_by) {
    if (records.empty()) throw ValidationError("breakdown_report: no records");
    MetricReport report;
    report.grouped_by = group_by;

    std::vector<const EvalRecord*> all;
    all.reserve(records.size());
    for (const EvalRecord& r : records) all.push_back(&r);
    report.overall = metrics_for("overall", all);

    std::map<std::string, std::vector<const EvalRecord*>> by_group;
    for (const EvalRecord& r : records) by_group[record_key(r, group_by)].push_back(&r);
    for (auto& [key, members] : by_group) report.groups.push_back(metrics_for(key, members));
    return report;
}

namespace {

ordered_json group_json(const GroupMetrics& m) {
    ordered_json j;
    j["group"] = m.group;
    j["units"] = m.units;
    j["f1_ai"] = m.para.f1();
    j["auroc"] = m.auroc_ ? ordered_json(*m.auroc_) : ordered_json(nullptr);
    j["span_f1_exact"] = m.span_exact.f1();
    j["span_f1_partial"] = m.span_partial.f1();
    j["ece"] = m.ece_ ? ordered_json(*m.ece_) : ordered_json(nullptr);
    j["brier"] = m.brier_ ? ordered_json(*m.brier_) : ordered_json(nullptr);
    j["counts"] = {{"para_tp", m.para.tp},
                   {"para_fp", m.para.fp},
                   {"para_fn", m.para.fn},
                   {"span_exact_tp", m.span_exact.tp},
                   {"span_exact_fp", m.span_exact.fp},
                   {"span_exact_fn", m.span_exact.fn},
                   {"span_partial_tp", m.span_partial.tp},
                   {"span_partial_fp", m.span_partial.fp},
                   {"span_partial_fn", m.span_partial.fn}};
    return j;
}

void csv_row(std::string& out, const GroupMetrics& m) {
    auto num = [](double v) { return format_double(v); };
    out += m.group;
    out += ',' + std::to_string(m.units);
    out += ',' + num(m.para.f1());
    out += ',' + (m.auroc_ ? num(*m.auroc_) : std::string());
    out += ',' + num(m.span_exact.f1());
    out += ',' + num(m.span_partial.f1());
    out += ',' + (m.ece_ ? num(*m.ece_) : std::string());
    out += ',' + (m.brier_ ? num(*m.brier_) : std::string());
    out += '\n';
}

}  // namespace

std::string report_json(const MetricReport& report) {
    ordered_json j;
    j["group_by"] = group_by_name(report.grouped_by);
    j["overall"] = group_json(report.overall);
    j["groups"] = ordered_json::array();
    for (const GroupMetrics& m : report.groups) j["groups"].push_back(group_json(m));
    return j.dump();
}

std::string report_csv(const MetricReport& report) {
    std::string out = "group,units,f1_ai,auroc,span_f1_exact,span_f1_partial,ece,brier\n";
    csv_row(out, report.overall);
    for (const GroupMetrics& m : report.groups) csv_row(out, m);
    return out;
}

}  // namespace spanforge
