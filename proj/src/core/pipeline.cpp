#include "core/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "core/corpus_io.hpp"
#include "core/logging.hpp"
#include "core/strings.hpp"
#include "json.hpp"

namespace spanforge {

using nlohmann::ordered_json;

// ---- run config ---------------------------------------------------------------

void RunConfig::validate() const {
    trainer.validate();
    (void)SplitScheme::parse(split_scheme);
    if (gen.doc_count < 1) throw ValidationError("gen.doc_count must be >= 1");
}

static std::string join_doubles(const std::vector<double>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += format_double(xs[i]);
    }
    return out;
}

static std::string join_strings(const std::vector<std::string>& xs) {
    std::string out;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        if (i) out += ',';
        out += xs[i];
    }
    return out;
}

static std::vector<double> split_doubles(const std::string& text, const std::string& what) {
    std::vector<double> out;
    for (const std::string& part : split(text, ','))
        out.push_back(parse_double(trim(part), what));
    return out;
}

static std::vector<std::string> split_strings(const std::string& text) {
    std::vector<std::string> out;
    for (const std::string& part : split(text, ',')) {
        std::string s(trim(part));
        if (!s.empty()) out.push_back(std::move(s));
    }
    return out;
}

bool RunConfig::apply_key(const std::string& k, const std::string& v) {
    if (k == "seed") seed = static_cast<std::uint64_t>(parse_int(v, k));
    else if (k == "gen.doc_count") gen.doc_count = parse_int(v, k);
    else if (k == "gen.paragraphs_min") gen.paragraphs_min = parse_int(v, k);
    else if (k == "gen.paragraphs_max") gen.paragraphs_max = parse_int(v, k);
    else if (k == "gen.tokens_min") gen.tokens_min = parse_int(v, k);
    else if (k == "gen.tokens_max") gen.tokens_max = parse_int(v, k);
    else if (k == "gen.vocab_size") gen.vocab_size = parse_int(v, k);
    else if (k == "gen.vocab_overlap") gen.vocab_overlap = parse_double(v, k);
    else if (k == "gen.ai_span_rate") gen.ai_span_rate = parse_double(v, k);
    else if (k == "gen.span_length_mean") gen.span_length_mean = parse_double(v, k);
    else if (k == "gen.intensity_mix") gen.intensity_mix = split_doubles(v, k);
    else if (k == "gen.section_bias") gen.section_bias = parse_double(v, k);
    else if (k == "gen.disciplines") gen.disciplines = split_strings(v);
    else if (k == "gen.generators") gen.generators = split_strings(v);
    else if (k == "split.scheme") split_scheme = v;
    else if (k == "calibration.mode") cal_mode = calibration_mode_from_name(v);
    else if (k == "report.group_by") group_by = group_by_from_name(v);
    else return trainer.apply_key(k, v);
    return true;
}

std::string RunConfig::canonical_text() const {
    std::vector<std::string> lines;
    for (const std::string& line : split(trainer.canonical_text(), '\n'))
        if (!line.empty()) lines.push_back(line);
    auto put = [&](const std::string& k, const std::string& v) { lines.push_back(k + "=" + v); };
    put("calibration.mode", calibration_mode_name(cal_mode));
    put("gen.ai_span_rate", format_double(gen.ai_span_rate));
    put("gen.disciplines", join_strings(gen.disciplines));
    put("gen.doc_count", std::to_string(gen.doc_count));
    put("gen.generators", join_strings(gen.generators));
    put("gen.intensity_mix", join_doubles(gen.intensity_mix));
    put("gen.paragraphs_max", std::to_string(gen.paragraphs_max));
    put("gen.paragraphs_min", std::to_string(gen.paragraphs_min));
    put("gen.section_bias", format_double(gen.section_bias));
    put("gen.span_length_mean", format_double(gen.span_length_mean));
    put("gen.tokens_max", std::to_string(gen.tokens_max));
    put("gen.tokens_min", std::to_string(gen.tokens_min));
    put("gen.vocab_overlap", format_double(gen.vocab_overlap));
    put("gen.vocab_size", std::to_string(gen.vocab_size));
    put("report.group_by", group_by_name(group_by));
    put("split.scheme", split_scheme);
    std::sort(lines.begin(), lines.end());
    std::string out;
    for (const std::string& line : lines) {
        out += line;
        out += '\n';
    }
    return out;
}

RunConfig RunConfig::from_text(const std::string& text) {
    RunConfig rc;
    for (const std::string& raw : split(text, '\n')) {
        std::string_view line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        auto eq = line.find('=');
        if (eq == std::string_view::npos)
            throw ValidationError("config line without '=': " + std::string(line));
        std::string k(trim(line.substr(0, eq)));
        std::string v(trim(line.substr(eq + 1)));
        if (!rc.apply_key(k, v)) throw ValidationError("unknown config key '" + k + "'");
    }
    // One master seed feeds every stream (corpus, init, batching, ...).
    rc.trainer.seed = rc.seed;
    rc.gen.rng_seed = rc.seed;
    return rc;
}

RunConfig RunConfig::from_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open config file '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return from_text(ss.str());
}

// ---- annotations -----------------------------------------------------------------

AnnotationSet annotations_from_decodes(std::span<const DocumentDecode> decodes, bool calibrated) {
    AnnotationSet out;
    out.reserve(decodes.size());
    for (const DocumentDecode& dec : decodes) {
        DocAnnotations da;
        da.doc = dec.doc_id;
        for (std::size_t p = 0; p < dec.paragraphs.size(); ++p) {
            const ParagraphDecode& pd = dec.paragraphs[p];
            AnnotationParagraph ap;
            ap.paragraph = static_cast<std::int64_t>(p);
            ap.p_ai = pd.p_ai;
            ap.p_agg = pd.p_agg;
            ap.p_reconciled = pd.p_reconciled;
            ap.p_smoothed = pd.p_smoothed;
            da.paragraphs.push_back(ap);
            for (const SpanHypothesis& h : pd.spans) {
                AnnotationSpan as;
                as.paragraph = static_cast<std::int64_t>(p);
                as.begin = h.span.begin;
                as.end = h.span.end;
                as.joint_score = h.joint_score;
                if (h.confidence_set) {
                    as.q = h.confidence;
                    if (calibrated) as.q_prime = h.calibrated;
                }
                da.spans.push_back(as);
            }
        }
        out.push_back(std::move(da));
    }
    return out;
}

void write_annotations(const std::string& path, const AnnotationSet& annotations) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot open '" + path + "' for writing");
    for (const DocAnnotations& da : annotations) {
        std::size_t cursor = 0;
        for (const AnnotationParagraph& ap : da.paragraphs) {
            ordered_json j;
            j["record"] = "paragraph";
            j["doc"] = da.doc;
            j["paragraph"] = ap.paragraph;
            j["p_ai"] = ap.p_ai;
            j["p_agg"] = ap.p_agg;
            j["p_reconciled"] = ap.p_reconciled;
            j["p_smoothed"] = ap.p_smoothed;
            f << j.dump() << '\n';
            while (cursor < da.spans.size() && da.spans[cursor].paragraph == ap.paragraph) {
                const AnnotationSpan& as = da.spans[cursor++];
                ordered_json s;
                s["record"] = "span";
                s["doc"] = da.doc;
                s["paragraph"] = as.paragraph;
                s["begin"] = as.begin;
                s["end"] = as.end;
                s["joint_score"] = as.joint_score;
                if (as.q) s["q"] = *as.q;
                if (as.q_prime) s["q_prime"] = *as.q_prime;
                f << s.dump() << '\n';
            }
        }
        if (cursor != da.spans.size())
            throw ContractError("write_annotations: spans not sorted by paragraph");
    }
    f.flush();
    if (!f.good()) throw PipelineError("write failed for '" + path + "'");
}

AnnotationSet read_annotations(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open annotations file '" + path + "'");
    AnnotationSet out;
    std::map<std::string, std::size_t> index;
    std::string line;
    std::int64_t lineno = 0;
    while (std::getline(f, line)) {
        ++lineno;
        std::string_view text = trim(line);
        if (text.empty()) continue;
        ordered_json j;
        try {
            j = ordered_json::parse(text);
        } catch (const std::exception& e) {
            throw ValidationError("annotations line " + std::to_string(lineno) + ": malformed JSON (" +
                                  e.what() + ")");
        }
        auto where = [&](const char* what) {
            return "annotations line " + std::to_string(lineno) + ": " + what;
        };
        if (!j.contains("record") || !j.contains("doc"))
            throw ValidationError(where("missing record/doc field"));
        std::string doc = j["doc"].get<std::string>();
        auto [pos, fresh] = index.try_emplace(doc, out.size());
        if (fresh) {
            out.emplace_back();
            out.back().doc = doc;
        }
        DocAnnotations& da = out[pos->second];
        std::string kind = j["record"].get<std::string>();
        if (kind == "paragraph") {
            AnnotationParagraph ap;
            ap.paragraph = j.at("paragraph").get<std::int64_t>();
            ap.p_ai = j.at("p_ai").get<double>();
            ap.p_agg = j.at("p_agg").get<double>();
            ap.p_reconciled = j.at("p_reconciled").get<double>();
            ap.p_smoothed = j.at("p_smoothed").get<double>();
            if (ap.paragraph != static_cast<std::int64_t>(da.paragraphs.size()))
                throw ValidationError(where("paragraph records out of order"));
            da.paragraphs.push_back(ap);
        } else if (kind == "span") {
            AnnotationSpan as;
            as.paragraph = j.at("paragraph").get<std::int64_t>();
            as.begin = j.at("begin").get<std::int64_t>();
            as.end = j.at("end").get<std::int64_t>();
            as.joint_score = j.at("joint_score").get<double>();
            if (j.contains("q")) as.q = j["q"].get<double>();
            if (j.contains("q_prime")) {
                if (!as.q) throw ValidationError(where("q_prime without q"));
                as.q_prime = j["q_prime"].get<double>();
            }
            if (as.begin < 0 || as.end < as.begin) throw ValidationError(where("bad span bounds"));
            if (!da.spans.empty()) {
                const AnnotationSpan& prev = da.spans.back();
                if (std::pair(prev.paragraph, prev.begin) > std::pair(as.paragraph, as.begin))
                    throw ValidationError(where("spans not sorted by (paragraph, begin)"));
            }
            da.spans.push_back(as);
        } else {
            throw ValidationError(where("unknown record kind"));
        }
    }
    return out;
}

// ---- evaluation plumbing -------------------------------------------------------------

static const DocAnnotations& annotations_for(const AnnotationSet& annotations,
                                             std::map<std::string, const DocAnnotations*>& cache,
                                             const std::string& id) {
    if (cache.empty())
        for (const DocAnnotations& da : annotations) cache[da.doc] = &da;
    auto pos = cache.find(id);
    if (pos == cache.end()) throw ValidationError("annotations missing document '" + id + "'");
    return *pos->second;
}

std::vector<EvalRecord> eval_records(const Corpus& docs, const AnnotationSet& annotations) {
    std::map<std::string, const DocAnnotations*> cache;
    std::vector<EvalRecord> records;
    std::int64_t unit = 0;
    for (const Document& doc : docs) {
        const DocAnnotations& da = annotations_for(annotations, cache, doc.id);
        if (da.paragraphs.size() != doc.paragraphs.size())
            throw ValidationError("annotations for document '" + doc.id + "' cover " +
                                  std::to_string(da.paragraphs.size()) + " paragraphs, corpus has " +
                                  std::to_string(doc.paragraphs.size()));
        std::size_t span_cursor = 0;
        for (std::size_t p = 0; p < doc.paragraphs.size(); ++p, ++unit) {
            const Paragraph& para = doc.paragraphs[p];
            std::vector<AnnotationSpan> here;
            while (span_cursor < da.spans.size() &&
                   da.spans[span_cursor].paragraph == static_cast<std::int64_t>(p))
                here.push_back(da.spans[span_cursor++]);
            if (!para.labeled) continue;  // no gold to score against

            EvalRecord r;
            r.unit_id = doc.id + "#" + std::to_string(p);
            r.section_role = doc.sections[static_cast<std::size_t>(para.section_id)].name;
            r.discipline = doc.meta.discipline;
            r.generator = doc.meta.generator;
            r.intensity = doc.meta.intensity;
            r.gold_label = para.gold_spans.empty() ? 0 : 1;
            for (const Span& gspan : para.gold_spans) r.gold_spans.push_back({unit, gspan.begin, gspan.end});
            r.posterior = da.paragraphs[p].p_smoothed;
            for (const AnnotationSpan& as : here) {
                SpanHypothesis h;
                h.span = {unit, as.begin, as.end};
                h.joint_score = as.joint_score;
                if (as.q) {
                    h.confidence = *as.q;
                    h.calibrated = as.q_prime ? *as.q_prime : *as.q;
                    h.confidence_set = true;
                }
                r.pred_spans.push_back(h);
            }
            records.push_back(std::move(r));
        }
    }
    return records;
}

void span_outcomes(const Corpus& docs, const AnnotationSet& annotations,
                   std::vector<double>& confidences, std::vector<int>& outcomes) {
    std::map<std::string, const DocAnnotations*> cache;
    confidences.clear();
    outcomes.clear();
    for (const Document& doc : docs) {
        const DocAnnotations& da = annotations_for(annotations, cache, doc.id);
        for (const AnnotationSpan& as : da.spans) {
            if (!as.q) continue;
            if (as.paragraph < 0 || as.paragraph >= static_cast<std::int64_t>(doc.paragraphs.size()))
                throw ValidationError("annotation span paragraph out of range in '" + doc.id + "'");
            const Paragraph& para = doc.paragraphs[static_cast<std::size_t>(as.paragraph)];
            if (!para.labeled) continue;
            Span pred{as.paragraph, as.begin, as.end};
            int correct = 0;
            for (const Span& gspan : para.gold_spans)
                if (span_iou({as.paragraph, gspan.begin, gspan.end}, pred) >= 0.5) {
                    correct = 1;
                    break;
                }
            confidences.push_back(as.q_prime ? *as.q_prime : *as.q);
            outcomes.push_back(correct);
        }
    }
}

// ---- stages -----------------------------------------------------------------------------

Corpus select_split(const Corpus& full, const RunConfig& rc, const std::string& split_name) {
    if (split_name == "all") return full;
    CorpusSplit split = split_corpus(full, SplitScheme::parse(rc.split_scheme), rc.seed);
    if (split_name == "train") return split.train;
    if (split_name == "val" || split_name == "validation") return split.validation;
    if (split_name == "test") return split.test;
    throw ValidationError("unknown split '" + split_name + "' (want train|val|test|all)");
}

Corpus stage_gen(const RunConfig& rc) {
    rc.validate();
    return synth_corpus(rc.gen);
}

TrainResult stage_train(const RunConfig& rc, const Corpus& full) {
    rc.validate();
    Corpus tr = select_split(full, rc, "train");
    Corpus val = select_split(full, rc, "val");
    return train(tr, val, rc.trainer);
}

namespace {

struct ValDecodes {
    std::vector<SpanHypothesis> hyps;  // paragraph remapped to global unit ids
    std::vector<int> outcomes;         // IoU >= 0.5 against gold
    std::vector<Span> gold;            // same unit-id space
};

ValDecodes decode_validation(DetectorModel& model, const Corpus& val, const DecodeConfig& dcfg) {
    ValDecodes out;
    std::int64_t unit = 0;
    for (const Document& doc : val) {
        DocumentDecode dec = decode_document(model, doc, dcfg, nullptr, nullptr);
        for (std::size_t p = 0; p < dec.paragraphs.size(); ++p, ++unit) {
            const Paragraph& para = doc.paragraphs[p];
            if (!para.labeled) continue;
            for (const Span& gspan : para.gold_spans) out.gold.push_back({unit, gspan.begin, gspan.end});
            for (const SpanHypothesis& h : dec.paragraphs[p].spans) {
                SpanHypothesis g = h;
                g.span.paragraph = unit;
                int correct = 0;
                for (const Span& gspan : para.gold_spans)
                    if (span_iou(gspan, h.span) >= 0.5) {
                        correct = 1;
                        break;
                    }
                out.hyps.push_back(g);
                out.outcomes.push_back(correct);
            }
        }
    }
    return out;
}

// Operating point: the joint-score cutoff maximizing partial span F1 on the
// validation decodes. Candidate cutoffs are rank-subsampled to keep the sweep
// cheap; ties break toward higher coverage (lower cutoff).
double sweep_min_score(const ValDecodes& val, double floor_score) {
    std::vector<double> scores;
    for (const SpanHypothesis& h : val.hyps) scores.push_back(h.joint_score);
    std::sort(scores.begin(), scores.end());
    scores.erase(std::unique(scores.begin(), scores.end()), scores.end());
    std::vector<double> candidates = {floor_score};
    const std::size_t cap = 64;
    if (scores.size() <= cap) {
        candidates.insert(candidates.end(), scores.begin(), scores.end());
    } else {
        for (std::size_t k = 0; k < cap; ++k)
            candidates.push_back(scores[k * (scores.size() - 1) / (cap - 1)]);
    }
    double best_theta = floor_score, best_f1 = -1.0;
    for (double theta : candidates) {
        std::vector<Span> pred;
        for (const SpanHypothesis& h : val.hyps)
            if (h.joint_score >= theta) pred.push_back(h.span);
        double f1 = span_f1(pred, val.gold, SpanMatchMode::partial());
        if (f1 > best_f1 + 1e-12 || (std::abs(f1 - best_f1) <= 1e-12 && theta < best_theta)) {
            best_f1 = f1;
            best_theta = theta;
        }
    }
    return best_theta;
}

}  // namespace

CalibrationReport stage_calibrate(const RunConfig& rc, const Corpus& full, const Checkpoint& best) {
    rc.validate();
    DetectorModel model = model_from_checkpoint(best);
    Corpus val = select_split(full, rc, "val");

    CalibrationReport report;
    report.mode = rc.cal_mode;
    report.span_min_score = rc.trainer.decode.min_joint_score;

    ValDecodes dec = decode_validation(model, val, rc.trainer.decode);
    if (dec.hyps.empty()) {
        logging::warnf("%s", "calibrate: validation split produced no spans; keeping defaults");
        return report;
    }

    report.eta = fit_eta(dec.hyps, dec.outcomes);
    std::vector<double> q;
    q.reserve(dec.hyps.size());
    for (const SpanHypothesis& h : dec.hyps) q.push_back(span_confidence(h, report.eta));

    TemperatureModel temp{1.0, rc.cal_mode};
    try {
        temp = fit_temperature(q, dec.outcomes, rc.cal_mode);
    } catch (const ValidationError& e) {
        logging::warnf("calibrate: %s; keeping T=1", e.what());
    }
    report.temperature = temp.temperature;

    std::vector<double> q_prime;
    q_prime.reserve(q.size());
    for (double qi : q) q_prime.push_back(apply_temperature(qi, temp));

    report.ece_before = ece(q, dec.outcomes);
    report.ece_after = ece(q_prime, dec.outcomes);
    report.brier_before = brier(q, dec.outcomes);
    report.brier_after = brier(q_prime, dec.outcomes);
    report.curve = risk_coverage(q_prime, dec.outcomes);
    report.span_min_score = sweep_min_score(dec, rc.trainer.decode.min_joint_score);
    return report;
}

CalibrationReport load_calibration(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open calibration file '" + path + "'");
    ordered_json j;
    try {
        j = ordered_json::parse(f);
    } catch (const std::exception& e) {
        throw ValidationError("calibration file '" + path + "': malformed JSON (" + e.what() + ")");
    }
    try {
        CalibrationReport report;
        report.mode = calibration_mode_from_name(j.at("mode").get<std::string>());
        report.temperature = j.at("T").get<double>();
        report.eta.eta1 = j.at("eta").at(0).get<double>();
        report.eta.eta2 = j.at("eta").at(1).get<double>();
        report.eta.eta3 = j.at("eta").at(2).get<double>();
        report.eta.intercept = j.at("intercept").get<double>();
        report.ece_before = j.at("ece_before").get<double>();
        report.ece_after = j.at("ece_after").get<double>();
        report.brier_before = j.at("brier_before").get<double>();
        report.brier_after = j.at("brier_after").get<double>();
        report.span_min_score = j.at("span_min_score").get<double>();
        for (const auto& pt : j.at("curve"))
            report.curve.push_back({pt.at("threshold").get<double>(), pt.at("coverage").get<double>(),
                                    pt.at("risk").get<double>()});
        return report;
    } catch (const std::exception& e) {
        throw ValidationError("calibration file '" + path + "': " + e.what());
    }
}

DetectResult stage_detect(const RunConfig& rc, const Corpus& full, const std::string& split_name,
                          const Checkpoint& ckpt, const CalibrationReport* cal) {
    rc.validate();
    DetectorModel model = model_from_checkpoint(ckpt);

    DetectResult result;
    result.docs = select_split(full, rc, split_name);

    ConfidenceParams eta = cal ? cal->eta : ConfidenceParams{};
    TemperatureModel temp{1.0, rc.cal_mode};
    if (cal) temp = TemperatureModel{cal->temperature, cal->mode};

    DecodeConfig dcfg = rc.trainer.decode;
    if (cal) dcfg.min_joint_score = std::max(dcfg.min_joint_score, cal->span_min_score);

    for (const Document& doc : result.docs)
        result.decodes.push_back(decode_document(model, doc, dcfg, &eta, cal ? &temp : nullptr));
    result.annotations = annotations_from_decodes(result.decodes, cal != nullptr);
    return result;
}

MetricReport stage_eval(const Corpus& docs, const AnnotationSet& annotations, GroupBy group_by) {
    return breakdown_report(eval_records(docs, annotations), group_by);
}

RiskCoverageCurve stage_risk_coverage(const Corpus& docs, const AnnotationSet& annotations) {
    std::vector<double> confidences;
    std::vector<int> outcomes;
    span_outcomes(docs, annotations, confidences, outcomes);
    if (confidences.empty())
        throw ValidationError("risk-coverage: no annotated spans carry confidences");
    return risk_coverage(confidences, outcomes);
}

std::string risk_coverage_csv(const RiskCoverageCurve& curve) {
    std::string out = "threshold,coverage,risk\n";
    for (const RiskCoveragePoint& pt : curve) {
        out += format_double(pt.threshold);
        out += ',';
        out += format_double(pt.coverage);
        out += ',';
        out += format_double(pt.risk);
        out += '\n';
    }
    return out;
}

}  // namespace spanforge
