#include "core/corpus_io.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace spanforge {

using json = nlohmann::ordered_json;

namespace {

constexpr int kCorpusVersion = 1;

Document parse_document(const json& j, const std::string& where) {
    auto fail = [&](const std::string& why) { throw ValidationError(where + ": " + why); };
    if (!j.is_object()) fail("document line is not a JSON object");

    if (j.contains("v")) {
        if (!j["v"].is_number_integer() || j["v"].get<int>() != kCorpusVersion)
            fail("unsupported corpus version " + j["v"].dump() + " (expected " + std::to_string(kCorpusVersion) + ")");
    }

    Document doc;
    if (!j.contains("id") || !j["id"].is_string()) fail("missing string field 'id'");
    doc.id = j["id"].get<std::string>();

    if (j.contains("meta")) {
        const json& m = j["meta"];
        if (!m.is_object()) fail("'meta' must be an object");
        json extra = json::object();
        for (auto it = m.begin(); it != m.end(); ++it) {
            if (it.key() == "discipline") doc.meta.discipline = it.value().get<std::string>();
            else if (it.key() == "generator") doc.meta.generator = it.value().get<std::string>();
            else if (it.key() == "intensity") doc.meta.intensity = it.value().get<std::string>();
            else extra[it.key()] = it.value();
        }
        if (!extra.empty()) doc.meta.extra_json = extra.dump();
    }

    if (!j.contains("sections") || !j["sections"].is_array() || j["sections"].empty())
        fail("document '" + doc.id + "' has no sections");

    std::int64_t sid = 0;
    for (const json& sj : j["sections"]) {
        if (!sj.is_object() || !sj.contains("name")) fail("document '" + doc.id + "': section without name");
        doc.sections.push_back({sj["name"].get<std::string>(), sid});
        if (!sj.contains("paragraphs") || !sj["paragraphs"].is_array())
            fail("document '" + doc.id + "': section '" + doc.sections.back().name + "' has no paragraph array");
        for (const json& pj : sj["paragraphs"]) {
            Paragraph p;
            p.section_id = sid;
            if (!pj.contains("tokens") || !pj["tokens"].is_array())
                fail("document '" + doc.id + "': paragraph without token array");
            for (const json& t : pj["tokens"]) p.tokens.push_back(t.get<std::string>());
            if (pj.contains("spans")) {
                p.labeled = true;
                std::int64_t pidx = static_cast<std::int64_t>(doc.paragraphs.size());
                for (const json& spj : pj["spans"]) {
                    if (!spj.is_array() || spj.size() != 2)
                        fail("document '" + doc.id + "': span must be a [begin,end] pair");
                    p.gold_spans.push_back({pidx, spj[0].get<std::int64_t>(), spj[1].get<std::int64_t>()});
                }
                std::sort(p.gold_spans.begin(), p.gold_spans.end(),
                          [](const Span& a, const Span& b) { return a.begin < b.begin; });
            } else {
                p.labeled = false;
            }
            doc.paragraphs.push_back(std::move(p));
        }
        ++sid;
    }
    validate_document(doc);
    return doc;
}

json document_to_json(const Document& doc) {
    json j;
    j["v"] = kCorpusVersion;
    j["id"] = doc.id;
    json meta;
    meta["discipline"] = doc.meta.discipline;
    meta["generator"] = doc.meta.generator;
    meta["intensity"] = doc.meta.intensity;
    if (!doc.meta.extra_json.empty()) {
        json extra = json::parse(doc.meta.extra_json);
        for (auto it = extra.begin(); it != extra.end(); ++it) meta[it.key()] = it.value();
    }
    j["meta"] = std::move(meta);

    // Paragraph order must group by section for the nested layout to preserve
    // adjacency on read-back.
    for (std::size_t pi = 1; pi < doc.paragraphs.size(); ++pi)
        if (doc.paragraphs[pi].section_id < doc.paragraphs[pi - 1].section_id)
            throw ValidationError("document '" + doc.id + "': paragraphs are not grouped by section");

    json sections = json::array();
    for (std::size_t si = 0; si < doc.sections.size(); ++si) {
        json sj;
        sj["name"] = doc.sections[si].name;
        json paras = json::array();
        for (const Paragraph& p : doc.paragraphs) {
            if (p.section_id != static_cast<std::int64_t>(si)) continue;
            json pj;
            pj["tokens"] = p.tokens;
            if (p.labeled) {
                json spans = json::array();
                for (const Span& s : p.gold_spans) spans.push_back(json::array({s.begin, s.end}));
                pj["spans"] = std::move(spans);
            }
            paras.push_back(std::move(pj));
        }
        sj["paragraphs"] = std::move(paras);
        sections.push_back(std::move(sj));
    }
    j["sections"] = std::move(sections);
    return j;
}

}  // namespace

Corpus read_corpus(std::istream& in, const std::string& source_name) {
    Corpus corpus;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::string where = source_name + ":" + std::to_string(lineno);
        json j;
        try {
            j = json::parse(line);
        } catch (const json::exception& e) {
            throw ValidationError(where + ": malformed JSON (" + e.what() + ")");
        }
        corpus.push_back(parse_document(j, where));
    }
    return corpus;
}

Corpus read_corpus(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ValidationError("cannot open corpus file '" + path + "'");
    return read_corpus(f, path);
}

void write_corpus(std::ostream& out, const Corpus& corpus) {
    for (const Document& doc : corpus) out << document_to_json(doc).dump() << "\n";
}

void write_corpus(const std::string& path, const Corpus& corpus) {
    std::ofstream f(path);
    if (!f) throw ValidationError("cannot open '" + path + "' for writing");
    write_corpus(f, corpus);
    if (!f.good()) throw PipelineError("write failed for '" + path + "'");
}

}  // namespace spanforge
