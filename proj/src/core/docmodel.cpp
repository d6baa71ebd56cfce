#include "core/docmodel.hpp"

#include <algorithm>

#include "core/rng.hpp"
#include "core/strings.hpp"

namespace spanforge {

std::vector<int> Paragraph::token_labels() const {
    std::vector<int> y(tokens.size(), 0);
    for (const Span& s : gold_spans)
        for (std::int64_t t = s.begin; t <= s.end; ++t) y[static_cast<std::size_t>(t)] = 1;
    return y;
}

const char* intensity_name(RewriteIntensity level) {
    switch (level) {
        case RewriteIntensity::Light: return "Light";
        case RewriteIntensity::Medium: return "Medium";
        case RewriteIntensity::Heavy: return "Heavy";
        case RewriteIntensity::Extreme: return "Extreme";
    }
    throw ContractError("intensity_name: bad level");
}

RewriteIntensity intensity_from_name(const std::string& name) {
    if (name == "Light") return RewriteIntensity::Light;
    if (name == "Medium") return RewriteIntensity::Medium;
    if (name == "Heavy") return RewriteIntensity::Heavy;
    if (name == "Extreme") return RewriteIntensity::Extreme;
    throw ValidationError("unknown rewrite intensity '" + name + "'");
}

FractionRange intensity_fraction_range(RewriteIntensity level) {
    switch (level) {
        case RewriteIntensity::Light: return {0.0, 0.10};
        case RewriteIntensity::Medium: return {0.10, 0.20};
        case RewriteIntensity::Heavy: return {0.20, 0.30};
        case RewriteIntensity::Extreme: return {0.30, 1.0};
    }
    throw ContractError("intensity_fraction_range: bad level");
}

std::vector<Tag> bio_from_spans(std::int64_t length, const std::vector<Span>& spans) {
    std::vector<Tag> tags(static_cast<std::size_t>(length), Tag::O);
    std::int64_t prev_end = -1;
    for (const Span& s : spans) {
        if (s.begin < 0 || s.end < s.begin || s.end >= length)
            throw ValidationError("span [" + std::to_string(s.begin) + "," + std::to_string(s.end) +
                                  "] out of range for paragraph of length " + std::to_string(length));
        if (s.begin <= prev_end)
            throw ValidationError("spans overlap or are unsorted at [" + std::to_string(s.begin) + "," +
                                  std::to_string(s.end) + "]");
        prev_end = s.end;
        tags[static_cast<std::size_t>(s.begin)] = Tag::B;
        for (std::int64_t t = s.begin + 1; t <= s.end; ++t) tags[static_cast<std::size_t>(t)] = Tag::I;
    }
    return tags;
}

std::vector<Span> spans_from_bio(const std::vector<Tag>& tags, bool strict) {
    std::vector<Span> out;
    std::int64_t open = -1;
    for (std::size_t t = 0; t < tags.size(); ++t) {
        Tag tag = tags[t];
        if (tag == Tag::B) {
            if (open >= 0) out.push_back({0, open, static_cast<std::int64_t>(t) - 1});
            open = static_cast<std::int64_t>(t);
        } else if (tag == Tag::I) {
            if (open < 0) {
                if (strict)
                    throw ValidationError("BIO sequence: I without preceding B at position " + std::to_string(t));
                open = static_cast<std::int64_t>(t);  // lenient: stray I opens a span
            }
        } else {  // O
            if (open >= 0) {
                out.push_back({0, open, static_cast<std::int64_t>(t) - 1});
                open = -1;
            }
        }
    }
    if (open >= 0) out.push_back({0, open, static_cast<std::int64_t>(tags.size()) - 1});
    return out;
}

void validate_document(const Document& doc) {
    auto fail = [&](const std::string& why) {
        throw ValidationError("document '" + doc.id + "': " + why);
    };
    if (doc.sections.empty()) fail("no sections");
    if (doc.paragraphs.empty()) fail("no paragraphs");
    for (std::size_t i = 1; i < doc.sections.size(); ++i)
        if (doc.sections[i].position <= doc.sections[i - 1].position) fail("section positions not increasing");
    for (std::size_t pi = 0; pi < doc.paragraphs.size(); ++pi) {
        const Paragraph& p = doc.paragraphs[pi];
        if (p.section_id < 0 || p.section_id >= static_cast<std::int64_t>(doc.sections.size()))
            fail("paragraph " + std::to_string(pi) + " has unresolved section_id " + std::to_string(p.section_id));
        std::int64_t prev_end = -1;
        for (const Span& s : p.gold_spans) {
            if (s.begin < 0 || s.end < s.begin || s.end >= p.size())
                fail("paragraph " + std::to_string(pi) + " span [" + std::to_string(s.begin) + "," +
                     std::to_string(s.end) + "] out of range");
            if (s.begin <= prev_end) fail("paragraph " + std::to_string(pi) + " has overlapping/unsorted spans");
            prev_end = s.end;
        }
    }
}

SplitScheme SplitScheme::random(double p_train, double p_val) {
    if (p_train < 0 || p_val < 0 || p_train + p_val > 1.0)
        throw ValidationError("split: need p_train, p_val >= 0 and p_train + p_val <= 1");
    SplitScheme s;
    s.kind = Kind::Random;
    s.p_train = p_train;
    s.p_val = p_val;
    return s;
}

SplitScheme SplitScheme::cross_generator(std::set<std::string> heldout, double p_val) {
    if (heldout.empty()) throw ValidationError("cross_generator split: no held-out labels");
    SplitScheme s;
    s.kind = Kind::CrossGenerator;
    s.heldout = std::move(heldout);
    s.p_val = p_val;
    return s;
}

SplitScheme SplitScheme::cross_discipline(std::set<std::string> heldout, double p_val) {
    if (heldout.empty()) throw ValidationError("cross_discipline split: no held-out labels");
    SplitScheme s;
    s.kind = Kind::CrossDiscipline;
    s.heldout = std::move(heldout);
    s.p_val = p_val;
    return s;
}

SplitScheme SplitScheme::parse(const std::string& text) {
    std::string head = text;
    std::string arg;
    if (auto colon = text.find(':'); colon != std::string::npos) {
        head = text.substr(0, colon);
        arg = text.substr(colon + 1);
    }
    if (head == "random") {
        if (arg.empty()) return random(0.8, 0.1);
        auto parts = split(arg, ',');
        if (parts.size() != 2) throw ValidationError("split 'random' takes p_train,p_val, got '" + arg + "'");
        return random(parse_double(parts[0], "split p_train"), parse_double(parts[1], "split p_val"));
    }
    if (head == "cross_generator" || head == "cross_discipline") {
        std::set<std::string> held;
        for (auto& s : split(arg, ',')) {
            auto t = trim(s);
            if (!t.empty()) held.insert(std::string(t));
        }
        if (held.empty()) throw ValidationError("split '" + head + "' needs held-out labels after ':'");
        return head == "cross_generator" ? cross_generator(std::move(held)) : cross_discipline(std::move(held));
    }
    throw ValidationError("unknown split scheme '" + text + "'");
}

CorpusSplit split_corpus(const Corpus& corpus, const SplitScheme& scheme, std::uint64_t seed) {
    CorpusSplit out;
    Rng rng = Rng::stream(seed, "split");
    if (scheme.kind == SplitScheme::Kind::Random) {
        std::vector<std::size_t> order(corpus.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        rng.shuffle(order);
        auto n = static_cast<double>(corpus.size());
        auto n_train = static_cast<std::size_t>(scheme.p_train * n);
        auto n_val = static_cast<std::size_t>(scheme.p_val * n);
        for (std::size_t i = 0; i < order.size(); ++i) {
            const Document& d = corpus[order[i]];
            if (i < n_train) out.train.push_back(d);
            else if (i < n_train + n_val) out.validation.push_back(d);
            else out.test.push_back(d);
        }
        return out;
    }
    const bool by_gen = scheme.kind == SplitScheme::Kind::CrossGenerator;
    std::set<std::string> seen;
    std::vector<std::size_t> rest;
    for (std::size_t i = 0; i < corpus.size(); ++i) {
        const std::string& label = by_gen ? corpus[i].meta.generator : corpus[i].meta.discipline;
        if (scheme.heldout.count(label)) {
            seen.insert(label);
            out.test.push_back(corpus[i]);
        } else {
            rest.push_back(i);
        }
    }
    for (const std::string& label : scheme.heldout)
        if (!seen.count(label))
            throw ValidationError("held-out label '" + label + "' not present in the corpus");
    rng.shuffle(rest);
    auto n_val = static_cast<std::size_t>(scheme.p_val * static_cast<double>(corpus.size()));
    n_val = std::min(n_val, rest.size());
    for (std::size_t i = 0; i < rest.size(); ++i) {
        if (i < n_val) out.validation.push_back(corpus[rest[i]]);
        else out.train.push_back(corpus[rest[i]]);
    }
    return out;
}

}  // namespace spanforge
