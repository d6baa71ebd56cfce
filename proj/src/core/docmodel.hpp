#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "core/errors.hpp"

namespace spanforge {

// Closed token interval [begin, end] inside one paragraph.
struct Span {
    std::int64_t paragraph = 0;
    std::int64_t begin = 0;
    std::int64_t end = 0;

    friend bool operator==(const Span&, const Span&) = default;
    friend auto operator<=>(const Span&, const Span&) = default;
};

enum class Tag : std::uint8_t { O = 0, B = 1, I = 2 };

struct Paragraph {
    std::vector<std::string> tokens;
    std::int64_t section_id = 0;
    // Gold annotation. labeled=false means "unknown", not "no AI spans".
    bool labeled = true;
    std::vector<Span> gold_spans;  // sorted, non-overlapping, paragraph field = own index

    std::int64_t size() const { return static_cast<std::int64_t>(tokens.size()); }
    std::vector<int> token_labels() const;  // 1 iff covered by a gold span
};

struct Section {
    std::string name;          // Introduction / Methods / Results / Discussion / other label
    std::int64_t position = 0; // ordinal within the document
};

struct DocMeta {
    std::string discipline;
    std::string generator;
    std::string intensity;  // Light / Medium / Heavy / Extreme
    std::string extra_json; // unknown metadata keys, preserved verbatim as a JSON object
};

struct Document {
    std::string id;
    std::vector<Section> sections;
    std::vector<Paragraph> paragraphs;
    DocMeta meta;
};

using Corpus = std::vector<Document>;

enum class RewriteIntensity : int { Light = 0, Medium = 1, Heavy = 2, Extreme = 3 };

const char* intensity_name(RewriteIntensity level);
RewriteIntensity intensity_from_name(const std::string& name);
// Fraction of AI-span tokens resampled from the human process: [lo, hi).
struct FractionRange { double lo, hi; };
FractionRange intensity_fraction_range(RewriteIntensity level);

// ---- BIO conversion ---------------------------------------------------------

// Lays spans over a length-n tag sequence: B at begin, I through end, O elsewhere.
// Spans must be sorted, non-overlapping and inside [0, length).
std::vector<Tag> bio_from_spans(std::int64_t length, const std::vector<Span>& spans);

// Inverse of bio_from_spans. Strict mode rejects I without a preceding B/I;
// lenient mode (third-party annotations) lets a stray I open a span.
std::vector<Span> spans_from_bio(const std::vector<Tag>& tags, bool strict = true);

// ---- validation ---------------------------------------------------------------

// Checks every documented invariant; throws ValidationError naming the document.
void validate_document(const Document& doc);

// ---- splits -------------------------------------------------------------------

struct SplitScheme {
    enum class Kind { Random, CrossGenerator, CrossDiscipline } kind = Kind::Random;
    double p_train = 0.8;
    double p_val = 0.1;
    std::set<std::string> heldout;  // cross-* schemes: labels that go to test

    static SplitScheme random(double p_train, double p_val);
    static SplitScheme cross_generator(std::set<std::string> heldout, double p_val = 0.1);
    static SplitScheme cross_discipline(std::set<std::string> heldout, double p_val = 0.1);
    // e.g. "random", "random:0.8,0.1", "cross_generator:gpt", "cross_discipline:bio,cs"
    static SplitScheme parse(const std::string& text);
};

struct CorpusSplit {
    Corpus train, validation, test;
};

CorpusSplit split_corpus(const Corpus& corpus, const SplitScheme& scheme, std::uint64_t seed);

}  // namespace spanforge
