#include "core/corpus_gen.hpp"

#include <algorithm>
#include <cmath>

#include "core/rng.hpp"

namespace spanforge {

namespace {

void validate_config(const CorpusConfig& c) {
    auto fail = [](const std::string& why) { throw ValidationError("corpus config: " + why); };
    if (c.doc_count < 0) fail("doc_count must be >= 0");
    if (c.vocab_size < 2) fail("vocab_size must be >= 2");
    if (c.paragraphs_min < 1 || c.paragraphs_max < c.paragraphs_min) fail("bad paragraphs range");
    if (c.tokens_min < 1 || c.tokens_max < c.tokens_min) fail("bad tokens range");
    if (c.vocab_overlap < 0.0 || c.vocab_overlap > 1.0) fail("vocab_overlap must be in [0,1]");
    if (c.ai_span_rate < 0.0 || c.ai_span_rate > 1.0) fail("ai_span_rate must be in [0,1]");
    if (c.span_length_mean < 1.0) fail("span_length_mean must be >= 1");
    if (c.section_bias < 0.0 || c.section_bias > 1.0) fail("section_bias must be in [0,1]");
    if (c.intensity_mix.size() != 4) fail("intensity_mix needs 4 weights (Light..Extreme)");
    double mix = 0.0;
    for (double w : c.intensity_mix) {
        if (w < 0.0) fail("intensity_mix weights must be >= 0");
        mix += w;
    }
    if (!(mix > 0.0)) fail("intensity_mix weights must not all be zero");
    if (c.disciplines.empty()) fail("no disciplines");
    if (c.generators.empty()) fail("no generators");
}

std::int64_t shared_count(const CorpusConfig& c) {
    return static_cast<std::int64_t>(std::llround(c.vocab_overlap * static_cast<double>(c.vocab_size)));
}

// Order-1 Markov chain over vocabulary indices: mostly a fixed affine walk
// (per-source bigram structure), sometimes a uniform jump.
struct MarkovSource {
    std::int64_t n;
    std::int64_t mult, add;
    double stick = 0.75;

    std::int64_t start(Rng& rng) const { return static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n))); }
    std::int64_t step(std::int64_t prev, Rng& rng) const {
        if (rng.bernoulli(stick)) return (prev * mult + add) % n;
        return static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(n)));
    }
};

// Token surfaces carry their source as a constant prefix so the char-3-gram
// hash sees class evidence in every type (no type is shorter than the gram
// window). Shared types are spelled identically for both sources — that
// spelling, not a flag, is what makes them irreducibly ambiguous.
constexpr std::string_view kHumanPrefix = "hum";
constexpr std::string_view kAiPrefix = "gen";

std::string human_token(std::int64_t idx) {
    return std::string(kHumanPrefix) + std::to_string(idx);
}

std::string ai_token(std::int64_t idx, std::int64_t shared) {
    return idx < shared ? human_token(idx)
                        : std::string(kAiPrefix) + std::to_string(idx - shared);
}

// Section roles carry different AI propensities so that section identity is a
// genuine signal rather than decoration.
struct RoleInfo {
    const char* name;
    double ai_mult;
};
constexpr RoleInfo kRoles[] = {
    {"Introduction", 0.4}, {"Methods", 1.6}, {"Results", 1.2}, {"Discussion", 0.8}};

std::int64_t parse_vocab_index(const std::string& token) {
    if (token.size() <= kHumanPrefix.size()) return -1;
    std::int64_t v = 0;
    for (std::size_t i = kHumanPrefix.size(); i < token.size(); ++i) {
        char ch = token[i];
        if (ch < '0' || ch > '9') return -1;
        v = v * 10 + (ch - '0');
    }
    return v;
}

}  // namespace

bool token_in_human_vocab(const std::string& token, const CorpusConfig& config) {
    std::int64_t idx = parse_vocab_index(token);
    return token.starts_with(kHumanPrefix) && idx >= 0 && idx < config.vocab_size;
}

bool token_in_ai_vocab(const std::string& token, const CorpusConfig& config) {
    std::int64_t idx = parse_vocab_index(token);
    if (idx < 0) return false;
    std::int64_t shared = shared_count(config);
    if (token.starts_with(kHumanPrefix)) return idx < shared;
    if (token.starts_with(kAiPrefix)) return idx < config.vocab_size - shared;
    return false;
}

Corpus synth_corpus_traced(const CorpusConfig& config, CorpusTrace& trace) {
    validate_config(config);
    const std::int64_t n = config.vocab_size;
    const std::int64_t shared = shared_count(config);
    Rng rng = Rng::stream(config.rng_seed, "corpus");

    Corpus corpus;
    corpus.reserve(static_cast<std::size_t>(config.doc_count));
    trace.rewritten.assign(static_cast<std::size_t>(config.doc_count), {});

    for (std::int64_t di = 0; di < config.doc_count; ++di) {
        Document doc;
        doc.id = "doc" + std::to_string(di);
        std::size_t d_idx = static_cast<std::size_t>(rng.below(config.disciplines.size()));
        std::size_t g_idx = static_cast<std::size_t>(rng.below(config.generators.size()));
        doc.meta.discipline = config.disciplines[d_idx];
        doc.meta.generator = config.generators[g_idx];

        MarkovSource human{n, 7 + 2 * static_cast<std::int64_t>(d_idx), 3};
        MarkovSource ai{n, 11 + 2 * static_cast<std::int64_t>(g_idx), 5 + static_cast<std::int64_t>(g_idx)};

        // Rewrite level and fraction are per document.
        auto level = static_cast<RewriteIntensity>(rng.categorical(config.intensity_mix));
        doc.meta.intensity = intensity_name(level);
        FractionRange fr = intensity_fraction_range(level);
        double rewrite_frac = rng.uniform(fr.lo, fr.hi);

        std::int64_t para_count = rng.range(config.paragraphs_min, config.paragraphs_max);
        std::int64_t section_count = std::min<std::int64_t>(4, para_count);
        for (std::int64_t s = 0; s < section_count; ++s)
            doc.sections.push_back({kRoles[s].name, s});

        std::int64_t base = para_count / section_count;
        std::int64_t extra = para_count % section_count;
        auto& doc_trace = trace.rewritten[static_cast<std::size_t>(di)];

        std::int64_t para_index = 0;
        for (std::int64_t s = 0; s < section_count; ++s) {
            std::int64_t block = base + (s < extra ? 1 : 0);
            double p_inject = config.ai_span_rate *
                              ((1.0 - config.section_bias) + config.section_bias * kRoles[s].ai_mult);
            p_inject = std::clamp(p_inject, 0.0, 0.95);

            for (std::int64_t b = 0; b < block; ++b, ++para_index) {
                Paragraph para;
                para.section_id = s;
                std::int64_t T = rng.range(config.tokens_min, config.tokens_max);

                // Base paragraph from the human process.
                std::int64_t state = human.start(rng);
                para.tokens.reserve(static_cast<std::size_t>(T));
                for (std::int64_t t = 0; t < T; ++t) {
                    para.tokens.push_back(human_token(state));
                    state = human.step(state, rng);
                }

                // Decide span layout.
                std::int64_t k = 0;
                if (rng.bernoulli(p_inject)) {
                    k = 1;
                    if (T >= 3 * static_cast<std::int64_t>(config.span_length_mean) && rng.bernoulli(0.3)) k = 2;
                }
                std::vector<std::int64_t> lens;
                for (std::int64_t i = 0; i < k; ++i) {
                    std::int64_t L = 1 + static_cast<std::int64_t>(rng.geometric(config.span_length_mean - 1.0));
                    lens.push_back(L);
                }
                // Shrink to fit T with one mandatory gap between spans.
                if (k > 0) {
                    std::int64_t avail = T - (k - 1);
                    std::int64_t total = lens[0] + (k == 2 ? lens[1] : 0);
                    if (total > avail) {
                        if (k == 2 && avail >= 2) {
                            lens = {avail / 2, avail - avail / 2};
                        } else {
                            k = 1;
                            lens = {std::min(lens[0], T)};
                        }
                    }
                }

                std::vector<std::int64_t> rewritten_here;
                if (k > 0) {
                    std::int64_t used = (k - 1);
                    for (std::int64_t i = 0; i < k; ++i) used += lens[static_cast<std::size_t>(i)];
                    std::int64_t free = T - used;
                    std::int64_t cursor = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(free + 1)));
                    free -= cursor;
                    for (std::int64_t i = 0; i < k; ++i) {
                        std::int64_t L = lens[static_cast<std::size_t>(i)];
                        Span sp{para_index, cursor, cursor + L - 1};
                        // Overwrite with AI-process tokens.
                        std::int64_t astate = ai.start(rng);
                        for (std::int64_t t = sp.begin; t <= sp.end; ++t) {
                            para.tokens[static_cast<std::size_t>(t)] = ai_token(astate, shared);
                            astate = ai.step(astate, rng);
                        }
                        // Rewrite pass: resample a fraction from the human process.
                        std::int64_t n_rw = static_cast<std::int64_t>(std::llround(rewrite_frac * static_cast<double>(L)));
                        if (n_rw > 0) {
                            std::vector<std::int64_t> pos;
                            for (std::int64_t t = sp.begin; t <= sp.end; ++t) pos.push_back(t);
                            rng.shuffle(pos);
                            pos.resize(static_cast<std::size_t>(std::min(n_rw, L)));
                            std::sort(pos.begin(), pos.end());
                            for (std::int64_t t : pos) {
                                std::int64_t prev = t > 0 ? parse_vocab_index(para.tokens[static_cast<std::size_t>(t - 1)]) : -1;
                                bool prev_human = t > 0 &&
                                                  para.tokens[static_cast<std::size_t>(t - 1)].starts_with(kHumanPrefix) &&
                                                  prev >= 0 && prev < n;
                                std::int64_t hstate = prev_human ? human.step(prev, rng) : human.start(rng);
                                para.tokens[static_cast<std::size_t>(t)] = human_token(hstate);
                                rewritten_here.push_back(t);
                            }
                        }
                        para.gold_spans.push_back(sp);
                        cursor = sp.end + 2;  // mandatory 1-token gap
                        if (i + 1 < k) {
                            std::int64_t pad = static_cast<std::int64_t>(rng.below(static_cast<std::uint64_t>(free + 1)));
                            cursor += pad;
                            free -= pad;
                        }
                    }
                }
                std::sort(rewritten_here.begin(), rewritten_here.end());
                doc_trace.push_back(std::move(rewritten_here));
                doc.paragraphs.push_back(std::move(para));
            }
        }
        validate_document(doc);
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

Corpus synth_corpus(const CorpusConfig& config) {
    CorpusTrace trace;
    return synth_corpus_traced(config, trace);
}

}  // namespace spanforge
