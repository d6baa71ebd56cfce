#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "core/docmodel.hpp"

namespace spanforge {

// Knobs for the synthetic mixed-authorship corpus. The default values make a
// corpus a small model can learn from in seconds while leaving headroom to
// dial difficulty up (vocab_overlap -> 1, heavy rewrite mix).
struct CorpusConfig {
    std::int64_t doc_count = 100;
    std::int64_t paragraphs_min = 6, paragraphs_max = 10;
    std::int64_t tokens_min = 20, tokens_max = 40;
    std::int64_t vocab_size = 200;        // per source
    double vocab_overlap = 0.3;            // |V_H ∩ V_A| / |V_A|
    double ai_span_rate = 0.4;             // per-paragraph injection probability (before section bias)
    double span_length_mean = 8.0;         // geometric length distribution
    // Mixing weights over Light/Medium/Heavy/Extreme rewrite levels.
    std::vector<double> intensity_mix = {1.0, 0.0, 0.0, 0.0};
    // Strength of the section-conditioned injection-rate modulation in [0,1].
    // 0 = every section behaves alike; 1 = full per-role multipliers.
    double section_bias = 0.7;
    std::vector<std::string> disciplines = {"cs", "bio"};
    std::vector<std::string> generators = {"alpha", "beta"};
    std::uint64_t rng_seed = 1;
};

// Where the rewrite pass touched the corpus: rewritten token positions per
// paragraph, used by oracle tests that need to exclude rewritten tokens.
struct CorpusTrace {
    // [doc][paragraph] -> rewritten token positions (ascending)
    std::vector<std::vector<std::vector<std::int64_t>>> rewritten;
};

Corpus synth_corpus(const CorpusConfig& config);
Corpus synth_corpus_traced(const CorpusConfig& config, CorpusTrace& trace);

// Vocabulary membership of a synthetic token: helpers for difficulty oracles.
bool token_in_human_vocab(const std::string& token, const CorpusConfig& config);
bool token_in_ai_vocab(const std::string& token, const CorpusConfig& config);

}  // namespace spanforge
