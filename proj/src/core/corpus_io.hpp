#pragma once

#include <iosfwd>
#include <string>

#include "core/docmodel.hpp"

namespace spanforge {

// Corpus JSONL: one document per line,
//   {"v":1,"id":...,"meta":{"discipline","generator","intensity",...},
//    "sections":[{"name",...,"paragraphs":[{"tokens":[...],"spans":[[b,e],...]}]}]}
// "spans" may be absent (paragraph unlabeled). Unknown meta keys round-trip.
Corpus read_corpus(std::istream& in, const std::string& source_name);
Corpus read_corpus(const std::string& path);
void write_corpus(std::ostream& out, const Corpus& corpus);
void write_corpus(const std::string& path, const Corpus& corpus);

}  // namespace spanforge
