#pragma once

#include <array>
#include <string>
#include <unordered_map>
#include <vector>

namespace mmgl::metrics {

// Tokenized, lowercased text; tokens must be nonempty.
using Sentence = std::vector<std::string>;

// Geometric mean of clipped n-gram precisions (n = 1..4) times the brevity
// penalty. Unsmoothed: any zero precision zeroes the score. Empty hypothesis
// scores 0; an empty reference list is an error.
double bleu4(const Sentence& hyp, const std::vector<Sentence>& refs);

// Same formula over counts pooled across the corpus, one reference per
// hypothesis, sidestepping the sentence-level zero-precision cliff.
double corpus_bleu4(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs);

// LCS-based F1. Zero when either side is empty or nothing matches.
double rouge_l(const Sentence& hyp, const Sentence& ref);

// Document frequencies of reference n-grams, the IDF base.
struct CorpusStats {
  std::size_t m = 0;  // corpus size
  std::array<std::unordered_map<std::string, std::size_t>, 4> df;
};

CorpusStats corpus_stats(const std::vector<Sentence>& refs);

// Mean over items of 10 * mean over n of the TF-IDF n-gram cosine, with
// IDF = ln(m/df) (df floored at 1) and cosine 0 when either vector is zero.
double cider(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
             const CorpusStats& stats);

}  // namespace mmgl::metrics
