#include "mmgl/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mmgl::metrics {

namespace {

// n-grams keyed by joining tokens with an unprintable separator.
std::unordered_map<std::string, std::size_t> ngram_counts(const Sentence& s, std::size_t n) {
  std::unordered_map<std::string, std::size_t> out;
  if (s.size() < n) return out;
  for (std::size_t i = 0; i + n <= s.size(); ++i) {
    std::string key = s[i];
    for (std::size_t j = 1; j < n; ++j) {
      key.push_back('\x1f');
      key.append(s[i + j]);
    }
    out[key] += 1;
  }
  return out;
}

struct BleuTally {
  std::array<std::size_t, 4> clipped{};
  std::array<std::size_t, 4> total{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;  // closest reference length
};

void tally_one(const Sentence& hyp, const std::vector<Sentence>& refs, BleuTally& t) {
  if (refs.empty()) throw std::invalid_argument("bleu4 needs at least one reference");
  for (std::size_t n = 1; n <= 4; ++n) {
    auto h = ngram_counts(hyp, n);
    std::unordered_map<std::string, std::size_t> best;
    for (const Sentence& r : refs)
      for (const auto& [g, c] : ngram_counts(r, n)) best[g] = std::max(best[g], c);
    std::size_t clipped = 0;
    for (const auto& [g, c] : h) {
      auto it = best.find(g);
      if (it != best.end()) clipped += std::min(c, it->second);
    }
    t.clipped[n - 1] += clipped;
    t.total[n - 1] += hyp.size() >= n ? hyp.size() - n + 1 : 0;
  }
  std::size_t closest = refs.front().size();
  auto gap = [&](std::size_t len) {
    return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
  };
  for (const Sentence& r : refs)
    if (gap(r.size()) < gap(closest) || (gap(r.size()) == gap(closest) && r.size() < closest))
      closest = r.size();
  t.hyp_len += hyp.size();
  t.ref_len += closest;
}

double bleu_from_tally(const BleuTally& t) {
  if (t.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (std::size_t n = 0; n < 4; ++n) {
    if (t.clipped[n] == 0 || t.total[n] == 0) return 0.0;
    log_sum += std::log((double)t.clipped[n] / (double)t.total[n]);
  }
  double bp =
      t.hyp_len >= t.ref_len ? 1.0 : std::exp(1.0 - (double)t.ref_len / (double)t.hyp_len);
  return bp * std::exp(log_sum / 4.0);
}

}  // namespace

double bleu4(const Sentence& hyp, const std::vector<Sentence>& refs) {
  BleuTally t;
  tally_one(hyp, refs, t);
  return bleu_from_tally(t);
}

double corpus_bleu4(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs) {
  if (hyps.size() != refs.size())
    throw std::invalid_argument("corpus_bleu4: hypothesis and reference counts differ");
  if (hyps.empty()) throw std::invalid_argument("corpus_bleu4 on an empty corpus");
  BleuTally t;
  for (std::size_t i = 0; i < hyps.size(); ++i) tally_one(hyps[i], {refs[i]}, t);
  return bleu_from_tally(t);
}

double rouge_l(const Sentence& hyp, const Sentence& ref) {
  if (hyp.empty() || ref.empty()) return 0.0;
  // two-row LCS table
  std::vector<std::size_t> prev(ref.size() + 1, 0), cur(ref.size() + 1, 0);
  for (std::size_t i = 1; i <= hyp.size(); ++i) {
    for (std::size_t j = 1; j <= ref.size(); ++j)
      cur[j] = hyp[i - 1] == ref[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    std::swap(prev, cur);
  }
  std::size_t lcs = prev[ref.size()];
  if (lcs == 0) return 0.0;
  double p = (double)lcs / (double)hyp.size();
  double r = (double)lcs / (double)ref.size();
  return 2.0 * p * r / (p + r);
}

CorpusStats corpus_stats(const std::vector<Sentence>& refs) {
  if (refs.empty()) throw std::invalid_argument("corpus_stats on an empty corpus");
  CorpusStats s;
  s.m = refs.size();
  for (const Sentence& r : refs)
    for (std::size_t n = 1; n <= 4; ++n)
      for (const auto& [g, c] : ngram_counts(r, n)) s.df[n - 1][g] += 1;
  return s;
}

double cider(const std::vector<Sentence>& hyps, const std::vector<Sentence>& refs,
             const CorpusStats& stats) {
  if (stats.m == 0) throw std::invalid_argument("cider needs a nonempty reference corpus");
  if (hyps.size() != refs.size())
    throw std::invalid_argument("cider: hypothesis and reference counts differ");
  if (hyps.empty()) throw std::invalid_argument("cider on an empty corpus");

  double corpus_sum = 0.0;
  for (std::size_t i = 0; i < hyps.size(); ++i) {
    double item = 0.0;
    for (std::size_t n = 1; n <= 4; ++n) {
      auto hg = ngram_counts(hyps[i], n);
      auto rg = ngram_counts(refs[i], n);
      auto idf = [&](const std::string& g) {
        auto it = stats.df[n - 1].find(g);
        double df = it == stats.df[n - 1].end() ? 1.0 : std::max<double>(1.0, (double)it->second);
        return std::log((double)stats.m / df);
      };
      double dot = 0.0, norm_h = 0.0, norm_r = 0.0;
      for (const auto& [g, c] : hg) {
        double w = (double)c * idf(g);
        norm_h += w * w;
        auto it = rg.find(g);
        if (it != rg.end()) dot += w * (double)it->second * idf(g);
      }
      for (const auto& [g, c] : rg) {
        double w = (double)c * idf(g);
        norm_r += w * w;
      }
      if (norm_h > 0 && norm_r > 0) item += dot / (std::sqrt(norm_h) * std::sqrt(norm_r));
    }
    corpus_sum += 10.0 * item / 4.0;
  }
  return corpus_sum / (double)hyps.size();
}

}  // namespace mmgl::metrics
