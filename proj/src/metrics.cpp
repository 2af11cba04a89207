#include "r1t/metrics.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <map>
#include <numeric>

#include "r1t/errors.hpp"

namespace r1t {

namespace {

using Ngram = std::vector<std::string>;

std::map<Ngram, int64_t> ngram_counts(const std::vector<std::string>& tokens, int n) {
  std::map<Ngram, int64_t> counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (size_t i = 0; i + static_cast<size_t>(n) <= tokens.size(); ++i)
    counts[Ngram(tokens.begin() + static_cast<long>(i),
                 tokens.begin() + static_cast<long>(i) + n)] += 1;
  return counts;
}

int64_t clipped_overlap(const std::map<Ngram, int64_t>& hyp, const std::map<Ngram, int64_t>& ref) {
  int64_t overlap = 0;
  for (const auto& [gram, count] : hyp) {
    auto it = ref.find(gram);
    if (it != ref.end()) overlap += std::min(count, it->second);
  }
  return overlap;
}

template <typename Seq>
int64_t levenshtein(const Seq& a, const Seq& b) {
  const size_t n = a.size(), m = b.size();
  std::vector<int64_t> prev(m + 1), cur(m + 1);
  std::iota(prev.begin(), prev.end(), 0);
  for (size_t i = 1; i <= n; ++i) {
    cur[0] = static_cast<int64_t>(i);
    for (size_t j = 1; j <= m; ++j) {
      const int64_t sub = prev[j - 1] + (a[i - 1] == b[j - 1] ? 0 : 1);
      cur[j] = std::min({prev[j] + 1, cur[j - 1] + 1, sub});
    }
    std::swap(prev, cur);
  }
  return prev[m];
}

}  // namespace

std::vector<std::string> split_punct_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) {
      out.push_back(cur);
      cur.clear();
    }
  };
  for (const char c : text) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      flush();
    } else if (std::ispunct(static_cast<unsigned char>(c))) {
      flush();
      out.emplace_back(1, c);
    } else {
      cur += c;
    }
  }
  flush();
  return out;
}

double bleu_n(const std::vector<TokenizedPair>& pairs, int n) {
  if (pairs.empty()) throw ContractError("BLEU over an empty corpus");
  if (n < 1 || n > 4) throw ContractError(msg("BLEU order must be 1..4, got ", n));

  int64_t hyp_len = 0, ref_len = 0;
  for (const auto& p : pairs) {
    hyp_len += static_cast<int64_t>(p.hyp.size());
    ref_len += static_cast<int64_t>(p.ref.size());
  }
  if (hyp_len == 0) return 0.0;

  constexpr double kEps = 1e-9;
  double log_sum = 0;
  int orders = 0;  // effective order: n-gram sizes no hypothesis can reach drop out
  for (int k = 1; k <= n; ++k) {
    int64_t matches = 0, total = 0;
    for (const auto& p : pairs) {
      const auto hyp_counts = ngram_counts(p.hyp, k);
      const auto ref_counts = ngram_counts(p.ref, k);
      matches += clipped_overlap(hyp_counts, ref_counts);
      total += std::max<int64_t>(0, static_cast<int64_t>(p.hyp.size()) - k + 1);
    }
    if (total == 0) continue;
    const double precision =
        matches > 0 ? static_cast<double>(matches) / static_cast<double>(total) : kEps;
    log_sum += std::log(precision);
    ++orders;
  }
  if (orders == 0) return 0.0;
  const double geo = std::exp(log_sum / orders);
  const double bp = hyp_len < ref_len
                        ? std::exp(1.0 - static_cast<double>(ref_len) / static_cast<double>(hyp_len))
                        : 1.0;
  return 100.0 * bp * geo;
}

double corpus_bleu_sacre_style(
    const std::vector<std::pair<std::string, std::string>>& ref_hyp) {
  if (ref_hyp.empty()) throw ContractError("BLEU over an empty corpus");
  std::vector<TokenizedPair> pairs;
  pairs.reserve(ref_hyp.size());
  for (const auto& [ref, hyp] : ref_hyp)
    pairs.push_back({split_punct_tokens(ref), split_punct_tokens(hyp)});
  return bleu_n(pairs, 4);
}

RougeScore rouge_n(const TokenizedPair& pair, int n) {
  if (n != 1 && n != 2) throw ContractError(msg("ROUGE-N order must be 1 or 2, got ", n));
  RougeScore s;
  const int64_t hyp_grams = static_cast<int64_t>(pair.hyp.size()) - n + 1;
  const int64_t ref_grams = static_cast<int64_t>(pair.ref.size()) - n + 1;
  if (hyp_grams <= 0 || ref_grams <= 0) return s;
  const int64_t overlap = clipped_overlap(ngram_counts(pair.hyp, n), ngram_counts(pair.ref, n));
  s.p = static_cast<double>(overlap) / static_cast<double>(hyp_grams);
  s.r = static_cast<double>(overlap) / static_cast<double>(ref_grams);
  s.f = s.p + s.r > 0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
  return s;
}

RougeScore rouge_l(const TokenizedPair& pair) {
  RougeScore s;
  if (pair.hyp.empty() || pair.ref.empty()) return s;
  const size_t n = pair.ref.size(), m = pair.hyp.size();
  std::vector<int64_t> prev(m + 1, 0), cur(m + 1, 0);
  for (size_t i = 1; i <= n; ++i) {
    for (size_t j = 1; j <= m; ++j) {
      cur[j] = pair.ref[i - 1] == pair.hyp[j - 1] ? prev[j - 1] + 1
                                                  : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  const double lcs = static_cast<double>(prev[m]);
  s.p = lcs / static_cast<double>(m);
  s.r = lcs / static_cast<double>(n);
  s.f = s.p + s.r > 0 ? 2.0 * s.p * s.r / (s.p + s.r) : 0.0;
  return s;
}

double wer(const TokenizedPair& pair) {
  if (pair.ref.empty()) throw ContractError("WER with an empty reference");
  return static_cast<double>(levenshtein(pair.ref, pair.hyp)) /
         static_cast<double>(pair.ref.size());
}

double cer(const std::string& ref, const std::string& hyp) {
  if (ref.empty()) throw ContractError("CER with an empty reference");
  return static_cast<double>(levenshtein(ref, hyp)) / static_cast<double>(ref.size());
}

double corpus_wer(const std::vector<TokenizedPair>& pairs) {
  if (pairs.empty()) throw ContractError("WER over an empty corpus");
  int64_t edits = 0, ref_len = 0;
  for (const auto& p : pairs) {
    if (p.ref.empty()) throw ContractError("WER with an empty reference");
    edits += levenshtein(p.ref, p.hyp);
    ref_len += static_cast<int64_t>(p.ref.size());
  }
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

double corpus_cer(const std::vector<std::pair<std::string, std::string>>& ref_hyp) {
  if (ref_hyp.empty()) throw ContractError("CER over an empty corpus");
  int64_t edits = 0, ref_len = 0;
  for (const auto& [ref, hyp] : ref_hyp) {
    if (ref.empty()) throw ContractError("CER with an empty reference");
    edits += levenshtein(ref, hyp);
    ref_len += static_cast<int64_t>(ref.size());
  }
  return static_cast<double>(edits) / static_cast<double>(ref_len);
}

}  // namespace r1t
