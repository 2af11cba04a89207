#pragma once

#include <string>
#include <vector>

namespace r1t {

struct TokenizedPair {
  std::vector<std::string> ref;
  std::vector<std::string> hyp;
};

struct RougeScore {
  double p = 0, r = 0, f = 0;
};

// Whitespace split with punctuation broken out into separate tokens,
// case-sensitive. The fixed tokenization behind corpus_bleu_sacre_style.
std::vector<std::string> split_punct_tokens(const std::string& text);

// Corpus-level BLEU-n as a percentage: clipped modified n-gram precisions,
// geometric mean over orders 1..n, brevity penalty exp(1-r/c) when c<r.
// Zero match counts are floored at 1e-9 before the log.
double bleu_n(const std::vector<TokenizedPair>& pairs, int n);

// BLEU-4 over raw strings run through split_punct_tokens.
double corpus_bleu_sacre_style(
    const std::vector<std::pair<std::string, std::string>>& ref_hyp);

// Sentence-level ROUGE. n in {1,2}. Hypotheses shorter than n score zeros.
RougeScore rouge_n(const TokenizedPair& pair, int n);
RougeScore rouge_l(const TokenizedPair& pair);

// Word-level Levenshtein / reference length. May exceed 1 (insertions).
double wer(const TokenizedPair& pair);
// Character-level (spaces included) over the raw strings.
double cer(const std::string& ref, const std::string& hyp);

// Corpus aggregation: total edits / total reference length.
double corpus_wer(const std::vector<TokenizedPair>& pairs);
double corpus_cer(const std::vector<std::pair<std::string, std::string>>& ref_hyp);

}  // namespace r1t
