#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "r1t/model.hpp"

namespace r1t {

struct DecodeConfig {
  enum class Mode { teacher_forced, greedy, beam };
  Mode mode = Mode::beam;
  int beam_width = 4;
  int64_t max_len = 64;       // generated tokens after BOS, EOS included
  double length_penalty = 0;  // 0 disables length normalization

  void validate() const {
    if (mode == Mode::beam && beam_width < 2)
      throw ContractError(msg("beam mode needs width >= 2, got ", beam_width));
    if (beam_width < 1) throw ContractError(msg("beam width must be >= 1, got ", beam_width));
    if (max_len < 1) throw ContractError(msg("max_len must be >= 1, got ", max_len));
    if (length_penalty < 0)
      throw ContractError(msg("length penalty must be >= 0, got ", length_penalty));
  }
};

inline const char* decode_mode_name(DecodeConfig::Mode m) {
  switch (m) {
    case DecodeConfig::Mode::teacher_forced: return "teacher_forced";
    case DecodeConfig::Mode::greedy: return "greedy";
    case DecodeConfig::Mode::beam: return "beam";
  }
  return "unknown";
}

struct Hypothesis {
  std::vector<int32_t> ids;  // always BOS-prefixed
  double logprob = 0;
  bool finished = false;

  int64_t generated() const { return static_cast<int64_t>(ids.size()) - 1; }
};

// Ranking score: raw cumulative log-probability, optionally normalized by
// generated length. Ranking only; the stored logprob stays the exact sum.
inline double hypothesis_score(const Hypothesis& h, double length_penalty) {
  if (length_penalty == 0) return h.logprob;
  const double len = static_cast<double>(std::max<int64_t>(1, h.generated()));
  return h.logprob / std::pow(len, length_penalty);
}

namespace detail {

// score desc, then lexicographically smaller token sequence
inline bool better_hypothesis(const Hypothesis& a, const Hypothesis& b, double score_a,
                              double score_b) {
  if (score_a != score_b) return score_a > score_b;
  return a.ids < b.ids;
}

}  // namespace detail

// A step scorer exposes vocab(), eos(), and step_logprobs(prefix) returning
// one log-probability per vocabulary id (-inf to ban an id).
template <typename Scorer>
Hypothesis greedy_decode(const Scorer& scorer, int64_t max_len) {
  if (max_len < 1) throw ContractError(msg("max_len must be >= 1, got ", max_len));
  Hypothesis h;
  h.ids = {Vocabulary::kBos};
  const int64_t V = scorer.vocab();
  for (int64_t step = 0; step < max_len; ++step) {
    const std::vector<double> lp = scorer.step_logprobs(h.ids);
    int32_t best = -1;
    for (int64_t v = 0; v < V; ++v) {
      const double p = lp[static_cast<size_t>(v)];
      if (std::isinf(p) && p < 0) continue;
      if (best < 0 || p > lp[static_cast<size_t>(best)]) best = static_cast<int32_t>(v);
    }
    if (best < 0) break;  // every id banned
    h.ids.push_back(best);
    h.logprob += lp[static_cast<size_t>(best)];
    if (best == scorer.eos()) {
      h.finished = true;
      break;
    }
  }
  return h;
}

template <typename Scorer>
Hypothesis beam_search(const Scorer& scorer, int beam_width, int64_t max_len,
                       double length_penalty = 0) {
  if (beam_width < 1) throw ContractError(msg("beam width must be >= 1, got ", beam_width));
  if (max_len < 1) throw ContractError(msg("max_len must be >= 1, got ", max_len));
  const int64_t V = scorer.vocab();
  const int32_t eos = scorer.eos();

  std::vector<Hypothesis> live{Hypothesis{{Vocabulary::kBos}, 0, false}};
  std::vector<Hypothesis> pool;  // finished hypotheses retire here

  for (int64_t step = 0; step < max_len && !live.empty(); ++step) {
    std::vector<Hypothesis> candidates;
    candidates.reserve(live.size() * static_cast<size_t>(V));
    for (const auto& h : live) {
      const std::vector<double> lp = scorer.step_logprobs(h.ids);
      for (int64_t v = 0; v < V; ++v) {
        const double p = lp[static_cast<size_t>(v)];
        if (std::isinf(p) && p < 0) continue;
        Hypothesis next = h;
        next.ids.push_back(static_cast<int32_t>(v));
        next.logprob += p;
        next.finished = static_cast<int32_t>(v) == eos;
        candidates.push_back(std::move(next));
      }
    }
    // keep the top beam_width by raw cumulative log-prob
    std::sort(candidates.begin(), candidates.end(), [](const Hypothesis& a, const Hypothesis& b) {
      return detail::better_hypothesis(a, b, a.logprob, b.logprob);
    });
    if (candidates.size() > static_cast<size_t>(beam_width))
      candidates.resize(static_cast<size_t>(beam_width));
    live.clear();
    for (auto& c : candidates) {
      if (c.finished)
        pool.push_back(std::move(c));
      else
        live.push_back(std::move(c));
    }
  }

  // highest-scoring finished hypothesis; fallback: best unfinished
  const auto pick = [&](const std::vector<Hypothesis>& hs) {
    const Hypothesis* best = nullptr;
    for (const auto& h : hs)
      if (!best || detail::better_hypothesis(h, *best, hypothesis_score(h, length_penalty),
                                             hypothesis_score(*best, length_penalty)))
        best = &h;
    return best;
  };
  if (const Hypothesis* best = pick(pool)) return *best;
  if (const Hypothesis* best = pick(live)) return *best;
  return Hypothesis{{Vocabulary::kBos}, 0, false};  // everything banned from step one
}

// Argmax predictions under ground-truth prefixes. Output is [B,Ty] row-major:
// position 0 echoes BOS, pad target positions emit pad.
template <typename T>
std::vector<int32_t> teacher_forced_predict(const R1Translator<T>& model, const Batch<T>& batch) {
  if (batch.target_len < 1 || batch.targets.empty())
    throw ContractError("teacher-forced prediction needs targets");
  const int64_t B = batch.batch, Ty = batch.target_len;
  std::vector<int32_t> out(static_cast<size_t>(B * Ty), Vocabulary::kBos);
  if (Ty == 1) return out;

  autograd::NoGradGuard guard;
  const int64_t Td = Ty - 1, V = model.config().V;
  std::vector<int32_t> dec_input(static_cast<size_t>(B * Td));
  for (int64_t i = 0; i < B; ++i)
    for (int64_t t = 0; t < Td; ++t)
      dec_input[static_cast<size_t>(i * Td + t)] = batch.targets[static_cast<size_t>(i * Ty + t)];

  auto enc = model.encode(batch);
  auto logits = model.decoder_logits(enc, dec_input, Td);
  const auto& lv = logits.data();
  for (int64_t i = 0; i < B; ++i) {
    for (int64_t t = 1; t < Ty; ++t) {
      if (batch.targets[static_cast<size_t>(i * Ty + t)] == Vocabulary::kPad) {
        out[static_cast<size_t>(i * Ty + t)] = Vocabulary::kPad;
        continue;
      }
      const size_t row = static_cast<size_t>((i * Td + (t - 1)) * V);
      int32_t best = 0;
      for (int64_t v = 1; v < V; ++v)
        if (lv[row + static_cast<size_t>(v)] > lv[row + static_cast<size_t>(best)])
          best = static_cast<int32_t>(v);
      out[static_cast<size_t>(i * Ty + t)] = best;
    }
  }
  return out;
}

// Free-running scorer over one encoded sentence; BOS and PAD are banned so
// emitted sequences satisfy the output contract.
template <typename T>
class ModelStepScorer {
 public:
  ModelStepScorer(const R1Translator<T>& model, typename R1Translator<T>::Encoded enc)
      : model_(&model), enc_(std::move(enc)) {
    if (enc_.batch != 1) throw ContractError("free-running decoding scores one sentence at a time");
  }

  int64_t vocab() const { return model_->config().V; }
  int32_t eos() const { return Vocabulary::kEos; }

  std::vector<double> step_logprobs(const std::vector<int32_t>& prefix) const {
    autograd::NoGradGuard guard;
    const int64_t len = static_cast<int64_t>(prefix.size());
    auto logits = model_->decoder_logits(enc_, prefix, len);
    const int64_t V = model_->config().V;
    const auto& lv = logits.data();
    const size_t row = static_cast<size_t>((len - 1) * V);

    std::vector<double> lp(static_cast<size_t>(V));
    double mx = -std::numeric_limits<double>::infinity();
    for (int64_t v = 0; v < V; ++v)
      mx = std::max(mx, static_cast<double>(lv[row + static_cast<size_t>(v)]));
    double sum = 0;
    for (int64_t v = 0; v < V; ++v)
      sum += std::exp(static_cast<double>(lv[row + static_cast<size_t>(v)]) - mx);
    const double lse = mx + std::log(sum);
    for (int64_t v = 0; v < V; ++v)
      lp[static_cast<size_t>(v)] = static_cast<double>(lv[row + static_cast<size_t>(v)]) - lse;
    lp[static_cast<size_t>(Vocabulary::kBos)] = -std::numeric_limits<double>::infinity();
    lp[static_cast<size_t>(Vocabulary::kPad)] = -std::numeric_limits<double>::infinity();
    return lp;
  }

 private:
  const R1Translator<T>* model_;
  typename R1Translator<T>::Encoded enc_;
};

// Free-running generation for every sentence of the batch. Each sentence is
// re-encoded alone; padding invariance makes that equivalent to slicing the
// batched encoder output.
template <typename T>
std::vector<std::vector<int32_t>> generate(const R1Translator<T>& model, const Batch<T>& batch,
                                           const DecodeConfig& cfg) {
  cfg.validate();
  if (cfg.mode == DecodeConfig::Mode::teacher_forced)
    throw ContractError("generate runs free-running modes; teacher forcing scores targets instead");
  if (cfg.max_len > model.config().maxlen)
    throw ContractError(msg("max_len ", cfg.max_len, " exceeds model maxlen ",
                            model.config().maxlen));

  autograd::NoGradGuard guard;
  const int64_t B = batch.batch, S = batch.steps, f = model.config().f;
  std::vector<std::vector<int32_t>> out;
  out.reserve(static_cast<size_t>(B));
  for (int64_t i = 0; i < B; ++i) {
    Batch<T> one;
    one.batch = 1;
    one.steps = S;
    one.target_len = 0;
    const auto* eeg = batch.eeg.data().data() + i * S * f;
    one.eeg = Tensor<T>::from({1, S, f}, std::vector<T>(eeg, eeg + S * f));
    const auto* m = batch.mask.data().data() + i * S;
    one.mask = Tensor<T>::from({1, S}, std::vector<T>(m, m + S));
    std::vector<T> inv(static_cast<size_t>(S));
    for (int64_t t = 0; t < S; ++t) inv[static_cast<size_t>(t)] = T(1) - m[t];
    one.inv_mask = Tensor<T>::from({1, S}, std::move(inv));

    ModelStepScorer<T> scorer(model, model.encode(one));
    const Hypothesis h = cfg.mode == DecodeConfig::Mode::greedy
                             ? greedy_decode(scorer, cfg.max_len)
                             : beam_search(scorer, cfg.beam_width, cfg.max_len,
                                           cfg.length_penalty);
    out.push_back(h.ids);
  }
  return out;
}

}  // namespace r1t
