#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "r1t/tensor.hpp"

namespace r1t {

// 8 frequency bands x 105 channels per word.
inline constexpr int64_t kFeatureDim = 840;

struct EegWord {
  std::string token;
  std::vector<float> eeg;  // kFeatureDim entries
};

struct EegSentenceRecord {
  std::string sentence_id;
  std::string text;  // target sentence
  std::vector<EegWord> words;
};

// Token <-> id bijection with fixed reserved ids.
class Vocabulary {
 public:
  static constexpr int32_t kBos = 0;
  static constexpr int32_t kEos = 1;
  static constexpr int32_t kPad = 2;
  static constexpr int32_t kUnk = 3;

  Vocabulary();

  // Appends a content token (id = current size). Reserved names rejected.
  int32_t add_token(const std::string& token);

  int32_t id(const std::string& token) const;  // kUnk when absent
  const std::string& token(int32_t id) const;  // throws IndexError out of range
  int32_t size() const { return static_cast<int32_t>(id_to_token_.size()); }
  bool contains(const std::string& token) const { return token_to_id_.count(token) != 0; }

  // Whitespace tokenization to ids (no BOS/EOS wrapping).
  std::vector<int32_t> encode(const std::string& text) const;
  // Joins content tokens with spaces; BOS/PAD skipped, stops at EOS.
  std::string decode(const std::vector<int32_t>& ids) const;

  void save(const std::string& path) const;
  static Vocabulary load(const std::string& path);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, int32_t> token_to_id_;
};

// Padded model-ready batch.
template <typename T>
struct Batch {
  Tensor<T> eeg;       // [B, S, f], zero vectors at padded steps
  Tensor<T> mask;      // [B, S], 1 at real words
  Tensor<T> inv_mask;  // 1 - mask
  std::vector<int32_t> targets;  // [B, Ty] row-major, BOS ... EOS PAD...
  int64_t batch = 0, steps = 0, target_len = 0;
};

// JSONL ingestion: one record per line. Records containing any missing
// (null) feature value are dropped and counted; every surviving word vector
// is z-scored over its own entries.
std::vector<EegSentenceRecord> load_dataset(const std::string& path, int* dropped_out = nullptr);

// In-place per-word z-score with a sigma=0 guard (divides by 1).
void normalize_records(std::vector<EegSentenceRecord>& records);

struct SplitResult {
  std::vector<EegSentenceRecord> train, dev, test;
};

// 80/10/10 by unique sentence text, deterministic per seed. All records
// sharing a text land in the same partition.
SplitResult split_dataset(const std::vector<EegSentenceRecord>& records, uint64_t seed);

// Writes sentence_ids per partition, one block per split.
void write_split_manifest(const std::string& path, const SplitResult& split);

// Frequency-sorted (ties alphabetical) content vocabulary over whitespace
// tokens; tokens seen fewer than min_count times are left to UNK.
Vocabulary build_vocab(const std::vector<std::string>& texts, int min_count = 1);

template <typename T>
Batch<T> build_batch(const std::vector<EegSentenceRecord>& records, const Vocabulary& vocab,
                     int64_t max_src_len, int64_t max_tgt_len);

struct SynthConfig {
  int vocab_size = 30;
  int n_sentences = 200;
  int len_min = 3;
  int len_max = 8;
  double noise_std = 0.1;
  uint64_t seed = 1;
};

// Learnable-by-construction synthetic corpus: a secret per-token embedding
// R[vocab x 840] plus gaussian noise; the target text is the token sequence.
std::vector<EegSentenceRecord> synthesize_dataset(const SynthConfig& cfg);

// Destroys the feature->token mapping by permuting feature vectors across
// all words of all records globally; targets stay fixed.
std::vector<EegSentenceRecord> noise_control(std::vector<EegSentenceRecord> records,
                                             uint64_t seed);

extern template Batch<float> build_batch<float>(const std::vector<EegSentenceRecord>&,
                                                const Vocabulary&, int64_t, int64_t);
extern template Batch<double> build_batch<double>(const std::vector<EegSentenceRecord>&,
                                                  const Vocabulary&, int64_t, int64_t);

}  // namespace r1t
