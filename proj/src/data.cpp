#include "r1t/data.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include <json.hpp>

#include "r1t/errors.hpp"
#include "r1t/rng.hpp"

namespace r1t {

namespace {

const std::array<std::string, 4> kReservedNames = {"<s>", "</s>", "<pad>", "<unk>"};

std::vector<std::string> whitespace_tokens(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream is(text);
  std::string tok;
  while (is >> tok) out.push_back(tok);
  return out;
}

}  // namespace

Vocabulary::Vocabulary() {
  for (const auto& name : kReservedNames) {
    token_to_id_.emplace(name, static_cast<int32_t>(id_to_token_.size()));
    id_to_token_.push_back(name);
  }
}

int32_t Vocabulary::add_token(const std::string& token) {
  for (const auto& r : kReservedNames) {
    if (token == r) throw ContractError(msg("token '", token, "' collides with a reserved name"));
  }
  if (token_to_id_.count(token))
    throw ContractError(msg("token '", token, "' already in vocabulary"));
  const int32_t id = static_cast<int32_t>(id_to_token_.size());
  token_to_id_.emplace(token, id);
  id_to_token_.push_back(token);
  return id;
}

int32_t Vocabulary::id(const std::string& token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int32_t id) const {
  if (id < 0 || id >= size())
    throw IndexError(msg("token id ", id, " out of range for vocabulary of size ", size()));
  return id_to_token_[static_cast<size_t>(id)];
}

std::vector<int32_t> Vocabulary::encode(const std::string& text) const {
  std::vector<int32_t> out;
  for (const auto& tok : whitespace_tokens(text)) out.push_back(id(tok));
  return out;
}

std::string Vocabulary::decode(const std::vector<int32_t>& ids) const {
  std::string out;
  for (const int32_t id : ids) {
    if (id == kEos) break;
    if (id == kBos || id == kPad) continue;
    if (!out.empty()) out += ' ';
    out += token(id);
  }
  return out;
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream f(path);
  if (!f) throw FileError(msg("cannot write vocabulary to ", path));
  for (const auto& tok : id_to_token_) f << tok << '\n';
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw FileError(msg("cannot read vocabulary from ", path));
  Vocabulary v;
  std::string line;
  int32_t idx = 0;
  while (std::getline(f, line)) {
    if (idx < 4) {
      if (line != kReservedNames[static_cast<size_t>(idx)])
        throw SchemaError(msg("vocabulary file ", path, " has wrong reserved token at id ", idx));
    } else {
      v.add_token(line);
    }
    ++idx;
  }
  if (idx < 4) throw SchemaError(msg("vocabulary file ", path, " is missing reserved tokens"));
  return v;
}

std::vector<EegSentenceRecord> load_dataset(const std::string& path, int* dropped_out) {
  std::ifstream f(path);
  if (!f) throw FileError(msg("cannot open dataset ", path));
  std::vector<EegSentenceRecord> records;
  int dropped = 0;
  std::string line;
  int line_no = 0;
  while (std::getline(f, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(msg(path, ":", line_no, ": invalid JSON: ", e.what()));
    }
    if (!j.is_object() || !j.contains("sentence_id") || !j.contains("text") ||
        !j.contains("words"))
      throw SchemaError(msg(path, ":", line_no, ": record needs sentence_id, text, words"));
    if (!j["words"].is_array() || j["words"].empty())
      throw SchemaError(msg(path, ":", line_no, ": words must be a non-empty array"));

    EegSentenceRecord rec;
    rec.sentence_id = j["sentence_id"].get<std::string>();
    rec.text = j["text"].get<std::string>();
    bool keep = true;
    for (const auto& w : j["words"]) {
      if (!w.is_object() || !w.contains("token") || !w.contains("eeg") || !w["eeg"].is_array())
        throw SchemaError(msg(path, ":", line_no, ": word needs token and eeg array"));
      if (static_cast<int64_t>(w["eeg"].size()) != kFeatureDim)
        throw SchemaError(msg(path, ":", line_no, ": eeg vector has ", w["eeg"].size(),
                              " entries, expected ", kFeatureDim));
      EegWord word;
      word.token = w["token"].get<std::string>();
      word.eeg.reserve(static_cast<size_t>(kFeatureDim));
      for (const auto& v : w["eeg"]) {
        if (v.is_null()) {  // missing value: the whole sentence goes
          keep = false;
          break;
        }
        if (!v.is_number())
          throw ParseError(msg(path, ":", line_no, ": eeg entry is not a number"));
        const double x = v.get<double>();
        if (!std::isfinite(x)) {
          keep = false;
          break;
        }
        word.eeg.push_back(static_cast<float>(x));
      }
      if (!keep) break;
      rec.words.push_back(std::move(word));
    }
    if (keep)
      records.push_back(std::move(rec));
    else
      ++dropped;
  }
  normalize_records(records);
  if (dropped_out) *dropped_out = dropped;
  return records;
}

void normalize_records(std::vector<EegSentenceRecord>& records) {
  for (auto& rec : records) {
    for (auto& w : rec.words) {
      const size_t n = w.eeg.size();
      double mean = 0;
      for (const float v : w.eeg) mean += v;
      mean /= static_cast<double>(n);
      double var = 0;
      for (const float v : w.eeg) var += (v - mean) * (v - mean);
      var /= static_cast<double>(n);
      const double sd = std::sqrt(var);
      const double denom = sd > 0 ? sd : 1.0;  // constant vectors normalize to zeros
      for (auto& v : w.eeg) v = static_cast<float>((v - mean) / denom);
    }
  }
}

SplitResult split_dataset(const std::vector<EegSentenceRecord>& records, uint64_t seed) {
  std::vector<std::string> unique_texts;
  std::unordered_map<std::string, int> text_rank;
  for (const auto& r : records) {
    if (text_rank.emplace(r.text, static_cast<int>(unique_texts.size())).second)
      unique_texts.push_back(r.text);
  }
  const int64_t u = static_cast<int64_t>(unique_texts.size());
  if (u < 10)
    throw ContractError(msg("split needs at least 10 distinct sentence texts, got ", u));

  Rng rng(seed);
  rng.shuffle(unique_texts);
  const int64_t n_dev = std::max<int64_t>(1, static_cast<int64_t>(std::llround(0.1 * static_cast<double>(u))));
  const int64_t n_test = n_dev;
  const int64_t n_train = u - n_dev - n_test;

  std::unordered_map<std::string, int> part;  // 0 train, 1 dev, 2 test
  for (int64_t i = 0; i < u; ++i) {
    const int p = i < n_train ? 0 : (i < n_train + n_dev ? 1 : 2);
    part[unique_texts[static_cast<size_t>(i)]] = p;
  }
  SplitResult out;
  for (const auto& r : records) {
    switch (part.at(r.text)) {
      case 0: out.train.push_back(r); break;
      case 1: out.dev.push_back(r); break;
      default: out.test.push_back(r); break;
    }
  }
  return out;
}

void write_split_manifest(const std::string& path, const SplitResult& split) {
  std::ofstream f(path);
  if (!f) throw FileError(msg("cannot write split manifest to ", path));
  auto block = [&](const char* name, const std::vector<EegSentenceRecord>& recs) {
    f << "[" << name << "]\n";
    for (const auto& r : recs) f << r.sentence_id << '\n';
  };
  block("train", split.train);
  block("dev", split.dev);
  block("test", split.test);
}

Vocabulary build_vocab(const std::vector<std::string>& texts, int min_count) {
  std::map<std::string, int64_t> counts;  // ordered map gives the alphabetical tiebreak
  for (const auto& t : texts) {
    for (const auto& tok : whitespace_tokens(t)) counts[tok] += 1;
  }
  if (counts.empty()) throw ContractError("build_vocab on an empty corpus");
  std::vector<std::pair<std::string, int64_t>> items(counts.begin(), counts.end());
  std::stable_sort(items.begin(), items.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });
  Vocabulary v;
  for (const auto& [tok, count] : items) {
    if (count >= min_count) v.add_token(tok);
  }
  return v;
}

template <typename T>
Batch<T> build_batch(const std::vector<EegSentenceRecord>& records, const Vocabulary& vocab,
                     int64_t max_src_len, int64_t max_tgt_len) {
  if (records.empty()) throw ContractError("build_batch on an empty record list");
  const int64_t B = static_cast<int64_t>(records.size());
  int64_t S = 0, Ty = 0;
  for (const auto& r : records) {
    const int64_t n_words = static_cast<int64_t>(r.words.size());
    const int64_t n_tgt = static_cast<int64_t>(vocab.encode(r.text).size()) + 2;  // BOS + EOS
    if (n_words > max_src_len)
      throw ContractError(msg("sentence '", r.sentence_id, "' has ", n_words,
                              " words, over the source limit ", max_src_len));
    if (n_tgt > max_tgt_len)
      throw ContractError(msg("sentence '", r.sentence_id, "' target needs ", n_tgt,
                              " tokens, over the target limit ", max_tgt_len));
    S = std::max(S, n_words);
    Ty = std::max(Ty, n_tgt);
  }

  std::vector<T> eeg(static_cast<size_t>(B * S * kFeatureDim), T(0));
  std::vector<T> mask(static_cast<size_t>(B * S), T(0));
  std::vector<T> inv(static_cast<size_t>(B * S), T(1));
  std::vector<int32_t> targets(static_cast<size_t>(B * Ty), Vocabulary::kPad);

  for (int64_t b = 0; b < B; ++b) {
    const auto& r = records[static_cast<size_t>(b)];
    for (int64_t t = 0; t < static_cast<int64_t>(r.words.size()); ++t) {
      const auto& w = r.words[static_cast<size_t>(t)];
      if (static_cast<int64_t>(w.eeg.size()) != kFeatureDim)
        throw SchemaError(msg("word feature vector has ", w.eeg.size(), " entries, expected ",
                              kFeatureDim));
      for (int64_t j = 0; j < kFeatureDim; ++j)
        eeg[static_cast<size_t>((b * S + t) * kFeatureDim + j)] =
            static_cast<T>(w.eeg[static_cast<size_t>(j)]);
      mask[static_cast<size_t>(b * S + t)] = T(1);
      inv[static_cast<size_t>(b * S + t)] = T(0);
    }
    auto ids = vocab.encode(r.text);
    targets[static_cast<size_t>(b * Ty)] = Vocabulary::kBos;
    for (size_t i = 0; i < ids.size(); ++i)
      targets[static_cast<size_t>(b * Ty) + 1 + i] = ids[i];
    targets[static_cast<size_t>(b * Ty) + 1 + ids.size()] = Vocabulary::kEos;
  }

  Batch<T> batch;
  batch.eeg = Tensor<T>::from({B, S, kFeatureDim}, std::move(eeg));
  batch.mask = Tensor<T>::from({B, S}, std::move(mask));
  batch.inv_mask = Tensor<T>::from({B, S}, std::move(inv));
  batch.targets = std::move(targets);
  batch.batch = B;
  batch.steps = S;
  batch.target_len = Ty;
  return batch;
}

std::vector<EegSentenceRecord> synthesize_dataset(const SynthConfig& cfg) {
  if (cfg.vocab_size < 4) throw ContractError("synthetic vocabulary needs at least 4 tokens");
  if (cfg.len_min < 1 || cfg.len_max < cfg.len_min)
    throw ContractError("invalid synthetic length range");
  Rng rng(cfg.seed);

  // lexicon w00..wNN and its secret feature embedding
  const int width = cfg.vocab_size > 100 ? 3 : 2;
  std::vector<std::string> lexicon;
  for (int i = 0; i < cfg.vocab_size; ++i) {
    std::ostringstream os;
    os << 'w';
    std::string num = std::to_string(i);
    while (static_cast<int>(num.size()) < width) num.insert(num.begin(), '0');
    os << num;
    lexicon.push_back(os.str());
  }
  std::vector<std::vector<float>> secret(static_cast<size_t>(cfg.vocab_size));
  for (auto& row : secret) {
    row.resize(static_cast<size_t>(kFeatureDim));
    for (auto& v : row) v = static_cast<float>(rng.gaussian());
  }

  std::vector<EegSentenceRecord> records;
  records.reserve(static_cast<size_t>(cfg.n_sentences));
  for (int s = 0; s < cfg.n_sentences; ++s) {
    EegSentenceRecord rec;
    std::ostringstream id;
    id << "synth-";
    std::string num = std::to_string(s);
    while (num.size() < 4) num.insert(num.begin(), '0');
    id << num;
    rec.sentence_id = id.str();
    const int len = cfg.len_min + static_cast<int>(rng.below(
                        static_cast<uint64_t>(cfg.len_max - cfg.len_min + 1)));
    std::string text;
    for (int t = 0; t < len; ++t) {
      const auto tok_id = rng.below(static_cast<uint64_t>(cfg.vocab_size));
      EegWord w;
      w.token = lexicon[static_cast<size_t>(tok_id)];
      w.eeg = secret[static_cast<size_t>(tok_id)];
      for (auto& v : w.eeg) v += static_cast<float>(rng.gaussian(0.0, cfg.noise_std));
      if (!text.empty()) text += ' ';
      text += w.token;
      rec.words.push_back(std::move(w));
    }
    rec.text = std::move(text);
    records.push_back(std::move(rec));
  }
  return records;
}

std::vector<EegSentenceRecord> noise_control(std::vector<EegSentenceRecord> records,
                                             uint64_t seed) {
  std::vector<std::vector<float>*> slots;
  for (auto& r : records)
    for (auto& w : r.words) slots.push_back(&w.eeg);
  std::vector<size_t> perm(slots.size());
  for (size_t i = 0; i < perm.size(); ++i) perm[i] = i;
  Rng rng(seed);
  rng.shuffle(perm);
  std::vector<std::vector<float>> original(slots.size());
  for (size_t i = 0; i < slots.size(); ++i) original[i] = *slots[i];
  for (size_t i = 0; i < slots.size(); ++i) *slots[i] = std::move(original[perm[i]]);
  return records;
}

template Batch<float> build_batch<float>(const std::vector<EegSentenceRecord>&, const Vocabulary&,
                                         int64_t, int64_t);
template Batch<double> build_batch<double>(const std::vector<EegSentenceRecord>&,
                                           const Vocabulary&, int64_t, int64_t);

}  // namespace r1t
