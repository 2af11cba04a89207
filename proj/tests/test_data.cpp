#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <string>

#include "r1t/data.hpp"
#include "r1t/errors.hpp"

using r1t::EegSentenceRecord;
using r1t::kFeatureDim;
using r1t::Vocabulary;

namespace {

struct TempFile {
  std::string path;
  explicit TempFile(const std::string& name, const std::string& content) : path(name) {
    std::ofstream f(path);
    f << content;
  }
  ~TempFile() { std::remove(path.c_str()); }
};

std::string feature_json(double fill, int dim = kFeatureDim, int null_at = -1) {
  std::string s = "[";
  for (int i = 0; i < dim; ++i) {
    if (i) s += ",";
    if (i == null_at)
      s += "null";
    else
      s += std::to_string(fill + 0.01 * i);
  }
  return s + "]";
}

std::string record_json(const std::string& id, const std::string& text,
                        const std::vector<std::string>& eeg_arrays) {
  std::string s = "{\"sentence_id\":\"" + id + "\",\"text\":\"" + text + "\",\"words\":[";
  std::istringstream ts(text);
  std::string tok;
  size_t i = 0;
  for (; ts >> tok && i < eeg_arrays.size(); ++i) {
    if (i) s += ",";
    s += "{\"token\":\"" + tok + "\",\"eeg\":" + eeg_arrays[i] + "}";
  }
  return s + "]}";
}

EegSentenceRecord make_record(const std::string& id, const std::string& text, float fill) {
  EegSentenceRecord rec;
  rec.sentence_id = id;
  rec.text = text;
  std::istringstream ts(text);
  std::string tok;
  int k = 0;
  while (ts >> tok) {
    r1t::EegWord w;
    w.token = tok;
    w.eeg.resize(static_cast<size_t>(kFeatureDim));
    for (int64_t j = 0; j < kFeatureDim; ++j)
      w.eeg[static_cast<size_t>(j)] = fill + static_cast<float>(k) + 0.001f * static_cast<float>(j);
    rec.words.push_back(std::move(w));
    ++k;
  }
  return rec;
}

}  // namespace

TEST_CASE("loading parses records and z-scores each word vector") {
  TempFile file("t_load.jsonl",
                record_json("s1", "hello world", {feature_json(1.0), feature_json(5.0)}) + "\n" +
                    record_json("s2", "bye", {feature_json(-2.0)}) + "\n");
  int dropped = -1;
  auto recs = r1t::load_dataset(file.path, &dropped);
  REQUIRE(recs.size() == 2);
  CHECK(dropped == 0);
  CHECK(recs[0].sentence_id == "s1");
  CHECK(recs[0].words.size() == 2);
  CHECK(recs[0].words[0].token == "hello");

  // per-word z-score: mean 0, variance 1
  for (const auto& w : recs[0].words) {
    double mean = 0, var = 0;
    for (float v : w.eeg) mean += v;
    mean /= static_cast<double>(w.eeg.size());
    for (float v : w.eeg) var += (v - mean) * (v - mean);
    var /= static_cast<double>(w.eeg.size());
    CHECK(std::abs(mean) < 1e-5);
    CHECK(var == doctest::Approx(1.0).epsilon(1e-4));
  }
}

TEST_CASE("records with a missing feature value are dropped and counted") {
  TempFile file("t_drop.jsonl",
                record_json("ok", "fine here", {feature_json(1.0), feature_json(2.0)}) + "\n" +
                    record_json("bad", "broken one", {feature_json(1.0, kFeatureDim, 17),
                                                      feature_json(2.0)}) +
                    "\n");
  int dropped = 0;
  auto recs = r1t::load_dataset(file.path, &dropped);
  REQUIRE(recs.size() == 1);
  CHECK(recs[0].sentence_id == "ok");
  CHECK(dropped == 1);
}

TEST_CASE("wrong feature dimension is a schema error, bad JSON is a parse error") {
  TempFile short_vec("t_short.jsonl",
                     record_json("x", "word", {feature_json(1.0, kFeatureDim - 1)}) + "\n");
  CHECK_THROWS_AS((void)r1t::load_dataset(short_vec.path), r1t::SchemaError);

  TempFile bad_json("t_bad.jsonl", "{not json\n");
  CHECK_THROWS_WITH_AS((void)r1t::load_dataset(bad_json.path),
                       doctest::Contains("t_bad.jsonl:1"), r1t::ParseError);

  TempFile missing_key("t_key.jsonl", "{\"sentence_id\":\"a\",\"text\":\"b\"}\n");
  CHECK_THROWS_AS((void)r1t::load_dataset(missing_key.path), r1t::SchemaError);

  TempFile no_words("t_nw.jsonl",
                    "{\"sentence_id\":\"a\",\"text\":\"b\",\"words\":[]}\n");
  CHECK_THROWS_AS((void)r1t::load_dataset(no_words.path), r1t::SchemaError);
}

TEST_CASE("constant word vectors normalize to zeros") {
  std::vector<EegSentenceRecord> recs{make_record("c", "flat", 0.0f)};
  for (auto& v : recs[0].words[0].eeg) v = 3.25f;
  r1t::normalize_records(recs);
  for (float v : recs[0].words[0].eeg) CHECK(v == 0.0f);
}

TEST_CASE("normalization is idempotent") {
  std::vector<EegSentenceRecord> recs{make_record("n", "some words here", 1.5f)};
  r1t::normalize_records(recs);
  auto once = recs;
  r1t::normalize_records(recs);
  for (size_t w = 0; w < recs[0].words.size(); ++w)
    for (size_t j = 0; j < recs[0].words[w].eeg.size(); ++j)
      CHECK(recs[0].words[w].eeg[j] ==
            doctest::Approx(once[0].words[w].eeg[j]).epsilon(1e-6));
}

TEST_CASE("split partitions by unique text at 80/10/10") {
  std::vector<EegSentenceRecord> recs;
  for (int i = 0; i < 100; ++i)
    recs.push_back(make_record("id" + std::to_string(i), "sentence number " + std::to_string(i),
                               static_cast<float>(i)));
  // a duplicated text: two records sharing sentence 7's text
  recs.push_back(make_record("dup", "sentence number 7", 0.5f));

  auto split = r1t::split_dataset(recs, 42);
  CHECK(split.train.size() + split.dev.size() + split.test.size() == recs.size());

  std::set<std::string> train_texts, dev_texts, test_texts;
  for (const auto& r : split.train) train_texts.insert(r.text);
  for (const auto& r : split.dev) dev_texts.insert(r.text);
  for (const auto& r : split.test) test_texts.insert(r.text);
  CHECK(train_texts.size() == 80);
  CHECK(dev_texts.size() == 10);
  CHECK(test_texts.size() == 10);
  for (const auto& t : dev_texts) CHECK(train_texts.count(t) == 0);
  for (const auto& t : test_texts) {
    CHECK(train_texts.count(t) == 0);
    CHECK(dev_texts.count(t) == 0);
  }

  // determinism and seed sensitivity
  auto again = r1t::split_dataset(recs, 42);
  REQUIRE(again.train.size() == split.train.size());
  for (size_t i = 0; i < split.train.size(); ++i)
    CHECK(again.train[i].sentence_id == split.train[i].sentence_id);
  auto other = r1t::split_dataset(recs, 43);
  bool same = other.train.size() == split.train.size();
  if (same) {
    same = false;
    for (size_t i = 0; i < split.train.size(); ++i)
      if (other.train[i].sentence_id != split.train[i].sentence_id) same = false;
  }

  std::vector<EegSentenceRecord> tiny(recs.begin(), recs.begin() + 5);
  CHECK_THROWS_AS((void)r1t::split_dataset(tiny, 1), r1t::ContractError);
}

TEST_CASE("vocabulary orders by frequency with alphabetical ties") {
  auto v = r1t::build_vocab({"b a", "a c", "c b a"});  // a:3, b:2, c:2
  CHECK(v.id("a") == 4);
  CHECK(v.id("b") == 5);  // b before c on the tie
  CHECK(v.id("c") == 6);
  CHECK(v.size() == 7);

  auto rare = r1t::build_vocab({"common common rare"}, 2);
  CHECK(rare.id("common") == 4);
  CHECK(rare.id("rare") == Vocabulary::kUnk);

  CHECK_THROWS_AS((void)r1t::build_vocab({}), r1t::ContractError);
  CHECK_THROWS_AS((void)r1t::build_vocab({"", "  "}), r1t::ContractError);
}

TEST_CASE("vocabulary encodes, decodes, and round-trips through a file") {
  auto v = r1t::build_vocab({"the cat sat", "the dog"});
  auto ids = v.encode("the cat flew");
  REQUIRE(ids.size() == 3);
  CHECK(ids[2] == Vocabulary::kUnk);
  CHECK(v.decode({Vocabulary::kBos, v.id("the"), v.id("cat"), Vocabulary::kEos,
                  Vocabulary::kPad}) == "the cat");

  v.save("t_vocab.txt");
  auto loaded = Vocabulary::load("t_vocab.txt");
  CHECK(loaded.size() == v.size());
  CHECK(loaded.id("cat") == v.id("cat"));
  std::remove("t_vocab.txt");
}

TEST_CASE("batches pad features with zeros and targets with PAD after EOS") {
  auto va = r1t::build_vocab({"a b c", "d e f g h"});
  std::vector<EegSentenceRecord> recs{make_record("r0", "a b c", 1.0f),
                                      make_record("r1", "d e f g h", 2.0f)};
  auto batch = r1t::build_batch<float>(recs, va, 16, 16);
  CHECK(batch.eeg.shape() == r1t::Shape{2, 5, kFeatureDim});
  CHECK(batch.mask.shape() == r1t::Shape{2, 5});
  CHECK(batch.target_len == 7);  // BOS + 5 + EOS

  // row 0: three real steps then zero padding
  for (int t = 0; t < 5; ++t) {
    const float want = t < 3 ? 1.0f : 0.0f;
    CHECK(batch.mask.data()[static_cast<size_t>(t)] == want);
    CHECK(batch.inv_mask.data()[static_cast<size_t>(t)] == 1.0f - want);
  }
  for (int64_t j = 0; j < kFeatureDim; ++j)
    CHECK(batch.eeg.data()[static_cast<size_t>((0 * 5 + 4) * kFeatureDim + j)] == 0.0f);

  // targets: BOS a b c EOS PAD PAD
  const auto& y = batch.targets;
  CHECK(y[0] == Vocabulary::kBos);
  CHECK(y[1] == va.id("a"));
  CHECK(y[3] == va.id("c"));
  CHECK(y[4] == Vocabulary::kEos);
  CHECK(y[5] == Vocabulary::kPad);
  CHECK(y[6] == Vocabulary::kPad);
  CHECK(y[7] == Vocabulary::kBos);  // row 1 starts
  CHECK(y[13] == Vocabulary::kEos);

  CHECK_THROWS_AS((void)r1t::build_batch<float>(recs, va, 4, 16), r1t::ContractError);
  CHECK_THROWS_AS((void)r1t::build_batch<float>(recs, va, 16, 6), r1t::ContractError);
  CHECK_THROWS_AS((void)r1t::build_batch<float>({}, va, 16, 16), r1t::ContractError);
}

TEST_CASE("synthetic data is deterministic and separable by construction") {
  r1t::SynthConfig cfg;
  cfg.vocab_size = 10;
  cfg.n_sentences = 20;
  cfg.seed = 5;
  auto a = r1t::synthesize_dataset(cfg);
  auto b = r1t::synthesize_dataset(cfg);
  REQUIRE(a.size() == 20);
  CHECK(a[3].text == b[3].text);
  CHECK(a[3].words[0].eeg == b[3].words[0].eeg);

  cfg.noise_std = 0.0;
  auto clean = r1t::synthesize_dataset(cfg);
  // with zero noise, two occurrences of a token carry identical features
  std::map<std::string, std::vector<float>> seen;
  for (const auto& rec : clean)
    for (const auto& w : rec.words) {
      auto [it, fresh] = seen.emplace(w.token, w.eeg);
      if (!fresh) CHECK(it->second == w.eeg);
    }
}

TEST_CASE("noise control permutes features globally but keeps text") {
  r1t::SynthConfig cfg;
  cfg.vocab_size = 8;
  cfg.n_sentences = 15;
  cfg.seed = 9;
  auto recs = r1t::synthesize_dataset(cfg);
  auto control = r1t::noise_control(recs, 77);

  REQUIRE(control.size() == recs.size());
  std::multiset<float> before, after;
  for (size_t i = 0; i < recs.size(); ++i) {
    CHECK(control[i].text == recs[i].text);
    for (const auto& w : recs[i].words) before.insert(w.eeg[0]);
    for (const auto& w : control[i].words) after.insert(w.eeg[0]);
  }
  CHECK(before == after);  // multiset of features preserved

  auto control2 = r1t::noise_control(recs, 77);
  CHECK(control2[2].words[0].eeg == control[2].words[0].eeg);
}

TEST_CASE("a nearest-centroid probe separates real synthetic data but not the control") {
  r1t::SynthConfig cfg;
  cfg.vocab_size = 20;
  cfg.n_sentences = 120;
  cfg.noise_std = 0.3;
  cfg.seed = 31;
  auto real = r1t::synthesize_dataset(cfg);
  auto control = r1t::noise_control(real, 32);
  r1t::normalize_records(real);
  r1t::normalize_records(control);

  auto probe_accuracy = [](const std::vector<EegSentenceRecord>& recs) {
    const size_t n_train = recs.size() * 8 / 10;
    std::map<std::string, std::pair<std::vector<double>, int64_t>> centroids;
    for (size_t i = 0; i < n_train; ++i)
      for (const auto& w : recs[i].words) {
        auto& [sum, count] = centroids[w.token];
        sum.resize(w.eeg.size(), 0.0);
        for (size_t j = 0; j < w.eeg.size(); ++j) sum[j] += w.eeg[j];
        count += 1;
      }
    int64_t hit = 0, total = 0;
    for (size_t i = n_train; i < recs.size(); ++i)
      for (const auto& w : recs[i].words) {
        double best = 1e300;
        std::string best_tok;
        for (const auto& [tok, sc] : centroids) {
          double dist = 0;
          for (size_t j = 0; j < w.eeg.size(); ++j) {
            const double d = sc.first[j] / static_cast<double>(sc.second) - w.eeg[j];
            dist += d * d;
          }
          if (dist < best) {
            best = dist;
            best_tok = tok;
          }
        }
        hit += best_tok == w.token ? 1 : 0;
        total += 1;
      }
    return static_cast<double>(hit) / static_cast<double>(total);
  };

  CHECK(probe_accuracy(real) > 0.9);            // the mapping is learnable
  CHECK(probe_accuracy(control) < 1.0 / 20 + 0.05);  // chance level after shuffling
}

TEST_CASE("split manifest lists sentence ids per partition") {
  std::vector<EegSentenceRecord> recs;
  for (int i = 0; i < 20; ++i)
    recs.push_back(make_record("id" + std::to_string(i), "text " + std::to_string(i),
                               static_cast<float>(i)));
  auto split = r1t::split_dataset(recs, 7);
  r1t::write_split_manifest("t_manifest.txt", split);
  std::ifstream f("t_manifest.txt");
  std::string content((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  CHECK(content.find("[train]") != std::string::npos);
  CHECK(content.find("[dev]") != std::string::npos);
  CHECK(content.find("[test]") != std::string::npos);
  CHECK(content.find(split.dev[0].sentence_id) != std::string::npos);
  std::remove("t_manifest.txt");
}
