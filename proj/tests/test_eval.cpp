#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <filesystem>
#include <string>
#include <vector>

#include "r1t/eval.hpp"

using r1t::MetricRow;

namespace {

const MetricRow* find_row(const std::vector<MetricRow>& rows, const std::string& metric,
                          const std::string& sub) {
  for (const auto& r : rows)
    if (r.metric == metric && r.submetric == sub) return &r;
  return nullptr;
}

std::string temp_file(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("metric table on identical corpora saturates every metric") {
  std::vector<std::pair<std::string, std::string>> pairs = {
      {"the cat sat on the mat", "the cat sat on the mat"},
      {"a brown fox", "a brown fox"},
  };
  const auto rows = r1t::metric_table("m", "tf", pairs);
  REQUIRE(rows.size() == 16);
  for (const auto& r : rows) {
    CHECK(r.model == "m");
    CHECK(r.mode == "tf");
    if (r.metric == "bleu" || r.metric == "corpus_bleu")
      CHECK(r.value == doctest::Approx(100.0).epsilon(1e-9));
    else if (r.metric == "wer" || r.metric == "cer")
      CHECK(r.value == 0.0);
    else
      CHECK(r.value == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("metric table matches hand-computed values on a mixed pair") {
  // clipped unigram precision 1/4, no brevity penalty (hyp longer than ref)
  std::vector<std::pair<std::string, std::string>> clip = {{"the cat sat", "the the the the"}};
  auto rows = r1t::metric_table("m", "free", clip);
  CHECK(find_row(rows, "bleu", "1")->value == doctest::Approx(25.0).epsilon(1e-9));
  CHECK(find_row(rows, "rouge1", "p")->value == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(find_row(rows, "rouge1", "r")->value == doctest::Approx(1.0 / 3).epsilon(1e-12));

  std::vector<std::pair<std::string, std::string>> edit = {{"a b c", "a x c"}};
  rows = r1t::metric_table("m", "free", edit);
  CHECK(find_row(rows, "wer", "")->value == doctest::Approx(1.0 / 3).epsilon(1e-12));
  // cer over raw strings: one substitution among five characters
  CHECK(find_row(rows, "cer", "")->value == doctest::Approx(1.0 / 5).epsilon(1e-12));
}

TEST_CASE("aggregation computes mean and SEM per cell") {
  std::vector<MetricRow> run1 = {{"a", "tf", "bleu", "1", 1.0}, {"a", "free", "wer", "", 0.5}};
  std::vector<MetricRow> run2 = {{"b", "tf", "bleu", "1", 3.0}, {"b", "free", "wer", "", 0.5}};
  const auto agg = r1t::aggregate_metrics({run1, run2});
  REQUIRE(agg.size() == 2);
  CHECK(agg[0].mode == "tf");
  CHECK(agg[0].metric == "bleu");
  CHECK(agg[0].mean == doctest::Approx(2.0));
  CHECK(agg[0].sem == doctest::Approx(1.0));  // sd = sqrt(2), sem = sd / sqrt(2)
  CHECK(agg[0].n == 2);
  CHECK(agg[1].mean == doctest::Approx(0.5));
  CHECK(agg[1].sem == 0.0);

  const auto single = r1t::aggregate_metrics({run1});
  CHECK(single[0].sem == 0.0);
  CHECK(single[0].n == 1);
}

TEST_CASE("metrics csv round trips exactly") {
  const std::string path = temp_file("r1t_eval_roundtrip.csv");
  std::vector<MetricRow> rows = {
      {"model-a", "tf", "bleu", "3", 12.345678901234567},
      {"model-a", "free", "cer", "", 0.125},
      {"model,with,commas", "free", "wer", "", 2.0 / 3.0},
  };
  r1t::write_metrics_csv(path, rows);
  const auto back = r1t::read_metrics_csv(path);
  REQUIRE(back.size() == rows.size());
  CHECK(back[0].model == "model-a");
  CHECK(back[0].submetric == "3");
  CHECK(back[0].value == rows[0].value);
  CHECK(back[1].value == rows[1].value);
  CHECK(back[2].model == "model_with_commas");  // sanitized on write
  CHECK(back[2].value == rows[2].value);
  std::remove(path.c_str());
}

TEST_CASE("metrics csv rejects damaged input") {
  const std::string path = temp_file("r1t_eval_bad.csv");
  auto write = [&](const char* text) {
    std::FILE* f = std::fopen(path.c_str(), "w");
    REQUIRE(f);
    std::fputs(text, f);
    std::fclose(f);
  };
  write("not,the,right,header,at_all\n");
  CHECK_THROWS_AS(r1t::read_metrics_csv(path), r1t::FormatError);
  write("model,mode,metric,submetric,value\nm,tf,bleu,1\n");
  CHECK_THROWS_AS(r1t::read_metrics_csv(path), r1t::FormatError);
  write("model,mode,metric,submetric,value\nm,tf,bleu,1,notanumber\n");
  CHECK_THROWS_AS(r1t::read_metrics_csv(path), r1t::FormatError);
  CHECK_THROWS_AS(r1t::read_metrics_csv("/nonexistent/metrics.csv"), r1t::FileError);
  std::remove(path.c_str());
}

TEST_CASE("report svgs cover every metric and stay deterministic") {
  std::vector<MetricRow> run = r1t::metric_table(
      "m", "tf", {{"the cat sat", "the cat sat"}, {"a b", "a c"}});
  const auto agg = r1t::aggregate_metrics({run});
  const std::string dir = (std::filesystem::temp_directory_path() / "r1t_eval_svgs").string();
  std::filesystem::create_directories(dir);
  const auto files = r1t::write_report_svgs(dir, agg);
  REQUIRE(files.size() == 7);
  for (const auto& f : files) {
    std::ifstream is(f);
    REQUIRE(is.good());
    std::string first;
    std::getline(is, first);
    CHECK(first.rfind("<svg", 0) == 0);
  }
  const auto again = r1t::write_report_svgs(dir, agg);
  CHECK(files == again);
  std::filesystem::remove_all(dir);
}

TEST_CASE("run_eval keeps record order and reports sane rates") {
  r1t::SynthConfig scfg;
  scfg.vocab_size = 6;
  scfg.n_sentences = 5;
  scfg.len_min = 2;
  scfg.len_max = 4;
  scfg.seed = 11;
  auto records = r1t::synthesize_dataset(scfg);
  r1t::normalize_records(records);
  std::vector<std::string> texts;
  for (const auto& r : records) texts.push_back(r.text);
  const auto vocab = r1t::build_vocab(texts);

  r1t::R1Translator<float> model(r1t::ModelConfig::toy(vocab.size()), 3);
  r1t::DecodeConfig decode;
  decode.mode = r1t::DecodeConfig::Mode::greedy;
  decode.max_len = 6;

  const auto out = r1t::run_eval(model, records, vocab, decode, 2);
  REQUIRE(out.rows.size() == records.size());
  for (size_t i = 0; i < records.size(); ++i) {
    CHECK(out.rows[i].sentence_id == records[i].sentence_id);
    CHECK(out.rows[i].target == records[i].text);
  }
  CHECK(out.tf_token_accuracy >= 0.0);
  CHECK(out.tf_token_accuracy <= 1.0);
  CHECK(out.free_exact_match >= 0.0);
  CHECK(out.free_exact_match <= 1.0);

  const auto out2 = r1t::run_eval(model, records, vocab, decode, 2);
  CHECK(out2.tf_token_accuracy == out.tf_token_accuracy);
  for (size_t i = 0; i < out.rows.size(); ++i) {
    CHECK(out2.rows[i].tf_text == out.rows[i].tf_text);
    CHECK(out2.rows[i].free_text == out.rows[i].free_text);
  }

  CHECK_THROWS_AS(r1t::run_eval(model, {}, vocab, decode, 2), r1t::ContractError);
  r1t::DecodeConfig tf_cfg;
  tf_cfg.mode = r1t::DecodeConfig::Mode::teacher_forced;
  CHECK_THROWS_AS(r1t::run_eval(model, records, vocab, tf_cfg, 2), r1t::ContractError);
}
