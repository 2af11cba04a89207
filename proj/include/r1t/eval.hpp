#pragma once

#include <string>
#include <utility>
#include <vector>

#include "r1t/decoding.hpp"
#include "r1t/metrics.hpp"
#include "r1t/training.hpp"

namespace r1t {

// One evaluated sentence: the reference next to both decoding regimes.
struct GenerationTriple {
  std::string sentence_id;
  std::string target;
  std::string tf_text;    // argmax under ground-truth prefixes
  std::string free_text;  // autoregressive decode
};

struct EvalOutputs {
  std::vector<GenerationTriple> rows;
  double tf_token_accuracy = 0;  // content positions; EOS excluded
  double free_exact_match = 0;   // fraction of exact string matches
};

// Decodes every record in both regimes. Records are evaluated in order, so
// rows[k] corresponds to records[k].
template <typename T>
EvalOutputs run_eval(const R1Translator<T>& model, const std::vector<EegSentenceRecord>& records,
                     const Vocabulary& vocab, const DecodeConfig& free_cfg, int batch_size) {
  if (records.empty()) throw ContractError("evaluation needs at least one record");
  free_cfg.validate();
  if (free_cfg.mode == DecodeConfig::Mode::teacher_forced)
    throw ContractError("the free-running decode config cannot be teacher_forced");

  const int64_t maxlen = model.config().maxlen;
  const auto batches = make_batches<T>(records, vocab, batch_size, maxlen, maxlen);

  EvalOutputs out;
  out.rows.reserve(records.size());
  int64_t content = 0, correct = 0, matched = 0;
  size_t rec_at = 0;
  for (const auto& batch : batches) {
    const auto tf = teacher_forced_predict(model, batch);
    const auto free_ids = generate(model, batch, free_cfg);
    const int64_t Ty = batch.target_len;
    for (int64_t i = 0; i < batch.batch; ++i, ++rec_at) {
      for (int64_t t = 1; t < Ty; ++t) {
        const size_t at = static_cast<size_t>(i * Ty + t);
        const int32_t want = batch.targets[at];
        if (want == Vocabulary::kPad || want == Vocabulary::kEos) continue;
        ++content;
        if (tf[at] == want) ++correct;
      }
      GenerationTriple row;
      row.sentence_id = records[rec_at].sentence_id;
      row.target = records[rec_at].text;
      row.tf_text = vocab.decode(std::vector<int32_t>(
          tf.begin() + static_cast<int64_t>(i * Ty), tf.begin() + static_cast<int64_t>((i + 1) * Ty)));
      row.free_text = vocab.decode(free_ids[static_cast<size_t>(i)]);
      if (row.free_text == row.target) ++matched;
      out.rows.push_back(std::move(row));
    }
  }
  out.tf_token_accuracy = content > 0 ? static_cast<double>(correct) / static_cast<double>(content) : 0;
  out.free_exact_match =
      out.rows.empty() ? 0 : static_cast<double>(matched) / static_cast<double>(out.rows.size());
  return out;
}

// One metric value of the eval table. Serialized as
// `model,mode,metric,submetric,value` with mode in {tf, free}.
struct MetricRow {
  std::string model;
  std::string mode;
  std::string metric;
  std::string submetric;  // empty when the metric has no submetric
  double value = 0;
};

// The 16 rows of one decoding mode: BLEU-1..4, ROUGE-1/2/L each P/R/F
// (macro-averaged over sentences), corpus BLEU, corpus WER, corpus CER.
std::vector<MetricRow> metric_table(const std::string& model_name, const std::string& mode,
                                    const std::vector<std::pair<std::string, std::string>>& ref_hyp);

void write_metrics_csv(const std::string& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::string& path);

void write_generations_tsv(const std::string& path, const std::vector<GenerationTriple>& rows);

// Across-run aggregation for the report command: mean and standard error of
// every (mode, metric, submetric) cell over the input runs.
struct ReportRow {
  std::string mode;
  std::string metric;
  std::string submetric;
  double mean = 0;
  double sem = 0;
  int n = 0;
};

std::vector<ReportRow> aggregate_metrics(const std::vector<std::vector<MetricRow>>& runs);
void write_report_csv(const std::string& path, const std::vector<ReportRow>& rows);

// Self-contained bar chart per metric (bars = mode/submetric cells, whiskers
// = SEM). Returns the files written, one `report_<metric>.svg` per metric.
std::vector<std::string> write_report_svgs(const std::string& dir,
                                           const std::vector<ReportRow>& rows);

}  // namespace r1t
