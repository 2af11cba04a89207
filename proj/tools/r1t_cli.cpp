// Command-line pipeline: train, eval, generate, report.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "r1t/data.hpp"
#include "r1t/decoding.hpp"
#include "r1t/eval.hpp"
#include "r1t/model.hpp"
#include "r1t/runtime.hpp"
#include "r1t/training.hpp"

namespace fs = std::filesystem;

namespace {

int log_level() {
  const char* v = std::getenv("R1_LOG");
  return v ? std::atoi(v) : 1;
}

void info(const std::string& s) {
  if (log_level() >= 1) std::cerr << "[r1t] " << s << "\n";
}

void debug(const std::string& s) {
  if (log_level() >= 2) std::cerr << "[r1t] " << s << "\n";
}

struct DataOptions {
  std::string data_path;
  std::string synth_spec;
  bool noise_ctrl = false;
};

struct ModelOverrides {
  std::string config_path;
  int64_t d = 0, heads = 0, enc_layers = 0, dec_layers = 0, lstm_hidden = 0, lstm_layers = 0,
          maxlen = 0;
};

void add_data_options(CLI::App* cmd, DataOptions& opts) {
  auto* data = cmd->add_option("--data", opts.data_path, "JSONL dataset path");
  auto* synth =
      cmd->add_option("--synth", opts.synth_spec,
                      "synthetic corpus spec: vocab=30,n=600,len_min=3,len_max=8,noise_std=0.1");
  data->excludes(synth);
  cmd->add_flag("--noise-control", opts.noise_ctrl,
                "globally permute feature vectors, destroying the feature-to-text mapping");
}

void add_model_options(CLI::App* cmd, ModelOverrides& m) {
  cmd->add_option("--model-config", m.config_path, "key=value model config file");
  cmd->add_option("--dmodel", m.d, "transformer width");
  cmd->add_option("--heads", m.heads, "attention heads");
  cmd->add_option("--enc-layers", m.enc_layers, "encoder layers");
  cmd->add_option("--dec-layers", m.dec_layers, "decoder layers");
  cmd->add_option("--lstm-hidden", m.lstm_hidden, "LSTM hidden size per direction");
  cmd->add_option("--lstm-layers", m.lstm_layers, "LSTM layers");
  cmd->add_option("--maxlen", m.maxlen, "maximum source/target length");
}

r1t::SynthConfig parse_synth_spec(const std::string& spec, uint64_t seed) {
  r1t::SynthConfig cfg;
  cfg.seed = seed;
  std::stringstream ss(spec);
  std::string kv;
  while (std::getline(ss, kv, ',')) {
    if (kv.empty()) continue;
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw r1t::UsageError(r1t::msg("synth spec entry '", kv, "' is not key=value"));
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    try {
      if (key == "vocab")
        cfg.vocab_size = std::stoi(val);
      else if (key == "n")
        cfg.n_sentences = std::stoi(val);
      else if (key == "len_min")
        cfg.len_min = std::stoi(val);
      else if (key == "len_max")
        cfg.len_max = std::stoi(val);
      else if (key == "noise_std")
        cfg.noise_std = std::stod(val);
      else
        throw r1t::UsageError(r1t::msg("unknown synth key '", key, "'"));
    } catch (const std::invalid_argument&) {
      throw r1t::UsageError(r1t::msg("bad synth value '", val, "' for '", key, "'"));
    } catch (const std::out_of_range&) {
      throw r1t::UsageError(r1t::msg("synth value '", val, "' out of range for '", key, "'"));
    }
  }
  return cfg;
}

std::vector<r1t::EegSentenceRecord> load_records(const DataOptions& opts, uint64_t seed) {
  if (opts.data_path.empty() == opts.synth_spec.empty())
    throw r1t::UsageError("specify exactly one of --data or --synth");
  std::vector<r1t::EegSentenceRecord> records;
  if (!opts.data_path.empty()) {
    int dropped = 0;
    records = r1t::load_dataset(opts.data_path, &dropped);
    info(r1t::msg("loaded ", records.size(), " records from ", opts.data_path, " (dropped ",
                  dropped, ")"));
  } else {
    records = r1t::synthesize_dataset(parse_synth_spec(opts.synth_spec, seed));
    r1t::normalize_records(records);
    info(r1t::msg("synthesized ", records.size(), " records"));
  }
  if (opts.noise_ctrl) {
    records = r1t::noise_control(std::move(records), seed + 1000003);
    info("applied noise control permutation");
  }
  return records;
}

r1t::ModelConfig resolve_model_config(const ModelOverrides& m, int32_t vocab_size) {
  r1t::ModelConfig cfg = r1t::ModelConfig::toy(vocab_size);
  if (!m.config_path.empty()) {
    std::ifstream is(m.config_path);
    if (!is) throw r1t::FileError(r1t::msg("cannot open '", m.config_path, "'"));
    std::stringstream ss;
    ss << is.rdbuf();
    cfg = r1t::ModelConfig::from_text(ss.str());
    cfg.f = r1t::kFeatureDim;  // data decides the feature and vocab dims
    cfg.V = vocab_size;
  }
  if (m.d) cfg.d = m.d;
  if (m.heads) cfg.heads = m.heads;
  if (m.enc_layers) cfg.enc_layers = m.enc_layers;
  if (m.dec_layers) cfg.dec_layers = m.dec_layers;
  if (m.lstm_hidden) cfg.h = m.lstm_hidden;
  if (m.lstm_layers) cfg.L = m.lstm_layers;
  if (m.maxlen) cfg.maxlen = m.maxlen;
  cfg.validate();
  return cfg;
}

struct Corpus {
  r1t::SplitResult split;
  r1t::Vocabulary vocab;
};

Corpus prepare_corpus(const DataOptions& opts, uint64_t seed) {
  Corpus c;
  auto records = load_records(opts, seed);
  c.split = r1t::split_dataset(records, seed);
  std::vector<std::string> texts;
  texts.reserve(c.split.train.size());
  for (const auto& r : c.split.train) texts.push_back(r.text);
  c.vocab = r1t::build_vocab(texts);
  info(r1t::msg("split train/dev/test = ", c.split.train.size(), "/", c.split.dev.size(), "/",
                c.split.test.size(), ", vocab ", c.vocab.size()));
  return c;
}

const std::vector<r1t::EegSentenceRecord>& pick_split(const Corpus& c, const std::string& name) {
  if (name == "train") return c.split.train;
  if (name == "dev") return c.split.dev;
  return c.split.test;
}

r1t::DecodeConfig make_decode_config(int beam, int64_t max_len, double length_penalty,
                                     int64_t model_maxlen) {
  r1t::DecodeConfig cfg;
  cfg.mode = beam >= 2 ? r1t::DecodeConfig::Mode::beam : r1t::DecodeConfig::Mode::greedy;
  cfg.beam_width = beam;
  cfg.max_len = max_len > 0 ? std::min(max_len, model_maxlen) : model_maxlen;
  cfg.length_penalty = length_penalty;
  cfg.validate();
  return cfg;
}

std::vector<std::pair<std::string, std::string>> pairs_of(
    const std::vector<r1t::GenerationTriple>& rows, bool tf) {
  std::vector<std::pair<std::string, std::string>> out;
  out.reserve(rows.size());
  for (const auto& r : rows) out.emplace_back(r.target, tf ? r.tf_text : r.free_text);
  return out;
}

// ---- subcommand drivers ----

struct TrainArgs {
  DataOptions data;
  ModelOverrides model;
  uint64_t seed = 0;
  std::string out = "out";
  int epochs1 = 20, epochs2 = 30;
  double lr1 = 0.4, lr2 = 0.2;  // from-scratch toy defaults
  double momentum = 0.9, gamma = 0.1;
  int lr_step1 = 20, lr_step2 = 30;
  int batch_size = 32;
};

int run_train(const TrainArgs& a) {
  fs::create_directories(a.out);
  Corpus c = prepare_corpus(a.data, a.seed);
  r1t::write_split_manifest(a.out + "/splits.txt", c.split);
  c.vocab.save(a.out + "/vocab.txt");

  const r1t::ModelConfig cfg = resolve_model_config(a.model, c.vocab.size());
  r1t::R1Translator<float> model(cfg, a.seed);
  debug(r1t::msg("model config:\n", cfg.canonical_text()));

  r1t::TwoStageConfig tcfg;
  tcfg.n1 = a.epochs1;
  tcfg.n2 = a.epochs2;
  tcfg.eta1 = a.lr1;
  tcfg.eta2 = a.lr2;
  tcfg.mu = a.momentum;
  tcfg.gamma = a.gamma;
  tcfg.step1 = a.lr_step1;
  tcfg.step2 = a.lr_step2;
  tcfg.batch_size = a.batch_size;
  tcfg.seed = a.seed;

  const auto train_batches =
      r1t::make_batches<float>(c.split.train, c.vocab, tcfg.batch_size, cfg.maxlen, cfg.maxlen);
  const auto val_batches =
      r1t::make_batches<float>(c.split.dev, c.vocab, tcfg.batch_size, cfg.maxlen, cfg.maxlen);
  info(r1t::msg("training on ", train_batches.size(), " batches (", r1t::runtime_summary(), ")"));

  const auto result = r1t::train_two_stage(model, train_batches, val_batches, tcfg);
  for (const auto& row : result.log)
    debug(r1t::msg("stage ", row.stage, " epoch ", row.epoch, " lr ", row.lr, " train ",
                   row.train_loss, " val ", row.val_loss));

  r1t::save_checkpoint(result.best, a.out + "/best.ckpt");
  const auto final_ck = r1t::Checkpoint<float>::capture(
      model, 2, static_cast<uint64_t>(a.epochs1 + a.epochs2),
      result.log.empty() ? result.best.val_loss : result.log.back().val_loss, "");
  r1t::save_checkpoint(final_ck, a.out + "/final.ckpt");
  r1t::write_train_log(a.out + "/log.csv", result.log);

  std::cout << "train ok out=" << a.out << " best_stage=" << result.best.stage
            << " best_epoch=" << result.best.epoch << " best_val=" << result.best.val_loss
            << " epochs=" << result.log.size() << "\n";
  return 0;
}

struct EvalArgs {
  DataOptions data;
  std::string checkpoint;
  uint64_t seed = 0;
  std::string out = "out";
  std::string split = "test";
  std::string mode = "both";
  std::string model_name;
  int beam = 4;
  int64_t max_len = 0;
  double length_penalty = 0;
  int batch_size = 32;
};

struct LoadedModel {
  r1t::R1Translator<float> model;
  std::string name;
};

LoadedModel load_model(const std::string& checkpoint_path, const std::string& name_override,
                       int32_t vocab_size) {
  auto ck = r1t::load_checkpoint<float>(checkpoint_path);
  if (ck.config.V != vocab_size)
    throw r1t::SchemaError(r1t::msg("checkpoint vocab ", ck.config.V,
                                    " does not match rebuilt vocab ", vocab_size,
                                    "; use the training data and seed"));
  LoadedModel lm{r1t::R1Translator<float>(ck.config, 0),
                 name_override.empty() ? fs::path(checkpoint_path).stem().string()
                                       : name_override};
  ck.load_into(lm.model);
  info(r1t::msg("loaded checkpoint ", checkpoint_path, " (stage ", ck.stage, ", epoch ", ck.epoch,
                ", val ", ck.val_loss, ")"));
  return lm;
}

int run_eval(const EvalArgs& a) {
  fs::create_directories(a.out);
  Corpus c = prepare_corpus(a.data, a.seed);
  LoadedModel lm = load_model(a.checkpoint, a.model_name, c.vocab.size());
  const auto& records = pick_split(c, a.split);
  const auto decode =
      make_decode_config(a.beam, a.max_len, a.length_penalty, lm.model.config().maxlen);

  const auto outputs = r1t::run_eval(lm.model, records, c.vocab, decode, a.batch_size);
  std::vector<r1t::MetricRow> rows;
  if (a.mode == "tf" || a.mode == "both") {
    const auto tf_rows = r1t::metric_table(lm.name, "tf", pairs_of(outputs.rows, true));
    rows.insert(rows.end(), tf_rows.begin(), tf_rows.end());
  }
  if (a.mode == "free" || a.mode == "both") {
    const auto free_rows = r1t::metric_table(lm.name, "free", pairs_of(outputs.rows, false));
    rows.insert(rows.end(), free_rows.begin(), free_rows.end());
  }
  r1t::write_metrics_csv(a.out + "/metrics.csv", rows);

  std::cout << "eval ok out=" << a.out << " rows=" << rows.size() << " sentences="
            << outputs.rows.size() << " tf_token_accuracy=" << outputs.tf_token_accuracy
            << " free_exact_match=" << outputs.free_exact_match << "\n";
  return 0;
}

int run_generate(const EvalArgs& a) {
  fs::create_directories(a.out);
  Corpus c = prepare_corpus(a.data, a.seed);
  LoadedModel lm = load_model(a.checkpoint, a.model_name, c.vocab.size());
  const auto& records = pick_split(c, a.split);
  const auto decode =
      make_decode_config(a.beam, a.max_len, a.length_penalty, lm.model.config().maxlen);

  const auto outputs = r1t::run_eval(lm.model, records, c.vocab, decode, a.batch_size);
  r1t::write_generations_tsv(a.out + "/generations.tsv", outputs.rows);

  std::cout << "generate ok out=" << a.out << " sentences=" << outputs.rows.size() << "\n";
  return 0;
}

struct ReportArgs {
  std::vector<std::string> inputs;
  std::string out = "out";
};

int run_report(const ReportArgs& a) {
  fs::create_directories(a.out);
  std::vector<std::vector<r1t::MetricRow>> runs;
  runs.reserve(a.inputs.size());
  for (const auto& path : a.inputs) runs.push_back(r1t::read_metrics_csv(path));
  const auto agg = r1t::aggregate_metrics(runs);
  r1t::write_report_csv(a.out + "/report.csv", agg);
  const auto svgs = r1t::write_report_svgs(a.out, agg);

  std::cout << "report ok out=" << a.out << " inputs=" << a.inputs.size()
            << " rows=" << agg.size() << " svgs=" << svgs.size() << "\n";
  return 0;
}

std::string one_line(std::string s) {
  for (char& c : s)
    if (c == '\n' || c == '\r' || c == '"') c = c == '"' ? '\'' : ' ';
  return s;
}

int fail(const std::string& code, const std::string& what, int status) {
  std::cerr << "R1T_ERROR code=" << code << " msg=\"" << one_line(what) << "\"\n";
  return status;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-to-text translator: train, evaluate, generate, and report"};
  app.require_subcommand(1);
  std::string backend;
  app.add_option("--backend", backend, "compute backend: omp or serial");

  TrainArgs train_args;
  auto* train_cmd = app.add_subcommand("train", "two-stage fine-tuning run");
  add_data_options(train_cmd, train_args.data);
  add_model_options(train_cmd, train_args.model);
  train_cmd->add_option("--seed", train_args.seed, "run seed")->required();
  train_cmd->add_option("--out", train_args.out, "output directory");
  train_cmd->add_option("--epochs-stage1", train_args.epochs1, "stage 1 epochs");
  train_cmd->add_option("--epochs-stage2", train_args.epochs2, "stage 2 epochs");
  train_cmd->add_option("--lr-stage1", train_args.lr1, "stage 1 learning rate");
  train_cmd->add_option("--lr-stage2", train_args.lr2, "stage 2 learning rate");
  train_cmd->add_option("--momentum", train_args.momentum, "SGD momentum");
  train_cmd->add_option("--gamma", train_args.gamma, "LR decay factor");
  train_cmd->add_option("--lr-step1", train_args.lr_step1, "stage 1 LR step size");
  train_cmd->add_option("--lr-step2", train_args.lr_step2, "stage 2 LR step size");
  train_cmd->add_option("--batch-size", train_args.batch_size, "batch size");

  EvalArgs eval_args;
  auto* eval_cmd = app.add_subcommand("eval", "metric table in both decoding modes");
  add_data_options(eval_cmd, eval_args.data);
  eval_cmd->add_option("--checkpoint", eval_args.checkpoint, "checkpoint path")->required();
  eval_cmd->add_option("--seed", eval_args.seed, "seed used by the training run")->required();
  eval_cmd->add_option("--out", eval_args.out, "output directory");
  eval_cmd->add_option("--split", eval_args.split, "train, dev, or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  eval_cmd->add_option("--mode", eval_args.mode, "tf, free, or both")
      ->check(CLI::IsMember({"tf", "free", "both"}));
  eval_cmd->add_option("--model-name", eval_args.model_name, "name for the csv model column");
  eval_cmd->add_option("--beam", eval_args.beam, "beam width (1 = greedy)");
  eval_cmd->add_option("--max-len", eval_args.max_len, "generation cap (0 = model maxlen)");
  eval_cmd->add_option("--length-penalty", eval_args.length_penalty, "beam length penalty");
  eval_cmd->add_option("--batch-size", eval_args.batch_size, "batch size");

  EvalArgs gen_args;
  auto* gen_cmd = app.add_subcommand("generate", "emit target / tf / free text triples");
  add_data_options(gen_cmd, gen_args.data);
  gen_cmd->add_option("--checkpoint", gen_args.checkpoint, "checkpoint path")->required();
  gen_cmd->add_option("--seed", gen_args.seed, "seed used by the training run")->required();
  gen_cmd->add_option("--out", gen_args.out, "output directory");
  gen_cmd->add_option("--split", gen_args.split, "train, dev, or test")
      ->check(CLI::IsMember({"train", "dev", "test"}));
  gen_cmd->add_option("--beam", gen_args.beam, "beam width (1 = greedy)");
  gen_cmd->add_option("--max-len", gen_args.max_len, "generation cap (0 = model maxlen)");
  gen_cmd->add_option("--length-penalty", gen_args.length_penalty, "beam length penalty");
  gen_cmd->add_option("--batch-size", gen_args.batch_size, "batch size");

  ReportArgs report_args;
  auto* report_cmd = app.add_subcommand("report", "aggregate eval csvs into mean +- SEM");
  report_cmd->add_option("inputs", report_args.inputs, "metrics.csv files")->required();
  report_cmd->add_option("--out", report_args.out, "output directory");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    if (e.get_exit_code() == 0) return app.exit(e);  // --help and friends
    return fail("usage", e.what(), 2);
  }

  try {
    if (!backend.empty()) r1t::kernels::set_backend(r1t::parse_backend(backend));
    if (*train_cmd) return run_train(train_args);
    if (*eval_cmd) return run_eval(eval_args);
    if (*gen_cmd) return run_generate(gen_args);
    return run_report(report_args);
  } catch (const r1t::UsageError& e) {
    return fail("usage", e.what(), 2);
  } catch (const r1t::FileError& e) {
    return fail("file", e.what(), 1);
  } catch (const r1t::FormatError& e) {
    return fail("format", e.what(), 1);
  } catch (const r1t::SchemaError& e) {
    return fail("schema", e.what(), 1);
  } catch (const r1t::ParseError& e) {
    return fail("parse", e.what(), 1);
  } catch (const r1t::ShapeError& e) {
    return fail("shape", e.what(), 1);
  } catch (const r1t::ContractError& e) {
    return fail("contract", e.what(), 1);
  } catch (const r1t::NumericError& e) {
    return fail("numeric", e.what(), 1);
  } catch (const std::exception& e) {
    return fail("internal", e.what(), 1);
  }
}
