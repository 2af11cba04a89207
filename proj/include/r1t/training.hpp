#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <limits>
#include <string>
#include <utility>
#include <vector>

#include "r1t/model.hpp"

namespace r1t {

struct SgdConfig {
  double eta = 2e-5;
  double mu = 0.9;

  void validate() const {
    if (!(eta > 0)) throw ContractError(msg("learning rate must be positive, got ", eta));
    if (!(mu >= 0 && mu < 1)) throw ContractError(msg("momentum must be in [0,1), got ", mu));
  }
};

struct SchedulerConfig {
  double gamma = 0.1;
  int step_size = 20;

  void validate() const {
    if (!(gamma > 0 && gamma <= 1)) throw ContractError(msg("decay factor must be in (0,1], got ", gamma));
    if (step_size < 1) throw ContractError(msg("scheduler step size must be >= 1, got ", step_size));
  }
};

// eta * gamma^floor(epoch / step_size)
inline double scheduled_lr(double base_eta, int epoch, const SchedulerConfig& cfg) {
  cfg.validate();
  if (epoch < 0) throw ContractError(msg("epoch must be >= 0, got ", epoch));
  return base_eta * std::pow(cfg.gamma, epoch / cfg.step_size);
}

// Momentum velocities, one per trainable parameter, in registration order.
template <typename T>
struct OptimizerState {
  std::vector<std::pair<std::string, std::vector<T>>> velocity;

  static OptimizerState for_trainable(const ParameterStore<T>& params) {
    OptimizerState st;
    for (const auto& name : params.names()) {
      const auto& p = params.at(name);
      if (p.requires_grad()) st.velocity.emplace_back(name, std::vector<T>(p.data().size(), T(0)));
    }
    return st;
  }
};

// v <- mu*v + eta*g; theta <- theta - v. The learning rate scales the
// velocity contribution, not the final subtraction.
template <typename T>
void sgd_step(ParameterStore<T>& params, OptimizerState<T>& state, const SgdConfig& cfg) {
  cfg.validate();
  const T eta = static_cast<T>(cfg.eta), mu = static_cast<T>(cfg.mu);
  for (auto& [name, v] : state.velocity) {
    auto& p = params.at(name);
    if (!p.has_grad())
      throw ContractError(msg("missing gradient for trainable parameter '", name, "'"));
    const auto& g = p.grad();
    auto& data = p.raw_data();
    if (v.size() != data.size())
      throw ContractError(msg("velocity size mismatch for '", name, "'"));
    for (size_t i = 0; i < data.size(); ++i) {
      v[i] = mu * v[i] + eta * g[i];
      data[i] -= v[i];
    }
  }
}

// Mean negative log-likelihood over non-pad positions of [B,T,V] logits.
template <typename T>
Tensor<T> cross_entropy(const Tensor<T>& logits, const std::vector<int32_t>& targets,
                        int32_t pad_id) {
  if (logits.rank() != 3)
    throw ShapeError(msg("cross_entropy expects [B,T,V], got ", shape_str(logits.shape())));
  const int64_t B = logits.dim(0), S = logits.dim(1), V = logits.dim(2);
  if (static_cast<int64_t>(targets.size()) != B * S)
    throw ShapeError(msg("cross_entropy got ", targets.size(), " targets for [", B, "x", S, "]"));
  std::vector<uint8_t> mask(targets.size());
  for (size_t i = 0; i < targets.size(); ++i) mask[i] = targets[i] == pad_id ? 0 : 1;
  auto logp = log_softmax(reshape(logits, {B * S, V}), -1);
  return mul_scalar(pick_mean(logp, targets, mask), T(-1));
}

// One pass over the batches in the given order: zero grads, forward,
// backward, SGD step. Returns the mean of the per-batch losses.
template <typename T>
double epoch_train(R1Translator<T>& model, const std::vector<Batch<T>>& batches,
                   OptimizerState<T>& state, const SgdConfig& cfg) {
  cfg.validate();
  if (batches.empty()) throw ContractError("epoch_train needs at least one batch");
  double total = 0;
  for (size_t i = 0; i < batches.size(); ++i) {
    model.params().zero_grads();
    auto out = model.forward_loss(batches[i]);
    const double batch_loss = static_cast<double>(out.loss.item());
    if (!std::isfinite(batch_loss))
      throw NumericError(msg("non-finite training loss ", batch_loss, " in batch ", i,
                             "; aborting epoch"));
    out.loss.backward();
    sgd_step(model.params(), state, cfg);
    total += batch_loss;
  }
  return total / static_cast<double>(batches.size());
}

// Mean forward loss without touching gradients.
template <typename T>
double validation_loss(const R1Translator<T>& model, const std::vector<Batch<T>>& batches) {
  if (batches.empty()) throw ContractError("validation needs at least one batch");
  autograd::NoGradGuard guard;
  double total = 0;
  for (const auto& b : batches) total += static_cast<double>(model.forward_loss(b).loss.item());
  return total / static_cast<double>(batches.size());
}

// Groups records into consecutive batches; the last partial batch is kept.
template <typename T>
std::vector<Batch<T>> make_batches(const std::vector<EegSentenceRecord>& records,
                                   const Vocabulary& vocab, int batch_size, int64_t max_src_len,
                                   int64_t max_tgt_len) {
  if (batch_size < 1) throw ContractError(msg("batch size must be >= 1, got ", batch_size));
  std::vector<Batch<T>> out;
  for (size_t at = 0; at < records.size(); at += static_cast<size_t>(batch_size)) {
    const size_t end = std::min(records.size(), at + static_cast<size_t>(batch_size));
    std::vector<EegSentenceRecord> chunk(records.begin() + static_cast<int64_t>(at),
                                         records.begin() + static_cast<int64_t>(end));
    out.push_back(build_batch<T>(chunk, vocab, max_src_len, max_tgt_len));
  }
  return out;
}

inline constexpr uint32_t kCheckpointVersion = 1;

template <typename T>
struct Checkpoint {
  uint32_t version = kCheckpointVersion;
  ModelConfig config;
  uint32_t stage = 0;  // 0 = initialization, 1/2 = training stages
  uint64_t epoch = 0;
  double val_loss = std::numeric_limits<double>::quiet_NaN();
  std::string rng_state;
  std::vector<std::pair<std::string, std::pair<Shape, std::vector<T>>>> tensors;

  static Checkpoint capture(const R1Translator<T>& model, uint32_t stage, uint64_t epoch,
                            double val_loss, std::string rng_state) {
    Checkpoint ck;
    ck.config = model.config();
    ck.stage = stage;
    ck.epoch = epoch;
    ck.val_loss = val_loss;
    ck.rng_state = std::move(rng_state);
    for (const auto& name : model.params().names()) {
      const auto& p = model.params().at(name);
      ck.tensors.emplace_back(name, std::make_pair(p.shape(), p.data()));
    }
    return ck;
  }

  // Overwrites the model parameters; every tensor must match by name, order,
  // and shape, so a checkpoint from a different config is rejected with the
  // first offending tensor named.
  void load_into(R1Translator<T>& model) const {
    const auto names = model.params().names();
    for (size_t i = 0; i < names.size(); ++i) {
      if (i >= tensors.size())
        throw SchemaError(msg("checkpoint is missing tensor '", names[i], "'"));
      if (tensors[i].first != names[i])
        throw SchemaError(msg("checkpoint tensor '", tensors[i].first, "' where '", names[i],
                              "' was expected"));
      auto& p = model.params().at(names[i]);
      if (tensors[i].second.first != p.shape())
        throw SchemaError(msg("checkpoint tensor '", names[i], "' has shape ",
                              shape_str(tensors[i].second.first), ", model expects ",
                              shape_str(p.shape())));
      p.raw_data() = tensors[i].second.second;
    }
    if (tensors.size() > names.size())
      throw SchemaError(msg("checkpoint has extra tensor '", tensors[names.size()].first, "'"));
  }
};

namespace detail {

inline void write_bytes(std::ostream& os, const void* p, size_t n) {
  os.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
}

inline void read_bytes(std::istream& is, void* p, size_t n, const char* what) {
  is.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
  if (static_cast<size_t>(is.gcount()) != n)
    throw FormatError(msg("checkpoint truncated while reading ", what));
}

template <typename U>
void write_pod(std::ostream& os, U v) {
  write_bytes(os, &v, sizeof(U));
}

template <typename U>
U read_pod(std::istream& is, const char* what) {
  U v;
  read_bytes(is, &v, sizeof(U), what);
  return v;
}

inline void write_str(std::ostream& os, const std::string& s) {
  write_pod<uint64_t>(os, s.size());
  write_bytes(os, s.data(), s.size());
}

inline std::string read_str(std::istream& is, const char* what) {
  const auto n = read_pod<uint64_t>(is, what);
  if (n > (1u << 20)) throw FormatError(msg("implausible string length in checkpoint ", what));
  std::string s(n, '\0');
  read_bytes(is, s.data(), n, what);
  return s;
}

}  // namespace detail

// Layout: magic "R1CK", u32 version, u32 stage, u64 epoch, f64 val loss,
// RNG-state string, config text, u64 tensor count, then per tensor: name,
// u8 scalar width, u64 rank, u64 dims, raw little-endian payload.
template <typename T>
void save_checkpoint(const Checkpoint<T>& ck, const std::string& path) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
  detail::write_bytes(os, "R1CK", 4);
  detail::write_pod<uint32_t>(os, ck.version);
  detail::write_pod<uint32_t>(os, ck.stage);
  detail::write_pod<uint64_t>(os, ck.epoch);
  detail::write_pod<double>(os, ck.val_loss);
  detail::write_str(os, ck.rng_state);
  detail::write_str(os, ck.config.canonical_text());
  detail::write_pod<uint64_t>(os, ck.tensors.size());
  for (const auto& [name, sv] : ck.tensors) {
    detail::write_str(os, name);
    detail::write_pod<uint8_t>(os, static_cast<uint8_t>(sizeof(T)));
    detail::write_pod<uint64_t>(os, sv.first.size());
    for (int64_t d : sv.first) detail::write_pod<uint64_t>(os, static_cast<uint64_t>(d));
    detail::write_bytes(os, sv.second.data(), sv.second.size() * sizeof(T));
  }
  os.flush();
  if (!os) throw FileError(msg("failed writing checkpoint to '", path, "'"));
}

template <typename T>
Checkpoint<T> load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FileError(msg("cannot open checkpoint '", path, "'"));
  char magic[4];
  detail::read_bytes(is, magic, 4, "magic");
  if (std::string(magic, 4) != "R1CK")
    throw FormatError(msg("'", path, "' is not a checkpoint (bad magic)"));
  Checkpoint<T> ck;
  ck.version = detail::read_pod<uint32_t>(is, "version");
  if (ck.version != kCheckpointVersion)
    throw FormatError(msg("unsupported checkpoint version ", ck.version, ", expected ",
                          kCheckpointVersion));
  ck.stage = detail::read_pod<uint32_t>(is, "stage");
  ck.epoch = detail::read_pod<uint64_t>(is, "epoch");
  ck.val_loss = detail::read_pod<double>(is, "val loss");
  ck.rng_state = detail::read_str(is, "rng state");
  ck.config = ModelConfig::from_text(detail::read_str(is, "config"));
  const auto count = detail::read_pod<uint64_t>(is, "tensor count");
  if (count > (1u << 24)) throw FormatError("implausible tensor count in checkpoint");
  for (uint64_t t = 0; t < count; ++t) {
    const std::string name = detail::read_str(is, "tensor name");
    const auto width = detail::read_pod<uint8_t>(is, "scalar width");
    if (width != sizeof(T))
      throw SchemaError(msg("checkpoint tensor '", name, "' stores ", int(width),
                            "-byte scalars, this model uses ", sizeof(T), "-byte"));
    const auto rank = detail::read_pod<uint64_t>(is, "rank");
    if (rank > 16) throw FormatError(msg("implausible rank for tensor '", name, "'"));
    Shape shape(rank);
    int64_t numel = 1;
    for (auto& d : shape) {
      d = static_cast<int64_t>(detail::read_pod<uint64_t>(is, "dim"));
      if (d < 0 || d > (int64_t(1) << 32)) throw FormatError("implausible dim in checkpoint");
      numel *= d;
    }
    std::vector<T> data(static_cast<size_t>(numel));
    detail::read_bytes(is, data.data(), data.size() * sizeof(T), name.c_str());
    ck.tensors.emplace_back(name, std::make_pair(std::move(shape), std::move(data)));
  }
  return ck;
}

struct TrainLogRow {
  int stage = 0;
  int epoch = 0;
  double lr = 0;
  double train_loss = 0;
  double val_loss = 0;
};

inline void write_train_log(const std::string& path, const std::vector<TrainLogRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw FileError(msg("cannot open '", path, "' for writing"));
  os << "stage,epoch,lr,train_loss,val_loss\n";
  char buf[160];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%d,%d,%.17g,%.17g,%.17g\n", r.stage, r.epoch, r.lr,
                  r.train_loss, r.val_loss);
    os << buf;
  }
  if (!os) throw FileError(msg("failed writing training log to '", path, "'"));
}

struct TwoStageConfig {
  int n1 = 20;
  int n2 = 30;
  double eta1 = 2e-5;
  double eta2 = 2e-5;
  double mu = 0.9;
  double gamma = 0.1;
  int step1 = 20;
  int step2 = 30;
  int batch_size = 32;
  uint64_t seed = 1;

  void validate() const {
    if (n1 < 0 || n2 < 0) throw ContractError("epoch budgets must be >= 0");
    SgdConfig{eta1, mu}.validate();
    SgdConfig{eta2, mu}.validate();
    SchedulerConfig{gamma, step1}.validate();
    SchedulerConfig{gamma, step2}.validate();
    if (batch_size < 1) throw ContractError("batch size must be >= 1");
  }
};

template <typename T>
struct TrainResult {
  Checkpoint<T> best;
  std::vector<TrainLogRow> log;
};

// Stage 1 trains the frozen-decoder configuration for n1 epochs, stage 2
// unfreezes everything with fresh optimizer state for n2 more; after every
// epoch the validation loss decides whether to capture a new best
// checkpoint. With a zero epoch budget the initialization is returned.
template <typename T>
TrainResult<T> train_two_stage(R1Translator<T>& model, const std::vector<Batch<T>>& train_batches,
                               const std::vector<Batch<T>>& val_batches,
                               const TwoStageConfig& cfg) {
  cfg.validate();
  if (train_batches.empty()) throw ContractError("training needs at least one batch");
  Rng rng(cfg.seed);

  TrainResult<T> result;
  result.best = Checkpoint<T>::capture(model, 0, 0, validation_loss(model, val_batches),
                                       rng.serialize());
  double best_val = std::numeric_limits<double>::infinity();

  for (int stage = 1; stage <= 2; ++stage) {
    const int epochs = stage == 1 ? cfg.n1 : cfg.n2;
    const double eta = stage == 1 ? cfg.eta1 : cfg.eta2;
    const SchedulerConfig sched{cfg.gamma, stage == 1 ? cfg.step1 : cfg.step2};
    model.set_stage_trainable(stage == 1 ? Stage::stage1 : Stage::stage2);
    auto state = OptimizerState<T>::for_trainable(model.params());

    for (int epoch = 0; epoch < epochs; ++epoch) {
      std::vector<size_t> order(train_batches.size());
      for (size_t i = 0; i < order.size(); ++i) order[i] = i;
      rng.shuffle(order);
      std::vector<Batch<T>> shuffled;
      shuffled.reserve(order.size());
      for (size_t i : order) shuffled.push_back(train_batches[i]);

      const SgdConfig sgd{scheduled_lr(eta, epoch, sched), cfg.mu};
      const double train_loss = epoch_train(model, shuffled, state, sgd);
      const double val_loss = validation_loss(model, val_batches);
      result.log.push_back({stage, epoch, sgd.eta, train_loss, val_loss});
      if (val_loss < best_val) {
        best_val = val_loss;
        result.best = Checkpoint<T>::capture(model, static_cast<uint32_t>(stage),
                                             static_cast<uint64_t>(epoch), val_loss,
                                             rng.serialize());
      }
    }
  }
  return result;
}

}  // namespace r1t
