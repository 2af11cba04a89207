#pragma once

#include <cmath>
#include <sstream>
#include <string>
#include <vector>

#include "r1t/data.hpp"
#include "r1t/layers.hpp"
#include "r1t/params.hpp"

namespace r1t {

struct ModelConfig {
  int64_t f = 840;   // input feature dim
  int64_t h = 256;   // lstm hidden size per direction
  int64_t b = 1;     // bidirectional flag
  int64_t L = 2;     // lstm layers
  int64_t d = 1024;  // transformer model dim
  int64_t V = 4;     // vocabulary size including reserved ids
  int64_t enc_layers = 2;
  int64_t dec_layers = 2;
  int64_t heads = 8;
  int64_t maxlen = 64;

  bool operator==(const ModelConfig&) const = default;

  void validate() const {
    if (f < 1 || h < 1 || d < 1 || V < 4 || L < 1 || enc_layers < 1 || dec_layers < 1 ||
        heads < 1 || maxlen < 2)
      throw ContractError("model config out of range");
    if (b != 0 && b != 1) throw ContractError("bidirectional flag must be 0 or 1");
    if (d % heads != 0)
      throw ContractError(msg("model dim ", d, " not divisible by ", heads, " heads"));
  }

  int64_t ffn_dim() const { return 4 * d; }
  int64_t lstm_out_dim() const { return h * (b ? 2 : 1); }

  // Fixed key order; the exact bytes stored in checkpoints.
  std::string canonical_text() const {
    std::ostringstream os;
    os << "f=" << f << "\nh=" << h << "\nb=" << b << "\nL=" << L << "\nd=" << d << "\nV=" << V
       << "\nenc_layers=" << enc_layers << "\ndec_layers=" << dec_layers << "\nheads=" << heads
       << "\nmaxlen=" << maxlen << "\n";
    return os.str();
  }

  static ModelConfig from_text(const std::string& text) {
    ModelConfig cfg;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) throw FormatError(msg("bad config line '", line, "'"));
      const std::string key = line.substr(0, eq);
      int64_t value = 0;
      try {
        value = std::stoll(line.substr(eq + 1));
      } catch (const std::exception&) {
        throw FormatError(msg("bad config value in '", line, "'"));
      }
      if (key == "f") cfg.f = value;
      else if (key == "h") cfg.h = value;
      else if (key == "b") cfg.b = value;
      else if (key == "L") cfg.L = value;
      else if (key == "d") cfg.d = value;
      else if (key == "V") cfg.V = value;
      else if (key == "enc_layers") cfg.enc_layers = value;
      else if (key == "dec_layers") cfg.dec_layers = value;
      else if (key == "heads") cfg.heads = value;
      else if (key == "maxlen") cfg.maxlen = value;
      else throw FormatError(msg("unknown config key '", key, "'"));
    }
    cfg.validate();
    return cfg;
  }

  // Desk-scale configuration used by the synthetic experiments.
  static ModelConfig toy(int64_t vocab_with_reserved) {
    ModelConfig cfg;
    cfg.f = kFeatureDim;
    cfg.h = 64;
    cfg.b = 1;
    cfg.L = 2;
    cfg.d = 64;
    cfg.V = vocab_with_reserved;
    cfg.enc_layers = 2;
    cfg.dec_layers = 2;
    cfg.heads = 4;
    cfg.maxlen = 64;
    return cfg;
  }
};

enum class Stage { stage1, stage2 };

inline const char* stage_name(Stage s) { return s == Stage::stage1 ? "stage1" : "stage2"; }

// BiLSTM over per-word EEG features, ReLU projection into the transformer
// width, then an encoder-decoder with learned positional embeddings, a
// shared input/output word embedding, and pre-norm residual blocks.
template <typename T>
class R1Translator {
 public:
  struct Encoded {
    Tensor<T> memory;      // [B,S,d]
    Tensor<T> cross_bias;  // [B,1,1,S]
    int64_t batch = 0, steps = 0;
  };

  struct LossResult {
    Tensor<T> loss;    // scalar
    Tensor<T> logits;  // [B,Td,V]
  };

  R1Translator(ModelConfig cfg, uint64_t seed) : cfg_(cfg) {
    cfg_.validate();
    Rng rng(seed);
    lstm_ = Lstm<T>(params_, rng, "lstm", cfg_.f, cfg_.h, cfg_.L, cfg_.b != 0);
    proj_ = Linear<T>(params_, rng, "proj", cfg_.lstm_out_dim(), cfg_.d);
    word_emb_ = params_.create("bart.embed.word", {cfg_.V, cfg_.d},
                               init::scaled_normal<T>(rng, cfg_.V * cfg_.d, cfg_.d));
    pos_emb_ = params_.create("bart.embed.pos", {cfg_.maxlen, cfg_.d},
                              init::scaled_normal<T>(rng, cfg_.maxlen * cfg_.d, cfg_.d));
    for (int64_t i = 0; i < cfg_.enc_layers; ++i)
      enc_layers_.emplace_back(params_, rng, "bart.encoder." + std::to_string(i), cfg_.d,
                               cfg_.heads, cfg_.ffn_dim());
    enc_final_ln_ = LayerNorm<T>(params_, rng, "bart.encoder.final_ln", cfg_.d);
    for (int64_t i = 0; i < cfg_.dec_layers; ++i)
      dec_layers_.emplace_back(params_, rng, "bart.decoder." + std::to_string(i), cfg_.d,
                               cfg_.heads, cfg_.ffn_dim());
    dec_final_ln_ = LayerNorm<T>(params_, rng, "bart.decoder.final_ln", cfg_.d);
  }

  const ModelConfig& config() const { return cfg_; }
  ParameterStore<T>& params() { return params_; }
  const ParameterStore<T>& params() const { return params_; }

  // Stage 1 trains the new encoder path plus the embedding tables and the
  // first transformer encoder layer; stage 2 unfreezes everything.
  void set_stage_trainable(Stage stage) {
    static const std::vector<std::string> stage1_prefixes{
        "lstm.", "proj.", "bart.embed.word", "bart.embed.pos", "bart.encoder.0."};
    for (const auto& name : params_.names()) {
      bool trainable = true;
      if (stage == Stage::stage1) {
        trainable = false;
        for (const auto& p : stage1_prefixes) {
          if (name.rfind(p, 0) == 0) {
            trainable = true;
            break;
          }
        }
      }
      params_.at(name).set_requires_grad(trainable);
    }
  }

  std::vector<std::string> trainable_names() const {
    std::vector<std::string> out;
    for (const auto& name : params_.names())
      if (params_.at(name).requires_grad()) out.push_back(name);
    return out;
  }

  Encoded encode(const Batch<T>& batch) const {
    check_masks(batch);
    const int64_t B = batch.batch, S = batch.steps;
    if (S > cfg_.maxlen)
      throw ContractError(msg("source length ", S, " exceeds maxlen ", cfg_.maxlen));
    auto z = relu(proj_.forward(lstm_.forward(batch.eeg, batch.mask)));
    auto x = add_broadcast(z, position_rows(S));
    auto bias = key_padding_bias(batch.mask);
    for (const auto& layer : enc_layers_) x = layer.forward(x, bias);
    Encoded enc;
    enc.memory = enc_final_ln_.forward(x);
    enc.cross_bias = bias;
    enc.batch = B;
    enc.steps = S;
    return enc;
  }

  // dec_ids: row-major [B,Td] decoder input token ids.
  Tensor<T> decoder_logits(const Encoded& enc, const std::vector<int32_t>& dec_ids,
                           int64_t dec_len) const {
    const int64_t B = enc.batch;
    if (dec_len < 1 || static_cast<int64_t>(dec_ids.size()) != B * dec_len)
      throw ShapeError(msg("decoder ids size ", dec_ids.size(), " does not match [", B, "x",
                           dec_len, "]"));
    if (dec_len > cfg_.maxlen)
      throw ContractError(msg("target length ", dec_len, " exceeds maxlen ", cfg_.maxlen));

    std::vector<T> mask_values(dec_ids.size());
    for (size_t i = 0; i < dec_ids.size(); ++i)
      mask_values[i] = dec_ids[i] == Vocabulary::kPad ? T(0) : T(1);
    auto dec_mask = Tensor<T>::from({B, dec_len}, std::move(mask_values));

    auto x = add_broadcast(embedding(word_emb_, dec_ids, {B, dec_len}), position_rows(dec_len));
    auto self_bias = causal_padding_bias(dec_mask);
    for (const auto& layer : dec_layers_)
      x = layer.forward(x, enc.memory, self_bias, enc.cross_bias);
    x = dec_final_ln_.forward(x);
    // Output projection tied to the word embedding table. The 1/sqrt(d)
    // scale keeps fresh-init logits near zero (T5-style tying), so the
    // initial loss sits at ln V instead of ln V plus an O(1) offset.
    auto logits = matmul_t(reshape(x, {B * dec_len, cfg_.d}), word_emb_);
    logits = mul_scalar(logits, T(1) / std::sqrt(static_cast<T>(cfg_.d)));
    return reshape(logits, {B, dec_len, cfg_.V});
  }

  // Teacher-forced pass: decoder input is the right-shifted target row,
  // labels are the left-shifted row, pad positions excluded from the mean.
  LossResult forward_loss(const Batch<T>& batch) const {
    if (batch.target_len < 2)
      throw ContractError("forward_loss needs targets of at least [BOS, EOS]");
    const int64_t B = batch.batch, Ty = batch.target_len, Td = Ty - 1;
    if (Td > cfg_.maxlen)
      throw ContractError(msg("target length ", Td, " exceeds maxlen ", cfg_.maxlen));

    std::vector<int32_t> dec_input(static_cast<size_t>(B * Td));
    std::vector<int32_t> labels(static_cast<size_t>(B * Td));
    std::vector<uint8_t> label_mask(static_cast<size_t>(B * Td));
    for (int64_t i = 0; i < B; ++i) {
      for (int64_t t = 0; t < Td; ++t) {
        dec_input[static_cast<size_t>(i * Td + t)] = batch.targets[static_cast<size_t>(i * Ty + t)];
        const int32_t label = batch.targets[static_cast<size_t>(i * Ty + t + 1)];
        labels[static_cast<size_t>(i * Td + t)] = label;
        label_mask[static_cast<size_t>(i * Td + t)] = label == Vocabulary::kPad ? 0 : 1;
      }
    }

    auto enc = encode(batch);
    auto logits = decoder_logits(enc, dec_input, Td);
    auto logp = log_softmax(reshape(logits, {B * Td, cfg_.V}), -1);
    auto loss = mul_scalar(pick_mean(logp, labels, label_mask), T(-1));
    return {loss, logits};
  }

 private:
  void check_masks(const Batch<T>& batch) const {
    if (batch.mask.shape() != batch.inv_mask.shape())
      throw ContractError("batch masks have mismatched shapes");
    const auto& m = batch.mask.data();
    const auto& inv = batch.inv_mask.data();
    for (size_t i = 0; i < m.size(); ++i) {
      if (m[i] + inv[i] != T(1))
        throw ContractError("batch inverted mask is not 1 - mask");
    }
    if (batch.eeg.dim(2) != cfg_.f)
      throw ShapeError(msg("batch feature dim ", batch.eeg.dim(2), " != model f ", cfg_.f));
  }

  // Rows 0..len-1 of the positional table as [1,len,d] for broadcasting.
  Tensor<T> position_rows(int64_t len) const {
    std::vector<int32_t> ids(static_cast<size_t>(len));
    for (int64_t i = 0; i < len; ++i) ids[static_cast<size_t>(i)] = static_cast<int32_t>(i);
    return embedding(pos_emb_, ids, {1, len});
  }

  ModelConfig cfg_;
  ParameterStore<T> params_;
  Lstm<T> lstm_;
  Linear<T> proj_;
  Tensor<T> word_emb_;
  Tensor<T> pos_emb_;
  std::vector<EncoderLayer<T>> enc_layers_;
  LayerNorm<T> enc_final_ln_;
  std::vector<DecoderLayer<T>> dec_layers_;
  LayerNorm<T> dec_final_ln_;
};

}  // namespace r1t
