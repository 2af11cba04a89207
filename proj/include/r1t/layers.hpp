#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "r1t/params.hpp"
#include "r1t/tensor.hpp"

namespace r1t {

// Additive attention bias for masked positions. Large and finite rather than
// infinite: exp(-1e30 - max) underflows to exactly zero without producing
// inf/NaN intermediates that would trip the debug numeric checks.
template <typename T>
constexpr T kMaskedBias = T(-1e30);

// ---------------------------------------------------------------------------
// Linear
// ---------------------------------------------------------------------------

template <typename T>
struct Linear {
  Tensor<T> w;  // [out, in]
  Tensor<T> b;  // [out]
  int64_t in = 0, out = 0;

  Linear() = default;
  Linear(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int64_t in_dim,
         int64_t out_dim)
      : in(in_dim), out(out_dim) {
    w = ps.create(prefix + ".w", {out_dim, in_dim},
                  init::scaled_normal<T>(rng, out_dim * in_dim, in_dim));
    b = ps.create(prefix + ".b", {out_dim}, init::constant<T>(out_dim, T(0)));
  }

  // x: [..., in] -> [..., out]
  Tensor<T> forward(const Tensor<T>& x) const {
    if (x.dim(x.rank() - 1) != in)
      throw ShapeError(msg("linear expects last dim ", in, ", got ", shape_str(x.shape())));
    Shape out_shape = x.shape();
    out_shape.back() = out;
    const int64_t rows = x.numel() / in;
    auto flat = x.rank() == 2 ? x : reshape(x, {rows, in});
    auto y = add_broadcast(matmul_t(flat, w), reshape(b, {1, out}));
    return x.rank() == 2 ? y : reshape(y, std::move(out_shape));
  }
};

// ---------------------------------------------------------------------------
// LayerNorm
// ---------------------------------------------------------------------------

template <typename T>
struct LayerNorm {
  Tensor<T> gamma, beta;
  int64_t dim = 0;

  LayerNorm() = default;
  LayerNorm(ParameterStore<T>& ps, Rng&, const std::string& prefix, int64_t d) : dim(d) {
    gamma = ps.create(prefix + ".gamma", {d}, init::constant<T>(d, T(1)));
    beta = ps.create(prefix + ".beta", {d}, init::constant<T>(d, T(0)));
  }

  Tensor<T> forward(const Tensor<T>& x) const { return layer_norm(x, gamma, beta); }
};

// ---------------------------------------------------------------------------
// LSTM (optionally bidirectional, multi-layer)
// ---------------------------------------------------------------------------

template <typename T>
struct LstmDirParams {
  Tensor<T> w_ih;  // [4h, in]
  Tensor<T> w_hh;  // [4h, h]
  Tensor<T> b_ih;  // [4h]
  Tensor<T> b_hh;  // [4h]
};

// Gate layout along the 4h axis: input, forget, cell candidate, output.
// Padding is handled by state blending: at masked steps the hidden and cell
// states carry over unchanged and the emitted output is zeroed.
template <typename T>
struct Lstm {
  int64_t input_size = 0, hidden = 0, num_layers = 0;
  bool bidirectional = true;
  std::vector<std::array<LstmDirParams<T>, 2>> layers;

  Lstm() = default;
  Lstm(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int64_t in_dim, int64_t h,
       int64_t n_layers, bool bidir = true)
      : input_size(in_dim), hidden(h), num_layers(n_layers), bidirectional(bidir) {
    const int dirs = bidir ? 2 : 1;
    layers.resize(static_cast<size_t>(n_layers));
    for (int64_t l = 0; l < n_layers; ++l) {
      const int64_t layer_in = l == 0 ? in_dim : h * dirs;
      for (int d = 0; d < dirs; ++d) {
        const std::string p =
            prefix + ".l" + std::to_string(l) + (d == 0 ? ".fwd" : ".bwd");
        auto& dp = layers[static_cast<size_t>(l)][static_cast<size_t>(d)];
        dp.w_ih = ps.create(p + ".w_ih", {4 * h, layer_in},
                            init::uniform<T>(rng, 4 * h * layer_in, -0.08, 0.08));
        dp.w_hh =
            ps.create(p + ".w_hh", {4 * h, h}, init::uniform<T>(rng, 4 * h * h, -0.08, 0.08));
        dp.b_ih = ps.create(p + ".b_ih", {4 * h}, init::constant<T>(4 * h, T(0)));
        dp.b_hh = ps.create(p + ".b_hh", {4 * h}, init::constant<T>(4 * h, T(0)));
      }
    }
  }

  int64_t output_size() const { return hidden * (bidirectional ? 2 : 1); }

  // x: [B,S,in], mask: [B,S] with 1 at real steps. Returns [B,S,output_size].
  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& mask) const {
    if (x.rank() != 3 || x.dim(2) != (layers.empty() ? input_size : layers[0][0].w_ih.dim(1)))
      throw ShapeError(msg("lstm expects [B,S,", input_size, "], got ", shape_str(x.shape())));
    if (mask.rank() != 2 || mask.dim(0) != x.dim(0) || mask.dim(1) != x.dim(1))
      throw ShapeError(msg("lstm mask must be [B,S], got ", shape_str(mask.shape())));
    const int64_t B = x.dim(0), S = x.dim(1);
    const int dirs = bidirectional ? 2 : 1;

    // per-step masks, shared across layers and directions
    std::vector<Tensor<T>> m(static_cast<size_t>(S)), m_inv(static_cast<size_t>(S));
    for (int64_t t = 0; t < S; ++t) {
      m[static_cast<size_t>(t)] = reshape(select_step(mask, t), {B});
      m_inv[static_cast<size_t>(t)] =
          add_scalar(mul_scalar(m[static_cast<size_t>(t)], T(-1)), T(1));
    }

    Tensor<T> layer_in = x;
    for (int64_t l = 0; l < num_layers; ++l) {
      std::vector<Tensor<T>> dir_out;
      for (int d = 0; d < dirs; ++d) {
        const auto& dp = layers[static_cast<size_t>(l)][static_cast<size_t>(d)];
        const int64_t in_dim = dp.w_ih.dim(1);
        // input projection for all steps at once
        auto xg = reshape(matmul_t(reshape(layer_in, {B * S, in_dim}), dp.w_ih), {B, S, 4 * hidden});
        auto bias = reshape(add(dp.b_ih, dp.b_hh), {1, 4 * hidden});

        Tensor<T> h = Tensor<T>::zeros({B, hidden});
        Tensor<T> c = Tensor<T>::zeros({B, hidden});
        std::vector<Tensor<T>> outs(static_cast<size_t>(S));
        for (int64_t step = 0; step < S; ++step) {
          const int64_t t = d == 0 ? step : S - 1 - step;
          auto gates = add_broadcast(add(select_step(xg, t), matmul_t(h, dp.w_hh)), bias);
          auto i_g = sigmoid(slice_last(gates, 0, hidden));
          auto f_g = sigmoid(slice_last(gates, hidden, hidden));
          auto g_g = tanh_op(slice_last(gates, 2 * hidden, hidden));
          auto o_g = sigmoid(slice_last(gates, 3 * hidden, hidden));
          auto c_new = add(mul(f_g, c), mul(i_g, g_g));
          auto h_new = mul(o_g, tanh_op(c_new));
          const auto& mt = m[static_cast<size_t>(t)];
          const auto& mi = m_inv[static_cast<size_t>(t)];
          c = add(mul_prefix(c_new, mt), mul_prefix(c, mi));
          h = add(mul_prefix(h_new, mt), mul_prefix(h, mi));
          outs[static_cast<size_t>(t)] = mul_prefix(h, mt);
        }
        dir_out.push_back(stack_steps(outs));  // [B,S,h]
      }
      layer_in = dirs == 2 ? concat_last(dir_out[0], dir_out[1]) : dir_out[0];
    }
    return layer_in;
  }
};

// ---------------------------------------------------------------------------
// attention bias builders
// ---------------------------------------------------------------------------

// mask: [B,Tk] with 1 at real keys -> additive bias [B,1,1,Tk].
template <typename T>
Tensor<T> key_padding_bias(const Tensor<T>& mask) {
  if (mask.rank() != 2) throw ShapeError("key_padding_bias expects [B,Tk]");
  const int64_t B = mask.dim(0), Tk = mask.dim(1);
  std::vector<T> bias(static_cast<size_t>(B * Tk));
  const T* pm = mask.data().data();
  for (int64_t b = 0; b < B; ++b) {
    bool any = false;
    for (int64_t k = 0; k < Tk; ++k) {
      const bool real = pm[b * Tk + k] != T(0);
      any = any || real;
      bias[static_cast<size_t>(b * Tk + k)] = real ? T(0) : kMaskedBias<T>;
    }
    if (!any)
      throw ContractError(msg("attention given a fully masked key sequence (batch row ", b, ")"));
  }
  return Tensor<T>::from({B, 1, 1, Tk}, std::move(bias));
}

// Causal self-attention bias combined with key padding: [B,1,Tq,Tq].
// Every query position must be able to see at least one real key.
template <typename T>
Tensor<T> causal_padding_bias(const Tensor<T>& mask) {
  if (mask.rank() != 2) throw ShapeError("causal_padding_bias expects [B,Tq]");
  const int64_t B = mask.dim(0), S = mask.dim(1);
  std::vector<T> bias(static_cast<size_t>(B * S * S));
  const T* pm = mask.data().data();
  for (int64_t b = 0; b < B; ++b) {
    for (int64_t q = 0; q < S; ++q) {
      bool any = false;
      for (int64_t k = 0; k < S; ++k) {
        const bool visible = k <= q && pm[b * S + k] != T(0);
        any = any || visible;
        bias[static_cast<size_t>((b * S + q) * S + k)] = visible ? T(0) : kMaskedBias<T>;
      }
      if (!any)
        throw ContractError(
            msg("attention row fully masked (batch ", b, ", query position ", q, ")"));
    }
  }
  return Tensor<T>::from({B, 1, S, S}, std::move(bias));
}

// ---------------------------------------------------------------------------
// multi-head attention
// ---------------------------------------------------------------------------

template <typename T>
struct MultiHeadAttention {
  Linear<T> q, k, v, o;
  int64_t d = 0, heads = 0, head_dim = 0;

  MultiHeadAttention() = default;
  MultiHeadAttention(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int64_t d_model,
                     int64_t n_heads)
      : d(d_model), heads(n_heads), head_dim(d_model / n_heads) {
    if (d_model % n_heads != 0)
      throw ContractError(msg("model dim ", d_model, " not divisible by ", n_heads, " heads"));
    q = Linear<T>(ps, rng, prefix + ".q", d_model, d_model);
    k = Linear<T>(ps, rng, prefix + ".k", d_model, d_model);
    v = Linear<T>(ps, rng, prefix + ".v", d_model, d_model);
    o = Linear<T>(ps, rng, prefix + ".o", d_model, d_model);
  }

  // query: [B,Tq,d], kv: [B,Tk,d], bias: [B,1,Tq,Tk] or [B,1,1,Tk]
  Tensor<T> forward(const Tensor<T>& query, const Tensor<T>& kv, const Tensor<T>& bias) const {
    const int64_t B = query.dim(0), Tq = query.dim(1), Tk = kv.dim(1);
    auto split = [&](const Tensor<T>& t, int64_t len) {
      // [B,len,d] -> [B*H, len, head_dim]
      auto r = reshape(t, {B, len, heads, head_dim});
      return reshape(permute(r, {0, 2, 1, 3}), {B * heads, len, head_dim});
    };
    auto Q = split(q.forward(query), Tq);
    auto K = split(k.forward(kv), Tk);
    auto V = split(v.forward(kv), Tk);

    auto scores = mul_scalar(bmm(Q, permute(K, {0, 2, 1})),
                             T(1) / static_cast<T>(std::sqrt(static_cast<double>(head_dim))));
    auto biased = add_broadcast(reshape(scores, {B, heads, Tq, Tk}), bias);
    auto attn = softmax(biased, -1);
    auto ctx = bmm(reshape(attn, {B * heads, Tq, Tk}), V);  // [B*H,Tq,head_dim]
    auto merged =
        reshape(permute(reshape(ctx, {B, heads, Tq, head_dim}), {0, 2, 1, 3}), {B, Tq, d});
    return o.forward(merged);
  }
};

// ---------------------------------------------------------------------------
// transformer blocks (pre-norm residual)
// ---------------------------------------------------------------------------

template <typename T>
struct EncoderLayer {
  LayerNorm<T> ln1, ln2;
  MultiHeadAttention<T> attn;
  Linear<T> ff1, ff2;

  EncoderLayer() = default;
  EncoderLayer(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int64_t d,
               int64_t heads, int64_t ffn) {
    ln1 = LayerNorm<T>(ps, rng, prefix + ".ln1", d);
    attn = MultiHeadAttention<T>(ps, rng, prefix + ".attn", d, heads);
    ln2 = LayerNorm<T>(ps, rng, prefix + ".ln2", d);
    ff1 = Linear<T>(ps, rng, prefix + ".ff1", d, ffn);
    ff2 = Linear<T>(ps, rng, prefix + ".ff2", ffn, d);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& bias) const {
    auto n1 = ln1.forward(x);
    auto h = add(x, attn.forward(n1, n1, bias));
    auto n2 = ln2.forward(h);
    return add(h, ff2.forward(relu(ff1.forward(n2))));
  }
};

template <typename T>
struct DecoderLayer {
  LayerNorm<T> ln1, ln2, ln3;
  MultiHeadAttention<T> self_attn, cross_attn;
  Linear<T> ff1, ff2;

  DecoderLayer() = default;
  DecoderLayer(ParameterStore<T>& ps, Rng& rng, const std::string& prefix, int64_t d,
               int64_t heads, int64_t ffn) {
    ln1 = LayerNorm<T>(ps, rng, prefix + ".ln1", d);
    self_attn = MultiHeadAttention<T>(ps, rng, prefix + ".self_attn", d, heads);
    ln2 = LayerNorm<T>(ps, rng, prefix + ".ln2", d);
    cross_attn = MultiHeadAttention<T>(ps, rng, prefix + ".cross_attn", d, heads);
    ln3 = LayerNorm<T>(ps, rng, prefix + ".ln3", d);
    ff1 = Linear<T>(ps, rng, prefix + ".ff1", d, ffn);
    ff2 = Linear<T>(ps, rng, prefix + ".ff2", ffn, d);
  }

  Tensor<T> forward(const Tensor<T>& x, const Tensor<T>& enc_out, const Tensor<T>& self_bias,
                    const Tensor<T>& cross_bias) const {
    auto n1 = ln1.forward(x);
    auto h = add(x, self_attn.forward(n1, n1, self_bias));
    auto h2 = add(h, cross_attn.forward(ln2.forward(h), enc_out, cross_bias));
    auto n3 = ln3.forward(h2);
    return add(h2, ff2.forward(relu(ff1.forward(n3))));
  }
};

}  // namespace r1t
