#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "op_scenarios.hpp"
#include "r1t/layers.hpp"

using r1t::ParameterStore;
using r1t::Rng;
using r1t::Tensor;
using r1t::TensorD;
using r1t_tests::random_tensor;
using r1t_tests::weighted_sum;

namespace {

// Straight-line scalar reference for one LSTM direction, written without the
// tensor engine. Gate layout i,f,g,o; masked steps carry state and emit zero.
std::vector<double> ref_lstm(const std::vector<double>& w_ih, const std::vector<double>& w_hh,
                             const std::vector<double>& b_ih, const std::vector<double>& b_hh,
                             const std::vector<double>& x, const std::vector<double>& mask,
                             int64_t B, int64_t S, int64_t in, int64_t h, bool reverse) {
  std::vector<double> out(static_cast<size_t>(B * S * h), 0.0);
  auto sig = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
  for (int64_t b = 0; b < B; ++b) {
    std::vector<double> hs(static_cast<size_t>(h), 0.0), cs(static_cast<size_t>(h), 0.0);
    for (int64_t step = 0; step < S; ++step) {
      const int64_t t = reverse ? S - 1 - step : step;
      std::vector<double> gates(static_cast<size_t>(4 * h));
      for (int64_t g = 0; g < 4 * h; ++g) {
        double acc = b_ih[static_cast<size_t>(g)] + b_hh[static_cast<size_t>(g)];
        for (int64_t j = 0; j < in; ++j)
          acc += w_ih[static_cast<size_t>(g * in + j)] * x[static_cast<size_t>((b * S + t) * in + j)];
        for (int64_t j = 0; j < h; ++j)
          acc += w_hh[static_cast<size_t>(g * h + j)] * hs[static_cast<size_t>(j)];
        gates[static_cast<size_t>(g)] = acc;
      }
      const double m = mask[static_cast<size_t>(b * S + t)];
      for (int64_t j = 0; j < h; ++j) {
        const double ig = sig(gates[static_cast<size_t>(j)]);
        const double fg = sig(gates[static_cast<size_t>(h + j)]);
        const double gg = std::tanh(gates[static_cast<size_t>(2 * h + j)]);
        const double og = sig(gates[static_cast<size_t>(3 * h + j)]);
        const double c_new = fg * cs[static_cast<size_t>(j)] + ig * gg;
        const double h_new = og * std::tanh(c_new);
        cs[static_cast<size_t>(j)] = m * c_new + (1.0 - m) * cs[static_cast<size_t>(j)];
        hs[static_cast<size_t>(j)] = m * h_new + (1.0 - m) * hs[static_cast<size_t>(j)];
        out[static_cast<size_t>((b * S + t) * h + j)] = m * hs[static_cast<size_t>(j)];
      }
    }
  }
  return out;
}

TensorD ragged_mask(int64_t B, int64_t S, const std::vector<int64_t>& lens) {
  std::vector<double> m(static_cast<size_t>(B * S), 0.0);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < lens[static_cast<size_t>(b)]; ++t)
      m[static_cast<size_t>(b * S + t)] = 1.0;
  return TensorD::from({B, S}, std::move(m));
}

}  // namespace

TEST_CASE("bidirectional lstm matches the scalar reference in both directions") {
  const int64_t B = 2, S = 5, in = 3, h = 4;
  ParameterStore<double> ps;
  Rng rng(101);
  r1t::Lstm<double> lstm(ps, rng, "lstm", in, h, 1, true);

  auto x = random_tensor<double>({B, S, in}, 7);
  auto mask = ragged_mask(B, S, {5, 3});
  auto out = lstm.forward(x, mask);
  REQUIRE(out.shape() == r1t::Shape{B, S, 2 * h});

  const auto& fwd = lstm.layers[0][0];
  const auto& bwd = lstm.layers[0][1];
  auto want_f = ref_lstm(fwd.w_ih.data(), fwd.w_hh.data(), fwd.b_ih.data(), fwd.b_hh.data(),
                         x.data(), mask.data(), B, S, in, h, false);
  auto want_b = ref_lstm(bwd.w_ih.data(), bwd.w_hh.data(), bwd.b_ih.data(), bwd.b_hh.data(),
                         x.data(), mask.data(), B, S, in, h, true);
  for (int64_t b = 0; b < B; ++b)
    for (int64_t t = 0; t < S; ++t)
      for (int64_t j = 0; j < h; ++j) {
        const double got_f = out.data()[static_cast<size_t>((b * S + t) * 2 * h + j)];
        const double got_b = out.data()[static_cast<size_t>((b * S + t) * 2 * h + h + j)];
        CHECK(got_f == doctest::Approx(want_f[static_cast<size_t>((b * S + t) * h + j)]).epsilon(1e-12));
        CHECK(got_b == doctest::Approx(want_b[static_cast<size_t>((b * S + t) * h + j)]).epsilon(1e-12));
      }
}

TEST_CASE("lstm output is zero at padded steps and independent of pad content") {
  const int64_t B = 2, S = 4, in = 2, h = 3;
  ParameterStore<double> ps;
  Rng rng(55);
  r1t::Lstm<double> lstm(ps, rng, "lstm", in, h, 2, true);
  auto mask = ragged_mask(B, S, {4, 2});

  auto x1 = random_tensor<double>({B, S, in}, 8);
  auto out1 = lstm.forward(x1, mask);

  // scribble over the padded tail of row 1; nothing may change
  auto x2 = TensorD::from(x1.shape(), x1.data());
  for (int64_t t = 2; t < S; ++t)
    for (int64_t j = 0; j < in; ++j)
      x2.raw_data()[static_cast<size_t>((1 * S + t) * in + j)] = 99.0;
  auto out2 = lstm.forward(x2, mask);
  CHECK(out1.data() == out2.data());

  for (int64_t t = 2; t < S; ++t)
    for (int64_t j = 0; j < 2 * h; ++j)
      CHECK(out1.data()[static_cast<size_t>((1 * S + t) * 2 * h + j)] == 0.0);
}

TEST_CASE("a padded batch row reproduces its unpadded run exactly") {
  const int64_t S = 4, in = 2, h = 3;
  ParameterStore<double> ps;
  Rng rng(56);
  r1t::Lstm<double> lstm(ps, rng, "lstm", in, h, 2, true);

  auto xb = random_tensor<double>({2, S, in}, 9);
  auto padded = lstm.forward(xb, ragged_mask(2, S, {4, 2}));

  // row 1 alone, trimmed to its true length
  std::vector<double> row(xb.data().begin() + S * in, xb.data().begin() + S * in + 2 * in);
  auto solo = lstm.forward(TensorD::from({1, 2, in}, std::move(row)), ragged_mask(1, 2, {2}));
  for (int64_t t = 0; t < 2; ++t)
    for (int64_t j = 0; j < 2 * h; ++j)
      CHECK(padded.data()[static_cast<size_t>((S + t) * 2 * h + j)] ==
            doctest::Approx(solo.data()[static_cast<size_t>((t * 2 + 0) * h * 2 / 2 + j)]).epsilon(1e-12));
}

TEST_CASE("hidden size 256 bidirectional gives 512 output features") {
  ParameterStore<double> ps;
  Rng rng(57);
  r1t::Lstm<double> lstm(ps, rng, "lstm", 8, 256, 2, true);
  CHECK(lstm.output_size() == 512);
  auto x = random_tensor<double>({1, 3, 8}, 10);
  auto out = lstm.forward(x, ragged_mask(1, 3, {3}));
  CHECK(out.shape() == r1t::Shape{1, 3, 512});
}

TEST_CASE("lstm gradients pass finite-difference checks") {
  const int64_t B = 2, S = 4, in = 3, h = 2;
  ParameterStore<double> ps;
  Rng rng(58);
  r1t::Lstm<double> lstm(ps, rng, "lstm", in, h, 2, true);
  auto x = random_tensor<double>({B, S, in}, 11);
  x.set_requires_grad(true);
  auto mask = ragged_mask(B, S, {4, 3});

  auto params = ps.items();
  params.emplace_back("x", x);
  auto res = r1t::grad_check<double>(params, [&] { return weighted_sum(lstm.forward(x, mask), 200); },
                                     1e-5);
  INFO("worst ", res.worst, " rel err ", res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("masked attention keys get exactly zero weight") {
  const int64_t B = 2, Tq = 3, Tk = 4, d = 8;
  ParameterStore<double> ps;
  Rng rng(59);
  r1t::MultiHeadAttention<double> mha(ps, rng, "attn", d, 2);

  auto mask = ragged_mask(B, Tk, {4, 2});
  auto bias = r1t::key_padding_bias(mask);
  auto query = random_tensor<double>({B, Tq, d}, 12);
  auto kv1 = random_tensor<double>({B, Tk, d}, 13);
  auto out1 = mha.forward(query, kv1, bias);

  // rewrite the masked kv rows of batch 1; output must be bit-identical
  auto kv2 = TensorD::from(kv1.shape(), kv1.data());
  for (int64_t t = 2; t < Tk; ++t)
    for (int64_t j = 0; j < d; ++j)
      kv2.raw_data()[static_cast<size_t>((Tk + t) * d + j)] = -42.0;
  auto out2 = mha.forward(query, kv2, bias);
  CHECK(out1.data() == out2.data());
}

TEST_CASE("fully masked attention rows are rejected") {
  auto empty_row = TensorD::from({2, 3}, {1, 1, 0, 0, 0, 0});
  CHECK_THROWS_AS((void)r1t::key_padding_bias(empty_row), r1t::ContractError);
  // causal: row 0 of a sequence whose first token is padding sees nothing
  auto bad_causal = TensorD::from({1, 3}, {0, 1, 1});
  CHECK_THROWS_AS((void)r1t::causal_padding_bias(bad_causal), r1t::ContractError);
  auto good = TensorD::from({1, 3}, {1, 1, 0});
  CHECK_NOTHROW((void)r1t::causal_padding_bias(good));
}

TEST_CASE("causal self-attention ignores future positions") {
  const int64_t B = 1, S = 4, d = 8;
  ParameterStore<double> ps;
  Rng rng(60);
  r1t::MultiHeadAttention<double> mha(ps, rng, "attn", d, 2);
  auto bias = r1t::causal_padding_bias(ragged_mask(B, S, {4}));

  auto x1 = random_tensor<double>({B, S, d}, 14);
  auto out1 = mha.forward(x1, x1, bias);
  auto x2 = TensorD::from(x1.shape(), x1.data());
  for (int64_t j = 0; j < d; ++j) x2.raw_data()[static_cast<size_t>(3 * d + j)] = 7.5;
  auto out2 = mha.forward(x2, x2, bias);
  // positions 0..2 see only past/current input, so they cannot move
  for (int64_t t = 0; t < 3; ++t)
    for (int64_t j = 0; j < d; ++j)
      CHECK(out1.data()[static_cast<size_t>(t * d + j)] ==
            out2.data()[static_cast<size_t>(t * d + j)]);
  // position 3 attends to the perturbed token and must move
  double delta = 0;
  for (int64_t j = 0; j < d; ++j)
    delta += std::abs(out1.data()[static_cast<size_t>(3 * d + j)] -
                      out2.data()[static_cast<size_t>(3 * d + j)]);
  CHECK(delta > 1e-6);
}

TEST_CASE("attention gradients pass finite-difference checks") {
  const int64_t B = 1, Tq = 2, Tk = 3, d = 4;
  ParameterStore<double> ps;
  Rng rng(61);
  r1t::MultiHeadAttention<double> mha(ps, rng, "attn", d, 2);
  auto bias = r1t::key_padding_bias(ragged_mask(B, Tk, {2}));
  auto query = random_tensor<double>({B, Tq, d}, 15);
  auto kv = random_tensor<double>({B, Tk, d}, 16);
  query.set_requires_grad(true);
  kv.set_requires_grad(true);

  auto params = ps.items();
  params.emplace_back("query", query);
  params.emplace_back("kv", kv);
  auto res = r1t::grad_check<double>(
      params, [&] { return weighted_sum(mha.forward(query, kv, bias), 201); }, 1e-5);
  INFO("worst ", res.worst, " rel err ", res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("encoder and decoder blocks pass finite-difference checks") {
  const int64_t B = 1, S = 3, d = 4;
  ParameterStore<double> ps;
  Rng rng(62);
  r1t::EncoderLayer<double> enc(ps, rng, "enc", d, 2, 8);
  r1t::DecoderLayer<double> dec(ps, rng, "dec", d, 2, 8);

  auto mask = ragged_mask(B, S, {2});
  auto enc_bias = r1t::key_padding_bias(mask);
  auto self_bias = r1t::causal_padding_bias(ragged_mask(B, S, {3}));
  auto x = random_tensor<double>({B, S, d}, 17);
  auto y = random_tensor<double>({B, S, d}, 18);
  x.set_requires_grad(true);
  y.set_requires_grad(true);

  auto params = ps.items();
  params.emplace_back("x", x);
  params.emplace_back("y", y);
  auto res = r1t::grad_check<double>(
      params,
      [&] {
        auto e = enc.forward(x, enc_bias);
        auto o = dec.forward(y, e, self_bias, enc_bias);
        return weighted_sum(o, 202);
      },
      1e-5);
  INFO("worst ", res.worst, " rel err ", res.max_rel_err);
  CHECK(res.max_rel_err < 1e-4);
}

TEST_CASE("parameter store rejects duplicates and preserves order") {
  ParameterStore<double> ps;
  Rng rng(63);
  (void)ps.create("a.w", {2, 2}, {1, 2, 3, 4});
  (void)ps.create("b.w", {2}, {5, 6});
  CHECK_THROWS_AS((void)ps.create("a.w", {1}, {0.0}), r1t::ContractError);
  CHECK(ps.names() == std::vector<std::string>{"a.w", "b.w"});
  CHECK(ps.total_elements() == 6);
}
