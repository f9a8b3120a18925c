#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "tpc/backbone.hpp"
#include "tpc/errors.hpp"
#include "tpc/prompts.hpp"

using namespace tpc;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.rows(), std::vector<double>(t.cols()));
  for (std::size_t i = 0; i < t.rows(); ++i)
    for (std::size_t j = 0; j < t.cols(); ++j) m[i][j] = t(i, j);
  return m;
}

Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t k = 0; k < b.size(); ++k)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][k] * b[k][j];
  return c;
}

Mat plus_row(Mat a, const Mat& row) {
  for (auto& r : a)
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += row[0][j];
  return a;
}

Mat norm_rows(Mat a, const Mat& gain, const Mat& bias) {
  for (auto& r : a) {
    double m = 0.0, v = 0.0;
    for (double x : r) m += x;
    m /= static_cast<double>(r.size());
    for (double x : r) v += (x - m) * (x - m);
    v /= static_cast<double>(r.size());
    for (std::size_t j = 0; j < r.size(); ++j) {
      r[j] = (r[j] - m) / std::sqrt(v + 1e-5) * gain[0][j] + bias[0][j];
    }
  }
  return a;
}

/// Pre-LN single-head block written out with plain loops.
Mat reference_block(const Mat& h, const ParamRegistry& reg, const std::string& p) {
  auto w = [&](const std::string& n) { return to_mat(reg.get(p + n)); };
  const std::size_t n = h.size();
  const std::size_t d = h[0].size();
  const Mat x = norm_rows(h, w("ln1.gain"), w("ln1.bias"));
  const Mat q = plus_row(mul(x, w("attn.wq")), w("attn.bq"));
  const Mat k = plus_row(mul(x, w("attn.wk")), w("attn.bk"));
  const Mat v = plus_row(mul(x, w("attn.wv")), w("attn.bv"));
  Mat att(n, std::vector<double>(d, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> s(i + 1);
    double mx = -1e300;
    for (std::size_t j = 0; j <= i; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < d; ++c) dot += q[i][c] * k[j][c];
      s[j] = dot / std::sqrt(static_cast<double>(d));
      mx = std::max(mx, s[j]);
    }
    double z = 0.0;
    for (double& e : s) z += (e = std::exp(e - mx));
    for (std::size_t j = 0; j <= i; ++j)
      for (std::size_t c = 0; c < d; ++c) att[i][c] += s[j] / z * v[j][c];
  }
  Mat h1 = plus_row(mul(att, w("attn.wo")), w("attn.bo"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) h1[i][c] += h[i][c];
  Mat f = plus_row(mul(norm_rows(h1, w("ln2.gain"), w("ln2.bias")), w("mlp.w1")), w("mlp.b1"));
  for (auto& r : f)
    for (double& x2 : r) {
      const double u = std::sqrt(2.0 / std::numbers::pi) * (x2 + 0.044715 * x2 * x2 * x2);
      x2 = 0.5 * x2 * (1.0 + std::tanh(u));
    }
  Mat out = plus_row(mul(f, w("mlp.w2")), w("mlp.b2"));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) out[i][c] += h1[i][c];
  return out;
}

DecoderConfig tiny(std::size_t heads = 2) {
  DecoderConfig c;
  c.depth = 2;
  c.width = 8;
  c.heads = heads;
  c.max_seq = 64;
  c.init_std = 0.3;
  return c;
}

}  // namespace

TEST_CASE("byte tokenizer") {
  CHECK(tokenize("") == std::vector<std::size_t>{kBosToken, kEosToken});
  CHECK(tokenize("ab") == std::vector<std::size_t>{kBosToken, 97, 98, kEosToken});
  const std::string s = render_prompt({Timestamp::from_civil(2017, 1, 1),
                                       Timestamp::from_civil(2017, 1, 2, 23), Granularity::hourly()});
  CHECK(detokenize(tokenize(s)) == s);
  CHECK_THROWS_AS(tokenize("caf\xc3\xa9"), DataError);
}

TEST_CASE("mask layouts") {
  const double ninf = -std::numeric_limits<double>::infinity();
  const Tensor c = causal_mask(3);
  CHECK(c(0, 0) == 0.0);
  CHECK(c(0, 1) == ninf);
  CHECK(c(2, 1) == 0.0);

  // Two patches, two TS-tokens.
  const Tensor s = sequence_mask(2, 2, Visibility::suffix_global);
  CHECK(s(0, 1) == ninf);  // patch 0 cannot see patch 1
  CHECK(s(0, 2) == 0.0);   // patches see every TS-token
  CHECK(s(0, 3) == 0.0);
  CHECK(s(2, 0) == ninf);  // TS-tokens see no patch
  CHECK(s(3, 2) == 0.0);
  CHECK(s(2, 3) == 0.0);
  CHECK(testing::bit_identical(sequence_mask(2, 2, Visibility::prefix), causal_mask(4)));
}

TEST_CASE("single-token attention is the value projection of itself") {
  ParamRegistry reg;
  Backbone bb(tiny(1), reg, 3);
  const Tensor h = testing::random_tensor(1, 8, 4);
  auto w = [&](const std::string& n) { return reg.get("backbone.layer0." + n); };
  const Tensor x = layer_norm(h, w("ln1.gain"), w("ln1.bias"));
  const Tensor v = add_row(matmul(x, w("attn.wv")), w("attn.bv"));
  const Tensor h1 = add(h, add_row(matmul(v, w("attn.wo")), w("attn.bo")));
  const Tensor y = layer_norm(h1, w("ln2.gain"), w("ln2.bias"));
  const Tensor want =
      add(h1, add_row(matmul(gelu(add_row(matmul(y, w("mlp.w1")), w("mlp.b1"))), w("mlp.w2")),
                      w("mlp.b2")));
  const Tensor got = bb.self_attention_layer(h, 0, causal_mask(1));
  CHECK(testing::max_abs_diff(got.values(), want.values()) < 1e-14);
}

TEST_CASE("causal mask hides later tokens") {
  ParamRegistry reg;
  Backbone bb(tiny(), reg, 3);
  Tensor h = testing::random_tensor(2, 8, 4);
  const Tensor a = bb.self_attention_layer(h, 0, causal_mask(2));
  h.mutable_values()[8 + 3] += 5.0;
  const Tensor b = bb.self_attention_layer(h, 0, causal_mask(2));
  for (std::size_t c = 0; c < 8; ++c) CHECK(a(0, c) == b(0, c));
  CHECK(a(1, 3) != b(1, 3));
}

TEST_CASE("single-head block matches a loop reference") {
  ParamRegistry reg;
  Backbone bb(tiny(1), reg, 11);
  const Tensor h = testing::random_tensor(5, 8, 12);
  const Mat want = reference_block(to_mat(h), reg, "backbone.layer1.");
  const Mat got = to_mat(bb.self_attention_layer(h, 1, causal_mask(5)));
  double err = 0.0;
  for (std::size_t i = 0; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) err = std::max(err, std::abs(got[i][c] - want[i][c]));
  CHECK(err < 1e-10);
}

TEST_CASE("decoder hooks run after the listed layers") {
  ParamRegistry reg;
  Backbone bb(tiny(), reg, 3);
  const Tensor h = testing::random_tensor(3, 8, 1);
  std::vector<std::size_t> seen;
  const std::vector<std::size_t> layers{1};
  bb.decoder_forward(h, causal_mask(3), layers, [&](std::size_t l, const Tensor& x) {
    seen.push_back(l);
    return x;
  });
  CHECK(seen == std::vector<std::size_t>{1});
  const std::vector<std::size_t> bad{2};
  CHECK_THROWS_AS(bb.decoder_forward(h, causal_mask(3), bad, [](std::size_t, const Tensor& x) {
    return x;
  }), ConfigError);
}

TEST_CASE("backbone is frozen and seeded") {
  ParamRegistry a, b;
  Backbone x(tiny(), a, 7);
  Backbone y(tiny(), b, 7);
  CHECK(x.fingerprint() == y.fingerprint());
  CHECK(a.trainable_count() == 0);
  ParamRegistry c;
  Backbone z(tiny(), c, 8);
  CHECK(z.fingerprint() != x.fingerprint());
}

TEST_CASE("text encoding") {
  ParamRegistry reg;
  Backbone bb(DecoderConfig{}, reg, 1);
  const auto p1 = tokenize("This series spans 2017-01-01 00:00:00 to 2017-01-02 23:00:00.");
  const auto p2 = tokenize("This series spans 2017-01-01 00:00:00 to 2017-01-02 22:00:00.");
  const auto e1 = bb.encode_text(p1);
  CHECK(e1 == bb.encode_text(p1));
  CHECK(e1.size() == 64);
  const auto e2 = bb.encode_text(p2);
  double n1 = 0.0, n2 = 0.0;
  for (double v : e1) n1 += v * v;
  for (double v : e2) n2 += v * v;
  CHECK(std::abs(std::sqrt(n1) - std::sqrt(n2)) > 0.0);

  const auto ids = tokenize("a");
  REQUIRE(ids.size() == 3);
  const Tensor out = bb.decoder_forward(add(bb.embed_tokens(ids), bb.positions(0, 3)),
                                        causal_mask(3));
  const Tensor last = slice_rows(out, 2, 1);
  CHECK(bb.encode_text(ids) == std::vector<double>(last.values().begin(), last.values().end()));

  const std::vector<std::size_t> too_long(300, 97);
  CHECK_THROWS_AS(bb.encode_text(too_long), ConfigError);
}
