#include <doctest.h>

#include <cmath>
#include <limits>
#include <numbers>

#include "helpers.hpp"
#include "tpc/errors.hpp"
#include "tpc/tpc.hpp"

using namespace tpc;
using testing::random_tensor;

namespace {

struct Fixture {
  ParamRegistry reg;
  Rng rng{4};
  TpcLayerParams p = TpcLayerParams::create("tpc.layer0.", 8, 4, 0.3, reg, rng);
};

const double kInf = std::numeric_limits<double>::infinity();

std::vector<double> row_norm(std::span<const double> r) {
  double m = 0.0, v = 0.0;
  for (double x : r) m += x;
  m /= static_cast<double>(r.size());
  for (double x : r) v += (x - m) * (x - m);
  v /= static_cast<double>(r.size());
  std::vector<double> out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = (r[i] - m) / std::sqrt(v + 1e-5);
  return out;
}

std::vector<double> vec_mat(const std::vector<double>& x, const Tensor& w) {
  std::vector<double> out(w.cols(), 0.0);
  for (std::size_t k = 0; k < w.rows(); ++k)
    for (std::size_t j = 0; j < w.cols(); ++j) out[j] += x[k] * w(k, j);
  return out;
}

}  // namespace

TEST_CASE("gate values") {
  CHECK(gate_value(0.0) == 0.5);
  CHECK(gate_value(1e3) == 1.0);
  CHECK(gate_value(-kInf) == 0.0);
  CHECK(gate_value(std::log(3.0)) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("new modules start with both gates at one half") {
  Fixture f;
  CHECK(gate_value(f.p.gate_attn.item()) == 0.5);
  CHECK(gate_value(f.p.gate_ffn.item()) == 0.5);
  CHECK(f.reg.trainable("tpc.layer0.cross.wq"));
}

TEST_CASE("closed cross gate is the identity") {
  Fixture f;
  f.p.gate_attn.mutable_values()[0] = -kInf;
  const Tensor x = random_tensor(3, 8, 1);
  const Tensor out = gated_cross_attention(x, random_tensor(5, 8, 2), f.p);
  CHECK(testing::bit_identical(out, x));
}

TEST_CASE("one bank row: attention weight is 1") {
  Fixture f;
  const Tensor x = random_tensor(3, 8, 1);
  const Tensor bank = random_tensor(1, 8, 2);
  const Tensor out = gated_cross_attention(x, bank, f.p);
  const auto v = vec_mat(std::vector<double>(bank.values().begin(), bank.values().end()), f.p.wv);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out(i, c) - (x(i, c) + 0.5 * v[c])) < 1e-12);
}

TEST_CASE("open cross gate adds half of the attention read-out") {
  Fixture f;
  const Tensor x = random_tensor(2, 8, 1);
  const Tensor bank = random_tensor(4, 8, 2);
  const Tensor out = gated_cross_attention(x, bank, f.p);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto q = vec_mat(row_norm(slice_rows(x, i, 1).values()), f.p.wq);
    std::vector<double> s(4);
    std::vector<std::vector<double>> vs;
    double z = 0.0;
    for (std::size_t m = 0; m < 4; ++m) {
      const Tensor row = slice_rows(bank, m, 1);
      const std::vector<double> b(row.values().begin(), row.values().end());
      const auto k = vec_mat(b, f.p.wk);
      vs.push_back(vec_mat(b, f.p.wv));
      double dot = 0.0;
      for (std::size_t c = 0; c < 8; ++c) dot += q[c] * k[c];
      s[m] = std::exp(dot / std::sqrt(8.0));
      z += s[m];
    }
    for (std::size_t c = 0; c < 8; ++c) {
      double ca = 0.0;
      for (std::size_t m = 0; m < 4; ++m) ca += s[m] / z * vs[m][c];
      CHECK(std::abs(out(i, c) - x(i, c) - 0.5 * ca) < 1e-12);
    }
  }
}

TEST_CASE("multi-head cross attention keeps shapes") {
  Fixture f;
  const Tensor out = gated_cross_attention(random_tensor(2, 8, 1), random_tensor(3, 8, 2), f.p, 2);
  CHECK(out.rows() == 2);
  CHECK(out.cols() == 8);
  CHECK_THROWS_AS(gated_cross_attention(random_tensor(2, 8, 1), random_tensor(3, 8, 2), f.p, 3),
                  ConfigError);
  CHECK_THROWS_AS(gated_cross_attention(random_tensor(2, 8, 1), random_tensor(3, 4, 2), f.p),
                  ContractError);
}

TEST_CASE("gated feed-forward") {
  Fixture f;
  const Tensor h = random_tensor(4, 8, 3);

  f.p.gate_ffn.mutable_values()[0] = -kInf;
  CHECK(testing::bit_identical(gated_ffn(h, f.p), h));
  f.p.gate_ffn.mutable_values()[0] = 0.7;

  const Tensor out = gated_ffn(h, f.p);
  const double g = 1.0 / (1.0 + std::exp(-0.7));
  for (std::size_t i = 0; i < 4; ++i) {
    auto a = vec_mat(row_norm(slice_rows(h, i, 1).values()), f.p.w1);
    for (double& x : a) {
      x = 0.5 * x * (1.0 + std::tanh(std::sqrt(2.0 / std::numbers::pi) * (x + 0.044715 * x * x * x)));
    }
    const auto y = vec_mat(a, f.p.w2);
    for (std::size_t c = 0; c < 8; ++c) CHECK(std::abs(out(i, c) - h(i, c) - g * y[c]) < 1e-10);
  }

  for (Tensor* t : {&f.p.w1, &f.p.w2}) {
    for (double& v : t->mutable_values()) v = 0.0;
  }
  CHECK(testing::bit_identical(gated_ffn(h, f.p), h));
}

TEST_CASE("module touches TS rows through the bank only") {
  Fixture f;
  const SequenceLayout layout{3, 2, Visibility::suffix_global};
  const Tensor h = random_tensor(5, 8, 5);
  const Tensor bank = random_tensor(3, 8, 6);
  CHECK_THROWS_AS(tpc_layer(random_tensor(4, 8, 1), bank, f.p, layout), ContractError);

  // With the FFN restricted to TS-tokens, patch rows pass through unchanged.
  const Tensor ts_only = tpc_layer(h, bank, f.p, layout, 1, FfnScope::ts_tokens_only);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(ts_only(i, c) == h(i, c));

  // Prefix layout puts the TS rows first.
  const SequenceLayout prefix{3, 2, Visibility::prefix};
  const Tensor pre = tpc_layer(h, bank, f.p, prefix, 1, FfnScope::ts_tokens_only);
  for (std::size_t i = 2; i < 5; ++i)
    for (std::size_t c = 0; c < 8; ++c) CHECK(pre(i, c) == h(i, c));
  CHECK(parse_ffn_scope("ts") == FfnScope::ts_tokens_only);
}

TEST_CASE("insertion schedules") {
  CHECK(InsertionSchedule::evenly_spaced(6).layers == std::vector<std::size_t>{0, 2, 4});
  CHECK(InsertionSchedule::evenly_spaced(2).layers == std::vector<std::size_t>{0});
  CHECK(InsertionSchedule::evenly_spaced(1).layers == std::vector<std::size_t>{0});
  CHECK_THROWS_AS(InsertionSchedule{{6}}.validate(6), ConfigError);
  CHECK_THROWS_AS((InsertionSchedule{{2, 1}}.validate(6)), ConfigError);
  CHECK_NOTHROW((InsertionSchedule{{1, 3, 5}}.validate(6)));
}
