#include <doctest.h>

#include <cmath>
#include <limits>

#include "helpers.hpp"
#include "tpc/errors.hpp"
#include "tpc/gradcheck.hpp"
#include "tpc/params.hpp"
#include "tpc/tensor.hpp"

using namespace tpc;
using testing::random_tensor;

namespace {

std::vector<double> naive_matmul(const Tensor& a, const Tensor& b) {
  std::vector<double> out(a.rows() * b.cols(), 0.0);
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out[i * b.cols() + j] += a(i, k) * b(k, j);
  return out;
}

}  // namespace

TEST_CASE("tensor shape matches data length") {
  Tensor t(3, 4, std::vector<double>(12, 1.0));
  CHECK(t.size() == t.rows() * t.cols());
  CHECK(t.shape() == std::vector<std::size_t>{3, 4});
  CHECK_THROWS_AS(Tensor(2, 2, std::vector<double>(3)), ShapeError);
}

TEST_CASE("matmul small cases") {
  const Tensor id = Tensor::from_rows({{1, 0}, {0, 1}});
  const Tensor col = Tensor::from_rows({{3}, {4}});
  const Tensor r = matmul(id, col);
  CHECK(r.rows() == 2);
  CHECK(r.cols() == 1);
  CHECK(r(0, 0) == 3.0);
  CHECK(r(1, 0) == 4.0);
  CHECK(matmul(Tensor::scalar(2), Tensor::scalar(3)).item() == 6.0);
  CHECK_THROWS_AS(matmul(id, Tensor::zeros(3, 1)), ShapeError);
}

TEST_CASE("matmul kernels match a triple loop") {
  for (auto [m, k, n] : {std::array<std::size_t, 3>{3, 4, 2}, {7, 13, 5}, {9, 64, 33}}) {
    const Tensor a = random_tensor(m, k, 1);
    const Tensor b = random_tensor(k, n, 2);
    CHECK(testing::max_abs_diff(matmul(a, b).values(), naive_matmul(a, b)) < 1e-12);
    const Tensor bt = transpose(b);
    CHECK(testing::max_abs_diff(matmul_nt(a, bt).values(), naive_matmul(a, b)) < 1e-12);
  }
}

TEST_CASE("softmax rows") {
  const Tensor s = softmax_rows(Tensor::from_rows({{0, 0}}));
  CHECK(s(0, 0) == 0.5);
  CHECK(s(0, 1) == 0.5);

  const double ninf = -std::numeric_limits<double>::infinity();
  const Tensor m = softmax_rows(Tensor::from_rows({{5, 1}}), Tensor::from_rows({{0, ninf}}));
  CHECK(m(0, 0) == 1.0);
  CHECK(m(0, 1) == 0.0);

  const Tensor x = softmax_rows(Tensor::from_rows({{1, 2, 3}}));
  const double z = std::exp(1.0) + std::exp(2.0) + std::exp(3.0);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(x(0, i) - std::exp(i + 1.0) / z) < 1e-12);
}

TEST_CASE("layer norm") {
  const Tensor g = Tensor::full(1, 3, 1.0);
  const Tensor b = Tensor::zeros(1, 3);
  const Tensor c = layer_norm(Tensor::from_rows({{2.5, 2.5, 2.5}}), g, b);
  for (int i = 0; i < 3; ++i) CHECK(c(0, i) == 0.0);

  const Tensor two = layer_norm(Tensor::from_rows({{1, -1}}), Tensor::full(1, 2, 1.0),
                                Tensor::zeros(1, 2), 0.0);
  CHECK(two(0, 0) == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(two(0, 1) == doctest::Approx(-1.0).epsilon(1e-12));

  const Tensor r = layer_norm(random_tensor(1, 64, 3, 4.0), Tensor::full(1, 64, 1.0),
                              Tensor::zeros(1, 64));
  double mean = 0.0, var = 0.0;
  for (double v : r.values()) mean += v;
  mean /= 64.0;
  for (double v : r.values()) var += (v - mean) * (v - mean);
  var /= 64.0;
  CHECK(std::abs(mean) < 1e-10);
  CHECK(std::abs(var - 1.0) < 1e-4);
}

TEST_CASE("NaN is reported, not propagated") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(add(Tensor::scalar(nan), Tensor::scalar(1.0)), NumericalError);
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(add(Tensor::scalar(inf), Tensor::scalar(-inf)), NumericalError);
}

TEST_CASE("backward of a small expression") {
  // f = sum((a b) * c): df/da = c b^T, df/db = a^T c
  Tensor a = random_tensor(2, 3, 1, 1.0, true);
  Tensor b = random_tensor(3, 2, 2, 1.0, true);
  const Tensor c = random_tensor(2, 2, 3);
  backward(sum(hadamard(matmul(a, b), c)));
  const auto ga = a.grad();
  const auto gb = b.grad();
  for (std::size_t i = 0; i < 2; ++i)
    for (std::size_t k = 0; k < 3; ++k) {
      double expect = 0.0;
      for (std::size_t j = 0; j < 2; ++j) expect += c(i, j) * b(k, j);
      CHECK(std::abs(ga[i * 3 + k] - expect) < 1e-12);
    }
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t j = 0; j < 2; ++j) {
      double expect = 0.0;
      for (std::size_t i = 0; i < 2; ++i) expect += a(i, k) * c(i, j);
      CHECK(std::abs(gb[k * 2 + j] - expect) < 1e-12);
    }
}

TEST_CASE("no graph is recorded under NoGradGuard") {
  Tensor a = random_tensor(2, 2, 1, 1.0, true);
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    CHECK_FALSE(matmul(a, a).requires_grad());
  }
  CHECK(grad_enabled());
  CHECK(matmul(a, a).requires_grad());
}

TEST_CASE("finite differences on w^2") {
  Tensor w = Tensor::scalar(3.0, true);
  std::vector<Tensor> params{w};
  const auto r = finite_difference_check([&] { return hadamard(w, w); }, params);
  CHECK(r.max_relative_error < 1e-8);
  CHECK(r.coords_checked == 1);
}

TEST_CASE("finite differences cover every op used by the model") {
  Tensor x = random_tensor(4, 6, 1, 1.0, true);
  Tensor w = random_tensor(6, 6, 2, 0.5, true);
  Tensor g = random_tensor(1, 6, 3, 1.0, true);
  Tensor b = random_tensor(1, 6, 4, 1.0, true);
  Tensor s = Tensor::scalar(0.3, true);
  const Tensor target = random_tensor(2, 6, 5);
  auto f = [&] {
    Tensor h = layer_norm(matmul(x, w), g, b);
    Tensor att = softmax_rows(matmul_nt(h, x), causal_mask(4));
    Tensor y = add(h, scale_by(gelu(matmul(att, x)), sigmoid(s)));
    const std::vector<Tensor> halves{slice_cols(y, 0, 3), slice_cols(y, 3, 3)};
    Tensor z = concat_cols(halves);
    return mse_loss(slice_rows(concat_rows({z, z}), 1, 2), target);
  };
  std::vector<Tensor> params{x, w, g, b, s};
  CHECK(finite_difference_check(f, params).max_relative_error < 1e-6);
}

TEST_CASE("finite differences catch a corrupted gradient") {
  Tensor w = random_tensor(3, 3, 1, 1.0, true);
  const Tensor x = random_tensor(2, 3, 2);
  std::vector<Tensor> params{w};
  GradCheckOptions opt;
  opt.tamper = [](double g) { return g * 1.01; };
  const auto r = finite_difference_check([&] { return sum(gelu(matmul(x, w))); }, params, opt);
  CHECK(r.max_relative_error > 1e-3);
}

TEST_CASE("full TPC loss passes the finite-difference check") {
  ModelConfig c;
  c.backbone.depth = 2;
  c.backbone.width = 8;
  c.backbone.heads = 2;
  c.backbone.max_seq = 256;
  c.lookback = 8;
  c.patch_len = 4;
  c.stride = 4;
  c.ts_tokens = 2;
  REQUIRE(c.num_patches() == 3);
  REQUIRE(c.bank_rows() == 3);
  TemporalEncoder enc(c.backbone, c.backbone_seed);
  ForecastModel model(c, enc);
  const Example ex = testing::example_for(c, enc, 9);
  auto params = model.params().trainable_tensors();
  const auto r = finite_difference_check([&] { return example_loss(model, ex); }, params);
  CHECK(r.coords_checked == model.params().trainable_count());
  CHECK(r.max_relative_error < 1e-4);
  CHECK(r.max_abs_error < 1e-7);
}

TEST_CASE("registry names are unique and stable across save and load") {
  ParamRegistry reg;
  reg.add("a.w", random_tensor(2, 3, 1), true);
  reg.add("b.w", random_tensor(1, 1, 2), false);
  CHECK_THROWS_AS(reg.add("a.w", Tensor::zeros(1, 1), true), ContractError);
  CHECK(param_group("a.w") == "a");

  const auto path = testing::temp_dir("registry") / "ck.bin";
  write_checkpoint(path, snapshot(reg, "meta"));
  const Checkpoint ck = read_checkpoint(path);
  CHECK(ck.metadata == "meta");
  REQUIRE(ck.items.size() == 2);
  CHECK(ck.items[0].name == "a.w");
  CHECK(ck.items[1].name == "b.w");

  ParamRegistry other;
  other.add("a.w", Tensor::zeros(2, 3), false);
  other.add("b.w", Tensor::zeros(1, 1), true);
  restore(other, ck);
  CHECK(other.fingerprint() == reg.fingerprint());
  CHECK(other.trainable("a.w"));
  CHECK_FALSE(other.trainable("b.w"));

  ParamRegistry wrong;
  wrong.add("a.w", Tensor::zeros(3, 2), true);
  wrong.add("b.w", Tensor::zeros(1, 1), false);
  CHECK_THROWS(restore(wrong, ck));
}

TEST_CASE("frozen parameters collect no gradient") {
  ParamRegistry reg;
  Tensor frozen = reg.add("f.w", random_tensor(3, 3, 1), false);
  Tensor live = reg.add("l.w", random_tensor(3, 3, 2), true);
  backward(sum(matmul(matmul(random_tensor(2, 3, 3), frozen), live)));
  for (double g : frozen.grad()) CHECK(g == 0.0);
  double norm = 0.0;
  for (double g : live.grad()) norm += g * g;
  CHECK(norm > 0.0);
  CHECK(reg.trainable_count() == 9);
  CHECK(reg.total_count() == 18);
}
