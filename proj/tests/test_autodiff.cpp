#include <doctest.h>

#include <cmath>
#include <functional>
#include <random>

#include "dd/autodiff.hpp"

using namespace dd;
using ad::Var;

namespace {

Tensor random_tensor(std::vector<int64_t> shape, uint32_t seed, float lo = -1.0f,
                     float hi = 1.0f) {
  Tensor t(std::move(shape));
  std::mt19937 rng(seed);
  std::uniform_real_distribution<float> d(lo, hi);
  for (auto& v : t.data) v = d(rng);
  return t;
}

// central differences of a scalar-valued function of one tensor
Tensor numeric_grad(const std::function<double(const Tensor&)>& f, const Tensor& x,
                    double eps = 1e-3) {
  Tensor g(x.shape);
  Tensor p = x;
  for (int64_t i = 0; i < x.numel(); ++i) {
    float saved = p.at(i);
    p.at(i) = saved + static_cast<float>(eps);
    double up = f(p);
    p.at(i) = saved - static_cast<float>(eps);
    double down = f(p);
    p.at(i) = saved;
    g.at(i) = static_cast<float>((up - down) / (2 * eps));
  }
  return g;
}

void check_close(const Tensor& got, const Tensor& want, double tol) {
  REQUIRE(got.shape == want.shape);
  double scale = 0;
  for (int64_t i = 0; i < want.numel(); ++i) scale = std::max<double>(scale, std::fabs(want.at(i)));
  scale = std::max(scale, 1e-3);
  for (int64_t i = 0; i < got.numel(); ++i)
    CHECK(std::fabs(got.at(i) - want.at(i)) <= tol * scale);
}

// analytic gradient of a scalar graph built by `build`
Tensor analytic_grad(const std::function<Var(const Var&)>& build, const Tensor& x) {
  Var leaf = ad::leaf(x);
  Var y = build(leaf);
  REQUIRE(y->value.numel() == 1);
  return ad::grad(y, {leaf})[0]->value;
}

void check_op(const std::function<Var(const Var&)>& build, const Tensor& x, double tol = 2e-2) {
  Tensor num = numeric_grad(
      [&](const Tensor& t) { return static_cast<double>(build(ad::constant(t))->value.at(0)); },
      x);
  check_close(analytic_grad(build, x), num, tol);
}

}  // namespace

TEST_SUITE_BEGIN("autodiff");

TEST_CASE("elementwise gradients match finite differences") {
  Tensor x = random_tensor({3, 4}, 1);
  check_op([](const Var& v) { return ad::sum_all(ad::square(v)); }, x);
  check_op([](const Var& v) { return ad::mean_all(ad::expv(v)); }, x);
  check_op([](const Var& v) { return ad::sum_all(ad::mul(v, v)); }, x);
  check_op([](const Var& v) { return ad::sum_all(ad::scale(ad::neg(v), 0.7f)); }, x);
  Tensor pos = random_tensor({3, 4}, 2, 0.5f, 2.0f);
  check_op([](const Var& v) { return ad::sum_all(ad::rsqrt_eps(v, 1e-5f)); }, pos);
  Tensor off = random_tensor({3, 4}, 3, 0.2f, 1.0f);  // away from |x|=0 and relu kink
  check_op([](const Var& v) { return ad::sum_all(ad::absval(v)); }, off);
  check_op([](const Var& v) { return ad::sum_all(ad::relu(v)); }, off);
}

TEST_CASE("reduction/broadcast adjoint pairs") {
  Tensor x = random_tensor({2, 3, 4, 4}, 5);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::spatial_sum(v))); }, x);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::chan_sum(v))); }, x);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::sample_sum(v))); }, x);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::chanpix_sum(v))); }, x);
  Tensor m = random_tensor({3, 5}, 6);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::colsum(v))); }, m);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::rowsum_bcast(v))); }, m);
  Tensor vec = random_tensor({4}, 7);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::bcast_rows(v, 3))); }, vec);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::spatial_bcast(
        ad::reshape(v, {2, 2}), 3, 3))); }, vec);
}

TEST_CASE("matmul gradients with transpose flags") {
  Tensor a = random_tensor({3, 4}, 8);
  Tensor b = random_tensor({4, 2}, 9);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::matmul(v, ad::constant(b)))); },
           a);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::matmul(ad::constant(a), v))); },
           b);
  Tensor bt = random_tensor({2, 4}, 10);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::matmul(v, ad::constant(bt), false, true)));
  }, a);
  Tensor at = random_tensor({4, 3}, 11);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::matmul(v, ad::constant(b), true, false)));
  }, at);
}

TEST_CASE("conv2d triple gradients") {
  Tensor x = random_tensor({2, 3, 5, 5}, 12);
  Tensor w = random_tensor({4, 3, 3, 3}, 13, -0.5f, 0.5f);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::conv2d(v, ad::constant(w)))); },
           x);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::conv2d(ad::constant(x), v))); },
           w);
  Tensor gy = random_tensor({2, 4, 5, 5}, 14);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::conv2d_input_grad(v, ad::constant(w))));
  }, gy);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::conv2d_input_grad(ad::constant(gy), v)));
  }, w);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::conv2d_weight_grad(v, ad::constant(gy))));
  }, x);
  check_op([&](const Var& v) {
    return ad::sum_all(ad::square(ad::conv2d_weight_grad(ad::constant(x), v)));
  }, gy);
}

TEST_CASE("conv adjoint identity <conv(x,w), g> == <x, input_grad(g,w)>") {
  Tensor x = random_tensor({1, 2, 4, 4}, 15);
  Tensor w = random_tensor({3, 2, 3, 3}, 16);
  Tensor g = random_tensor({1, 3, 4, 4}, 17);
  Var y = ad::conv2d(ad::constant(x), ad::constant(w));
  Var xb = ad::conv2d_input_grad(ad::constant(g), ad::constant(w));
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < y->value.numel(); ++i) lhs += y->value.at(i) * g.at(i);
  for (int64_t i = 0; i < x.numel(); ++i) rhs += x.at(i) * xb->value.at(i);
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("avgpool2 gradients, odd and even sizes") {
  for (int64_t hw : {4, 5}) {
    Tensor x = random_tensor({2, 2, hw, hw}, static_cast<uint32_t>(20 + hw));
    check_op([](const Var& v) { return ad::sum_all(ad::square(ad::avgpool2(v))); }, x);
  }
  Tensor tiny = random_tensor({2, 3, 1, 1}, 23);
  Var y = ad::avgpool2(ad::constant(tiny));
  CHECK(y->value.shape == std::vector<int64_t>{2, 3, 1, 1});
  CHECK(y->value.data == tiny.data);
}

TEST_CASE("log_softmax and cross entropy") {
  Tensor x = random_tensor({3, 5}, 24);
  check_op([](const Var& v) { return ad::sum_all(ad::square(ad::log_softmax(v))); }, x);
  std::vector<int> labels = {1, 4, 0};
  check_op([&](const Var& v) { return ad::cross_entropy_mean(v, labels); }, x, 1e-2);
  // rows of log_softmax exponentiate to probability vectors
  Var ls = ad::log_softmax(ad::constant(x));
  for (int64_t r = 0; r < 3; ++r) {
    double s = 0;
    for (int64_t c = 0; c < 5; ++c) s += std::exp(ls->value.at(r * 5 + c));
    CHECK(s == doctest::Approx(1.0).epsilon(1e-5));
  }
}

TEST_CASE("warp and its adjoint") {
  auto grid = std::make_shared<ad::WarpGrid>();
  grid->n = 2;
  grid->h = 3;
  grid->w = 3;
  std::mt19937 rng(77);
  std::uniform_int_distribution<int32_t> pick(-1, 8);
  std::uniform_real_distribution<float> wdist(0.0f, 1.0f);
  grid->idx.resize(2 * 3 * 3 * 4);
  grid->wgt.resize(2 * 3 * 3 * 4);
  for (size_t i = 0; i < grid->idx.size(); ++i) {
    grid->idx[i] = pick(rng);
    grid->wgt[i] = wdist(rng);
  }
  Tensor x = random_tensor({2, 2, 3, 3}, 25);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::warp(v, grid))); }, x);
  check_op([&](const Var& v) { return ad::sum_all(ad::square(ad::warp_adjoint(v, grid))); }, x);
  // <warp(x), g> == <x, warp_adjoint(g)>
  Tensor g = random_tensor({2, 2, 3, 3}, 26);
  Var wx = ad::warp(ad::constant(x), grid);
  Var ag = ad::warp_adjoint(ad::constant(g), grid);
  double lhs = 0, rhs = 0;
  for (int64_t i = 0; i < x.numel(); ++i) {
    lhs += wx->value.at(i) * g.at(i);
    rhs += x.at(i) * ag->value.at(i);
  }
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-4));
}

TEST_CASE("second-order: gradient of a gradient") {
  // y = sum(x^3); g = 3x^2; z = <g, c>; dz/dx = 6*x*c
  Tensor x = random_tensor({4}, 27);
  Tensor c = random_tensor({4}, 28);
  Var leaf = ad::leaf(x);
  Var y = ad::sum_all(ad::mul(ad::mul(leaf, leaf), leaf));
  Var g = ad::grad(y, {leaf})[0];
  Var z = ad::sum_all(ad::mulc(g, c));
  Tensor gg = ad::grad(z, {leaf})[0]->value;
  for (int64_t i = 0; i < 4; ++i)
    CHECK(gg.at(i) == doctest::Approx(6.0f * x.at(i) * c.at(i)).epsilon(1e-4));
}

TEST_CASE("unreachable leaves get zero gradients") {
  Var a = ad::leaf(random_tensor({2}, 29));
  Var b = ad::leaf(random_tensor({2}, 30));
  Var y = ad::sum_all(ad::square(a));
  Tensor gb = ad::grad(y, {a, b})[1]->value;
  CHECK(gb.shape == b->value.shape);
  for (float v : gb.data) CHECK(v == 0.0f);
}

TEST_SUITE_END();
