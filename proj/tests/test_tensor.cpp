#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"
#include "oracles.hpp"

using namespace normlab;

namespace {

std::vector<double> random_vec(std::size_t n, Rng& rng, double scale = 1.0) {
  std::vector<double> v(n);
  for (auto& x : v) x = scale * rng.normal();
  return v;
}

}  // namespace

TEST_CASE("elementwise definitions") {
  Tensor a = Tensor::from({2}, {1, 2});
  Tensor b = Tensor::from({2}, {3, 4});
  CHECK(add(a, b).values() == std::vector<double>{4, 6});
  CHECK(relu(Tensor::from({3}, {-1, 0, 2})).values() == std::vector<double>{0, 0, 2});
}

TEST_CASE("broadcast mul grad-check vs central differences") {
  Rng rng(5);
  std::vector<double> av{0.7, -1.3};
  std::vector<double> bv{1.1, 1.2, 0.9, -0.4};
  Tensor a = Tensor::param({2}, av);
  Tensor b = Tensor::param({2, 2}, bv);
  Tensor out = mul(a, b);
  backward(reduce_sum(out, {0, 1}, false));
  auto ga = a.grad();
  auto gb = b.grad();

  auto fd_a = oracle::finite_diff(
      [&](const std::vector<double>& v) {
        double s = 0.0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) s += v[j] * bv[i * 2 + j];
        return s;
      },
      av);
  auto fd_b = oracle::finite_diff(
      [&](const std::vector<double>& v) {
        double s = 0.0;
        for (int i = 0; i < 2; ++i)
          for (int j = 0; j < 2; ++j) s += av[j] * v[i * 2 + j];
        return s;
      },
      bv);
  CHECK(oracle::max_rel_err(ga, fd_a) < 1e-6);
  CHECK(oracle::max_rel_err(gb, fd_b) < 1e-6);
}

TEST_CASE("matmul identity and hand contraction") {
  Tensor x = Tensor::from({2, 2}, {1, 2, 3, 4});
  Tensor eye = Tensor::from({2, 2}, {1, 0, 0, 1});
  CHECK(matmul(x, eye).values() == x.values());

  Tensor ones = Tensor::from({2, 1}, {1, 1});
  CHECK(matmul(x, ones).values() == std::vector<double>{3, 7});
}

TEST_CASE("matmul grad-check on random 3x4 . 4x2") {
  Rng rng(17);
  auto av = random_vec(12, rng);
  auto bv = random_vec(8, rng);
  auto wv = random_vec(6, rng);
  Tensor a = Tensor::param({3, 4}, av);
  Tensor b = Tensor::param({4, 2}, bv);
  Tensor w = Tensor::from({3, 2}, wv);
  backward(reduce_sum(mul(matmul(a, b), w), {0, 1}, false));

  auto f = [&](const std::vector<double>& va, const std::vector<double>& vb) {
    double s = 0.0;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int q = 0; q < 4; ++q) acc += va[i * 4 + q] * vb[q * 2 + j];
        s += acc * wv[i * 2 + j];
      }
    return s;
  };
  auto fd_a = oracle::finite_diff([&](const std::vector<double>& v) { return f(v, bv); }, av);
  auto fd_b = oracle::finite_diff([&](const std::vector<double>& v) { return f(av, v); }, bv);
  CHECK(oracle::max_rel_err(a.grad(), fd_a) < 1e-6);
  CHECK(oracle::max_rel_err(b.grad(), fd_b) < 1e-6);
}

TEST_CASE("reductions match the two-pass oracle") {
  Tensor x = Tensor::from({4}, {1, 2, 3, 4});
  CHECK(reduce_mean(x, {0}, false).item() == doctest::Approx(2.5));
  CHECK(reduce_mean(x, {0}, false).item() ==
        doctest::Approx(oracle::mean2({1, 2, 3, 4})).epsilon(1e-15));
  CHECK(reduce_var(x, {0}, false).item() == doctest::Approx(1.25));  // biased
  CHECK(reduce_var(Tensor::full({5}, 3.25), {0}, false).item() == 0.0);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones") {
    Tensor x = Tensor::param({2, 3}, {1, 2, 3, 4, 5, 6});
    backward(reduce_sum(x, {0, 1}, false));
    CHECK(x.grad() == std::vector<double>(6, 1.0));
  }
  SUBCASE("mean of squares over two") {
    Tensor x = Tensor::param({2}, {1, 2});
    Tensor loss = div(reduce_mean(mul(x, x), {0}, false), Tensor::scalar(2.0));
    backward(loss);
    CHECK(x.grad()[0] == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(x.grad()[1] == doctest::Approx(1.0).epsilon(1e-12));
  }
  SUBCASE("non-scalar loss is rejected") {
    Tensor x = Tensor::param({2}, {1, 2});
    CHECK_THROWS_AS(backward(mul(x, x)), ArgumentError);
  }
  SUBCASE("reused tensor accumulates from all consumers") {
    Tensor x = Tensor::param({2}, {3, 5});
    Tensor y = add(mul(x, x), x);  // d/dx = 2x + 1
    backward(reduce_sum(y, {0}, false));
    CHECK(x.grad()[0] == doctest::Approx(7.0));
    CHECK(x.grad()[1] == doctest::Approx(11.0));
  }
}

TEST_CASE("every differentiable op matches finite differences") {
  Rng rng(23);
  const Shape shape{3, 4};

  auto check_unary = [&](auto f, double shift, double scale) {
    auto xv = random_vec(12, rng, scale);
    for (auto& v : xv) v += shift;
    // weight tensor shaped like the op output, axes covering its full rank
    Shape out_shape;
    std::vector<int> out_axes;
    {
      NoGradGuard ng;
      Tensor probe = f(Tensor::from(shape, xv));
      out_shape = probe.shape();
      for (int i = 0; i < probe.rank(); ++i) out_axes.push_back(i);
    }
    std::int64_t out_n = 1;
    for (auto e : out_shape) out_n *= e;
    const auto w = random_vec(out_n, rng);

    Tensor x = Tensor::param(shape, xv);
    backward(reduce_sum(mul(f(x), Tensor::from(out_shape, w)), out_axes, false));
    auto fd = oracle::finite_diff(
        [&](const std::vector<double>& v) {
          NoGradGuard ng;
          Tensor xt = Tensor::from(shape, v);
          return reduce_sum(mul(f(xt), Tensor::from(out_shape, w)), out_axes, false).item();
        },
        xv);
    CHECK(oracle::max_rel_err(x.grad(), fd) < 1e-4);
  };

  check_unary([](const Tensor& t) { return relu(t); }, 0.5, 1.0);  // stay off the kink
  check_unary([](const Tensor& t) { return sigmoid(t); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return normlab::tanh(t); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return normlab::exp(t); }, 0.0, 0.5);
  check_unary([](const Tensor& t) { return normlab::log(t); }, 3.0, 0.3);
  check_unary([](const Tensor& t) { return normlab::sqrt(t); }, 3.0, 0.3);
  check_unary([](const Tensor& t) { return huber(t); }, 0.4, 0.2);  // inside quadratic region
  check_unary([](const Tensor& t) { return reduce_mean(t, {1}, true); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return reduce_var(t, {0}, true); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return softmax(t, 1); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return permute(t, {1, 0}); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return reshape(t, {4, 3}); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return slice(t, 1, 1, 3); }, 0.0, 1.0);
  check_unary([](const Tensor& t) { return concat({t, t}, 0); }, 0.0, 1.0);
}

TEST_CASE("backward is deterministic bit for bit") {
  Rng rng(31);
  auto xv = random_vec(24, rng);
  auto run = [&]() {
    Tensor x = Tensor::param({2, 3, 4}, xv);
    Tensor y = reduce_mean(mul(sigmoid(x), normlab::tanh(x)), {0, 2}, false);
    backward(reduce_sum(mul(y, y), {0}, false));
    return x.grad();
  };
  auto g1 = run();
  auto g2 = run();
  CHECK(g1 == g2);
}

TEST_CASE("broadcast gradient equals gradient of the tiled computation") {
  Rng rng(37);
  auto av = random_vec(3, rng);
  auto bv = random_vec(12, rng);

  Tensor a = Tensor::param({3}, av);
  Tensor b = Tensor::from({4, 3}, bv);
  backward(reduce_sum(mul(a, b), {0, 1}, false));
  auto g_broadcast = a.grad();

  // explicit tiling of a to [4,3]
  std::vector<double> tiled(12);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 3; ++j) tiled[i * 3 + j] = av[j];
  Tensor at = Tensor::param({4, 3}, tiled);
  backward(reduce_sum(mul(at, Tensor::from({4, 3}, bv)), {0, 1}, false));
  const auto& gt = at.grad();
  for (int j = 0; j < 3; ++j) {
    double s = 0.0;
    for (int i = 0; i < 4; ++i) s += gt[i * 3 + j];
    CHECK(g_broadcast[j] == doctest::Approx(s).epsilon(1e-12));
  }
}

TEST_CASE("detach severs gradient flow and preserves values") {
  Tensor x = Tensor::param({3}, {1.5, -2.0, 0.25});
  Tensor y = mul(x, x);
  Tensor z = detach(y);
  CHECK(z.values() == y.values());  // bit-for-bit
  CHECK_FALSE(z.requires_grad());

  Tensor w = Tensor::param({3}, {1, 1, 1});
  backward(reduce_sum(mul(z, w), {0}, false));
  CHECK(x.grad() == std::vector<double>(3, 0.0));  // exactly zero contribution
  CHECK(w.grad() == z.values());
}

TEST_CASE("shape errors") {
  Tensor a = Tensor::from({2, 3}, std::vector<double>(6, 1.0));
  Tensor b = Tensor::from({3, 3}, std::vector<double>(9, 1.0));
  CHECK_THROWS_AS(add(a, b), ShapeError);
  CHECK_THROWS_AS(matmul(a, Tensor::from({2, 2}, {1, 2, 3, 4})), ShapeError);
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), ShapeError);
}

TEST_CASE("axis annotations propagate through movement ops") {
  Tensor x = Tensor::from({2, 3, 4, 5}, std::vector<double>(120, 1.0)).set_axes("BTCS");
  CHECK(permute(x, {0, 1, 3, 2}).axes() == "BTSC");
  CHECK(slice(x, 1, 0, 2).axes() == "BTCS");
  CHECK(reduce_mean(x, {3}, true).axes() == "BTCS");
  CHECK(reshape(x, {6, 20}).axes().empty());
}

TEST_CASE("no-grad scope records nothing") {
  Tensor x = Tensor::param({2}, {1, 2});
  const auto before = tape_size();
  {
    NoGradGuard ng;
    Tensor y = mul(x, x);
    CHECK_FALSE(y.requires_grad());
  }
  CHECK(tape_size() == before);
  clear_tape();
}
