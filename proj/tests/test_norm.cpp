#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "normlab/norm.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"
#include "oracles.hpp"

using namespace normlab;

namespace {

Tensor random_btcs(std::int64_t b, std::int64_t t, std::int64_t c, std::int64_t s, Rng& rng,
                   double mean = 0.0, double sigma = 1.0) {
  std::vector<double> v(b * t * c * s);
  for (auto& x : v) x = rng.normal(mean, sigma);
  return Tensor::from({b, t, c, s}, std::move(v));
}

}  // namespace

TEST_CASE("BN train forward matches the two-pass oracle") {
  // one channel, four values across the normalization axes
  NormLayer bn(NormKind::BatchNorm, 1, 4, /*eps=*/1e-300);
  Tensor x = Tensor::from({4, 1, 1, 1}, {1, 2, 3, 4});
  auto y = bn.forward(x).values();

  const std::vector<double> raw{1, 2, 3, 4};
  const double m = oracle::mean2(raw), v = oracle::var2(raw);
  for (int i = 0; i < 4; ++i) {
    CHECK(y[i] == doctest::Approx((raw[i] - m) / std::sqrt(v)).epsilon(1e-12));
  }
  // frozen values from the same oracle
  CHECK(y[0] == doctest::Approx(-1.3416).epsilon(1e-4));
  CHECK(y[1] == doctest::Approx(-0.4472).epsilon(1e-4));
  CHECK(y[2] == doctest::Approx(0.4472).epsilon(1e-4));
  CHECK(y[3] == doctest::Approx(1.3416).epsilon(1e-4));
}

TEST_CASE("constant input maps to zeros for every kind") {
  Tensor x = Tensor::full({2, 3, 4, 5}, 7.5);
  for (auto kind : {NormKind::BatchNorm, NormKind::BatchNormPerTimestep, NormKind::GroupNorm,
                    NormKind::LayerNorm, NormKind::InstanceNorm}) {
    NormLayer layer(kind, 4, 2);
    for (double v : layer.forward(x).values()) CHECK(v == doctest::Approx(0.0).epsilon(1e-12));
  }
}

TEST_CASE("eval-mode BN with identity statistics is the identity") {
  NormLayer bn(NormKind::BatchNorm, 4, 4, /*eps=*/1e-300);
  bn.mode = Mode::Eval;
  bn.stats_initialized = true;  // running_mean=0, running_var=1 defaults
  Rng rng(2);
  Tensor x = random_btcs(2, 3, 4, 5, rng);
  CHECK(bn.forward(x).values() == x.values());  // exact with eps below double resolution
}

TEST_CASE("eval-mode BN without initialized stats is a state error") {
  NormLayer bn(NormKind::BatchNorm, 4);
  bn.mode = Mode::Eval;
  Rng rng(3);
  CHECK_THROWS_AS(bn.forward(random_btcs(1, 2, 4, 3, rng)), StateError);
}

TEST_CASE("running statistics EMA endpoints") {
  SUBCASE("m=1 copies the batch stats") {
    NormLayer bn(NormKind::BatchNorm, 2, 2, 1e-5, 1.0);
    bn.update_running_stats({3.0, 4.0}, {0.5, 0.25});
    CHECK(bn.running_mean == std::vector<double>{3.0, 4.0});
    CHECK(bn.running_var == std::vector<double>{0.5, 0.25});
  }
  SUBCASE("m=0 leaves them unchanged") {
    NormLayer bn(NormKind::BatchNorm, 2, 2, 1e-5, 0.0);
    bn.update_running_stats({3.0, 4.0}, {0.5, 0.25});
    CHECK(bn.running_mean == std::vector<double>{0.0, 0.0});
    CHECK(bn.running_var == std::vector<double>{1.0, 1.0});
  }
  SUBCASE("m=0.1 moves a tenth of the way") {
    NormLayer bn(NormKind::BatchNorm, 1, 1, 1e-5, 0.1);
    bn.update_running_stats({1.0}, {1.0});
    CHECK(bn.running_mean[0] == doctest::Approx(0.1).epsilon(1e-15));
  }
  SUBCASE("update on batch-independent kind is a state error") {
    NormLayer gn(NormKind::GroupNorm, 2, 2);
    CHECK_THROWS_AS(gn.update_running_stats({0, 0}, {1, 1}), StateError);
  }
}

TEST_CASE("freeze semantics") {
  Rng rng(5);
  NormLayer bn(NormKind::BatchNorm, 4);
  CHECK_THROWS_AS(bn.freeze(), StateError);  // uninitialized stats

  bn.forward(random_btcs(4, 8, 4, 3, rng));  // one train pass initializes stats
  bn.freeze();
  CHECK(bn.kind == NormKind::FrozenBatchNorm);

  SUBCASE("frozen forward is independent of batch composition") {
    Tensor base = random_btcs(3, 2, 4, 3, rng);
    auto v = base.values();
    auto y1 = bn.forward(base).values();
    // perturb every frame except lane 0
    auto v2 = v;
    for (std::size_t i = 2 * 4 * 3; i < v2.size(); ++i) v2[i] += 10.0;
    auto y2 = bn.forward(Tensor::from(base.shape(), v2)).values();
    for (std::size_t i = 0; i < static_cast<std::size_t>(2 * 4 * 3); ++i) {
      CHECK(y1[i] == y2[i]);  // bit-identical
    }
  }

  SUBCASE("FrozenBN in train mode equals BN in eval mode for the same stats") {
    NormLayer bn_eval(NormKind::BatchNorm, 4);
    bn_eval.mode = Mode::Eval;
    bn_eval.running_mean = bn.running_mean;
    bn_eval.running_var = bn.running_var;
    bn_eval.stats_initialized = true;
    Tensor x = random_btcs(2, 3, 4, 3, rng);
    bn.mode = Mode::Train;
    CHECK(bn.forward(x).values() == bn_eval.forward(x).values());
  }

  SUBCASE("training passes leave frozen stats unchanged") {
    const auto rm = bn.running_mean, rv = bn.running_var;
    bn.mode = Mode::Train;
    for (int i = 0; i < 100; ++i) bn.forward(random_btcs(2, 4, 4, 3, rng));
    CHECK(bn.running_mean == rm);
    CHECK(bn.running_var == rv);
  }
}

TEST_CASE("norm equivalences: GN(1)=LN and GN(C)=IN") {
  Rng rng(7);
  Tensor x = random_btcs(2, 5, 8, 6, rng, 0.3, 2.0);
  auto report = norm_equivalences_check(8, x);
  CHECK(report.max_diff_gn1_ln < 1e-10);
  CHECK(report.max_diff_gnc_in < 1e-10);
}

TEST_CASE("GN group statistics match the two-pass oracle (g=2, C=4)") {
  Rng rng(9);
  const std::int64_t b = 2, t = 3, c = 4, s = 5;
  Tensor x = random_btcs(b, t, c, s, rng, -0.2, 1.4);
  NormLayer gn(NormKind::GroupNorm, c, 2, 1e-300);
  auto y = gn.forward(x).values();
  const auto& v = x.values();

  // oracle: per (frame, group) slice over (2 channels x S)
  for (std::int64_t bi = 0; bi < b; ++bi) {
    for (std::int64_t ti = 0; ti < t; ++ti) {
      for (int g = 0; g < 2; ++g) {
        std::vector<double> sl;
        for (std::int64_t ci = g * 2; ci < (g + 1) * 2; ++ci) {
          for (std::int64_t si = 0; si < s; ++si) {
            sl.push_back(v[((bi * t + ti) * c + ci) * s + si]);
          }
        }
        const double m = oracle::mean2(sl), sd = std::sqrt(oracle::var2(sl));
        std::size_t k = 0;
        for (std::int64_t ci = g * 2; ci < (g + 1) * 2; ++ci) {
          for (std::int64_t si = 0; si < s; ++si, ++k) {
            const double expected = (sl[k] - m) / sd;
            CHECK(y[((bi * t + ti) * c + ci) * s + si] ==
                  doctest::Approx(expected).epsilon(1e-10));
          }
        }
      }
    }
  }
}

TEST_CASE("train-mode BN output has zero mean and calibrated variance per channel") {
  Rng rng(11);
  const double eps = 1e-5;
  NormLayer bn(NormKind::BatchNorm, 6, 2, eps);
  Tensor x = random_btcs(4, 10, 6, 8, rng, 1.0, 2.5);
  auto y = bn.forward(x).values();

  const std::int64_t bt = 4 * 10, c = 6, s = 8;
  for (std::int64_t ci = 0; ci < c; ++ci) {
    std::vector<double> channel, raw;
    for (std::int64_t f = 0; f < bt; ++f) {
      for (std::int64_t si = 0; si < s; ++si) {
        channel.push_back(y[(f * c + ci) * s + si]);
        raw.push_back(x.values()[(f * c + ci) * s + si]);
      }
    }
    CHECK(std::fabs(oracle::mean2(channel)) < 1e-8);
    const double sigma2 = oracle::var2(raw);
    CHECK(oracle::var2(channel) == doctest::Approx(1.0 / (1.0 + eps / sigma2)).epsilon(1e-6));
  }
}

TEST_CASE("batch independence of per-sample kinds under frame perturbation") {
  Rng rng(13);
  const std::int64_t b = 3, t = 4, c = 8, s = 5;
  Tensor base = random_btcs(b, t, c, s, rng);

  auto check_layer = [&](NormLayer& layer) {
    auto y1 = layer.forward(base).values();
    auto v2 = base.values();
    // perturb every frame except (b=0, t=0)
    for (std::size_t i = c * s; i < v2.size(); ++i) v2[i] -= 3.25;
    auto y2 = layer.forward(Tensor::from(base.shape(), v2)).values();
    for (std::size_t i = 0; i < static_cast<std::size_t>(c * s); ++i) CHECK(y1[i] == y2[i]);
  };

  NormLayer gn(NormKind::GroupNorm, c, 4);
  NormLayer ln(NormKind::LayerNorm, c);
  NormLayer in(NormKind::InstanceNorm, c);
  check_layer(gn);
  check_layer(ln);
  check_layer(in);

  NormLayer bn(NormKind::BatchNorm, c);
  bn.forward(base);  // initialize stats
  bn.mode = Mode::Eval;
  check_layer(bn);
  NormLayer frozen(NormKind::BatchNorm, c);
  frozen.forward(base);
  frozen.freeze();
  check_layer(frozen);
}

TEST_CASE("cross-sample gradient leakage exists for BN and is zero otherwise") {
  Rng rng(17);
  const std::int64_t b = 2, t = 1, c = 4, s = 3;
  auto xv = random_btcs(b, t, c, s, rng).values();

  auto cross_grad = [&](NormLayer& layer) {
    Tensor x = Tensor::param({b, t, c, s}, xv);
    Tensor y = layer.forward(x);
    // loss reads only frame (b=0): sum over its entries
    Tensor frame0 = slice(y, 0, 0, 1);
    backward(reduce_sum(frame0, {0, 1, 2, 3}, false));
    // return grad magnitude on frame (b=1)
    double m = 0.0;
    const auto& g = x.grad();
    for (std::size_t i = c * s; i < g.size(); ++i) m = std::max(m, std::fabs(g[i]));
    return m;
  };

  NormLayer bn(NormKind::BatchNorm, c);
  CHECK(cross_grad(bn) > 0.0);

  NormLayer gn(NormKind::GroupNorm, c, 2);
  NormLayer ln(NormKind::LayerNorm, c);
  NormLayer in(NormKind::InstanceNorm, c);
  CHECK(cross_grad(gn) == 0.0);
  CHECK(cross_grad(ln) == 0.0);
  CHECK(cross_grad(in) == 0.0);

  NormLayer bn_eval(NormKind::BatchNorm, c);
  bn_eval.forward(Tensor::from({b, t, c, s}, xv));
  bn_eval.mode = Mode::Eval;
  CHECK(cross_grad(bn_eval) == 0.0);
}

TEST_CASE("BN train/eval consistency when the batch is the dataset and m=1") {
  Rng rng(19);
  NormLayer bn(NormKind::BatchNorm, 5, 5, 1e-5, /*momentum=*/1.0);
  Tensor whole = random_btcs(6, 12, 5, 4, rng, 0.7, 1.9);
  auto train_out = bn.forward(whole).values();
  bn.mode = Mode::Eval;
  auto eval_out = bn.forward(whole).values();
  CHECK(oracle::max_abs_diff(train_out, eval_out) < 1e-8);
}

TEST_CASE("gradients flow through batch statistics (finite differences)") {
  Rng rng(23);
  const std::int64_t b = 2, t = 2, c = 2, s = 2;
  auto xv = random_btcs(b, t, c, s, rng).values();
  const auto wv = random_btcs(b, t, c, s, rng).values();

  for (auto kind : {NormKind::BatchNorm, NormKind::BatchNormPerTimestep, NormKind::GroupNorm,
                    NormKind::LayerNorm, NormKind::InstanceNorm}) {
    NormLayer layer(kind, c, 2);
    layer.freeze_stat_updates = true;  // keep repeated FD forwards stateless
    Tensor x = Tensor::param({b, t, c, s}, xv);
    backward(reduce_sum(mul(layer.forward(x), Tensor::from({b, t, c, s}, wv)), {0, 1, 2, 3},
                        false));
    auto fd = oracle::finite_diff(
        [&](const std::vector<double>& v) {
          NoGradGuard ng;
          Tensor xt = Tensor::from({b, t, c, s}, v);
          return reduce_sum(mul(layer.forward(xt), Tensor::from({b, t, c, s}, wv)),
                            {0, 1, 2, 3}, false)
              .item();
        },
        xv);
    CHECK(oracle::max_rel_err(x.grad(), fd) < 1e-4);
  }
}

TEST_CASE("shape and config validation") {
  CHECK_THROWS_AS(NormLayer(NormKind::GroupNorm, 6, 4), ArgumentError);  // 4 does not divide 6
  NormLayer bn(NormKind::BatchNorm, 4);
  CHECK_THROWS_AS(bn.forward(Tensor::zeros({2, 3, 5, 2})), ShapeError);  // wrong C
  CHECK_THROWS_AS(bn.forward(Tensor::zeros({2, 4})), ShapeError);        // wrong rank
}
