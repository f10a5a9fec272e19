#include "normlab/norm.hpp"

#include <algorithm>
#include <cmath>

namespace normlab {

std::string to_string(NormKind kind) {
  switch (kind) {
    case NormKind::BatchNorm: return "bn";
    case NormKind::BatchNormPerTimestep: return "bn_t";
    case NormKind::FrozenBatchNorm: return "frozen_bn";
    case NormKind::GroupNorm: return "gn";
    case NormKind::LayerNorm: return "ln";
    case NormKind::InstanceNorm: return "in";
  }
  return "?";
}

NormKind norm_kind_from_string(const std::string& name) {
  if (name == "bn") return NormKind::BatchNorm;
  if (name == "bn_t") return NormKind::BatchNormPerTimestep;
  if (name == "frozen_bn") return NormKind::FrozenBatchNorm;
  if (name == "gn") return NormKind::GroupNorm;
  if (name == "ln") return NormKind::LayerNorm;
  if (name == "in") return NormKind::InstanceNorm;
  throw ConfigError("unknown normalization kind '" + name + "'");
}

NormLayer::NormLayer(NormKind kind, std::int64_t channels, std::int64_t groups, double eps,
                     double momentum)
    : kind(kind), channels(channels), groups(groups), eps(eps), momentum(momentum) {
  if (channels <= 0) throw ArgumentError("norm layer needs a positive channel count");
  if (eps <= 0) throw ArgumentError("norm layer needs eps > 0");
  if (momentum < 0 || momentum > 1) throw ArgumentError("momentum must lie in [0,1]");
  if (kind == NormKind::GroupNorm) {
    if (groups <= 0 || channels % groups != 0) {
      throw ArgumentError("GroupNorm groups (" + std::to_string(groups) +
                          ") must divide channels (" + std::to_string(channels) + ")");
    }
  }
  gamma = Tensor::param({channels}, std::vector<double>(channels, 1.0));
  beta = Tensor::param({channels}, std::vector<double>(channels, 0.0));
  running_mean.assign(channels, 0.0);
  running_var.assign(channels, 1.0);
}

namespace {

// Pooled per-channel mean/var over {B,T,S}, value-level (no tape).
void pooled_channel_stats(const Tensor& x, std::vector<double>* mean, std::vector<double>* var) {
  NoGradGuard ng;
  Tensor xv = Tensor::from(x.shape(), x.values());
  *mean = reduce_mean(xv, {0, 1, 3}, false).values();
  *var = reduce_var(xv, {0, 1, 3}, false).values();
}

Tensor standardize(const Tensor& x, const Tensor& mean, const Tensor& var, double eps) {
  return div(sub(x, mean), sqrt(add(var, Tensor::scalar(eps))));
}

Tensor affine_per_channel(const Tensor& y, const Tensor& gamma, const Tensor& beta,
                          std::int64_t channels) {
  Tensor g = reshape(gamma, {1, 1, channels, 1});
  Tensor b = reshape(beta, {1, 1, channels, 1});
  return add(mul(y, g), b);
}

}  // namespace

Tensor NormLayer::forward(const Tensor& x) {
  if (x.rank() != 4) {
    throw ShapeError("norm layer expects [B,T,C,S], got rank " + std::to_string(x.rank()));
  }
  if (x.shape()[2] != channels) {
    throw ShapeError("norm layer channels " + std::to_string(channels) + " vs input " +
                     std::to_string(x.shape()[2]));
  }
  if (!x.axes().empty() && x.axes() != "BTCS") {
    throw ShapeError("norm layer expects BTCS axis order, got " + x.axes());
  }

  const bool train_batch_stats = mode == Mode::Train && batch_dependent();

  if (train_batch_stats) {
    const std::vector<int> axes =
        kind == NormKind::BatchNorm ? std::vector<int>{0, 1, 3} : std::vector<int>{0, 3};
    Tensor mean = reduce_mean(x, axes, true);
    Tensor var = reduce_var(x, axes, true);
    Tensor out = affine_per_channel(standardize(x, mean, var, eps), gamma, beta, channels);

    // The running estimate is always the pooled per-channel statistic so that
    // eval-mode normalization stays pointwise per channel, also for the
    // per-timestep variant.
    std::vector<double> bm, bv;
    if (kind == NormKind::BatchNorm) {
      bm = mean.values();  // keepdims [1,1,C,1] holds exactly C values
      bv = var.values();
    } else {
      pooled_channel_stats(x, &bm, &bv);
    }
    if (capture_batch_stats) {
      last_batch_mean = bm;
      last_batch_var = bv;
    }
    if (!freeze_stat_updates) update_running_stats(bm, bv);
    return out;
  }

  switch (kind) {
    case NormKind::BatchNorm:
    case NormKind::BatchNormPerTimestep:
    case NormKind::FrozenBatchNorm: {
      if (!stats_initialized) {
        throw StateError("normalization with stored statistics requires initialized running "
                         "stats (kind " +
                         to_string(kind) + ")");
      }
      Tensor rm = Tensor::from({1, 1, channels, 1}, running_mean);
      std::vector<double> denom(channels);
      for (std::int64_t c = 0; c < channels; ++c) denom[c] = std::sqrt(running_var[c] + eps);
      Tensor rs = Tensor::from({1, 1, channels, 1}, denom);
      return affine_per_channel(div(sub(x, rm), rs), gamma, beta, channels);
    }
    case NormKind::GroupNorm: {
      const std::int64_t b = x.shape()[0], t = x.shape()[1], s = x.shape()[3];
      Tensor x5 = reshape(x, {b, t, groups, channels / groups, s});
      Tensor mean = reduce_mean(x5, {3, 4}, true);
      Tensor var = reduce_var(x5, {3, 4}, true);
      Tensor y = reshape(standardize(x5, mean, var, eps), x.shape());
      return affine_per_channel(y, gamma, beta, channels);
    }
    case NormKind::LayerNorm: {
      Tensor mean = reduce_mean(x, {2, 3}, true);
      Tensor var = reduce_var(x, {2, 3}, true);
      return affine_per_channel(standardize(x, mean, var, eps), gamma, beta, channels);
    }
    case NormKind::InstanceNorm: {
      Tensor mean = reduce_mean(x, {3}, true);
      Tensor var = reduce_var(x, {3}, true);
      return affine_per_channel(standardize(x, mean, var, eps), gamma, beta, channels);
    }
  }
  throw StateError("unreachable norm kind");
}

void NormLayer::update_running_stats(const std::vector<double>& batch_mean,
                                     const std::vector<double>& batch_var) {
  if (!batch_dependent()) {
    throw StateError("running statistics update on batch-independent kind " + to_string(kind));
  }
  if (static_cast<std::int64_t>(batch_mean.size()) != channels ||
      static_cast<std::int64_t>(batch_var.size()) != channels) {
    throw ShapeError("running stats update expects per-channel vectors");
  }
  for (std::int64_t c = 0; c < channels; ++c) {
    running_mean[c] = (1.0 - momentum) * running_mean[c] + momentum * batch_mean[c];
    running_var[c] = (1.0 - momentum) * running_var[c] + momentum * batch_var[c];
  }
  stats_initialized = true;
}

void NormLayer::freeze() {
  if (kind == NormKind::FrozenBatchNorm) return;
  if (!batch_dependent()) {
    throw StateError("cannot freeze batch-independent kind " + to_string(kind));
  }
  if (!stats_initialized) {
    throw StateError("freeze requires initialized running statistics");
  }
  kind = NormKind::FrozenBatchNorm;
}

NormEquivalenceReport norm_equivalences_check(std::int64_t channels, const Tensor& x) {
  NoGradGuard ng;
  NormEquivalenceReport report;
  NormLayer gn1(NormKind::GroupNorm, channels, 1);
  NormLayer ln(NormKind::LayerNorm, channels);
  NormLayer gnc(NormKind::GroupNorm, channels, channels);
  NormLayer in(NormKind::InstanceNorm, channels);
  const auto a = gn1.forward(x).values();
  const auto b = ln.forward(x).values();
  const auto c = gnc.forward(x).values();
  const auto d = in.forward(x).values();
  for (std::size_t i = 0; i < a.size(); ++i) {
    report.max_diff_gn1_ln = std::max(report.max_diff_gn1_ln, std::fabs(a[i] - b[i]));
    report.max_diff_gnc_in = std::max(report.max_diff_gnc_in, std::fabs(c[i] - d[i]));
  }
  return report;
}

}  // namespace normlab
