#pragma once

#include <string>
#include <vector>

#include "normlab/tensor.hpp"

// Normalization layers over feature maps laid out as [B, T, C, S]:
// sequences-in-batch, time, channel, flattened spatial. The batch-dependent
// kinds (BatchNorm and its per-timestep variant) standardize with statistics
// pooled across the batch in train mode and with running statistics in eval
// mode; the batch-independent kinds (GroupNorm/LayerNorm/InstanceNorm and
// FrozenBatchNorm) treat every sample frame on its own in both modes.

namespace normlab {

enum class Mode { Train, Eval };

enum class NormKind {
  BatchNorm,             // stats over {B,T,S} per channel
  BatchNormPerTimestep,  // stats over {B,S} per (channel, timestep)
  FrozenBatchNorm,       // stored stats, pointwise in both modes
  GroupNorm,             // stats over (group channels, S) per frame
  LayerNorm,             // stats over {C,S} per frame
  InstanceNorm,          // stats over {S} per (frame, channel)
};

std::string to_string(NormKind kind);
NormKind norm_kind_from_string(const std::string& name);

struct NormLayer {
  NormKind kind;
  std::int64_t channels;
  std::int64_t groups;  // GroupNorm only; must divide channels
  double eps;
  double momentum;
  Mode mode = Mode::Train;

  Tensor gamma;  // [C], init 1
  Tensor beta;   // [C], init 0
  std::vector<double> running_mean;  // [C]
  std::vector<double> running_var;   // [C], >= 0
  bool stats_initialized = false;

  // Probe hooks: freeze_stat_updates lets a train-mode pass run without
  // touching the running statistics; capture_batch_stats records the pooled
  // per-channel batch statistics of the last train-mode forward.
  bool freeze_stat_updates = false;
  bool capture_batch_stats = false;
  std::vector<double> last_batch_mean, last_batch_var;

  NormLayer(NormKind kind, std::int64_t channels, std::int64_t groups = 4, double eps = 1e-5,
            double momentum = 0.1);

  bool batch_dependent() const {
    return kind == NormKind::BatchNorm || kind == NormKind::BatchNormPerTimestep;
  }

  // x: [B,T,C,S] -> same shape
  Tensor forward(const Tensor& x);

  // r <- (1-m) r + m b. Only meaningful for the batch-dependent kinds.
  void update_running_stats(const std::vector<double>& batch_mean,
                            const std::vector<double>& batch_var);

  // Convert a BatchNorm kind into FrozenBatchNorm; requires initialized
  // running statistics. gamma/beta stay trainable.
  void freeze();
};

struct NormEquivalenceReport {
  double max_diff_gn1_ln = 0.0;  // GroupNorm(g=1) vs LayerNorm
  double max_diff_gnc_in = 0.0;  // GroupNorm(g=C) vs InstanceNorm
};

// Runs GN(1) vs LN and GN(C) vs IN on the same input with identity affine
// parameters and reports the max absolute output differences.
NormEquivalenceReport norm_equivalences_check(std::int64_t channels, const Tensor& x);

}  // namespace normlab
