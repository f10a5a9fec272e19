#pragma once

#include <cstdint>
#include <utility>
#include <vector>

#include "normlab/norm.hpp"
#include "normlab/rng.hpp"
#include "normlab/tensor.hpp"

// Frame backbone + LSTM + task heads. The backbone is a stack of blocks
// (channel-wise linear map applied at every frame position, normalization,
// ReLU) followed by spatial mean pooling; it stands in for a CNN feature
// extractor at desk scale. One model instance carries the head for exactly
// one task.

namespace normlab {

enum class Task { Phase, Anticipation };

struct ModelConfig {
  Task task = Task::Phase;
  std::int64_t in_channels = 8;
  std::int64_t spatial = 16;
  std::int64_t feature_dim = 32;
  std::int64_t hidden = 64;
  std::int64_t num_phases = 4;
  std::int64_t num_instruments = 2;
  double horizon = 32.0;  // frames
  int blocks = 2;
  NormKind norm = NormKind::GroupNorm;
  std::int64_t groups = 4;
  double eps = 1e-5;
  double momentum = 0.1;
  double lambda_cls = 0.01;
  std::uint64_t init_seed = 1;
};

struct LstmState {
  Tensor h;  // [B, H]
  Tensor c;  // [B, H]
};

struct BackboneBlock {
  Tensor weight;  // [C_in, C_out]
  Tensor bias;    // [C_out]
  NormLayer norm;
};

struct Lstm {
  Tensor w_ih;  // [D, 4H], gate order i,f,g,o
  Tensor w_hh;  // [H, 4H]
  Tensor bias;  // [4H]
  std::int64_t hidden = 0;
};

// outputs [B,T,H] and the final state; s0 defaults to zeros when undefined
std::pair<Tensor, LstmState> lstm_forward(const Lstm& lstm, const Tensor& features,
                                          const LstmState& s0);

class SequenceModel {
 public:
  explicit SequenceModel(const ModelConfig& cfg);

  const ModelConfig& config() const { return cfg_; }

  void set_mode(Mode mode);
  Mode mode() const { return mode_; }

  // Bottom k blocks are excluded from trainable_parameters(); their norm
  // layers keep computing batch statistics in train mode.
  void freeze_bottom_blocks(int k);
  int frozen_blocks() const { return frozen_blocks_; }

  // x: [B,T,C,S] -> per-frame features [B,T,D]
  Tensor features(const Tensor& x);

  struct Output {
    Tensor phase_probs;  // [B,T,K]     (phase task)
    Tensor reg;          // [B,T,I]     (anticipation, in [0, horizon])
    Tensor cls_probs;    // [B,T,I,3]   (anticipation: present/inside/outside)
    LstmState state;
  };
  Output forward(const Tensor& x, const LstmState& s0);

  LstmState zero_state(std::int64_t batch) const;

  std::vector<Tensor> parameters();            // everything
  std::vector<Tensor> trainable_parameters();  // minus frozen blocks

  std::vector<BackboneBlock>& blocks() { return blocks_; }
  Lstm& lstm() { return lstm_; }
  std::vector<NormLayer*> norm_layers();

  // Convert every BatchNorm-family layer to FrozenBatchNorm.
  void freeze_all_norm_layers();

 private:
  ModelConfig cfg_;
  Mode mode_ = Mode::Train;
  int frozen_blocks_ = 0;
  std::vector<BackboneBlock> blocks_;
  Lstm lstm_;
  // phase head
  Tensor phase_w, phase_b;  // [H,K], [K]
  // anticipation heads, one pair per instrument
  std::vector<Tensor> reg_w, reg_b;  // [H,1], [1]
  std::vector<Tensor> cls_w, cls_b;  // [H,3], [3]
};

// ---- losses / targets ----

// probs: [...,K] with K on the last axis; labels flat, row-major over the
// leading axes. Mean over frames of -log p[label].
Tensor phase_loss(const Tensor& probs, const std::vector<int>& labels);

enum class AnticipationClass { Present = 0, Inside = 1, Outside = 2 };

struct AnticipationTarget {
  double y;  // min(t_remaining, horizon)
  AnticipationClass cls;
};

AnticipationTarget anticipation_target(double t_remaining, double horizon);

// reg: [B,T,I], cls_probs: [B,T,I,3], targets_y: same shape as reg,
// cls_labels: flat over [B,T,I]. Sum over instruments of
// SmoothL1(reg, y) + lambda * cross-entropy, averaged over frames.
Tensor anticipation_loss(const Tensor& reg, const Tensor& cls_probs, const Tensor& targets_y,
                         const std::vector<int>& cls_labels, double lambda);

}  // namespace normlab
