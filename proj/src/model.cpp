#include "normlab/model.hpp"

#include <cmath>
#include <string>

namespace normlab {

namespace {

Tensor uniform_param(const Shape& shape, double bound, Rng& rng) {
  std::int64_t n = 1;
  for (auto e : shape) n *= e;
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(-bound, bound);
  return Tensor::param(shape, std::move(v));
}

}  // namespace

std::pair<Tensor, LstmState> lstm_forward(const Lstm& lstm, const Tensor& features,
                                          const LstmState& s0) {
  if (features.rank() != 3) throw ShapeError("lstm expects [B,T,D] features");
  const std::int64_t b = features.shape()[0];
  const std::int64_t t = features.shape()[1];
  const std::int64_t h = lstm.hidden;
  Tensor hs = s0.h.defined() ? s0.h : Tensor::zeros({b, h});
  Tensor cs = s0.c.defined() ? s0.c : Tensor::zeros({b, h});
  if (hs.shape() != Shape{b, h} || cs.shape() != Shape{b, h}) {
    throw ShapeError("lstm state width mismatch");
  }

  std::vector<Tensor> outputs;
  outputs.reserve(t);
  for (std::int64_t step = 0; step < t; ++step) {
    Tensor xt = reshape(slice(features, 1, step, 1), {b, features.shape()[2]});
    Tensor z = add(add(matmul(xt, lstm.w_ih), matmul(hs, lstm.w_hh)), lstm.bias);
    Tensor gi = sigmoid(slice(z, 1, 0, h));
    Tensor gf = sigmoid(slice(z, 1, h, h));
    Tensor gg = tanh(slice(z, 1, 2 * h, h));
    Tensor go = sigmoid(slice(z, 1, 3 * h, h));
    cs = add(mul(gf, cs), mul(gi, gg));
    hs = mul(go, tanh(cs));
    outputs.push_back(reshape(hs, {b, 1, h}));
  }
  return {concat(outputs, 1), LstmState{hs, cs}};
}

SequenceModel::SequenceModel(const ModelConfig& cfg) : cfg_(cfg) {
  if (cfg.blocks < 1) throw ArgumentError("model needs at least one backbone block");
  Rng rng(derive_seed(cfg.init_seed, 0xAB1E5));

  std::int64_t c_in = cfg.in_channels;
  for (int i = 0; i < cfg.blocks; ++i) {
    const std::int64_t c_out = cfg.feature_dim;
    const double bound = 1.0 / std::sqrt(static_cast<double>(c_in));
    blocks_.push_back(BackboneBlock{
        uniform_param({c_in, c_out}, bound, rng),
        Tensor::param({c_out}, std::vector<double>(c_out, 0.0)),
        NormLayer(cfg.norm, c_out, cfg.groups, cfg.eps, cfg.momentum),
    });
    c_in = c_out;
  }

  lstm_.hidden = cfg.hidden;
  const double lb = 1.0 / std::sqrt(static_cast<double>(cfg.hidden));
  lstm_.w_ih = uniform_param({cfg.feature_dim, 4 * cfg.hidden}, lb, rng);
  lstm_.w_hh = uniform_param({cfg.hidden, 4 * cfg.hidden}, lb, rng);
  lstm_.bias = Tensor::param({4 * cfg.hidden}, std::vector<double>(4 * cfg.hidden, 0.0));

  if (cfg.task == Task::Phase) {
    phase_w = uniform_param({cfg.hidden, cfg.num_phases}, lb, rng);
    phase_b = Tensor::param({cfg.num_phases}, std::vector<double>(cfg.num_phases, 0.0));
  } else {
    for (std::int64_t i = 0; i < cfg.num_instruments; ++i) {
      reg_w.push_back(uniform_param({cfg.hidden, 1}, lb, rng));
      reg_b.push_back(Tensor::param({1}, {0.0}));
      cls_w.push_back(uniform_param({cfg.hidden, 3}, lb, rng));
      cls_b.push_back(Tensor::param({3}, std::vector<double>(3, 0.0)));
    }
  }
}

void SequenceModel::set_mode(Mode mode) {
  mode_ = mode;
  for (auto& block : blocks_) block.norm.mode = mode;
}

void SequenceModel::freeze_bottom_blocks(int k) {
  if (k < 0 || k > static_cast<int>(blocks_.size())) {
    throw ArgumentError("freeze depth " + std::to_string(k) + " out of range [0, " +
                        std::to_string(blocks_.size()) + "]");
  }
  frozen_blocks_ = k;
}

Tensor SequenceModel::features(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("backbone expects [B,T,C,S]");
  if (x.shape()[2] != cfg_.in_channels) {
    throw ShapeError("backbone channels " + std::to_string(cfg_.in_channels) + " vs input " +
                     std::to_string(x.shape()[2]));
  }
  Tensor cur = x;
  for (auto& block : blocks_) {
    // linear over the channel axis, applied at every (b,t,s) position
    Tensor tr = permute(cur, {0, 1, 3, 2});                  // [B,T,S,C]
    Tensor lin = add(matmul(tr, block.weight), block.bias);  // [B,T,S,C']
    cur = permute(lin, {0, 1, 3, 2});                        // [B,T,C',S]
    cur = relu(block.norm.forward(cur));
  }
  return reduce_mean(cur, {3}, false);  // spatial pool -> [B,T,D]
}

LstmState SequenceModel::zero_state(std::int64_t batch) const {
  return {Tensor::zeros({batch, cfg_.hidden}), Tensor::zeros({batch, cfg_.hidden})};
}

SequenceModel::Output SequenceModel::forward(const Tensor& x, const LstmState& s0) {
  Output out;
  Tensor feats = features(x);
  auto [hidden, state] = lstm_forward(lstm_, feats, s0);
  out.state = state;
  const std::int64_t b = hidden.shape()[0], t = hidden.shape()[1];

  if (cfg_.task == Task::Phase) {
    out.phase_probs = softmax(add(matmul(hidden, phase_w), phase_b), 2);
    return out;
  }

  std::vector<Tensor> regs, clss;
  for (std::int64_t i = 0; i < cfg_.num_instruments; ++i) {
    Tensor r = sigmoid(add(matmul(hidden, reg_w[i]), reg_b[i]));  // [B,T,1]
    regs.push_back(mul(r, Tensor::scalar(cfg_.horizon)));
    Tensor cp = softmax(add(matmul(hidden, cls_w[i]), cls_b[i]), 2);  // [B,T,3]
    clss.push_back(reshape(cp, {b, t, 1, 3}));
  }
  out.reg = concat(regs, 2);        // [B,T,I]
  out.cls_probs = concat(clss, 2);  // [B,T,I,3]
  return out;
}

std::vector<Tensor> SequenceModel::parameters() {
  std::vector<Tensor> params;
  for (auto& block : blocks_) {
    params.push_back(block.weight);
    params.push_back(block.bias);
    params.push_back(block.norm.gamma);
    params.push_back(block.norm.beta);
  }
  params.push_back(lstm_.w_ih);
  params.push_back(lstm_.w_hh);
  params.push_back(lstm_.bias);
  if (cfg_.task == Task::Phase) {
    params.push_back(phase_w);
    params.push_back(phase_b);
  } else {
    for (std::int64_t i = 0; i < cfg_.num_instruments; ++i) {
      params.push_back(reg_w[i]);
      params.push_back(reg_b[i]);
      params.push_back(cls_w[i]);
      params.push_back(cls_b[i]);
    }
  }
  return params;
}

std::vector<Tensor> SequenceModel::trainable_parameters() {
  std::vector<Tensor> params;
  for (int i = frozen_blocks_; i < static_cast<int>(blocks_.size()); ++i) {
    params.push_back(blocks_[i].weight);
    params.push_back(blocks_[i].bias);
    params.push_back(blocks_[i].norm.gamma);
    params.push_back(blocks_[i].norm.beta);
  }
  params.push_back(lstm_.w_ih);
  params.push_back(lstm_.w_hh);
  params.push_back(lstm_.bias);
  if (cfg_.task == Task::Phase) {
    params.push_back(phase_w);
    params.push_back(phase_b);
  } else {
    for (std::int64_t i = 0; i < cfg_.num_instruments; ++i) {
      params.push_back(reg_w[i]);
      params.push_back(reg_b[i]);
      params.push_back(cls_w[i]);
      params.push_back(cls_b[i]);
    }
  }
  return params;
}

std::vector<NormLayer*> SequenceModel::norm_layers() {
  std::vector<NormLayer*> layers;
  for (auto& block : blocks_) layers.push_back(&block.norm);
  return layers;
}

void SequenceModel::freeze_all_norm_layers() {
  for (auto* layer : norm_layers()) layer->freeze();
}

// ---- losses ----

Tensor phase_loss(const Tensor& probs, const std::vector<int>& labels) {
  const int rank = probs.rank();
  if (rank < 2) throw ShapeError("phase_loss expects class probabilities on the last axis");
  const std::int64_t k = probs.shape()[rank - 1];
  const std::int64_t frames = probs.size() / k;
  if (static_cast<std::int64_t>(labels.size()) != frames) {
    throw ShapeError("phase_loss: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(frames) + " frames");
  }
  std::vector<double> onehot(frames * k, 0.0);
  for (std::int64_t f = 0; f < frames; ++f) {
    const int label = labels[f];
    if (label < 0 || label >= k) {
      throw ArgumentError("phase label " + std::to_string(label) + " outside [0, " +
                          std::to_string(k) + ")");
    }
    onehot[f * k + label] = 1.0;
  }
  Tensor oh = Tensor::from(probs.shape(), std::move(onehot));
  Tensor picked = reduce_sum(mul(oh, log(probs)), {rank - 1}, false);
  std::vector<int> frame_axes(rank - 1);
  for (int i = 0; i < rank - 1; ++i) frame_axes[i] = i;
  return neg(reduce_mean(picked, frame_axes, false));
}

AnticipationTarget anticipation_target(double t_remaining, double horizon) {
  if (t_remaining < 0) throw ArgumentError("negative remaining time");
  if (horizon <= 0) throw ArgumentError("horizon must be positive");
  const double y = std::min(t_remaining, horizon);
  AnticipationClass cls = AnticipationClass::Inside;
  if (y == 0.0) {
    cls = AnticipationClass::Present;
  } else if (y == horizon) {
    cls = AnticipationClass::Outside;
  }
  return {y, cls};
}

Tensor anticipation_loss(const Tensor& reg, const Tensor& cls_probs, const Tensor& targets_y,
                         const std::vector<int>& cls_labels, double lambda) {
  if (lambda < 0) throw ArgumentError("lambda must be non-negative");
  if (reg.shape() != targets_y.shape()) throw ShapeError("anticipation_loss: target shape");
  if (cls_probs.rank() != reg.rank() + 1 || cls_probs.shape().back() != 3) {
    throw ShapeError("anticipation_loss: cls_probs must be [...,3]");
  }
  const std::int64_t i_count = reg.shape().back();
  const std::int64_t frames = reg.size() / i_count;
  if (static_cast<std::int64_t>(cls_labels.size()) != frames * i_count) {
    throw ShapeError("anticipation_loss: label count mismatch");
  }

  // regression: SmoothL1 summed over instruments, averaged over frames
  std::vector<int> all_axes(reg.rank());
  for (int i = 0; i < reg.rank(); ++i) all_axes[i] = i;
  Tensor reg_term =
      mul(reduce_mean(huber(sub(reg, targets_y)), all_axes, false),
          Tensor::scalar(static_cast<double>(i_count)));

  // classification: cross-entropy against the 3-way head
  std::vector<double> onehot(frames * i_count * 3, 0.0);
  for (std::int64_t f = 0; f < frames * i_count; ++f) {
    const int label = cls_labels[f];
    if (label < 0 || label >= 3) throw ArgumentError("anticipation class label out of range");
    onehot[f * 3 + label] = 1.0;
  }
  Tensor oh = Tensor::from(cls_probs.shape(), std::move(onehot));
  Tensor picked = reduce_sum(mul(oh, log(cls_probs)), {cls_probs.rank() - 1}, false);
  std::vector<int> frame_axes(picked.rank());
  for (int i = 0; i < picked.rank(); ++i) frame_axes[i] = i;
  Tensor ce = neg(mul(reduce_mean(picked, frame_axes, false),
                      Tensor::scalar(static_cast<double>(i_count))));

  return add(reg_term, mul(Tensor::scalar(lambda), ce));
}

}  // namespace normlab
