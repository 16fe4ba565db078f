#pragma once

#include "v2m/autograd.hpp"

namespace v2m::train {

struct OptimizerSpec {
  double beta1 = 0.9;
  double beta2 = 0.98;
  double eps = 1e-9;
  double base_lr = 1.0;
  int warmup_steps = 4000;
  void validate() const;
};

// Inverse-square-root decay with linear warmup, scaled by base_lr:
// base_lr * d_model^-0.5 * min(step^-0.5, step * warmup^-1.5), step >= 1.
double scheduled_lr(const OptimizerSpec& spec, int step, int d_model);

// Adam over every trainable parameter of a store; moments are kept per
// parameter name so they can be checkpointed.
class Adam {
 public:
  explicit Adam(OptimizerSpec spec) : spec_(spec) { spec_.validate(); }

  void step(nn::ParamStore& params, double lr);
  int steps() const { return t_; }

  // m/<name>, v/<name> plus a 1x1 "t" entry.
  nn::ParamStore state() const;
  void load_state(const nn::ParamStore& state);

 private:
  OptimizerSpec spec_;
  nn::ParamStore m_, v_;
  int t_ = 0;
};

}  // namespace v2m::train
