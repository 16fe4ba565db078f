#include "v2m/optimizer.hpp"

#include <algorithm>
#include <cmath>

#include "v2m/error.hpp"

namespace v2m::train {

void OptimizerSpec::validate() const {
  if (!(beta1 > 0.0 && beta1 < 1.0) || !(beta2 > 0.0 && beta2 < 1.0)) throw RangeError("Adam betas must be in (0,1)");
  if (!(base_lr > 0.0)) throw RangeError("base learning rate must be > 0");
  if (warmup_steps < 1) throw RangeError("warmup must be >= 1 step");
}

double scheduled_lr(const OptimizerSpec& spec, int step, int d_model) {
  const double s = std::max(1, step);
  return spec.base_lr / std::sqrt(static_cast<double>(d_model)) *
         std::min(1.0 / std::sqrt(s), s * std::pow(static_cast<double>(spec.warmup_steps), -1.5));
}

void Adam::step(nn::ParamStore& params, double lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(spec_.beta1, t_);
  const double c2 = 1.0 - std::pow(spec_.beta2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (!p.trainable) continue;
    if (!m_.contains(p.name)) {
      m_.add(p.name, nn::Matrix(p.value.rows(), p.value.cols()));
      v_.add(p.name, nn::Matrix(p.value.rows(), p.value.cols()));
    }
    auto& m = m_.get(p.name).value;
    auto& v = v_.get(p.name).value;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad.data()[k];
      m.data()[k] = spec_.beta1 * m.data()[k] + (1.0 - spec_.beta1) * g;
      v.data()[k] = spec_.beta2 * v.data()[k] + (1.0 - spec_.beta2) * g * g;
      p.value.data()[k] -= lr * (m.data()[k] / c1) / (std::sqrt(v.data()[k] / c2) + spec_.eps);
    }
  }
}

nn::ParamStore Adam::state() const {
  nn::ParamStore s;
  s.add("t", nn::Matrix(1, 1, static_cast<double>(t_)), false);
  for (std::size_t i = 0; i < m_.size(); ++i) {
    s.add("m/" + m_[i].name, m_[i].value, false);
    s.add("v/" + v_[i].name, v_[i].value, false);
  }
  return s;
}

void Adam::load_state(const nn::ParamStore& state) {
  m_ = nn::ParamStore();
  v_ = nn::ParamStore();
  t_ = 0;
  for (std::size_t i = 0; i < state.size(); ++i) {
    const auto& e = state[i];
    if (e.name == "t")
      t_ = static_cast<int>(e.value(0, 0));
    else if (e.name.rfind("m/", 0) == 0)
      m_.add(e.name.substr(2), e.value);
    else if (e.name.rfind("v/", 0) == 0)
      v_.add(e.name.substr(2), e.value);
    else
      throw SchemaError("unknown optimizer state entry '" + e.name + "'");
  }
}

}  // namespace v2m::train
