#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "tagxfer/autodiff.hpp"
#include "tagxfer/errors.hpp"

namespace tagxfer {

// SGD with classical momentum:  v <- mu*v + g ;  w <- w - lr*v.
class SgdMomentum {
 public:
  SgdMomentum(double learning_rate, double momentum)
      : lr_(learning_rate), momentum_(momentum) {
    if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
    if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("momentum must lie in [0, 1)");
  }

  void register_parameter(const Parameter& p) {
    velocity_.try_emplace(&p, p.value.shape(), 0.0);
  }

  void register_parameters(std::span<Parameter* const> params) {
    for (Parameter* p : params) register_parameter(*p);
  }

  bool is_registered(const Parameter& p) const { return velocity_.count(&p) != 0; }

  // Applies one update to every trainable parameter in `params` using the
  // gradient stored on it. Frozen parameters are skipped: value and velocity
  // stay bitwise unchanged.
  void step(std::span<Parameter* const> params) {
    for (Parameter* p : params) {
      auto it = velocity_.find(p);
      if (it == velocity_.end()) {
        throw StateError("parameter '" + p->name + "' is not registered with the optimizer");
      }
      if (!p->trainable) continue;
      Array& v = it->second;
      if (v.shape() != p->value.shape() || p->grad.shape() != p->value.shape()) {
        throw ShapeError("optimizer state shape mismatch for '" + p->name + "'");
      }
      auto& vv = v.raw();
      auto& w = p->value.raw();
      const auto& g = p->grad.raw();
      for (std::size_t i = 0; i < w.size(); ++i) {
        vv[i] = momentum_ * vv[i] + g[i];
        w[i] -= lr_ * vv[i];
      }
    }
  }

  const Array& velocity(const Parameter& p) const {
    auto it = velocity_.find(&p);
    if (it == velocity_.end()) throw StateError("parameter '" + p.name + "' is not registered");
    return it->second;
  }

  double learning_rate() const { return lr_; }
  double momentum() const { return momentum_; }

 private:
  double lr_;
  double momentum_;
  std::unordered_map<const Parameter*, Array> velocity_;
};

}  // namespace tagxfer
