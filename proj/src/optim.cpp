#include "accentkit/optim.hpp"

#include "accentkit/error.hpp"

#include <cmath>

namespace accentkit {

Adam::Adam(std::size_t size, AdamOptions options) : opt_(options), m_(size, 0.0), v_(size, 0.0) {
  if (!(opt_.lr > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(opt_.beta1 >= 0.0 && opt_.beta1 < 1.0) || !(opt_.beta2 >= 0.0 && opt_.beta2 < 1.0))
    throw ConfigError("Adam betas must lie in [0,1)");
}

void Adam::step(std::span<double> params, std::span<const double> grad) {
  if (params.size() != m_.size() || grad.size() != m_.size()) throw ConfigError("Adam: size mismatch");
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = opt_.beta1 * m_[i] + (1.0 - opt_.beta1) * grad[i];
    v_[i] = opt_.beta2 * v_[i] + (1.0 - opt_.beta2) * grad[i] * grad[i];
    params[i] -= opt_.lr * (m_[i] / c1) / (std::sqrt(v_[i] / c2) + opt_.epsilon);
  }
}

}  // namespace accentkit
