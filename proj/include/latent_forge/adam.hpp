#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <vector>

namespace latent_forge {

// Adam with bias-corrected moments (beta1 0.9, beta2 0.999, eps 1e-8).
// Shared by the SAE trainer and the layer probe.
template <typename Moment = float>
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::size_t n) : m_(n, Moment{0}), v_(n, Moment{0}) {}

  // t is the 1-based step count.
  template <typename Param>
  void step(std::span<Param> params, std::span<const double> grad, double lr,
            std::uint64_t t) {
    const double c1 = 1.0 - std::pow(kBeta1, static_cast<double>(t));
    const double c2 = 1.0 - std::pow(kBeta2, static_cast<double>(t));
    for (std::size_t i = 0; i < params.size(); ++i) {
      const double g = grad[i];
      const double m = kBeta1 * m_[i] + (1.0 - kBeta1) * g;
      const double v = kBeta2 * v_[i] + (1.0 - kBeta2) * g * g;
      m_[i] = static_cast<Moment>(m);
      v_[i] = static_cast<Moment>(v);
      params[i] = static_cast<Param>(params[i] - lr * (m / c1) / (std::sqrt(v / c2) + kEps));
    }
  }

 private:
  std::vector<Moment> m_, v_;
};

}  // namespace latent_forge
