#pragma once

#include <cmath>
#include <vector>

#include "eit/nn.hpp"

namespace eit {

// Adam with bias correction. Moment buffers are exposed through moments() so
// checkpoints can carry the full optimizer state.
template <typename T>
class Adam {
 public:
  explicit Adam(const NamedParams<T>& ps, double lr = 3e-4, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (const auto& [name, t] : ps) {
      params_.push_back(t);
      names_.push_back(name);
      m_.emplace_back(static_cast<size_t>(t.numel()), T(0));
      v_.emplace_back(static_cast<size_t>(t.numel()), T(0));
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

  void step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    for (size_t i = 0; i < params_.size(); ++i) {
      auto& p = params_[i];
      if (!p.has_grad()) continue;
      const T* g = p.grad();
      T* w = p.data();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (int64_t j = 0; j < p.numel(); ++j) {
        m[j] = static_cast<T>(b1_) * m[j] + static_cast<T>(1.0 - b1_) * g[j];
        v[j] = static_cast<T>(b2_) * v[j] + static_cast<T>(1.0 - b2_) * g[j] * g[j];
        const double mh = static_cast<double>(m[j]) / bc1;
        const double vh = static_cast<double>(v[j]) / bc2;
        w[j] -= static_cast<T>(lr_ * mh / (std::sqrt(vh) + eps_));
      }
    }
  }

  int64_t steps() const { return t_; }
  void set_steps(int64_t t) { t_ = t; }
  size_t size() const { return params_.size(); }
  const std::string& name(size_t i) const { return names_[i]; }
  std::vector<T>& moment1(size_t i) { return m_[i]; }
  std::vector<T>& moment2(size_t i) { return v_[i]; }

 private:
  double lr_, b1_, b2_, eps_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> params_;
  std::vector<std::string> names_;
  std::vector<std::vector<T>> m_, v_;
};

}  // namespace eit
