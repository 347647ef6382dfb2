#pragma once

#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "eit/rng.hpp"
#include "eit/tensor.hpp"

// Finite-difference gradient checking. The analytic pass runs the callable
// under a fresh tape; the numeric pass perturbs one element at a time with no
// tape active. Relative error uses max(|analytic|, |numeric|, floor) as the
// denominator so near-zero gradients compare on absolute terms.
//
// order selects the stencil: 2 is the classic central difference, 4 the
// five-point formula. Deeply composed graphs can carry third derivatives
// large enough that the O(eps^2) truncation term of the central difference
// swamps a 1e-4 tolerance, while shrinking eps runs into the rounding floor
// |L|*eps_mach/(2 eps); the fourth-order stencil removes the truncation term
// without moving the floor much (coefficient sum 18/12 vs 1).
//
// denom_floor keeps near-zero gradients on absolute terms. A deep graph
// cannot certify relative accuracy on a ~1e-10 gradient: the best any
// difference formula resolves is the rounding floor above, so composed
// checks pass a wider floor while per-op checks keep the strict default.

namespace eit {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::string worst;  // "input#i[j]" of the worst element
  int64_t checked = 0;
  bool pass(double tol) const { return max_rel_err < tol; }
};

template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>(std::vector<Tensor<T>>&)>& f,
                           std::vector<Tensor<T>> inputs, double eps = 1e-5, int order = 2,
                           double denom_floor = 1e-8) {
  if (order != 2 && order != 4) throw ConfigError("grad_check: order must be 2 or 4");
  // analytic gradients
  std::vector<std::vector<T>> analytic(inputs.size());
  {
    Tape<T> tape;
    for (auto& t : inputs) t.zero_grad();
    auto loss = f(inputs);
    tape.backward(loss);
    for (size_t i = 0; i < inputs.size(); ++i)
      if (inputs[i].requires_grad())
        analytic[i].assign(inputs[i].grad(), inputs[i].grad() + inputs[i].numel());
  }
  // numeric gradients, no tape
  GradCheckReport rep;
  for (size_t i = 0; i < inputs.size(); ++i) {
    if (!inputs[i].requires_grad()) continue;
    T* p = inputs[i].data();
    for (int64_t j = 0; j < inputs[i].numel(); ++j) {
      const T keep = p[j];
      const auto at = [&](double d) {
        p[j] = keep + static_cast<T>(d);
        return static_cast<double>(f(inputs).item());
      };
      double num;
      if (order == 2) {
        num = (at(eps) - at(-eps)) / (2.0 * eps);
      } else {
        num = (at(-2 * eps) - 8.0 * at(-eps) + 8.0 * at(eps) - at(2 * eps)) / (12.0 * eps);
      }
      p[j] = keep;
      const double ana = static_cast<double>(analytic[i][static_cast<size_t>(j)]);
      const double denom = std::max({std::abs(ana), std::abs(num), denom_floor});
      const double rel = std::abs(ana - num) / denom;
      ++rep.checked;
      if (rel > rep.max_rel_err) {
        rep.max_rel_err = rel;
        std::ostringstream os;
        os << "input#" << i << "[" << j << "] analytic=" << ana << " numeric=" << num;
        rep.worst = os.str();
      }
    }
  }
  return rep;
}

// Fills a tensor with values drawn away from relu/maxpool kinks so central
// differences stay on one side of every breakpoint.
template <typename T>
void fill_smooth(Tensor<T>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (int64_t i = 0; i < t.numel(); ++i) {
    double v = rng.uniform(lo, hi);
    if (std::abs(v) < 1e-3) v = v < 0 ? v - 1e-3 : v + 1e-3;
    t.data()[i] = static_cast<T>(v);
  }
}

}  // namespace eit
