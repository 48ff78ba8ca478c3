#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "gcrl/distributions.hpp"
#include "gcrl/scene.hpp"

namespace gcrl::test {

/// Central differences of a scalar function with respect to one tensor's values.
inline Matrix numeric_grad(const std::function<double()>& f, Tensor& p, double h = 1e-6) {
  Matrix& v = p.mutable_value();
  Matrix g(v.rows(), v.cols());
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    const double keep = v.data()[i];
    v.data()[i] = keep + h;
    const double up = f();
    v.data()[i] = keep - h;
    const double down = f();
    v.data()[i] = keep;
    g.data()[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// ||a - b|| / max(||a||, ||b||, floor).
inline double rel_err(const Matrix& a, const Matrix& b, double floor = 1e-10) {
  const double scale = std::max({a.norm(), b.norm(), floor});
  return (a - b).norm() / scale;
}

/// Worst relative error between autodiff and finite-difference gradients of
/// `loss` over every tensor in `params`.
inline double max_grad_error(const std::function<Tensor()>& loss, std::vector<Tensor> params,
                             double h = 1e-6) {
  for (auto& p : params) p.zero_grad();
  loss().backward();
  double worst = 0.0;
  for (auto& p : params) {
    const Matrix analytic = p.grad_or_zero();
    const Matrix numeric = numeric_grad([&] { return loss().item(); }, p, h);
    worst = std::max(worst, rel_err(analytic, numeric));
  }
  return worst;
}

inline Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.uniform(lo, hi);
  return m;
}

/// Scene whose agents move with constant velocities from given starts.
inline Scene linear_scene(const std::vector<std::array<double, 4>>& agents, int env = 0) {
  Scene s(env, static_cast<int>(agents.size()));
  for (int a = 0; a < s.num_agents; ++a) {
    const auto& [x0, y0, vx, vy] = agents[static_cast<std::size_t>(a)];
    for (int t = 0; t < s.num_steps; ++t) {
      s.x(a, t) = x0 + vx * t;
      s.y(a, t) = y0 + vy * t;
    }
  }
  return s;
}

}  // namespace gcrl::test
