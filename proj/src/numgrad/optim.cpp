#include "gcrl/numgrad/optim.hpp"

#include <cmath>
#include <numbers>
#include <stdexcept>

namespace gcrl::ng {

void adam_update(std::vector<Matrix>& params, const std::vector<Matrix>& grads,
                 std::vector<Matrix>& m, std::vector<Matrix>& v, std::int64_t& t, double lr,
                 const AdamConfig& cfg) {
  if (!(lr > 0.0)) throw std::invalid_argument("adam: learning rate must be positive");
  if (grads.size() != params.size() || m.size() != params.size() || v.size() != params.size()) {
    throw ShapeError("adam: parameter/gradient/state count mismatch");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto r = params[i].rows(), c = params[i].cols();
    if (grads[i].rows() != r || grads[i].cols() != c || m[i].rows() != r || m[i].cols() != c ||
        v[i].rows() != r || v[i].cols() != c) {
      throw ShapeError("adam: shape mismatch for parameter " + std::to_string(i));
    }
    if (!grads[i].allFinite()) {
      throw NumericError("adam: non-finite gradient for parameter " + std::to_string(i));
    }
  }
  ++t;
  const double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(t));
  const double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * grads[i];
    v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * grads[i].cwiseProduct(grads[i]);
    auto mhat = m[i].array() / bc1;
    auto vhat = v[i].array() / bc2;
    params[i].array() -= lr * mhat / (vhat.sqrt() + cfg.epsilon);
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  for (const auto& p : params_) {
    m_.push_back(Matrix::Zero(p.rows(), p.cols()));
    v_.push_back(Matrix::Zero(p.rows(), p.cols()));
  }
}

void Adam::step(double lr) {
  std::vector<Matrix> values, grads;
  values.reserve(params_.size());
  grads.reserve(params_.size());
  for (const auto& p : params_) {
    values.push_back(p.value());
    grads.push_back(p.grad_or_zero());
  }
  adam_update(values, grads, m_, v_, t_, lr, cfg_);
  for (std::size_t i = 0; i < params_.size(); ++i) {
    params_[i].mutable_value() = std::move(values[i]);
  }
}

void Adam::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

double LrSchedule::lr_at(std::int64_t step) const {
  if (step < 0 || step > total_steps) {
    throw std::out_of_range("lr_at: step " + std::to_string(step) + " outside [0, " +
                            std::to_string(total_steps) + "]");
  }
  if (kind == ScheduleKind::kConstant) return base_lr;

  const double warm = kWarmupFraction * static_cast<double>(total_steps);
  const double s = static_cast<double>(step);
  if (s <= warm) {
    if (warm <= 0.0) return peak_lr;
    return base_lr + (peak_lr - base_lr) * s / warm;
  }
  const double final_lr = peak_lr / kFinalDivisor;
  const double progress = (s - warm) / (static_cast<double>(total_steps) - warm);
  return final_lr + (peak_lr - final_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

ScheduleKind parse_schedule_kind(const std::string& s) {
  if (s == "constant") return ScheduleKind::kConstant;
  if (s == "one-cycle" || s == "one_cycle") return ScheduleKind::kOneCycle;
  throw std::invalid_argument("unknown lr schedule '" + s + "'");
}

std::string to_string(ScheduleKind k) {
  return k == ScheduleKind::kConstant ? "constant" : "one-cycle";
}

}  // namespace gcrl::ng
