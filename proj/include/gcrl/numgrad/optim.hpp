#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gcrl/numgrad/tensor.hpp"

namespace gcrl::ng {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// Adam with bias correction. Owns first/second moments for a fixed list of
/// parameters; a parameter without an accumulated gradient is stepped with g = 0.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, AdamConfig cfg = {});

  void step(double lr);
  void zero_grad();

  std::int64_t t() const { return t_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<Matrix>& first_moment() const { return m_; }
  const std::vector<Matrix>& second_moment() const { return v_; }

 private:
  std::vector<Tensor> params_;
  AdamConfig cfg_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  std::int64_t t_ = 0;
};

/// Single Adam update on raw buffers. `grads` must match `params` one to one.
void adam_update(std::vector<Matrix>& params, const std::vector<Matrix>& grads,
                 std::vector<Matrix>& m, std::vector<Matrix>& v, std::int64_t& t, double lr,
                 const AdamConfig& cfg = {});

enum class ScheduleKind { kConstant, kOneCycle };

/// Constant or one-cycle learning rate. One-cycle rises linearly from
/// base_lr to peak_lr over the first 30% of steps, then cosine-anneals to
/// peak_lr / 25 at total_steps.
struct LrSchedule {
  ScheduleKind kind = ScheduleKind::kConstant;
  double base_lr = 5e-3;
  double peak_lr = 5e-3;
  std::int64_t total_steps = 1;

  static constexpr double kWarmupFraction = 0.3;
  static constexpr double kFinalDivisor = 25.0;

  double lr_at(std::int64_t step) const;
};

ScheduleKind parse_schedule_kind(const std::string& s);
std::string to_string(ScheduleKind k);

}  // namespace gcrl::ng
