#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "fadapt/error.hpp"

namespace fadapt {

enum class Strategy { baseline_lq, eval_restored, finetune_restored, adapter_joint };

inline std::string to_string(Strategy s) {
  switch (s) {
    case Strategy::baseline_lq: return "baseline_lq";
    case Strategy::eval_restored: return "eval_restored";
    case Strategy::finetune_restored: return "finetune_restored";
    case Strategy::adapter_joint: return "adapter_joint";
  }
  return "?";
}

inline Strategy parse_strategy(const std::string& s) {
  if (s == "baseline_lq") return Strategy::baseline_lq;
  if (s == "eval_restored") return Strategy::eval_restored;
  if (s == "finetune_restored") return Strategy::finetune_restored;
  if (s == "adapter_joint") return Strategy::adapter_joint;
  throw ConfigError("unknown strategy '" + s + "'");
}

struct TrainConfig {
  std::size_t batch_size = 32;
  std::size_t epochs = 5;
  double lr_base = 0.02;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  std::size_t warmup_steps = 50;
  double poly_power = 0.9;
  std::uint64_t seed = 0;
  Strategy strategy = Strategy::adapter_joint;
  /// Initialise the adapter's classifier head from the pretrained head instead of randomly.
  bool head_from_pretrained = true;

  void validate() const {
    if (batch_size == 0) throw ConfigError("train: batch_size must be positive");
    if (epochs == 0) throw ConfigError("train: epochs must be positive");
    if (!(lr_base > 0)) throw ConfigError("train: lr_base must be positive");
    if (!(momentum >= 0 && momentum < 1)) throw ConfigError("train: momentum must be in [0, 1)");
    if (weight_decay < 0) throw ConfigError("train: weight_decay must be nonnegative");
    if (poly_power <= 0) throw ConfigError("train: poly_power must be positive");
  }
};

/// Steps per epoch for n samples (last partial batch included).
inline std::size_t steps_per_epoch(std::size_t n, std::size_t batch) { return (n + batch - 1) / batch; }

/// Linear warmup to lr_base over `warmup` steps, then polynomial decay to 0 at `total`.
inline double lr_at(std::size_t step, double lr_base, std::size_t warmup, std::size_t total, double power) {
  if (warmup >= total) throw ConfigError("lr schedule: warmup_steps must be < total steps");
  if (step > total) throw ContractError("lr schedule: step " + std::to_string(step) + " beyond total " + std::to_string(total));
  if (step < warmup) return lr_base * static_cast<double>(step + 1) / static_cast<double>(warmup);
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return lr_base * std::pow(1.0 - progress, power);
}

inline double lr_at(std::size_t step, const TrainConfig& cfg, std::size_t total_steps) {
  return lr_at(step, cfg.lr_base, cfg.warmup_steps, total_steps, cfg.poly_power);
}

}  // namespace fadapt
