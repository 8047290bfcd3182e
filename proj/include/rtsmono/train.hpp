#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "rtsmono/dataset.hpp"
#include "rtsmono/depth_net.hpp"
#include "rtsmono/losses.hpp"
#include "rtsmono/pose_net.hpp"

namespace rtsmono {

struct TrainConfig {
  Variant variant = Variant::Desk;
  int width = 320;
  int height = 96;
  double lr0 = 1e-4;
  std::int64_t total_steps = 2000;
  int batch_size = 2;
  std::uint64_t seed = 0;
  std::int64_t checkpoint_every = 500;
  std::int64_t log_every = 50;
  int prefetch = 2;
  LossWeights weights;
  MultiScaleConfig scales;
  AugmentOptions augment;

  void validate() const;
  ModelConfig model_config() const { return ModelConfig::preset(variant, width, height); }
  PoseNetConfig pose_config() const;

  /// Applies one `key = value` assignment. Unknown keys and malformed values throw.
  void set(const std::string& key, const std::string& value);
  /// Flat `key = value` file with `#` comments.
  static TrainConfig read(const std::filesystem::path& path);
  std::string to_text() const;
  static TrainConfig from_text(const std::string& text);
};

/// lr_min + (lr0 - lr_min) * (1 + cos(pi * step / total)) / 2 with lr_min = lr0 / 100.
double cosine_lr(std::int64_t step, const TrainConfig& cfg);

/// Adam with bias correction; one moment pair per registered parameter.
class Adam {
 public:
  static constexpr double kBeta1 = 0.9;
  static constexpr double kBeta2 = 0.999;
  static constexpr double kEps = 1e-8;

  explicit Adam(std::vector<Var<float>> params);
  void step(double lr);
  std::int64_t steps() const { return t_; }
  void set_steps(std::int64_t t) { t_ = t; }
  std::vector<Tensor<float>>& first_moments() { return m_; }
  std::vector<Tensor<float>>& second_moments() { return v_; }

 private:
  std::vector<Var<float>> params_;
  std::vector<Tensor<float>> m_, v_;
  std::int64_t t_ = 0;
};

struct StepStats {
  std::int64_t step = 0;
  double lr = 0;
  double lp = 0, ls = 0, ld = 0, total = 0;
  double grad_norm = 0;
};

/// Raised when a step is aborted; the model and optimizer are left untouched.
class NonFiniteError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

template <typename T>
struct LossTerms {
  Var<T> lp, ls, ld, total;
};

/// Full objective for one batch: three depth scales, two poses, both reconstructions,
/// photometric, smoothness (M scale) and cross-scale terms.
template <typename T>
LossTerms<T> compute_loss_terms(const DepthNet<T>& depth, const PoseNet<T>& pose, const Var<T>& target,
                                const Var<T>& prev, const Var<T>& next, const Intrinsics& K, const LossWeights& w,
                                const MultiScaleConfig& scales);

/// Depth and pose networks with their optimizer.
class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg);

  const TrainConfig& config() const { return cfg_; }
  DepthNet<float>& depth() { return *depth_; }
  PoseNet<float>& pose() { return *pose_; }
  const DepthNet<float>& depth() const { return *depth_; }
  const PoseNet<float>& pose() const { return *pose_; }
  Adam& optimizer() { return *adam_; }
  std::int64_t step() const { return step_; }

  /// All trainable parameters: depth first, then pose.
  std::vector<NamedParam<float>> named_parameters() const;

  /// Loss terms for a batch with the graph attached (no update).
  LossTerms<float> compute_losses(const Batch& batch) const;

  /// One optimisation step at the current step index; lr_override replaces the schedule.
  StepStats train_step(const Batch& batch, std::optional<double> lr_override = std::nullopt);

  void save(const std::filesystem::path& path) const;
  static std::unique_ptr<Trainer> load(const std::filesystem::path& path);

 private:
  TrainConfig cfg_;
  std::unique_ptr<DepthNet<float>> depth_;
  std::unique_ptr<PoseNet<float>> pose_;
  std::unique_ptr<Adam> adam_;
  std::int64_t step_ = 0;
};

/// Batch for a step: stateless sampling from (seed, step).
Batch batch_for_step(const Dataset& data, const TrainConfig& cfg, std::int64_t step);

struct TrainRun {
  std::filesystem::path data;
  std::filesystem::path out;
  std::filesystem::path resume;  // empty for a fresh run
  std::filesystem::path split;   // empty: every frame under data
  std::function<void(const StepStats&)> on_step;
};

/// Trains to cfg.total_steps, writing out/train_log.csv, periodic out/ckpt_<step>.bin and out/last.bin.
std::vector<StepStats> run_training(const TrainConfig& cfg, const TrainRun& run);

}  // namespace rtsmono
