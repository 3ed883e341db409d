#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "chansr/baseline.hpp"
#include "chansr/dataset.hpp"
#include "chansr/loss.hpp"
#include "chansr/model.hpp"

namespace chansr {

struct TrainConfig {
  int epochs = 30;
  int batch = 16;
  int patch = 64;  // HR pixels
  double lr = 1e-3;
  double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  int lr_halve_every = 100;  // epochs
  uint64_t seed = 7;
  bool deterministic = true;
  int scale = 2;
  bool augment = true;
  int steps_per_epoch = 0;  // 0 = ceil(effective train size / batch)
  int val_frames = 8;       // full-frame val samples per epoch (0 = all)
  ModelConfig model;
  LossWeights weights;

  std::string to_json() const;
  static TrainConfig from_json(const std::string& json);
};

/// Sets the four cumulative presets: stl, res (+back-projection), da, att.
void apply_ablation_preset(TrainConfig& config, const std::string& preset);

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  std::array<double, 5> val_mae = {};  // PL, Rp, DS, phi, theta (native units)
  double val_los_accuracy = 0.0;
  double lr = 0.0;
  double seconds = 0.0;  // 0 in deterministic mode
};

struct TrainHistory {
  std::vector<EpochStats> epochs;
  std::string to_csv() const;
};

struct TrainResult {
  Model best;  // lowest val PL MAE
  Model last;
  TrainHistory history;
};

class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(int64_t step, const std::string& what)
      : std::runtime_error(what), step_(step) {}
  int64_t step() const { return step_; }

 private:
  int64_t step_;
};

/// Byte-for-byte copy of a model's parameters into a fresh graph.
Model clone_model(const Model& model);

/// Patch-based training of the composite loss. Deterministic per
/// (seed, deterministic flag). Throws DivergenceError on non-finite loss.
TrainResult train(const TrainConfig& config, const Dataset& dataset);

/// Freezes everything outside head.<target>.* and optimizes that head on its
/// single-target loss. Frozen parameters are never touched.
Model finetune_heads(const Model& model, const Dataset& dataset,
                     Characteristic target, const TrainConfig& config);

/// Full-frame inference over a split; metrics in native units.
EvalReport evaluate(const Model& model, const Dataset& dataset, Split split,
                    int scale);

/// Downsample-then-interpolate reference (LOS always nearest).
EvalReport evaluate_baseline(const Dataset& dataset, Split split, int scale,
                             InterpMethod method);

struct AblationRow {
  std::string name;
  std::vector<int> scales;
  std::vector<double> mae, rmse;
  std::vector<double> mae_impr_vs_stl, rmse_impr_vs_stl;    // percent
  std::vector<double> mae_impr_vs_prev, rmse_impr_vs_prev;  // percent
};

/// Trains STL, +RES, +DA, +ATT on a shared seed and reports PL MAE/RMSE per
/// scale with improvements relative to STL and to the previous row.
std::vector<AblationRow> run_ablation(const TrainConfig& base,
                                      const Dataset& dataset,
                                      const std::vector<int>& scales);

std::string format_ablation_table(const std::vector<AblationRow>& rows);

/// Full-frame LR input tensor [1,7,g/s,g/s] in model units.
Tensor build_lr_input(const SceneSample& sample, int scale);

}  // namespace chansr
