#pragma once

#include <array>
#include <string>
#include <vector>

#include "chansr/characteristics.hpp"
#include "chansr/model.hpp"
#include "chansr/ops.hpp"

namespace chansr {

struct LossWeights {
  // per regression target: PL, Rp, DS, phi, theta
  std::array<double, 5> regression = {1.0, 1.0, 1.0, 1.0, 1.0};
  double ce_weight = 1.0;
  double stde_weight = 0.1;

  double& weight(Characteristic c);
  double weight(Characteristic c) const;
};

/// Ground truth for one batch, already normalized; masks mark non-sentinel
/// pixels. Tensors are grad-disabled constants.
struct TargetBatch {
  std::array<Tensor, 5> regression;  // PL, Rp, DS, phi, theta: [N,1,H,W]
  std::array<Tensor, 5> masks;
  Tensor los_labels;  // [N,1,H,W], 0/1 on valid pixels
  Tensor los_mask;

  Tensor& target_of(Characteristic c);
  Tensor& mask_of(Characteristic c);
  const Tensor& target_of(Characteristic c) const;
  const Tensor& mask_of(Characteristic c) const;
};

/// sum_k w_k l1_k + w_ce ce_LOS + lambda sum_k stde_k.
Tensor composite_loss(const Prediction& pred, const TargetBatch& gt,
                      const LossWeights& weights);

/// Plain (non-differentiated) error statistics over valid pixels.
struct Metrics {
  double ame = 0.0;   // |mean signed error|
  double mae = 0.0;   // mean |error|
  double rmse = 0.0;  // sqrt(mean error^2)
  double stde = 0.0;  // numerically equal to rmse; kept as a separate column
};

/// Streaming accumulator so multi-frame evaluation aggregates over all valid
/// pixels rather than averaging per-frame numbers.
struct ErrorAccumulator {
  double sum_e = 0.0, sum_abs = 0.0, sum_sq = 0.0;
  int64_t count = 0;

  void add(double pred, double gt) {
    const double e = pred - gt;
    sum_e += e;
    sum_abs += std::abs(e);
    sum_sq += e * e;
    ++count;
  }
  Metrics metrics() const;
};

Metrics regression_metrics(const std::vector<float>& pred,
                           const std::vector<float>& gt,
                           const std::vector<uint8_t>& valid);

double classification_accuracy(const std::vector<uint8_t>& pred_labels,
                               const std::vector<float>& gt,
                               const std::vector<uint8_t>& valid);

struct EvalRow {
  Characteristic target;
  Metrics metrics;      // regression rows
  double accuracy = 0;  // LOS row
  bool is_classification = false;
};

struct EvalReport {
  int scale = 0;
  int sample_count = 0;
  double valid_fraction = 0.0;
  std::vector<EvalRow> rows;  // ordered PL, Rp, DS, phi, theta, LOS

  const EvalRow& row(Characteristic c) const;
  std::string to_csv() const;
};

}  // namespace chansr
