#include "chansr/loss.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace chansr {

namespace {
int regression_index(Characteristic c) {
  switch (c) {
    case Characteristic::PL: return 0;
    case Characteristic::RP: return 1;
    case Characteristic::DS: return 2;
    case Characteristic::PHI: return 3;
    case Characteristic::THETA: return 4;
    default:
      throw std::invalid_argument("LOS is not a regression target");
  }
}
}  // namespace

double& LossWeights::weight(Characteristic c) {
  return regression[regression_index(c)];
}
double LossWeights::weight(Characteristic c) const {
  return regression[regression_index(c)];
}

Tensor& TargetBatch::target_of(Characteristic c) {
  return regression[regression_index(c)];
}
Tensor& TargetBatch::mask_of(Characteristic c) {
  return masks[regression_index(c)];
}
const Tensor& TargetBatch::target_of(Characteristic c) const {
  return regression[regression_index(c)];
}
const Tensor& TargetBatch::mask_of(Characteristic c) const {
  return masks[regression_index(c)];
}

Tensor composite_loss(const Prediction& pred, const TargetBatch& gt,
                      const LossWeights& weights) {
  Tensor total = Tensor::scalar(0.0);
  for (Characteristic c : kTargets) {
    if (c == Characteristic::LOS) continue;
    const Tensor& p = pred.regression(c);
    const Tensor& t = gt.target_of(c);
    const Tensor& m = gt.mask_of(c);
    const double w = weights.weight(c);
    if (w != 0.0)
      total = ops::add(total, ops::mul_scalar(ops::masked_l1(p, t, m), w));
    if (weights.stde_weight != 0.0)
      total = ops::add(
          total, ops::mul_scalar(ops::masked_stde(p, t, m), weights.stde_weight));
  }
  if (weights.ce_weight != 0.0)
    total = ops::add(total,
                     ops::mul_scalar(ops::masked_ce(pred.los_logits, gt.los_labels,
                                                    gt.los_mask),
                                     weights.ce_weight));
  return total;
}

Metrics ErrorAccumulator::metrics() const {
  if (count == 0) throw std::invalid_argument("metrics: no valid pixels");
  Metrics m;
  m.ame = std::abs(sum_e / count);
  m.mae = sum_abs / count;
  m.rmse = std::sqrt(sum_sq / count);
  m.stde = m.rmse;
  return m;
}

Metrics regression_metrics(const std::vector<float>& pred,
                           const std::vector<float>& gt,
                           const std::vector<uint8_t>& valid) {
  if (pred.size() != gt.size() || pred.size() != valid.size())
    throw std::invalid_argument("regression_metrics: size mismatch");
  ErrorAccumulator acc;
  for (size_t i = 0; i < pred.size(); ++i)
    if (valid[i]) acc.add(pred[i], gt[i]);
  return acc.metrics();
}

double classification_accuracy(const std::vector<uint8_t>& pred_labels,
                               const std::vector<float>& gt,
                               const std::vector<uint8_t>& valid) {
  if (pred_labels.size() != gt.size() || pred_labels.size() != valid.size())
    throw std::invalid_argument("classification_accuracy: size mismatch");
  int64_t correct = 0, total = 0;
  for (size_t i = 0; i < gt.size(); ++i) {
    if (!valid[i]) continue;
    ++total;
    if ((gt[i] > 0.5f) == (pred_labels[i] != 0)) ++correct;
  }
  if (total == 0)
    throw std::invalid_argument("classification_accuracy: no valid pixels");
  return static_cast<double>(correct) / total;
}

const EvalRow& EvalReport::row(Characteristic c) const {
  for (const EvalRow& r : rows)
    if (r.target == c) return r;
  throw std::invalid_argument("EvalReport: no row for target");
}

std::string EvalReport::to_csv() const {
  std::ostringstream os;
  os.precision(9);
  os << "target,AME,MAE,RMSE,STDE,accuracy,scale\n";
  for (const EvalRow& r : rows) {
    os << characteristic_name(r.target) << ",";
    if (r.is_classification) {
      os << ",,,," << r.accuracy;
    } else {
      os << r.metrics.ame << "," << r.metrics.mae << "," << r.metrics.rmse
         << "," << r.metrics.stde << ",";
    }
    os << "," << scale << "\n";
  }
  return os.str();
}

}  // namespace chansr
