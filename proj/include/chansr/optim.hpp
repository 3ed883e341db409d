#pragma once

#include <vector>

#include "chansr/tensor.hpp"

namespace chansr {

/// Adaptive-moment optimizer with bias correction. Reads gradients left on
/// the parameter nodes by the most recent backward(); parameters whose
/// gradient buffer is empty are skipped.
class Adam {
 public:
  Adam(std::vector<Tensor> params, double lr = 1e-3, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void set_lr(double lr) { lr_ = lr; }
  double lr() const { return lr_; }
  void step();

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int64_t t_ = 0;
};

}  // namespace chansr
