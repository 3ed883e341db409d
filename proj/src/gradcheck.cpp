#include "chansr/gradcheck.hpp"

#include <cmath>
#include <stdexcept>

namespace chansr {

double gradient_check(const std::function<Tensor()>& f,
                      const std::vector<Tensor>& params, double eps) {
  Tensor loss = f();
  backward(loss);
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const Tensor& p : params) {
    if (!p.requires_grad())
      throw std::invalid_argument("gradient_check: parameter without grad");
    // a parameter the loss never touches has an empty grad buffer; its
    // analytic gradient is zero
    analytic.push_back(p.grad().empty() ? std::vector<double>(p.size(), 0.0)
                                        : p.grad());
  }

  double worst = 0.0;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    double* data = p.data();
    for (int64_t i = 0; i < p.size(); ++i) {
      const double saved = data[i];
      data[i] = saved + eps;
      const double fp = f().item();
      data[i] = saved - eps;
      const double fm = f().item();
      data[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[pi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-3});
      worst = std::max(worst, std::abs(a - numeric) / denom);
    }
  }
  return worst;
}

}  // namespace chansr
