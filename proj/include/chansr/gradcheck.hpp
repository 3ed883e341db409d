#pragma once

#include <functional>
#include <vector>

#include "chansr/tensor.hpp"

namespace chansr {

/// Compares reverse-mode gradients of a scalar function against central
/// finite differences (f(x+eps) - f(x-eps)) / (2 eps) for every element of
/// every parameter. Returns the worst relative error, with the relative
/// scale floored at 1e-3 so near-zero gradients compare on absolute terms.
double gradient_check(const std::function<Tensor()>& f,
                      const std::vector<Tensor>& params, double eps = 1e-5);

}  // namespace chansr
