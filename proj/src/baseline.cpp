#include "chansr/baseline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chansr {

namespace {

// Catmull-Rom (a = -0.5) kernel.
double cubic_weight(double t) {
  t = std::abs(t);
  if (t <= 1.0) return ((1.5 * t - 2.5) * t) * t + 1.0;
  if (t < 2.0) return (((-0.5 * t + 2.5) * t) - 4.0) * t + 2.0;
  return 0.0;
}

}  // namespace

std::vector<float> baseline_interpolate(const std::vector<float>& lr,
                                        int lr_size, int scale,
                                        InterpMethod method,
                                        const CharacteristicSpec& spec) {
  if (static_cast<int64_t>(lr.size()) !=
      static_cast<int64_t>(lr_size) * lr_size)
    throw std::invalid_argument("baseline_interpolate: size mismatch");
  if (scale < 2)
    throw std::invalid_argument("baseline_interpolate: scale must be >= 2");
  if (method == InterpMethod::Bicubic && spec.kind == Characteristic::LOS)
    throw std::invalid_argument(
        "baseline_interpolate: bicubic not applicable to LOS maps");

  const int hr = lr_size * scale;
  std::vector<float> out(static_cast<size_t>(hr) * hr);

  if (method == InterpMethod::Nearest) {
    for (int y = 0; y < hr; ++y)
      for (int x = 0; x < hr; ++x)
        out[static_cast<size_t>(y) * hr + x] =
            lr[static_cast<size_t>(y / scale) * lr_size + x / scale];
    return out;
  }

  // Separable pass: rows first into an hr x lr_size buffer, then columns.
  auto taps = [&](double src, int& i0, double w[4]) {
    const int i = static_cast<int>(std::floor(src));
    const double f = src - i;
    i0 = i - 1;
    w[0] = cubic_weight(1.0 + f);
    w[1] = cubic_weight(f);
    w[2] = cubic_weight(1.0 - f);
    w[3] = cubic_weight(2.0 - f);
  };
  auto clamp_idx = [&](int i) { return std::clamp(i, 0, lr_size - 1); };

  std::vector<double> mid(static_cast<size_t>(lr_size) * hr);
  for (int y = 0; y < lr_size; ++y)
    for (int x = 0; x < hr; ++x) {
      int i0;
      double w[4];
      taps((x + 0.5) / scale - 0.5, i0, w);
      double acc = 0.0;
      for (int t = 0; t < 4; ++t)
        acc += w[t] * lr[static_cast<size_t>(y) * lr_size + clamp_idx(i0 + t)];
      mid[static_cast<size_t>(y) * hr + x] = acc;
    }
  for (int y = 0; y < hr; ++y) {
    int i0;
    double w[4];
    taps((y + 0.5) / scale - 0.5, i0, w);
    for (int x = 0; x < hr; ++x) {
      double acc = 0.0;
      for (int t = 0; t < 4; ++t)
        acc += w[t] * mid[static_cast<size_t>(clamp_idx(i0 + t)) * hr + x];
      out[static_cast<size_t>(y) * hr + x] = static_cast<float>(acc);
    }
  }
  return out;
}

}  // namespace chansr
