#include "chansr/ops.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace chansr::ops {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;

bool any_grad(std::initializer_list<const Tensor*> ts) {
  for (const Tensor* t : ts)
    if (t->requires_grad()) return true;
  return false;
}

// Accumulation target for a parent, or nullptr when the parent is not part
// of the gradient sweep.
double* grad_of(const NodePtr& p) {
  return p->grad.empty() ? nullptr : p->grad.data();
}

void require_4d(const Tensor& t, const char* what) {
  if (t.shape().size() != 4)
    throw std::invalid_argument(std::string(what) + " must be 4-D, got " +
                                shape_str(t.shape()));
}

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias) {
  require_4d(input, "conv2d input");
  require_4d(weight, "conv2d weight");
  const Shape& is = input.shape();
  const Shape& ws = weight.shape();
  const int N = is[0], Ci = is[1], H = is[2], W = is[3];
  const int Co = ws[0], k = ws[2];
  if (ws[1] != Ci)
    throw std::invalid_argument("conv2d: weight Cin " + std::to_string(ws[1]) +
                                " != input C " + std::to_string(Ci));
  if (ws[3] != k || k % 2 == 0 || k < 1 || k > 7)
    throw std::invalid_argument("conv2d: kernel must be square odd in {1,3,5,7}, got " +
                                shape_str(ws));
  if (bias.shape() != Shape{Co})
    throw std::invalid_argument("conv2d: bias shape " + shape_str(bias.shape()) +
                                " != [" + std::to_string(Co) + "]");
  const int p = (k - 1) / 2;

  auto out = detail::make_node({N, Co, H, W}, any_grad({&input, &weight, &bias}));
  const double* in = input.data();
  const double* w = weight.data();
  const double* b = bias.data();
  double* o = out->value.data();
  const int64_t plane = static_cast<int64_t>(H) * W;

  parallel_for(static_cast<int64_t>(N) * Co, [&](int64_t t0, int64_t t1) {
    for (int64_t t = t0; t < t1; ++t) {
      const int n = static_cast<int>(t / Co);
      const int co = static_cast<int>(t % Co);
      double* op = o + t * plane;
      std::fill(op, op + plane, b[co]);
      for (int ci = 0; ci < Ci; ++ci) {
        const double* ip = in + (static_cast<int64_t>(n) * Ci + ci) * plane;
        const double* wp = w + ((static_cast<int64_t>(co) * Ci + ci) * k) * k;
        for (int ky = 0; ky < k; ++ky) {
          const int oy0 = std::max(0, p - ky);
          const int oy1 = std::min(H, H + p - ky);
          for (int kx = 0; kx < k; ++kx) {
            const double wv = wp[ky * k + kx];
            if (wv == 0.0) continue;
            const int ox0 = std::max(0, p - kx);
            const int ox1 = std::min(W, W + p - kx);
            for (int oy = oy0; oy < oy1; ++oy) {
              const double* ir = ip + static_cast<int64_t>(oy + ky - p) * W + (kx - p);
              double* orow = op + static_cast<int64_t>(oy) * W;
              for (int ox = ox0; ox < ox1; ++ox) orow[ox] += wv * ir[ox];
            }
          }
        }
      }
    }
  });

  if (out->requires_grad) {
    out->parents = {input.node(), weight.node(), bias.node()};
    out->backward_fn = [N, Ci, Co, H, W, k, p, plane](Node& self) {
      const double* g = self.grad.data();
      const NodePtr& pin = self.parents[0];
      const NodePtr& pw = self.parents[1];
      const NodePtr& pb = self.parents[2];
      const double* in = pin->value.data();
      const double* w = pw->value.data();

      if (double* gin = grad_of(pin)) {
        // Gather form: each input cell sums its contributions, so the
        // reduction order is fixed regardless of thread count.
        parallel_for(static_cast<int64_t>(N) * Ci, [&](int64_t t0, int64_t t1) {
          for (int64_t t = t0; t < t1; ++t) {
            const int n = static_cast<int>(t / Ci);
            const int ci = static_cast<int>(t % Ci);
            double* gp = gin + t * plane;
            for (int co = 0; co < Co; ++co) {
              const double* gop = g + (static_cast<int64_t>(n) * Co + co) * plane;
              const double* wp = w + ((static_cast<int64_t>(co) * Ci + ci) * k) * k;
              for (int ky = 0; ky < k; ++ky) {
                const int iy0 = std::max(0, ky - p);
                const int iy1 = std::min(H, H + ky - p);
                for (int kx = 0; kx < k; ++kx) {
                  const double wv = wp[ky * k + kx];
                  if (wv == 0.0) continue;
                  const int ix0 = std::max(0, kx - p);
                  const int ix1 = std::min(W, W + kx - p);
                  for (int iy = iy0; iy < iy1; ++iy) {
                    const double* gr = gop + static_cast<int64_t>(iy - ky + p) * W - (kx - p);
                    double* girow = gp + static_cast<int64_t>(iy) * W;
                    for (int ix = ix0; ix < ix1; ++ix) girow[ix] += wv * gr[ix];
                  }
                }
              }
            }
          }
        });
      }
      if (double* gw = grad_of(pw)) {
        parallel_for(Co, [&](int64_t c0, int64_t c1) {
          for (int64_t co = c0; co < c1; ++co) {
            for (int ci = 0; ci < Ci; ++ci) {
              double* gwp = gw + ((co * Ci + ci) * k) * k;
              for (int ky = 0; ky < k; ++ky) {
                const int oy0 = std::max(0, p - ky);
                const int oy1 = std::min(H, H + p - ky);
                for (int kx = 0; kx < k; ++kx) {
                  const int ox0 = std::max(0, p - kx);
                  const int ox1 = std::min(W, W + p - kx);
                  double acc = 0.0;
                  for (int n = 0; n < N; ++n) {
                    const double* gop = g + (static_cast<int64_t>(n) * Co + co) * plane;
                    const double* ip = in + (static_cast<int64_t>(n) * Ci + ci) * plane;
                    for (int oy = oy0; oy < oy1; ++oy) {
                      const double* ir = ip + static_cast<int64_t>(oy + ky - p) * W + (kx - p);
                      const double* gr = gop + static_cast<int64_t>(oy) * W;
                      for (int ox = ox0; ox < ox1; ++ox) acc += gr[ox] * ir[ox];
                    }
                  }
                  gwp[ky * k + kx] += acc;
                }
              }
            }
          }
        });
      }
      if (double* gb = grad_of(pb)) {
        for (int co = 0; co < Co; ++co) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) {
            const double* gop = g + (static_cast<int64_t>(n) * Co + co) * plane;
            for (int64_t i = 0; i < plane; ++i) acc += gop[i];
          }
          gb[co] += acc;
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor relu(const Tensor& x) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const double* in = x.data();
  double* o = out->value.data();
  const int64_t n = out->size();
  for (int64_t i = 0; i < n; ++i) o[i] = in[i] > 0.0 ? in[i] : 0.0;
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [n](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* in = self.parents[0]->value.data();
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i)
          if (in[i] > 0.0) gin[i] += g[i];
      }
    };
  }
  return Tensor(std::move(out));
}

namespace {
Tensor binary_elementwise(const Tensor& a, const Tensor& b, int kind) {
  if (a.shape() != b.shape())
    throw std::invalid_argument("elementwise op: shape mismatch " +
                                shape_str(a.shape()) + " vs " +
                                shape_str(b.shape()));
  auto out = detail::make_node(a.shape(), any_grad({&a, &b}));
  const double* pa = a.data();
  const double* pb = b.data();
  double* o = out->value.data();
  const int64_t n = out->size();
  for (int64_t i = 0; i < n; ++i)
    o[i] = kind == 0 ? pa[i] + pb[i] : kind == 1 ? pa[i] - pb[i] : pa[i] * pb[i];
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward_fn = [n, kind](Node& self) {
      const double* g = self.grad.data();
      const double* pa = self.parents[0]->value.data();
      const double* pb = self.parents[1]->value.data();
      if (double* ga = grad_of(self.parents[0]))
        for (int64_t i = 0; i < n; ++i)
          ga[i] += kind == 2 ? g[i] * pb[i] : g[i];
      if (double* gb = grad_of(self.parents[1]))
        for (int64_t i = 0; i < n; ++i)
          gb[i] += kind == 0 ? g[i] : kind == 1 ? -g[i] : g[i] * pa[i];
    };
  }
  return Tensor(std::move(out));
}
}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, 0); }
Tensor sub(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, 1); }
Tensor mul(const Tensor& a, const Tensor& b) { return binary_elementwise(a, b, 2); }

Tensor mul_scalar(const Tensor& x, double s) {
  auto out = detail::make_node(x.shape(), x.requires_grad());
  const double* in = x.data();
  double* o = out->value.data();
  const int64_t n = out->size();
  for (int64_t i = 0; i < n; ++i) o[i] = s * in[i];
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [n, s](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* g = self.grad.data();
        for (int64_t i = 0; i < n; ++i) gin[i] += s * g[i];
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
  require_4d(a, "concat_channels a");
  require_4d(b, "concat_channels b");
  const Shape& as = a.shape();
  const Shape& bs = b.shape();
  if (as[0] != bs[0] || as[2] != bs[2] || as[3] != bs[3])
    throw std::invalid_argument("concat_channels: incompatible shapes " +
                                shape_str(as) + " vs " + shape_str(bs));
  const int N = as[0], Ca = as[1], Cb = bs[1], H = as[2], W = as[3];
  const int64_t plane = static_cast<int64_t>(H) * W;
  auto out = detail::make_node({N, Ca + Cb, H, W}, any_grad({&a, &b}));
  double* o = out->value.data();
  for (int n = 0; n < N; ++n) {
    std::copy_n(a.data() + static_cast<int64_t>(n) * Ca * plane, Ca * plane,
                o + static_cast<int64_t>(n) * (Ca + Cb) * plane);
    std::copy_n(b.data() + static_cast<int64_t>(n) * Cb * plane, Cb * plane,
                o + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane);
  }
  if (out->requires_grad) {
    out->parents = {a.node(), b.node()};
    out->backward_fn = [N, Ca, Cb, plane](Node& self) {
      const double* g = self.grad.data();
      if (double* ga = grad_of(self.parents[0]))
        for (int n = 0; n < N; ++n) {
          const double* gp = g + static_cast<int64_t>(n) * (Ca + Cb) * plane;
          double* gq = ga + static_cast<int64_t>(n) * Ca * plane;
          for (int64_t i = 0; i < Ca * plane; ++i) gq[i] += gp[i];
        }
      if (double* gb = grad_of(self.parents[1]))
        for (int n = 0; n < N; ++n) {
          const double* gp = g + (static_cast<int64_t>(n) * (Ca + Cb) + Ca) * plane;
          double* gq = gb + static_cast<int64_t>(n) * Cb * plane;
          for (int64_t i = 0; i < Cb * plane; ++i) gq[i] += gp[i];
        }
    };
  }
  return Tensor(std::move(out));
}

Tensor upsample_nearest(const Tensor& x, int factor) {
  require_4d(x, "upsample_nearest input");
  if (factor < 2 || (factor & (factor - 1)) != 0)
    throw std::invalid_argument("upsample_nearest: factor must be a power of two >= 2, got " +
                                std::to_string(factor));
  const Shape& s = x.shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3], f = factor;
  auto out = detail::make_node({N, C, H * f, W * f}, x.requires_grad());
  const double* in = x.data();
  double* o = out->value.data();
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const double* ip = in + nc * H * W;
    double* op = o + nc * static_cast<int64_t>(H) * f * W * f;
    for (int y = 0; y < H * f; ++y) {
      const double* ir = ip + static_cast<int64_t>(y / f) * W;
      double* orow = op + static_cast<int64_t>(y) * W * f;
      for (int x2 = 0; x2 < W * f; ++x2) orow[x2] = ir[x2 / f];
    }
  }
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [N, C, H, W, f](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* g = self.grad.data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
          const double* gp = g + nc * static_cast<int64_t>(H) * f * W * f;
          double* gq = gin + nc * H * W;
          for (int y = 0; y < H * f; ++y) {
            const double* gr = gp + static_cast<int64_t>(y) * W * f;
            double* gqr = gq + static_cast<int64_t>(y / f) * W;
            for (int x2 = 0; x2 < W * f; ++x2) gqr[x2 / f] += gr[x2];
          }
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor block_mean_pool(const Tensor& x, int factor) {
  require_4d(x, "block_mean_pool input");
  const Shape& s = x.shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3], f = factor;
  if (f < 2 || H % f != 0 || W % f != 0)
    throw std::invalid_argument("block_mean_pool: size " + shape_str(s) +
                                " not divisible by factor " + std::to_string(f));
  const int Ho = H / f, Wo = W / f;
  auto out = detail::make_node({N, C, Ho, Wo}, x.requires_grad());
  const double* in = x.data();
  double* o = out->value.data();
  const double inv = 1.0 / (f * f);
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    const double* ip = in + nc * H * W;
    double* op = o + nc * Ho * Wo;
    for (int oy = 0; oy < Ho; ++oy)
      for (int ox = 0; ox < Wo; ++ox) {
        double acc = 0.0;
        for (int dy = 0; dy < f; ++dy) {
          const double* ir = ip + static_cast<int64_t>(oy * f + dy) * W + ox * f;
          for (int dx = 0; dx < f; ++dx) acc += ir[dx];
        }
        op[static_cast<int64_t>(oy) * Wo + ox] = acc * inv;
      }
  }
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [N, C, H, W, f, Ho, Wo, inv](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* g = self.grad.data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
          const double* gp = g + nc * Ho * Wo;
          double* gq = gin + nc * H * W;
          for (int y = 0; y < H; ++y)
            for (int x2 = 0; x2 < W; ++x2)
              gq[static_cast<int64_t>(y) * W + x2] +=
                  gp[static_cast<int64_t>(y / f) * Wo + x2 / f] * inv;
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor global_avg_pool(const Tensor& x) {
  require_4d(x, "global_avg_pool input");
  const Shape& s = x.shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  auto out = detail::make_node({N, C}, x.requires_grad());
  const double* in = x.data();
  double* o = out->value.data();
  const double inv = 1.0 / (static_cast<int64_t>(H) * W);
  for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
    double acc = 0.0;
    const double* ip = in + nc * H * W;
    for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) acc += ip[i];
    o[nc] = acc * inv;
  }
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [N, C, H, W, inv](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* g = self.grad.data();
        for (int64_t nc = 0; nc < static_cast<int64_t>(N) * C; ++nc) {
          double* gq = gin + nc * H * W;
          const double gv = g[nc] * inv;
          for (int64_t i = 0; i < static_cast<int64_t>(H) * W; ++i) gq[i] += gv;
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor fully_connected(const Tensor& x, const Tensor& weight,
                       const Tensor& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2)
    throw std::invalid_argument("fully_connected: x and weight must be 2-D");
  const int N = x.shape()[0], Din = x.shape()[1];
  const int Dout = weight.shape()[0];
  if (weight.shape()[1] != Din)
    throw std::invalid_argument("fully_connected: weight Din " +
                                std::to_string(weight.shape()[1]) +
                                " != input Din " + std::to_string(Din));
  if (bias.shape() != Shape{Dout})
    throw std::invalid_argument("fully_connected: bias shape mismatch");
  auto out = detail::make_node({N, Dout}, any_grad({&x, &weight, &bias}));
  const double* in = x.data();
  const double* w = weight.data();
  const double* b = bias.data();
  double* o = out->value.data();
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < Dout; ++j) {
      double acc = b[j];
      const double* wr = w + static_cast<int64_t>(j) * Din;
      const double* ir = in + static_cast<int64_t>(n) * Din;
      for (int i = 0; i < Din; ++i) acc += wr[i] * ir[i];
      o[static_cast<int64_t>(n) * Dout + j] = acc;
    }
  if (out->requires_grad) {
    out->parents = {x.node(), weight.node(), bias.node()};
    out->backward_fn = [N, Din, Dout](Node& self) {
      const double* g = self.grad.data();
      const double* in = self.parents[0]->value.data();
      const double* w = self.parents[1]->value.data();
      if (double* gin = grad_of(self.parents[0])) {
        for (int n = 0; n < N; ++n)
          for (int i = 0; i < Din; ++i) {
            double acc = 0.0;
            for (int j = 0; j < Dout; ++j)
              acc += g[static_cast<int64_t>(n) * Dout + j] *
                     w[static_cast<int64_t>(j) * Din + i];
            gin[static_cast<int64_t>(n) * Din + i] += acc;
          }
      }
      if (double* gw = grad_of(self.parents[1])) {
        for (int j = 0; j < Dout; ++j)
          for (int i = 0; i < Din; ++i) {
            double acc = 0.0;
            for (int n = 0; n < N; ++n)
              acc += g[static_cast<int64_t>(n) * Dout + j] *
                     in[static_cast<int64_t>(n) * Din + i];
            gw[static_cast<int64_t>(j) * Din + i] += acc;
          }
      }
      if (double* gb = grad_of(self.parents[2])) {
        for (int j = 0; j < Dout; ++j) {
          double acc = 0.0;
          for (int n = 0; n < N; ++n) acc += g[static_cast<int64_t>(n) * Dout + j];
          gb[j] += acc;
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor stack_rows(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw std::invalid_argument("stack_rows: empty input");
  const Shape& s = xs[0].shape();
  if (s.size() != 2)
    throw std::invalid_argument("stack_rows: expected [N,C] inputs");
  const int N = s[0], C = s[1];
  const int B = static_cast<int>(xs.size());
  bool rg = false;
  for (const Tensor& t : xs) {
    if (t.shape() != s)
      throw std::invalid_argument("stack_rows: shape mismatch");
    rg = rg || t.requires_grad();
  }
  auto out = detail::make_node({N, B, C}, rg);
  double* o = out->value.data();
  for (int b = 0; b < B; ++b) {
    const double* in = xs[b].data();
    for (int n = 0; n < N; ++n)
      std::copy_n(in + static_cast<int64_t>(n) * C, C,
                  o + (static_cast<int64_t>(n) * B + b) * C);
  }
  if (out->requires_grad) {
    for (const Tensor& t : xs) out->parents.push_back(t.node());
    out->backward_fn = [N, B, C](Node& self) {
      const double* g = self.grad.data();
      for (int b = 0; b < B; ++b) {
        if (double* gb = grad_of(self.parents[b])) {
          for (int n = 0; n < N; ++n) {
            const double* gp = g + (static_cast<int64_t>(n) * B + b) * C;
            double* gq = gb + static_cast<int64_t>(n) * C;
            for (int c = 0; c < C; ++c) gq[c] += gp[c];
          }
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor branch_softmax(const Tensor& logits) {
  if (logits.shape().size() != 3)
    throw std::invalid_argument("branch_softmax: expected [N,B,C], got " +
                                shape_str(logits.shape()));
  const int N = logits.shape()[0], B = logits.shape()[1], C = logits.shape()[2];
  auto out = detail::make_node(logits.shape(), logits.requires_grad());
  const double* in = logits.data();
  double* o = out->value.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) {
      double mx = in[static_cast<int64_t>(n) * B * C + c];
      for (int b = 1; b < B; ++b)
        mx = std::max(mx, in[(static_cast<int64_t>(n) * B + b) * C + c]);
      double denom = 0.0;
      for (int b = 0; b < B; ++b) {
        const double e = std::exp(in[(static_cast<int64_t>(n) * B + b) * C + c] - mx);
        o[(static_cast<int64_t>(n) * B + b) * C + c] = e;
        denom += e;
      }
      for (int b = 0; b < B; ++b)
        o[(static_cast<int64_t>(n) * B + b) * C + c] /= denom;
    }
  if (out->requires_grad) {
    out->parents = {logits.node()};
    out->backward_fn = [N, B, C](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double* g = self.grad.data();
        const double* y = self.value.data();
        for (int n = 0; n < N; ++n)
          for (int c = 0; c < C; ++c) {
            double dot = 0.0;
            for (int b = 0; b < B; ++b) {
              const int64_t i = (static_cast<int64_t>(n) * B + b) * C + c;
              dot += g[i] * y[i];
            }
            for (int b = 0; b < B; ++b) {
              const int64_t i = (static_cast<int64_t>(n) * B + b) * C + c;
              gin[i] += y[i] * (g[i] - dot);
            }
          }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor branch_weighted_sum(const std::vector<Tensor>& branches,
                           const Tensor& weights) {
  if (branches.empty())
    throw std::invalid_argument("branch_weighted_sum: no branches");
  const int B = static_cast<int>(branches.size());
  require_4d(branches[0], "branch_weighted_sum branch");
  const Shape& s = branches[0].shape();
  const int N = s[0], C = s[1], H = s[2], W = s[3];
  for (const Tensor& t : branches)
    if (t.shape() != s)
      throw std::invalid_argument("branch_weighted_sum: branch shape mismatch");
  if (weights.shape() != Shape{N, B, C})
    throw std::invalid_argument("branch_weighted_sum: weights shape " +
                                shape_str(weights.shape()) + " != [N,B,C]");
  bool rg = weights.requires_grad();
  for (const Tensor& t : branches) rg = rg || t.requires_grad();
  auto out = detail::make_node(s, rg);
  const int64_t plane = static_cast<int64_t>(H) * W;
  double* o = out->value.data();
  const double* wv = weights.data();
  std::fill(out->value.begin(), out->value.end(), 0.0);
  for (int b = 0; b < B; ++b) {
    const double* kv = branches[b].data();
    for (int n = 0; n < N; ++n)
      for (int c = 0; c < C; ++c) {
        const double a = wv[(static_cast<int64_t>(n) * B + b) * C + c];
        const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
        for (int64_t i = 0; i < plane; ++i) o[base + i] += a * kv[base + i];
      }
  }
  if (out->requires_grad) {
    out->parents.reserve(B + 1);
    for (const Tensor& t : branches) out->parents.push_back(t.node());
    out->parents.push_back(weights.node());
    out->backward_fn = [N, B, C, plane](Node& self) {
      const double* g = self.grad.data();
      const double* wv = self.parents[B]->value.data();
      for (int b = 0; b < B; ++b) {
        if (double* gk = grad_of(self.parents[b])) {
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const double a = wv[(static_cast<int64_t>(n) * B + b) * C + c];
              const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
              for (int64_t i = 0; i < plane; ++i) gk[base + i] += a * g[base + i];
            }
        }
      }
      if (double* gw = grad_of(self.parents[B])) {
        for (int b = 0; b < B; ++b) {
          const double* kv = self.parents[b]->value.data();
          for (int n = 0; n < N; ++n)
            for (int c = 0; c < C; ++c) {
              const int64_t base = (static_cast<int64_t>(n) * C + c) * plane;
              double acc = 0.0;
              for (int64_t i = 0; i < plane; ++i) acc += g[base + i] * kv[base + i];
              gw[(static_cast<int64_t>(n) * B + b) * C + c] += acc;
            }
        }
      }
    };
  }
  return Tensor(std::move(out));
}

namespace {
Tensor reduce_all(const Tensor& x, bool take_mean) {
  auto out = detail::make_node({1}, x.requires_grad());
  const double* in = x.data();
  const int64_t n = x.size();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i) acc += in[i];
  const double scale = take_mean ? 1.0 / n : 1.0;
  out->value[0] = acc * scale;
  if (out->requires_grad) {
    out->parents = {x.node()};
    out->backward_fn = [n, scale](Node& self) {
      if (double* gin = grad_of(self.parents[0])) {
        const double gv = self.grad[0] * scale;
        for (int64_t i = 0; i < n; ++i) gin[i] += gv;
      }
    };
  }
  return Tensor(std::move(out));
}

int64_t count_valid(const Tensor& mask) {
  int64_t m = 0;
  const double* p = mask.data();
  for (int64_t i = 0; i < mask.size(); ++i)
    if (p[i] > 0.5) ++m;
  if (m == 0) throw std::invalid_argument("masked loss: no valid pixels");
  return m;
}
}  // namespace

Tensor sum(const Tensor& x) { return reduce_all(x, false); }
Tensor mean(const Tensor& x) { return reduce_all(x, true); }

Tensor masked_l1(const Tensor& pred, const Tensor& target, const Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("masked_l1: shape mismatch");
  const int64_t n = pred.size();
  const int64_t m = count_valid(mask);
  auto out = detail::make_node({1}, pred.requires_grad());
  const double* pp = pred.data();
  const double* pt = target.data();
  const double* pm = mask.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i)
    if (pm[i] > 0.5) acc += std::abs(pp[i] - pt[i]);
  out->value[0] = acc / m;
  if (out->requires_grad) {
    out->parents = {pred.node(), target.node(), mask.node()};
    out->backward_fn = [n, m](Node& self) {
      if (double* gp = grad_of(self.parents[0])) {
        const double* pp = self.parents[0]->value.data();
        const double* pt = self.parents[1]->value.data();
        const double* pm = self.parents[2]->value.data();
        const double gv = self.grad[0] / m;
        for (int64_t i = 0; i < n; ++i) {
          if (pm[i] <= 0.5) continue;
          const double e = pp[i] - pt[i];
          gp[i] += gv * (e > 0.0 ? 1.0 : e < 0.0 ? -1.0 : 0.0);
        }
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor masked_stde(const Tensor& pred, const Tensor& target,
                   const Tensor& mask) {
  if (pred.shape() != target.shape() || pred.shape() != mask.shape())
    throw std::invalid_argument("masked_stde: shape mismatch");
  const int64_t n = pred.size();
  const int64_t m = count_valid(mask);
  auto out = detail::make_node({1}, pred.requires_grad());
  const double* pp = pred.data();
  const double* pt = target.data();
  const double* pm = mask.data();
  double acc = 0.0;
  for (int64_t i = 0; i < n; ++i)
    if (pm[i] > 0.5) {
      const double e = pp[i] - pt[i];
      acc += e * e;
    }
  out->value[0] = std::sqrt(acc / m);
  if (out->requires_grad) {
    out->parents = {pred.node(), target.node(), mask.node()};
    out->backward_fn = [n, m](Node& self) {
      if (double* gp = grad_of(self.parents[0])) {
        const double* pp = self.parents[0]->value.data();
        const double* pt = self.parents[1]->value.data();
        const double* pm = self.parents[2]->value.data();
        const double denom = m * std::max(self.value[0], 1e-12);
        const double gv = self.grad[0] / denom;
        for (int64_t i = 0; i < n; ++i)
          if (pm[i] > 0.5) gp[i] += gv * (pp[i] - pt[i]);
      }
    };
  }
  return Tensor(std::move(out));
}

Tensor masked_ce(const Tensor& logits, const Tensor& labels,
                 const Tensor& mask) {
  require_4d(logits, "masked_ce logits");
  const Shape& s = logits.shape();
  const int N = s[0], H = s[2], W = s[3];
  if (s[1] != 2)
    throw std::invalid_argument("masked_ce: logits must have 2 channels, got " +
                                shape_str(s));
  const Shape want{N, 1, H, W};
  if (labels.shape() != want || mask.shape() != want)
    throw std::invalid_argument("masked_ce: labels/mask must be " +
                                shape_str(want));
  const int64_t plane = static_cast<int64_t>(H) * W;
  int64_t m = 0;
  const double* pm = mask.data();
  for (int64_t i = 0; i < static_cast<int64_t>(N) * plane; ++i)
    if (pm[i] > 0.5) ++m;
  if (m == 0) throw std::invalid_argument("masked_ce: no valid pixels");

  auto out = detail::make_node({1}, logits.requires_grad());
  const double* pl = logits.data();
  const double* py = labels.data();
  double acc = 0.0;
  for (int n = 0; n < N; ++n)
    for (int64_t i = 0; i < plane; ++i) {
      const int64_t pix = static_cast<int64_t>(n) * plane + i;
      if (pm[pix] <= 0.5) continue;
      const double l0 = pl[static_cast<int64_t>(n) * 2 * plane + i];
      const double l1 = pl[(static_cast<int64_t>(n) * 2 + 1) * plane + i];
      const double mx = std::max(l0, l1);
      const double lse = mx + std::log(std::exp(l0 - mx) + std::exp(l1 - mx));
      const double ly = py[pix] > 0.5 ? l1 : l0;
      acc += lse - ly;
    }
  out->value[0] = acc / m;
  if (out->requires_grad) {
    out->parents = {logits.node(), labels.node(), mask.node()};
    out->backward_fn = [N, plane, m](Node& self) {
      if (double* gl = grad_of(self.parents[0])) {
        const double* pl = self.parents[0]->value.data();
        const double* py = self.parents[1]->value.data();
        const double* pm = self.parents[2]->value.data();
        const double gv = self.grad[0] / m;
        for (int n = 0; n < N; ++n)
          for (int64_t i = 0; i < plane; ++i) {
            const int64_t pix = static_cast<int64_t>(n) * plane + i;
            if (pm[pix] <= 0.5) continue;
            const int64_t i0 = static_cast<int64_t>(n) * 2 * plane + i;
            const int64_t i1 = i0 + plane;
            const double mx = std::max(pl[i0], pl[i1]);
            const double e0 = std::exp(pl[i0] - mx);
            const double e1 = std::exp(pl[i1] - mx);
            const double p0 = e0 / (e0 + e1);
            const double p1 = 1.0 - p0;
            const bool y1 = py[pix] > 0.5;
            gl[i0] += gv * (p0 - (y1 ? 0.0 : 1.0));
            gl[i1] += gv * (p1 - (y1 ? 1.0 : 0.0));
          }
      }
    };
  }
  return Tensor(std::move(out));
}

}  // namespace chansr::ops
