#include "fidn/ops.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fidn/kernels.hpp"

namespace fidn::ops {

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op, const char* what) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + shape_string(s));
  }
}

void require_dim(std::size_t got, std::size_t want, const char* op, const std::string& what) {
  if (got != want) {
    throw ShapeError(std::string(op) + ": " + what + " is " + std::to_string(got) + ", expected " +
                     std::to_string(want));
  }
}

// cols[(c*9 + dy*3 + dx), y*W + x] = img[c, y+dy-1, x+dx-1], zero outside.
template <typename T>
void im2col(const T* img, std::size_t channels, std::size_t h, std::size_t w, T* cols) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    const T* plane = img + c * hw;
    for (std::size_t dy = 0; dy < 3; ++dy) {
      for (std::size_t dx = 0; dx < 3; ++dx) {
        T* row = cols + (c * 9 + dy * 3 + dx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
          T* dst = row + y * w;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) {
            std::fill(dst, dst + w, T{0});
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(sy) * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - 1;
            dst[x] = (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) ? T{0} : src[sx];
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const T* cols, std::size_t channels, std::size_t h, std::size_t w, T* img) {
  const std::size_t hw = h * w;
  for (std::size_t c = 0; c < channels; ++c) {
    T* plane = img + c * hw;
    for (std::size_t dy = 0; dy < 3; ++dy) {
      for (std::size_t dx = 0; dx < 3; ++dx) {
        const T* row = cols + (c * 9 + dy * 3 + dx) * hw;
        for (std::size_t y = 0; y < h; ++y) {
          const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - 1;
          if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
          T* dst = plane + static_cast<std::size_t>(sy) * w;
          const T* src = row + y * w;
          for (std::size_t x = 0; x < w; ++x) {
            const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - 1;
            if (sx >= 0 && sx < static_cast<std::ptrdiff_t>(w)) dst[sx] += src[x];
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Var conv2d(Tape<T>& tape, Var input, Var weight, Var bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require_rank(x.shape(), 4, "conv2d", "input");
  require_rank(wt.shape(), 4, "conv2d", "weight");
  require_rank(b.shape(), 1, "conv2d", "bias");
  require_dim(wt.dim(1), x.dim(1), "conv2d", "weight input-channel dimension (dim 1)");
  require_dim(wt.dim(2), 3, "conv2d", "kernel height (weight dim 2)");
  require_dim(wt.dim(3), 3, "conv2d", "kernel width (weight dim 3)");
  require_dim(b.dim(0), wt.dim(0), "conv2d", "bias length");

  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t l = wt.dim(0), hw = h * w, k = c * 9;
  Tensor<T> out({n, l, h, w});
  std::vector<T> cols(k * hw);
  for (std::size_t s = 0; s < n; ++s) {
    im2col(x.ptr() + s * c * hw, c, h, w, cols.data());
    T* o = out.ptr() + s * l * hw;
    kernels::gemm(l, hw, k, wt.ptr(), k, cols.data(), hw, o, hw, false);
    for (std::size_t f = 0; f < l; ++f) {
      const T bv = b[f];
      for (std::size_t i = 0; i < hw; ++i) o[f * hw + i] += bv;
    }
  }

  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad_slot(self);
    const Tensor<T>& xv = t.value(input);
    const Tensor<T>& wv = t.value(weight);
    const bool need_x = t.requires_grad(input);
    const bool need_w = t.requires_grad(weight);
    const bool need_b = t.requires_grad(bias);
    std::vector<T> col(k * hw), col_t(hw * k), dcol(need_x ? k * hw : 0), w_t(need_x ? k * l : 0);
    if (need_x) kernels::transpose(l, k, wv.ptr(), w_t.data());
    for (std::size_t s = 0; s < n; ++s) {
      const T* g = gy.ptr() + s * l * hw;
      if (need_b) {
        Tensor<T>& gb = t.grad_slot(bias);
        for (std::size_t f = 0; f < l; ++f) {
          T acc{0};
          for (std::size_t i = 0; i < hw; ++i) acc += g[f * hw + i];
          gb[f] += acc;
        }
      }
      if (need_w) {
        im2col(xv.ptr() + s * c * hw, c, h, w, col.data());
        kernels::transpose(k, hw, col.data(), col_t.data());
        kernels::gemm(l, k, hw, g, hw, col_t.data(), k, t.grad_slot(weight).ptr(), k, true);
      }
      if (need_x) {
        kernels::gemm(k, hw, l, w_t.data(), l, g, hw, dcol.data(), hw, false);
        col2im_add(dcol.data(), c, h, w, t.grad_slot(input).ptr() + s * c * hw);
      }
    }
  });
}

template <typename T>
Var maxpool2x2(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_rank(x.shape(), 4, "maxpool2x2", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0) {
    throw ShapeError("maxpool2x2: spatial dimensions must be even, got " + shape_string(x.shape()));
  }
  const std::size_t oh = h / 2, ow = w / 2;
  Tensor<T> out({n, c, oh, ow});
  std::vector<std::size_t> argmax(out.size());
  std::size_t o = 0;
  for (std::size_t p = 0; p < n * c; ++p) {
    const std::size_t base = p * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xx = 0; xx < ow; ++xx, ++o) {
        std::size_t best = base + (2 * y) * w + 2 * xx;
        for (std::size_t dy = 0; dy < 2; ++dy) {
          for (std::size_t dx = 0; dx < 2; ++dx) {
            const std::size_t idx = base + (2 * y + dy) * w + 2 * xx + dx;
            if (x[idx] > x[best]) best = idx;
          }
        }
        argmax[o] = best;
        out[o] = x[best];
      }
    }
  }
  return tape.record(std::move(out), {input},
                     [input, argmax = std::move(argmax)](Tape<T>& t, std::size_t self) {
                       const Tensor<T>& gy = t.grad_slot(self);
                       Tensor<T>& gx = t.grad_slot(input);
                       for (std::size_t i = 0; i < argmax.size(); ++i) gx[argmax[i]] += gy[i];
                     });
}

template <typename T>
Var global_avg_pool(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_rank(x.shape(), 4, "global_avg_pool", "input");
  const std::size_t n = x.dim(0), c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor<T> out({n, c});
  for (std::size_t p = 0; p < n * c; ++p) {
    double acc = 0.0;
    for (std::size_t i = 0; i < hw; ++i) acc += x[p * hw + i];
    out[p] = static_cast<T>(acc / static_cast<double>(hw));
  }
  return tape.record(std::move(out), {input}, [input, hw](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(input);
    const T scale = T{1} / static_cast<T>(hw);
    for (std::size_t p = 0; p < gy.size(); ++p) {
      const T g = gy[p] * scale;
      for (std::size_t i = 0; i < hw; ++i) gx[p * hw + i] += g;
    }
  });
}

template <typename T>
Var relu(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] <= T{0} ? T{0} : x[i];  // NaN passes through
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad_slot(self);
    const Tensor<T>& xv = t.value(input);
    Tensor<T>& gx = t.grad_slot(input);
    for (std::size_t i = 0; i < gy.size(); ++i)
      if (xv[i] > T{0}) gx[i] += gy[i];
  });
}

template <typename T>
Var fully_connected(Tape<T>& tape, Var input, Var weight, Var bias) {
  const Tensor<T>& x = tape.value(input);
  const Tensor<T>& wt = tape.value(weight);
  const Tensor<T>& b = tape.value(bias);
  require_rank(x.shape(), 2, "fully_connected", "input");
  require_rank(wt.shape(), 2, "fully_connected", "weight");
  require_rank(b.shape(), 1, "fully_connected", "bias");
  require_dim(wt.dim(0), x.dim(1), "fully_connected", "weight input dimension (dim 0)");
  require_dim(b.dim(0), wt.dim(1), "fully_connected", "bias length");
  const std::size_t n = x.dim(0), d = x.dim(1), k = wt.dim(1);
  Tensor<T> out({n, k});
  kernels::gemm(n, k, d, x.ptr(), d, wt.ptr(), k, out.ptr(), k, false);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t j = 0; j < k; ++j) out[r * k + j] += b[j];

  return tape.record(std::move(out), {input, weight, bias}, [=](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad_slot(self);
    if (t.requires_grad(bias)) {
      Tensor<T>& gb = t.grad_slot(bias);
      for (std::size_t r = 0; r < n; ++r)
        for (std::size_t j = 0; j < k; ++j) gb[j] += gy[r * k + j];
    }
    if (t.requires_grad(weight)) {
      std::vector<T> x_t(d * n);
      kernels::transpose(n, d, t.value(input).ptr(), x_t.data());
      kernels::gemm(d, k, n, x_t.data(), n, gy.ptr(), k, t.grad_slot(weight).ptr(), k, true);
    }
    if (t.requires_grad(input)) {
      std::vector<T> w_t(k * d);
      kernels::transpose(d, k, t.value(weight).ptr(), w_t.data());
      kernels::gemm(n, d, k, gy.ptr(), k, w_t.data(), d, t.grad_slot(input).ptr(), d, true);
    }
  });
}

template <typename T>
Var batchnorm(Tape<T>& tape, Var input, Var gamma, Var beta, Mode mode, RunningStats<T> stats) {
  const Tensor<T>& x = tape.value(input);
  if (x.rank() != 2 && x.rank() != 4) {
    throw ShapeError("batchnorm: input must be [N,F] or [N,F,H,W], got " + shape_string(x.shape()));
  }
  const std::size_t n = x.dim(0), f = x.dim(1);
  const std::size_t spatial = x.rank() == 4 ? x.dim(2) * x.dim(3) : 1;
  const std::size_t count = n * spatial;
  require_rank(tape.value(gamma).shape(), 1, "batchnorm", "gamma");
  require_rank(tape.value(beta).shape(), 1, "batchnorm", "beta");
  require_dim(tape.value(gamma).dim(0), f, "batchnorm", "gamma length");
  require_dim(tape.value(beta).dim(0), f, "batchnorm", "beta length");
  if (mode == Mode::Train && n < 2) {
    throw ValidationError("batchnorm: train mode needs a batch of at least 2, got " + std::to_string(n));
  }
  if (mode == Mode::Eval && (stats.mean == nullptr || stats.var == nullptr)) {
    throw ValidationError("batchnorm: eval mode needs running statistics");
  }
  for (const Tensor<T>* s : {stats.mean, stats.var}) {
    if (s != nullptr) require_dim(s->size(), f, "batchnorm", "running statistics length");
  }

  auto at = [f, spatial](std::size_t s, std::size_t ch, std::size_t i) { return (s * f + ch) * spatial + i; };

  std::vector<T> mean(f), inv_std(f);
  if (mode == Mode::Train) {
    for (std::size_t ch = 0; ch < f; ++ch) {
      double m = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < spatial; ++i) m += x[at(s, ch, i)];
      m /= static_cast<double>(count);
      double v = 0.0;
      for (std::size_t s = 0; s < n; ++s)
        for (std::size_t i = 0; i < spatial; ++i) {
          const double d = x[at(s, ch, i)] - m;
          v += d * d;
        }
      v /= static_cast<double>(count);
      mean[ch] = static_cast<T>(m);
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(v + kBatchNormEpsilon));
      if (stats.mean != nullptr && stats.var != nullptr) {
        const double mom = kBatchNormMomentum;
        const double unbiased = v * static_cast<double>(count) / static_cast<double>(count - 1);
        (*stats.mean)[ch] = static_cast<T>((1.0 - mom) * (*stats.mean)[ch] + mom * m);
        (*stats.var)[ch] = static_cast<T>((1.0 - mom) * (*stats.var)[ch] + mom * unbiased);
      }
    }
  } else {
    for (std::size_t ch = 0; ch < f; ++ch) {
      mean[ch] = (*stats.mean)[ch];
      inv_std[ch] = static_cast<T>(1.0 / std::sqrt(static_cast<double>((*stats.var)[ch]) + kBatchNormEpsilon));
    }
  }

  const Tensor<T>& g = tape.value(gamma);
  const Tensor<T>& bt = tape.value(beta);
  Tensor<T> xhat(x.shape());
  Tensor<T> out(x.shape());
  for (std::size_t s = 0; s < n; ++s)
    for (std::size_t ch = 0; ch < f; ++ch)
      for (std::size_t i = 0; i < spatial; ++i) {
        const std::size_t idx = at(s, ch, i);
        xhat[idx] = (x[idx] - mean[ch]) * inv_std[ch];
        out[idx] = g[ch] * xhat[idx] + bt[ch];
      }

  return tape.record(
      std::move(out), {input, gamma, beta},
      [=, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape<T>& t, std::size_t self) {
        const Tensor<T>& gy = t.grad_slot(self);
        const Tensor<T>& gv = t.value(gamma);
        std::vector<double> sum_dy(f, 0.0), sum_dy_xhat(f, 0.0);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < f; ++ch)
            for (std::size_t i = 0; i < spatial; ++i) {
              const std::size_t idx = at(s, ch, i);
              sum_dy[ch] += gy[idx];
              sum_dy_xhat[ch] += static_cast<double>(gy[idx]) * xhat[idx];
            }
        if (t.requires_grad(gamma)) {
          Tensor<T>& gg = t.grad_slot(gamma);
          for (std::size_t ch = 0; ch < f; ++ch) gg[ch] += static_cast<T>(sum_dy_xhat[ch]);
        }
        if (t.requires_grad(beta)) {
          Tensor<T>& gb = t.grad_slot(beta);
          for (std::size_t ch = 0; ch < f; ++ch) gb[ch] += static_cast<T>(sum_dy[ch]);
        }
        if (!t.requires_grad(input)) return;
        Tensor<T>& gx = t.grad_slot(input);
        const T m = static_cast<T>(count);
        for (std::size_t s = 0; s < n; ++s)
          for (std::size_t ch = 0; ch < f; ++ch) {
            const T scale = gv[ch] * inv_std[ch];
            const T mean_dy = static_cast<T>(sum_dy[ch]) / m;
            const T mean_dy_xhat = static_cast<T>(sum_dy_xhat[ch]) / m;
            for (std::size_t i = 0; i < spatial; ++i) {
              const std::size_t idx = at(s, ch, i);
              if (mode == Mode::Train) {
                gx[idx] += scale * (gy[idx] - mean_dy - xhat[idx] * mean_dy_xhat);
              } else {
                gx[idx] += scale * gy[idx];
              }
            }
          }
      });
}

template <typename T>
Var softmax(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  require_rank(x.shape(), 2, "softmax", "input");
  const std::size_t n = x.dim(0), k = x.dim(1);
  Tensor<T> out(x.shape());
  for (std::size_t r = 0; r < n; ++r) {
    const T* row = x.ptr() + r * k;
    T* o = out.ptr() + r * k;
    const T mx = *std::max_element(row, row + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      o[j] = std::exp(row[j] - mx);
      total += o[j];
    }
    for (std::size_t j = 0; j < k; ++j) o[j] = static_cast<T>(o[j] / total);
  }
  return tape.record(std::move(out), {input}, [input, n, k](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(Var{self});
    const Tensor<T>& gy = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(input);
    for (std::size_t r = 0; r < n; ++r) {
      double inner = 0.0;
      for (std::size_t j = 0; j < k; ++j) inner += static_cast<double>(gy[r * k + j]) * y[r * k + j];
      for (std::size_t j = 0; j < k; ++j) {
        const std::size_t idx = r * k + j;
        gx[idx] += y[idx] * (gy[idx] - static_cast<T>(inner));
      }
    }
  });
}

template <typename T>
T logistic(T x) {
  if (x >= T{0}) return T{1} / (T{1} + std::exp(-x));
  const T e = std::exp(x);
  return e / (T{1} + e);
}

template <typename T>
Var sigmoid(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = logistic(x[i]);
  return tape.record(std::move(out), {input}, [input](Tape<T>& t, std::size_t self) {
    const Tensor<T>& y = t.value(Var{self});
    const Tensor<T>& gy = t.grad_slot(self);
    Tensor<T>& gx = t.grad_slot(input);
    for (std::size_t i = 0; i < y.size(); ++i) gx[i] += gy[i] * y[i] * (T{1} - y[i]);
  });
}

template <typename T>
Var kronecker(Tape<T>& tape, Var u, Var v) {
  const Tensor<T>& a = tape.value(u);
  const Tensor<T>& b = tape.value(v);
  if (a.rank() != b.rank() || (a.rank() != 1 && a.rank() != 2)) {
    throw ShapeError("kronecker: operands must both be vectors (or row-stacked vectors), got " +
                     shape_string(a.shape()) + " and " + shape_string(b.shape()));
  }
  const bool batched = a.rank() == 2;
  const std::size_t rows = batched ? a.dim(0) : 1;
  if (batched) require_dim(b.dim(0), rows, "kronecker", "row count of second operand");
  const std::size_t n = a.dim(a.rank() - 1), m = b.dim(b.rank() - 1);
  Tensor<T> out(batched ? Shape{rows, n * m} : Shape{n * m});
  for (std::size_t r = 0; r < rows; ++r) {
    const T* ur = a.ptr() + r * n;
    const T* vr = b.ptr() + r * m;
    T* o = out.ptr() + r * n * m;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < m; ++j) o[i * m + j] = ur[i] * vr[j];
  }
  return tape.record(std::move(out), {u, v}, [u, v, rows, n, m](Tape<T>& t, std::size_t self) {
    const Tensor<T>& gy = t.grad_slot(self);
    const bool need_u = t.requires_grad(u), need_v = t.requires_grad(v);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* g = gy.ptr() + r * n * m;
      if (need_u) {
        const T* vr = t.value(v).ptr() + r * m;
        T* gu = t.grad_slot(u).ptr() + r * n;
        for (std::size_t i = 0; i < n; ++i) gu[i] += kernels::dot(g + i * m, vr, m);
      }
      if (need_v) {
        const T* ur = t.value(u).ptr() + r * n;
        T* gv = t.grad_slot(v).ptr() + r * m;
        for (std::size_t i = 0; i < n; ++i) kernels::axpy(m, ur[i], g + i * m, gv);
      }
    }
  });
}

template <typename T>
Var sum(Tape<T>& tape, Var input) {
  const Tensor<T>& x = tape.value(input);
  double acc = 0.0;
  for (T e : x.data()) acc += e;
  return tape.record(Tensor<T>({1}, static_cast<T>(acc)), {input}, [input](Tape<T>& t, std::size_t self) {
    const T g = t.grad_slot(self)[0];
    for (T& e : t.grad_slot(input).data()) e += g;
  });
}

template <typename T>
Var weighted_sum(Tape<T>& tape, Var input, const Tensor<T>& weights) {
  const Tensor<T>& x = tape.value(input);
  require_dim(weights.size(), x.size(), "weighted_sum", "weight count");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) acc += static_cast<double>(weights[i]) * x[i];
  return tape.record(Tensor<T>({1}, static_cast<T>(acc)), {input},
                     [input, weights](Tape<T>& t, std::size_t self) {
                       const T g = t.grad_slot(self)[0];
                       Tensor<T>& gx = t.grad_slot(input);
                       for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
                     });
}

template <typename T>
Var add_scaled(Tape<T>& tape, Var a, Var b, T scale) {
  const Tensor<T>& x = tape.value(a);
  const Tensor<T>& y = tape.value(b);
  if (x.shape() != y.shape()) {
    throw ShapeError("add_scaled: shapes " + shape_string(x.shape()) + " and " + shape_string(y.shape()) +
                     " differ");
  }
  Tensor<T> out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] + scale * y[i];
  return tape.record(std::move(out), {a, b}, [a, b, scale](Tape<T>& t, std::size_t self) {
    const Tensor<T>& g = t.grad_slot(self);
    if (t.requires_grad(a)) {
      Tensor<T>& ga = t.grad_slot(a);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
    }
    if (t.requires_grad(b)) {
      Tensor<T>& gb = t.grad_slot(b);
      for (std::size_t i = 0; i < g.size(); ++i) gb[i] += scale * g[i];
    }
  });
}

template <typename T>
Var element(Tape<T>& tape, Var input, std::size_t flat_index) {
  const Tensor<T>& x = tape.value(input);
  if (flat_index >= x.size()) {
    throw ShapeError("element: index " + std::to_string(flat_index) + " out of range for " +
                     shape_string(x.shape()));
  }
  return tape.record(Tensor<T>({1}, x[flat_index]), {input}, [input, flat_index](Tape<T>& t, std::size_t self) {
    t.grad_slot(input)[flat_index] += t.grad_slot(self)[0];
  });
}

#define FIDN_INSTANTIATE_OPS(T)                                                          \
  template Var conv2d<T>(Tape<T>&, Var, Var, Var);                                       \
  template Var maxpool2x2<T>(Tape<T>&, Var);                                             \
  template Var global_avg_pool<T>(Tape<T>&, Var);                                        \
  template Var relu<T>(Tape<T>&, Var);                                                   \
  template Var fully_connected<T>(Tape<T>&, Var, Var, Var);                              \
  template Var batchnorm<T>(Tape<T>&, Var, Var, Var, Mode, RunningStats<T>);             \
  template Var softmax<T>(Tape<T>&, Var);                                                \
  template Var sigmoid<T>(Tape<T>&, Var);                                                \
  template Var kronecker<T>(Tape<T>&, Var, Var);                                         \
  template Var sum<T>(Tape<T>&, Var);                                                    \
  template Var weighted_sum<T>(Tape<T>&, Var, const Tensor<T>&);                         \
  template Var add_scaled<T>(Tape<T>&, Var, Var, T);                                     \
  template Var element<T>(Tape<T>&, Var, std::size_t);

FIDN_INSTANTIATE_OPS(float)
FIDN_INSTANTIATE_OPS(double)

}  // namespace fidn::ops
