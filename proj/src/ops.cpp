#include "cerberus/ops.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <string>

namespace cerberus {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const MatRM>;
using MMap = Eigen::Map<MatRM>;

bool want_grad(std::initializer_list<const Tensor*> inputs) {
  if (GradientTape::active() == nullptr) return false;
  for (const Tensor* t : inputs) {
    if (t->requires_grad()) return true;
  }
  return false;
}

void require_rank(const Tensor& t, int rank, const char* op) {
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                         ", got shape " + shape_to_string(t.shape()));
  }
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
}

double stable_sigmoid(double z) {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::from_array(a.shape(), a.array() + b.array());
  out.check_finite("add");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradientTape::active()->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      if (ta.requires_grad()) ta.accumulate_grad(to.grad());
      if (tb.requires_grad()) tb.accumulate_grad(to.grad());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::from_array(a.shape(), a.array() - b.array());
  out.check_finite("sub");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradientTape::active()->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      if (ta.requires_grad()) ta.accumulate_grad(to.grad());
      if (tb.requires_grad()) tb.accumulate_grad(-to.grad());
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::from_array(a.shape(), a.array() * b.array());
  out.check_finite("mul");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradientTape::active()->record([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& g = to.grad();
      if (ta.requires_grad()) ta.accumulate_grad(g * tb.array());
      if (tb.requires_grad()) tb.accumulate_grad(g * ta.array());
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::from_array(a.shape(), a.array() * c);
  out.check_finite("scale");
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to, c]() mutable {
      if (!to.has_grad()) return;
      ta.accumulate_grad(to.grad() * c);
    });
  }
  return out;
}

Tensor gelu(const Tensor& a) {
  constexpr double kSqrt2OverPi = 0.7978845608028653558798921198687;
  constexpr double kCubic = 0.044715;
  const Eigen::ArrayXd& x = a.array();
  Eigen::ArrayXd u = kSqrt2OverPi * (x + kCubic * x.cube());
  Eigen::ArrayXd t = u.tanh();
  Tensor out = Tensor::from_array(a.shape(), 0.5 * x * (1.0 + t));
  out.check_finite("gelu");
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& x2 = ta.array();
      Eigen::ArrayXd u2 = 0.7978845608028653558798921198687 * (x2 + 0.044715 * x2.cube());
      Eigen::ArrayXd t2 = u2.tanh();
      Eigen::ArrayXd du = 0.7978845608028653558798921198687 * (1.0 + 3.0 * 0.044715 * x2.square());
      Eigen::ArrayXd d = 0.5 * (1.0 + t2) + 0.5 * x2 * (1.0 - t2.square()) * du;
      ta.accumulate_grad(to.grad() * d);
    });
  }
  return out;
}

Tensor sum(const Tensor& a) {
  Tensor out = Tensor::scalar(a.array().sum());
  out.check_finite("sum");
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to]() mutable {
      if (!to.has_grad()) return;
      ta.accumulate_grad(Eigen::ArrayXd::Constant(ta.size(), to.grad()[0]));
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const int m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2) {
    throw DimensionError("matmul: inner extents disagree, " + shape_to_string(a.shape()) +
                         " vs " + shape_to_string(b.shape()));
  }
  Eigen::ArrayXd data(static_cast<long>(m) * n);
  MMap(data.data(), m, n).noalias() = CMap(a.data(), m, k) * CMap(b.data(), k, n);
  Tensor out = Tensor::from_array({m, n}, std::move(data));
  out.check_finite("matmul");
  if (want_grad({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    GradientTape::active()->record([ta, tb, to, m, k, n]() mutable {
      if (!to.has_grad()) return;
      CMap g(to.grad().data(), m, n);
      if (ta.requires_grad()) {
        Eigen::ArrayXd ga(static_cast<long>(m) * k);
        MMap(ga.data(), m, k).noalias() = g * CMap(tb.data(), k, n).transpose();
        ta.accumulate_grad(ga);
      }
      if (tb.requires_grad()) {
        Eigen::ArrayXd gb(static_cast<long>(k) * n);
        MMap(gb.data(), k, n).noalias() = CMap(ta.data(), m, k).transpose() * g;
        tb.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const int m = a.dim(0), n = a.dim(1);
  Eigen::ArrayXd data(static_cast<long>(m) * n);
  MMap(data.data(), n, m) = CMap(a.data(), m, n).transpose();
  Tensor out = Tensor::from_array({n, m}, std::move(data));
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to, m, n]() mutable {
      if (!to.has_grad()) return;
      Eigen::ArrayXd ga(static_cast<long>(m) * n);
      MMap(ga.data(), m, n) = CMap(to.grad().data(), n, m).transpose();
      ta.accumulate_grad(ga);
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& a, int r0, int r1) {
  require_rank(a, 2, "slice_rows");
  const int m = a.dim(0), n = a.dim(1);
  if (r0 < 0 || r1 > m || r0 >= r1) {
    throw DimensionError("slice_rows: invalid window [" + std::to_string(r0) + ", " +
                         std::to_string(r1) + ") for " + shape_to_string(a.shape()));
  }
  const int rows = r1 - r0;
  Eigen::ArrayXd data(static_cast<long>(rows) * n);
  MMap(data.data(), rows, n) = CMap(a.data(), m, n).middleRows(r0, rows);
  Tensor out = Tensor::from_array({rows, n}, std::move(data));
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to, m, n, r0, rows]() mutable {
      if (!to.has_grad()) return;
      Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(static_cast<long>(m) * n);
      MMap(ga.data(), m, n).middleRows(r0, rows) = CMap(to.grad().data(), rows, n);
      ta.accumulate_grad(ga);
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& a, int c0, int c1) {
  require_rank(a, 2, "slice_cols");
  const int m = a.dim(0), n = a.dim(1);
  if (c0 < 0 || c1 > n || c0 >= c1) {
    throw DimensionError("slice_cols: invalid window [" + std::to_string(c0) + ", " +
                         std::to_string(c1) + ") for " + shape_to_string(a.shape()));
  }
  const int cols = c1 - c0;
  Eigen::ArrayXd data(static_cast<long>(m) * cols);
  MMap(data.data(), m, cols) = CMap(a.data(), m, n).middleCols(c0, cols);
  Tensor out = Tensor::from_array({m, cols}, std::move(data));
  if (want_grad({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    GradientTape::active()->record([ta, to, m, n, c0, cols]() mutable {
      if (!to.has_grad()) return;
      Eigen::ArrayXd ga = Eigen::ArrayXd::Zero(static_cast<long>(m) * n);
      MMap(ga.data(), m, n).middleCols(c0, cols) = CMap(to.grad().data(), m, cols);
      ta.accumulate_grad(ga);
    });
  }
  return out;
}

Tensor tile_rows(const Tensor& row, int n) {
  require_rank(row, 2, "tile_rows");
  if (row.dim(0) != 1) {
    throw DimensionError("tile_rows: expected a [1xd] row, got " + shape_to_string(row.shape()));
  }
  const int d = row.dim(1);
  Eigen::ArrayXd data(static_cast<long>(n) * d);
  MMap(data.data(), n, d) = CMap(row.data(), 1, d).replicate(n, 1);
  Tensor out = Tensor::from_array({n, d}, std::move(data));
  if (want_grad({&row})) {
    out.set_requires_grad(true);
    Tensor tr = row, to = out;
    GradientTape::active()->record([tr, to, n, d]() mutable {
      if (!to.has_grad()) return;
      Eigen::ArrayXd gr(d);
      Eigen::Map<Eigen::RowVectorXd>(gr.data(), d) =
          CMap(to.grad().data(), n, d).colwise().sum();
      tr.accumulate_grad(gr);
    });
  }
  return out;
}

Tensor hconcat(const Tensor& a, const Tensor& b) { return hconcat(std::vector<Tensor>{a, b}); }

Tensor hconcat(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw DimensionError("hconcat: no inputs");
  const int m = parts[0].dim(0);
  int total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != 2 || p.dim(0) != m) {
      throw DimensionError("hconcat: row extents disagree, " + shape_to_string(parts[0].shape()) +
                           " vs " + shape_to_string(p.shape()));
    }
    total += p.dim(1);
  }
  Eigen::ArrayXd data(static_cast<long>(m) * total);
  MMap out_map(data.data(), m, total);
  int at = 0;
  for (const Tensor& p : parts) {
    out_map.middleCols(at, p.dim(1)) = CMap(p.data(), m, p.dim(1));
    at += p.dim(1);
  }
  Tensor out = Tensor::from_array({m, total}, std::move(data));
  bool track = false;
  if (GradientTape::active() != nullptr) {
    for (const Tensor& p : parts) track = track || p.requires_grad();
  }
  if (track) {
    out.set_requires_grad(true);
    std::vector<Tensor> ins = parts;
    Tensor to = out;
    GradientTape::active()->record([ins, to, m, total]() mutable {
      if (!to.has_grad()) return;
      CMap g(to.grad().data(), m, total);
      int col = 0;
      for (Tensor& p : ins) {
        const int d = p.dim(1);
        if (p.requires_grad()) {
          Eigen::ArrayXd gp(static_cast<long>(m) * d);
          MMap(gp.data(), m, d) = g.middleCols(col, d);
          p.accumulate_grad(gp);
        }
        col += d;
      }
    });
  }
  return out;
}

Tensor add_row_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 2, "add_row_bias");
  require_rank(bias, 1, "add_row_bias");
  const int m = x.dim(0), d = x.dim(1);
  if (bias.dim(0) != d) {
    throw DimensionError("add_row_bias: bias extent " + shape_to_string(bias.shape()) +
                         " does not match " + shape_to_string(x.shape()));
  }
  Eigen::ArrayXd data(static_cast<long>(m) * d);
  MMap(data.data(), m, d) = CMap(x.data(), m, d).rowwise() +
                            Eigen::Map<const Eigen::RowVectorXd>(bias.data(), d);
  Tensor out = Tensor::from_array({m, d}, std::move(data));
  out.check_finite("add_row_bias");
  if (want_grad({&x, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tb = bias, to = out;
    GradientTape::active()->record([tx, tb, to, m, d]() mutable {
      if (!to.has_grad()) return;
      if (tx.requires_grad()) tx.accumulate_grad(to.grad());
      if (tb.requires_grad()) {
        Eigen::ArrayXd gb(d);
        Eigen::Map<Eigen::RowVectorXd>(gb.data(), d) =
            CMap(to.grad().data(), m, d).colwise().sum();
        tb.accumulate_grad(gb);
      }
    });
  }
  return out;
}

namespace {

// cols is (c_in*kh*kw) x (ho*wo), row-major.
void im2col(const double* x, int cin, int h, int w, int kh, int kw, int stride, int pad,
            int ho, int wo, double* cols) {
  int row = 0;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        double* dst = cols + static_cast<std::size_t>(row) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          const bool row_ok = iy >= 0 && iy < h;
          const double* src = row_ok ? x + (static_cast<std::size_t>(c) * h + iy) * w : nullptr;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            dst[static_cast<std::size_t>(oy) * wo + ox] =
                (row_ok && ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

void col2im_add(const double* cols, int cin, int h, int w, int kh, int kw, int stride, int pad,
                int ho, int wo, double* dx) {
  int row = 0;
  for (int c = 0; c < cin; ++c) {
    for (int ky = 0; ky < kh; ++ky) {
      for (int kx = 0; kx < kw; ++kx, ++row) {
        const double* src = cols + static_cast<std::size_t>(row) * ho * wo;
        for (int oy = 0; oy < ho; ++oy) {
          const int iy = oy * stride + ky - pad;
          if (iy < 0 || iy >= h) continue;
          double* dst = dx + (static_cast<std::size_t>(c) * h + iy) * w;
          for (int ox = 0; ox < wo; ++ox) {
            const int ix = ox * stride + kx - pad;
            if (ix >= 0 && ix < w) dst[ix] += src[static_cast<std::size_t>(oy) * wo + ox];
          }
        }
      }
    }
  }
}

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& kernel, int stride, int pad) {
  require_rank(x, 3, "conv2d");
  require_rank(kernel, 4, "conv2d");
  const int cin = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int cout = kernel.dim(0), kcin = kernel.dim(1), kh = kernel.dim(2), kw = kernel.dim(3);
  if (kcin != cin) {
    throw DimensionError("conv2d: kernel expects " + std::to_string(kcin) +
                         " input channels, input has shape " + shape_to_string(x.shape()));
  }
  if (stride < 1 || pad < 0) throw ConfigError("conv2d: stride must be >=1 and pad >=0");
  const int num_y = h + 2 * pad - kh;
  const int num_x = w + 2 * pad - kw;
  if (num_y < 0 || num_x < 0 || num_y % stride != 0 || num_x % stride != 0) {
    throw DimensionError("conv2d: non-integral output extent for input " +
                         shape_to_string(x.shape()) + ", kernel " +
                         shape_to_string(kernel.shape()) + ", stride " + std::to_string(stride) +
                         ", pad " + std::to_string(pad));
  }
  const int ho = num_y / stride + 1;
  const int wo = num_x / stride + 1;
  const int ckk = cin * kh * kw;

  Eigen::ArrayXd cols(static_cast<long>(ckk) * ho * wo);
  im2col(x.data(), cin, h, w, kh, kw, stride, pad, ho, wo, cols.data());
  Eigen::ArrayXd data(static_cast<long>(cout) * ho * wo);
  MMap(data.data(), cout, ho * wo).noalias() =
      CMap(kernel.data(), cout, ckk) * CMap(cols.data(), ckk, ho * wo);
  Tensor out = Tensor::from_array({cout, ho, wo}, std::move(data));
  out.check_finite("conv2d");

  if (want_grad({&x, &kernel})) {
    out.set_requires_grad(true);
    Tensor tx = x, tk = kernel, to = out;
    GradientTape::active()->record([tx, tk, to, cin, h, w, cout, kh, kw, stride, pad, ho, wo,
                                    ckk]() mutable {
      if (!to.has_grad()) return;
      CMap g(to.grad().data(), cout, ho * wo);
      // The im2col matrix is recomputed rather than kept on the tape.
      Eigen::ArrayXd cols2(static_cast<long>(ckk) * ho * wo);
      im2col(tx.data(), cin, h, w, kh, kw, stride, pad, ho, wo, cols2.data());
      if (tk.requires_grad()) {
        Eigen::ArrayXd gk(static_cast<long>(cout) * ckk);
        MMap(gk.data(), cout, ckk).noalias() = g * CMap(cols2.data(), ckk, ho * wo).transpose();
        tk.accumulate_grad(gk);
      }
      if (tx.requires_grad()) {
        Eigen::ArrayXd gcols(static_cast<long>(ckk) * ho * wo);
        MMap(gcols.data(), ckk, ho * wo).noalias() = CMap(tk.data(), cout, ckk).transpose() * g;
        Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(tx.size());
        col2im_add(gcols.data(), cin, h, w, kh, kw, stride, pad, ho, wo, gx.data());
        tx.accumulate_grad(gx);
      }
    });
  }
  return out;
}

Tensor add_channel_bias(const Tensor& x, const Tensor& bias) {
  require_rank(x, 3, "add_channel_bias");
  require_rank(bias, 1, "add_channel_bias");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  if (bias.dim(0) != c) {
    throw DimensionError("add_channel_bias: bias extent " + shape_to_string(bias.shape()) +
                         " does not match " + shape_to_string(x.shape()));
  }
  const long plane = static_cast<long>(h) * w;
  Eigen::ArrayXd data = x.array();
  for (int ch = 0; ch < c; ++ch) data.segment(ch * plane, plane) += bias.array()[ch];
  Tensor out = Tensor::from_array({c, h, w}, std::move(data));
  out.check_finite("add_channel_bias");
  if (want_grad({&x, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tb = bias, to = out;
    GradientTape::active()->record([tx, tb, to, c, plane]() mutable {
      if (!to.has_grad()) return;
      if (tx.requires_grad()) tx.accumulate_grad(to.grad());
      if (tb.requires_grad()) {
        Eigen::ArrayXd gb(c);
        for (int ch = 0; ch < c; ++ch) gb[ch] = to.grad().segment(ch * plane, plane).sum();
        tb.accumulate_grad(gb);
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  if (x.rank() == 0 || axis < 0 || axis >= x.rank()) {
    throw DimensionError("softmax: axis " + std::to_string(axis) + " invalid for shape " +
                         shape_to_string(x.shape()));
  }
  const int n = x.dim(axis);
  long outer = 1, inner = 1;
  for (int i = 0; i < axis; ++i) outer *= x.dim(i);
  for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);

  Eigen::ArrayXd data(x.size());
  const Eigen::ArrayXd& in = x.array();
  for (long o = 0; o < outer; ++o) {
    for (long s = 0; s < inner; ++s) {
      const long base = o * n * inner + s;
      double mx = in[base];
      for (int i = 1; i < n; ++i) mx = std::max(mx, in[base + i * inner]);
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = std::exp(in[base + i * inner] - mx);
        data[base + i * inner] = e;
        total += e;
      }
      for (int i = 0; i < n; ++i) data[base + i * inner] /= total;
    }
  }
  Tensor out = Tensor::from_array(x.shape(), std::move(data));
  out.check_finite("softmax");
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    GradientTape::active()->record([tx, to, outer, inner, n]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& y = to.array();
      const Eigen::ArrayXd& g = to.grad();
      Eigen::ArrayXd gx(tx.size());
      for (long o = 0; o < outer; ++o) {
        for (long s = 0; s < inner; ++s) {
          const long base = o * n * inner + s;
          double dot = 0.0;
          for (int i = 0; i < n; ++i) dot += g[base + i * inner] * y[base + i * inner];
          for (int i = 0; i < n; ++i) {
            const long idx = base + i * inner;
            gx[idx] = y[idx] * (g[idx] - dot);
          }
        }
      }
      tx.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  if (x.rank() < 1) throw DimensionError("layer_norm: rank-0 input");
  require_rank(gamma, 1, "layer_norm");
  require_rank(beta, 1, "layer_norm");
  const int d = x.dim(x.rank() - 1);
  if (gamma.dim(0) != d || beta.dim(0) != d) {
    throw DimensionError("layer_norm: gamma/beta extent must match last axis of " +
                         shape_to_string(x.shape()));
  }
  const long rows = x.size() / d;
  Eigen::ArrayXd xhat(x.size());
  Eigen::ArrayXd inv_std(rows);
  const Eigen::ArrayXd& in = x.array();
  for (long r = 0; r < rows; ++r) {
    auto seg = in.segment(r * d, d);
    const double mean = seg.mean();
    const double var = (seg - mean).square().mean();
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std[r] = inv;
    xhat.segment(r * d, d) = (seg - mean) * inv;
  }
  Eigen::ArrayXd data(x.size());
  for (long r = 0; r < rows; ++r) {
    data.segment(r * d, d) = xhat.segment(r * d, d) * gamma.array() + beta.array();
  }
  Tensor out = Tensor::from_array(x.shape(), std::move(data));
  out.check_finite("layer_norm");
  if (want_grad({&x, &gamma, &beta})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gamma, tb = beta, to = out;
    GradientTape::active()->record([tx, tg, tb, to, xhat, inv_std, rows, d]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& g = to.grad();
      if (tg.requires_grad()) {
        Eigen::ArrayXd gg = Eigen::ArrayXd::Zero(d);
        for (long r = 0; r < rows; ++r) gg += g.segment(r * d, d) * xhat.segment(r * d, d);
        tg.accumulate_grad(gg);
      }
      if (tb.requires_grad()) {
        Eigen::ArrayXd gb = Eigen::ArrayXd::Zero(d);
        for (long r = 0; r < rows; ++r) gb += g.segment(r * d, d);
        tb.accumulate_grad(gb);
      }
      if (tx.requires_grad()) {
        Eigen::ArrayXd gx(tx.size());
        for (long r = 0; r < rows; ++r) {
          Eigen::ArrayXd dxhat = g.segment(r * d, d) * tg.array();
          auto xh = xhat.segment(r * d, d);
          const double mean_dxhat = dxhat.mean();
          const double mean_dxhat_xhat = (dxhat * xh).mean();
          gx.segment(r * d, d) = inv_std[r] * (dxhat - mean_dxhat - xh * mean_dxhat_xhat);
        }
        tx.accumulate_grad(gx);
      }
    });
  }
  return out;
}

namespace {

struct LinearTaps {
  std::vector<int> lo, hi;
  std::vector<double> frac;
};

LinearTaps bilinear_taps(int out_extent, int in_extent, int factor) {
  LinearTaps taps;
  taps.lo.resize(out_extent);
  taps.hi.resize(out_extent);
  taps.frac.resize(out_extent);
  for (int o = 0; o < out_extent; ++o) {
    double s = (o + 0.5) / factor - 0.5;
    if (s < 0.0) s = 0.0;
    if (s > in_extent - 1) s = in_extent - 1;
    int lo = static_cast<int>(std::floor(s));
    if (lo > in_extent - 1) lo = in_extent - 1;
    const int hi = std::min(lo + 1, in_extent - 1);
    taps.lo[o] = lo;
    taps.hi[o] = hi;
    taps.frac[o] = s - lo;
  }
  return taps;
}

}  // namespace

Tensor upsample_bilinear(const Tensor& x, int factor) {
  require_rank(x, 3, "upsample_bilinear");
  if (factor < 1) throw ConfigError("upsample_bilinear: factor must be a positive integer");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int oh = h * factor, ow = w * factor;
  const LinearTaps ty = bilinear_taps(oh, h, factor);
  const LinearTaps tx_taps = bilinear_taps(ow, w, factor);
  Eigen::ArrayXd data(static_cast<long>(c) * oh * ow);
  const Eigen::ArrayXd& in = x.array();
  for (int ch = 0; ch < c; ++ch) {
    const long in_base = static_cast<long>(ch) * h * w;
    const long out_base = static_cast<long>(ch) * oh * ow;
    for (int oy = 0; oy < oh; ++oy) {
      const double fy = ty.frac[oy];
      const long r0 = in_base + static_cast<long>(ty.lo[oy]) * w;
      const long r1 = in_base + static_cast<long>(ty.hi[oy]) * w;
      for (int ox = 0; ox < ow; ++ox) {
        const double fx = tx_taps.frac[ox];
        const int j0 = tx_taps.lo[ox], j1 = tx_taps.hi[ox];
        const double top = (1.0 - fx) * in[r0 + j0] + fx * in[r0 + j1];
        const double bot = (1.0 - fx) * in[r1 + j0] + fx * in[r1 + j1];
        data[out_base + static_cast<long>(oy) * ow + ox] = (1.0 - fy) * top + fy * bot;
      }
    }
  }
  Tensor out = Tensor::from_array({c, oh, ow}, std::move(data));
  out.check_finite("upsample_bilinear");
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor txin = x, to = out;
    GradientTape::active()->record([txin, to, ty, tx_taps, c, h, w, oh, ow]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& g = to.grad();
      Eigen::ArrayXd gx = Eigen::ArrayXd::Zero(txin.size());
      for (int ch = 0; ch < c; ++ch) {
        const long in_base = static_cast<long>(ch) * h * w;
        const long out_base = static_cast<long>(ch) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const double fy = ty.frac[oy];
          const long r0 = in_base + static_cast<long>(ty.lo[oy]) * w;
          const long r1 = in_base + static_cast<long>(ty.hi[oy]) * w;
          for (int ox = 0; ox < ow; ++ox) {
            const double fx = tx_taps.frac[ox];
            const int j0 = tx_taps.lo[ox], j1 = tx_taps.hi[ox];
            const double gv = g[out_base + static_cast<long>(oy) * ow + ox];
            gx[r0 + j0] += (1.0 - fy) * (1.0 - fx) * gv;
            gx[r0 + j1] += (1.0 - fy) * fx * gv;
            gx[r1 + j0] += fy * (1.0 - fx) * gv;
            gx[r1 + j1] += fy * fx * gv;
          }
        }
      }
      txin.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor map_to_tokens(const Tensor& x) {
  require_rank(x, 3, "map_to_tokens");
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int n = h * w;
  Eigen::ArrayXd data(static_cast<long>(n) * c);
  const Eigen::ArrayXd& in = x.array();
  for (int ch = 0; ch < c; ++ch) {
    for (int p = 0; p < n; ++p) data[static_cast<long>(p) * c + ch] = in[static_cast<long>(ch) * n + p];
  }
  Tensor out = Tensor::from_array({n, c}, std::move(data));
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    GradientTape::active()->record([tx, to, c, n]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& g = to.grad();
      Eigen::ArrayXd gx(tx.size());
      for (int ch = 0; ch < c; ++ch) {
        for (int p = 0; p < n; ++p) gx[static_cast<long>(ch) * n + p] = g[static_cast<long>(p) * c + ch];
      }
      tx.accumulate_grad(gx);
    });
  }
  return out;
}

Tensor tokens_to_map(const Tensor& tokens, int h, int w) {
  require_rank(tokens, 2, "tokens_to_map");
  const int n = tokens.dim(0), c = tokens.dim(1);
  if (n != h * w) {
    throw DimensionError("tokens_to_map: " + std::to_string(n) + " tokens cannot fill a " +
                         std::to_string(h) + "x" + std::to_string(w) + " grid");
  }
  Eigen::ArrayXd data(static_cast<long>(c) * n);
  const Eigen::ArrayXd& in = tokens.array();
  for (int ch = 0; ch < c; ++ch) {
    for (int p = 0; p < n; ++p) data[static_cast<long>(ch) * n + p] = in[static_cast<long>(p) * c + ch];
  }
  Tensor out = Tensor::from_array({c, h, w}, std::move(data));
  if (want_grad({&tokens})) {
    out.set_requires_grad(true);
    Tensor tt = tokens, to = out;
    GradientTape::active()->record([tt, to, c, n]() mutable {
      if (!to.has_grad()) return;
      const Eigen::ArrayXd& g = to.grad();
      Eigen::ArrayXd gt(tt.size());
      for (int ch = 0; ch < c; ++ch) {
        for (int p = 0; p < n; ++p) gt[static_cast<long>(p) * c + ch] = g[static_cast<long>(ch) * n + p];
      }
      tt.accumulate_grad(gt);
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_to_string(x.shape()) + " as " +
                         shape_to_string(new_shape));
  }
  Tensor out = Tensor::from_array(std::move(new_shape), x.array());
  if (want_grad({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    GradientTape::active()->record([tx, to]() mutable {
      if (!to.has_grad()) return;
      tx.accumulate_grad(to.grad());
    });
  }
  return out;
}

Tensor cross_entropy_masked(const Tensor& logits, const ByteRaster& labels,
                            const ByteRaster& mask) {
  require_rank(logits, 3, "cross_entropy_masked");
  const int classes = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (labels.h != h || labels.w != w || mask.h != h || mask.w != w) {
    throw DimensionError("cross_entropy_masked: raster extents do not match logits " +
                         shape_to_string(logits.shape()));
  }
  const long plane = static_cast<long>(h) * w;
  const Eigen::ArrayXd& z = logits.array();
  long count = 0;
  double total = 0.0;
  for (long p = 0; p < plane; ++p) {
    if (mask.v[static_cast<std::size_t>(p)] == 0) continue;
    const int label = labels.v[static_cast<std::size_t>(p)];
    if (label >= classes) {
      throw Error("cross_entropy_masked: label " + std::to_string(label) +
                  " out of range at a masked pixel");
    }
    double mx = z[p];
    for (int c = 1; c < classes; ++c) mx = std::max(mx, z[c * plane + p]);
    double se = 0.0;
    for (int c = 0; c < classes; ++c) se += std::exp(z[c * plane + p] - mx);
    total += mx + std::log(se) - z[static_cast<long>(label) * plane + p];
    ++count;
  }
  if (count == 0) {
    throw EmptySupervisionError("cross_entropy_masked: supervision mask selects no pixels");
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  out.check_finite("cross_entropy_masked");
  if (want_grad({&logits})) {
    out.set_requires_grad(true);
    Tensor tl = logits, to = out;
    ByteRaster lb = labels, mk = mask;
    GradientTape::active()->record([tl, to, lb, mk, classes, plane, count]() mutable {
      if (!to.has_grad()) return;
      const double gscale = to.grad()[0] / static_cast<double>(count);
      const Eigen::ArrayXd& z2 = tl.array();
      Eigen::ArrayXd gz = Eigen::ArrayXd::Zero(tl.size());
      for (long p = 0; p < plane; ++p) {
        if (mk.v[static_cast<std::size_t>(p)] == 0) continue;
        const int label = lb.v[static_cast<std::size_t>(p)];
        double mx = z2[p];
        for (int c = 1; c < classes; ++c) mx = std::max(mx, z2[c * plane + p]);
        double se = 0.0;
        for (int c = 0; c < classes; ++c) se += std::exp(z2[c * plane + p] - mx);
        for (int c = 0; c < classes; ++c) {
          const double soft = std::exp(z2[c * plane + p] - mx) / se;
          gz[c * plane + p] += gscale * (soft - (c == label ? 1.0 : 0.0));
        }
      }
      tl.accumulate_grad(gz);
    });
  }
  return out;
}

Tensor bce_masked(const Tensor& logits, const BinaryStack& targets, const ByteRaster& mask) {
  require_rank(logits, 3, "bce_masked");
  const int k = logits.dim(0), h = logits.dim(1), w = logits.dim(2);
  if (targets.k != k || targets.h != h || targets.w != w || mask.h != h || mask.w != w) {
    throw DimensionError("bce_masked: target/mask extents do not match logits " +
                         shape_to_string(logits.shape()));
  }
  const long plane = static_cast<long>(h) * w;
  const Eigen::ArrayXd& z = logits.array();
  long masked_px = 0;
  double total = 0.0;
  for (long p = 0; p < plane; ++p) {
    if (mask.v[static_cast<std::size_t>(p)] == 0) continue;
    ++masked_px;
    for (int c = 0; c < k; ++c) {
      const double zv = z[c * plane + p];
      const double t = targets.v[static_cast<std::size_t>(c * plane + p)] ? 1.0 : 0.0;
      total += std::max(zv, 0.0) - zv * t + std::log1p(std::exp(-std::abs(zv)));
    }
  }
  if (masked_px == 0) {
    throw EmptySupervisionError("bce_masked: supervision mask selects no pixels");
  }
  const long count = masked_px * k;
  Tensor out = Tensor::scalar(total / static_cast<double>(count));
  out.check_finite("bce_masked");
  if (want_grad({&logits})) {
    out.set_requires_grad(true);
    Tensor tl = logits, to = out;
    BinaryStack tg = targets;
    ByteRaster mk = mask;
    GradientTape::active()->record([tl, to, tg, mk, k, plane, count]() mutable {
      if (!to.has_grad()) return;
      const double gscale = to.grad()[0] / static_cast<double>(count);
      const Eigen::ArrayXd& z2 = tl.array();
      Eigen::ArrayXd gz = Eigen::ArrayXd::Zero(tl.size());
      for (long p = 0; p < plane; ++p) {
        if (mk.v[static_cast<std::size_t>(p)] == 0) continue;
        for (int c = 0; c < k; ++c) {
          const double t = tg.v[static_cast<std::size_t>(c * plane + p)] ? 1.0 : 0.0;
          gz[c * plane + p] += gscale * (stable_sigmoid(z2[c * plane + p]) - t);
        }
      }
      tl.accumulate_grad(gz);
    });
  }
  return out;
}

void backward(const Tensor& loss) {
  GradientTape* tape = GradientTape::active();
  if (tape == nullptr) throw Error("backward() requires an active GradientTape");
  tape->backward(loss);
}

}  // namespace cerberus
