#pragma once

// Differentiable operations on callig::Tensor.
//
// Conventions:
//  - all reductions run in ascending flat-index order, so results are
//    bit-reproducible;
//  - conv2d is a cross-correlation (the kernel is not flipped);
//  - relu'(0) = 0 and |x|'(0) = 0.

#include <Eigen/Core>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "callig/errors.hpp"
#include "callig/tensor.hpp"

namespace callig {

namespace detail {

using RowMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatrixMap = Eigen::Map<RowMatrix>;
using ConstMatrixMap = Eigen::Map<const RowMatrix>;

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

// y = f(x) elementwise with dy/dx = df(x, y).
template <typename F, typename DF>
Tensor unary(const Tensor& x, std::string_view op, F f, DF df) {
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) y[i] = f(xv[i]);
  return make_result(x.shape(), std::move(y), op, {&x}, [df](Node& out) {
    double* gx = input_grad(out, 0);
    if (!gx) return;
    const auto& xin = out.inputs[0]->value;
    for (std::size_t i = 0; i < out.value.size(); ++i) gx[i] += out.grad[i] * df(xin[i], out.value[i]);
  });
}

inline double stable_sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "add");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] + bv[i];
  return detail::make_result(a.shape(), std::move(y), "add", {&a, &b}, [](Node& out) {
    for (std::size_t k = 0; k < 2; ++k) {
      if (double* g = detail::input_grad(out, k)) {
        for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
      }
    }
  });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "sub");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] - bv[i];
  return detail::make_result(a.shape(), std::move(y), "sub", {&a, &b}, [](Node& out) {
    if (double* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
    }
    if (double* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] -= out.grad[i];
    }
  });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::require_same_shape(a, b, "mul");
  const auto av = a.values();
  const auto bv = b.values();
  std::vector<double> y(av.size());
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = av[i] * bv[i];
  return detail::make_result(a.shape(), std::move(y), "mul", {&a, &b}, [](Node& out) {
    const auto& av = out.inputs[0]->value;
    const auto& bv = out.inputs[1]->value;
    if (double* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * bv[i];
    }
    if (double* g = detail::input_grad(out, 1)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i] * av[i];
    }
  });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(
      x, "scale", [c](double v) { return c * v; }, [c](double, double) { return c; });
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(
      x, "add_scalar", [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(double c, const Tensor& x) { return scale(x, c); }

// ---------------------------------------------------------------------------
// Elementwise nonlinearities

inline Tensor relu(const Tensor& x) {
  return detail::unary(
      x, "relu", [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(
      x, "sigmoid", [](double v) { return detail::stable_sigmoid(v); },
      [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh(const Tensor& x) {
  return detail::unary(
      x, "tanh", [](double v) { return std::tanh(v); }, [](double, double y) { return 1.0 - y * y; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(
      x, "exp", [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

inline Tensor log(const Tensor& x) {
  for (double v : x.values()) {
    if (!(v > 0.0)) throw DomainError("log of nonpositive value " + std::to_string(v));
  }
  return detail::unary(
      x, "log", [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

inline Tensor abs(const Tensor& x) {
  return detail::unary(
      x, "abs", [](double v) { return std::fabs(v); },
      [](double v, double) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); });
}

inline Tensor square(const Tensor& x) {
  return detail::unary(
      x, "square", [](double v) { return v * v; }, [](double v, double) { return 2.0 * v; });
}

// Gradient is passed only strictly inside (lo, hi).
inline Tensor clamp(const Tensor& x, double lo, double hi) {
  return detail::unary(
      x, "clamp", [lo, hi](double v) { return std::min(std::max(v, lo), hi); },
      [lo, hi](double v, double) { return (v > lo && v < hi) ? 1.0 : 0.0; });
}

// ---------------------------------------------------------------------------
// Reductions (ascending index order)

inline Tensor sum(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  return detail::make_result({1}, {s}, "sum", {&x}, [](Node& out) {
    if (double* g = detail::input_grad(out, 0)) {
      const double go = out.grad[0];
      for (std::size_t i = 0; i < out.inputs[0]->value.size(); ++i) g[i] += go;
    }
  });
}

inline Tensor mean(const Tensor& x) {
  double s = 0.0;
  for (double v : x.values()) s += v;
  const double n = static_cast<double>(x.numel());
  return detail::make_result({1}, {s / n}, "mean", {&x}, [n](Node& out) {
    if (double* g = detail::input_grad(out, 0)) {
      const double go = out.grad[0] / n;
      for (std::size_t i = 0; i < out.inputs[0]->value.size(); ++i) g[i] += go;
    }
  });
}

// ---------------------------------------------------------------------------
// Linear algebra

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const auto m = static_cast<Eigen::Index>(a.dim(0));
  const auto k = static_cast<Eigen::Index>(a.dim(1));
  const auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> y(static_cast<std::size_t>(m * n));
  detail::MatrixMap(y.data(), m, n).noalias() =
      detail::ConstMatrixMap(a.values().data(), m, k) * detail::ConstMatrixMap(b.values().data(), k, n);
  return detail::make_result({a.dim(0), b.dim(1)}, std::move(y), "matmul", {&a, &b},
                             [m, k, n](Node& out) {
                               detail::ConstMatrixMap gy(out.grad.data(), m, n);
                               if (double* ga = detail::input_grad(out, 0)) {
                                 detail::ConstMatrixMap bm(out.inputs[1]->value.data(), k, n);
                                 detail::MatrixMap(ga, m, k).noalias() += gy * bm.transpose();
                               }
                               if (double* gb = detail::input_grad(out, 1)) {
                                 detail::ConstMatrixMap am(out.inputs[0]->value.data(), m, k);
                                 detail::MatrixMap(gb, k, n).noalias() += am.transpose() * gy;
                               }
                             });
}

// x[N x F] + b[F] broadcast over rows.
inline Tensor add_row_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 2 || b.numel() != x.dim(1)) {
    throw DimensionError("add_row_bias: shapes " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1);
  const auto xv = x.values();
  const auto bv = b.values();
  std::vector<double> y(xv.size());
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) y[r * cols + c] = xv[r * cols + c] + bv[c];
  return detail::make_result(x.shape(), std::move(y), "add_row_bias", {&x, &b}, [rows, cols](Node& out) {
    if (double* gx = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
    }
    if (double* gb = detail::input_grad(out, 1)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < cols; ++c) gb[c] += out.grad[r * cols + c];
    }
  });
}

// x[N x in] * W[in x out] + b[out].
inline Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  return add_row_bias(matmul(x, weight), bias);
}

// ---------------------------------------------------------------------------
// Shape manipulation

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(shape));
  }
  std::vector<double> y(x.values().begin(), x.values().end());
  return detail::make_result(std::move(shape), std::move(y), "reshape", {&x}, [](Node& out) {
    if (double* g = detail::input_grad(out, 0)) {
      for (std::size_t i = 0; i < out.grad.size(); ++i) g[i] += out.grad[i];
    }
  });
}

// Concatenates 2-D tensors with equal row counts along columns.
inline Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::size_t rows = parts.front().dim(0);
  std::vector<std::size_t> widths;
  std::size_t total = 0;
  for (const auto& p : parts) {
    if (p.rank() != 2 || p.dim(0) != rows) {
      throw DimensionError("concat_cols: incompatible part " + shape_str(p.shape()) + " for " +
                           std::to_string(rows) + " rows");
    }
    widths.push_back(p.dim(1));
    total += p.dim(1);
  }
  std::vector<double> y(rows * total);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const auto pv = parts[k].values();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < widths[k]; ++c) y[r * total + offset + c] = pv[r * widths[k] + c];
    offset += widths[k];
  }
  return detail::make_result({rows, total}, std::move(y), "concat_cols", parts,
                             [rows, total, widths](Node& out) {
                               std::size_t off = 0;
                               for (std::size_t k = 0; k < widths.size(); ++k) {
                                 if (double* g = detail::input_grad(out, k)) {
                                   for (std::size_t r = 0; r < rows; ++r)
                                     for (std::size_t c = 0; c < widths[k]; ++c)
                                       g[r * widths[k] + c] += out.grad[r * total + off + c];
                                 }
                                 off += widths[k];
                               }
                             });
}

// Columns [begin, end) of a 2-D tensor.
inline Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t end) {
  if (x.rank() != 2 || begin >= end || end > x.dim(1)) {
    throw DimensionError("slice_cols: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") invalid for " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0), cols = x.dim(1), w = end - begin;
  const auto xv = x.values();
  std::vector<double> y(rows * w);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < w; ++c) y[r * w + c] = xv[r * cols + begin + c];
  return detail::make_result({rows, w}, std::move(y), "slice_cols", {&x}, [rows, cols, w, begin](Node& out) {
    if (double* g = detail::input_grad(out, 0)) {
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < w; ++c) g[r * cols + begin + c] += out.grad[r * w + c];
    }
  });
}

// Gathers slices along the leading dimension; repeated indices accumulate
// gradient.
inline Tensor select_rows(const Tensor& x, std::vector<std::size_t> indices) {
  const std::size_t rows = x.dim(0);
  const std::size_t stride = x.numel() / rows;
  for (auto i : indices) {
    if (i >= rows) throw DimensionError("select_rows: index " + std::to_string(i) + " out of range");
  }
  Shape shape = x.shape();
  shape[0] = indices.size();
  const auto xv = x.values();
  std::vector<double> y(indices.size() * stride);
  for (std::size_t r = 0; r < indices.size(); ++r)
    std::copy_n(xv.begin() + static_cast<std::ptrdiff_t>(indices[r] * stride), stride,
                y.begin() + static_cast<std::ptrdiff_t>(r * stride));
  return detail::make_result(std::move(shape), std::move(y), "select_rows", {&x},
                             [stride, indices = std::move(indices)](Node& out) {
                               if (double* g = detail::input_grad(out, 0)) {
                                 for (std::size_t r = 0; r < indices.size(); ++r)
                                   for (std::size_t j = 0; j < stride; ++j)
                                     g[indices[r] * stride + j] += out.grad[r * stride + j];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Image operations on N x C x H x W tensors

inline std::size_t conv_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                      std::size_t padding) {
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  const std::size_t padded = in + 2 * padding;
  if (kernel > padded) {
    throw ConfigError("conv2d: kernel extent " + std::to_string(kernel) + " exceeds padded input " +
                      std::to_string(padded));
  }
  if ((padded - kernel) % stride != 0) {
    throw ConfigError("conv2d: non-integral output extent for input " + std::to_string(in) + ", kernel " +
                      std::to_string(kernel) + ", stride " + std::to_string(stride) + ", padding " +
                      std::to_string(padding));
  }
  return (padded - kernel) / stride + 1;
}

namespace detail {

struct ConvGeometry {
  std::size_t channels, height, width, kh, kw, stride, padding, out_h, out_w;
  std::size_t col_rows() const { return channels * kh * kw; }
  std::size_t col_cols() const { return out_h * out_w; }
};

inline void im2col(const double* img, const ConvGeometry& g, double* col) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        double* dst = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            const bool inside = y >= 0 && x >= 0 && y < static_cast<std::ptrdiff_t>(g.height) &&
                                x < static_cast<std::ptrdiff_t>(g.width);
            dst[oy * g.out_w + ox] =
                inside ? img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)]
                       : 0.0;
          }
        }
      }
}

inline void col2im_add(const double* col, const ConvGeometry& g, double* img) {
  const std::size_t cols = g.col_cols();
  for (std::size_t c = 0; c < g.channels; ++c)
    for (std::size_t ki = 0; ki < g.kh; ++ki)
      for (std::size_t kj = 0; kj < g.kw; ++kj) {
        const double* src = col + ((c * g.kh + ki) * g.kw + kj) * cols;
        for (std::size_t oy = 0; oy < g.out_h; ++oy) {
          const std::ptrdiff_t y = static_cast<std::ptrdiff_t>(oy * g.stride + ki) -
                                   static_cast<std::ptrdiff_t>(g.padding);
          if (y < 0 || y >= static_cast<std::ptrdiff_t>(g.height)) continue;
          for (std::size_t ox = 0; ox < g.out_w; ++ox) {
            const std::ptrdiff_t x = static_cast<std::ptrdiff_t>(ox * g.stride + kj) -
                                     static_cast<std::ptrdiff_t>(g.padding);
            if (x < 0 || x >= static_cast<std::ptrdiff_t>(g.width)) continue;
            img[(c * g.height + static_cast<std::size_t>(y)) * g.width + static_cast<std::size_t>(x)] +=
                src[oy * g.out_w + ox];
          }
        }
      }
}

}  // namespace detail

// Cross-correlation of input[N x C x H x W] with kernel[F x C x kH x kW].
inline Tensor conv2d(const Tensor& input, const Tensor& kernel, std::size_t stride, std::size_t padding) {
  if (input.rank() != 4 || kernel.rank() != 4 || input.dim(1) != kernel.dim(1)) {
    throw DimensionError("conv2d: incompatible input " + shape_str(input.shape()) + " and kernel " +
                         shape_str(kernel.shape()));
  }
  detail::ConvGeometry g{input.dim(1), input.dim(2), input.dim(3), kernel.dim(2), kernel.dim(3), stride, padding, 0, 0};
  g.out_h = conv_output_extent(g.height, g.kh, stride, padding);
  g.out_w = conv_output_extent(g.width, g.kw, stride, padding);
  const std::size_t batch = input.dim(0), filters = kernel.dim(0);
  const auto rows = static_cast<Eigen::Index>(g.col_rows());
  const auto cols = static_cast<Eigen::Index>(g.col_cols());
  const auto f = static_cast<Eigen::Index>(filters);
  const std::size_t in_stride = g.channels * g.height * g.width;
  const std::size_t out_stride = filters * g.col_cols();

  std::vector<double> y(batch * out_stride);
  std::vector<double> col(g.col_rows() * g.col_cols());
  detail::ConstMatrixMap k(kernel.values().data(), f, rows);
  for (std::size_t n = 0; n < batch; ++n) {
    detail::im2col(input.values().data() + n * in_stride, g, col.data());
    detail::MatrixMap(y.data() + n * out_stride, f, cols).noalias() = k * detail::ConstMatrixMap(col.data(), rows, cols);
  }
  return detail::make_result(
      {batch, filters, g.out_h, g.out_w}, std::move(y), "conv2d", {&input, &kernel},
      [g, batch, rows, cols, f, in_stride, out_stride](Node& out) {
        const auto& xv = out.inputs[0]->value;
        const auto& kv = out.inputs[1]->value;
        double* gx = detail::input_grad(out, 0);
        double* gk = detail::input_grad(out, 1);
        std::vector<double> col(static_cast<std::size_t>(rows * cols));
        detail::ConstMatrixMap km(kv.data(), f, rows);
        for (std::size_t n = 0; n < batch; ++n) {
          detail::ConstMatrixMap gy(out.grad.data() + n * out_stride, f, cols);
          if (gk) {
            detail::im2col(xv.data() + n * in_stride, g, col.data());
            detail::MatrixMap(gk, f, rows).noalias() += gy * detail::ConstMatrixMap(col.data(), rows, cols).transpose();
          }
          if (gx) {
            detail::MatrixMap(col.data(), rows, cols).noalias() = km.transpose() * gy;
            detail::col2im_add(col.data(), g, gx + n * in_stride);
          }
        }
      });
}

// x[N x C x H x W] + b[C].
inline Tensor add_channel_bias(const Tensor& x, const Tensor& b) {
  if (x.rank() != 4 || b.numel() != x.dim(1)) {
    throw DimensionError("add_channel_bias: shapes " + shape_str(x.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  const auto xv = x.values();
  const auto bv = b.values();
  std::vector<double> y(xv.size());
  for (std::size_t n = 0; n < batch; ++n)
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t base = (n * channels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) y[base + p] = xv[base + p] + bv[c];
    }
  return detail::make_result(x.shape(), std::move(y), "add_channel_bias", {&x, &b},
                             [batch, channels, plane](Node& out) {
                               if (double* gx = detail::input_grad(out, 0)) {
                                 for (std::size_t i = 0; i < out.grad.size(); ++i) gx[i] += out.grad[i];
                               }
                               if (double* gb = detail::input_grad(out, 1)) {
                                 for (std::size_t n = 0; n < batch; ++n)
                                   for (std::size_t c = 0; c < channels; ++c) {
                                     const std::size_t base = (n * channels + c) * plane;
                                     double s = 0.0;
                                     for (std::size_t p = 0; p < plane; ++p) s += out.grad[base + p];
                                     gb[c] += s;
                                   }
                               }
                             });
}

// Nearest-neighbour 2x upsampling.
inline Tensor upsample2x(const Tensor& x) {
  if (x.rank() != 4) throw DimensionError("upsample2x: expected rank 4, got " + shape_str(x.shape()));
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const auto xv = x.values();
  std::vector<double> y(planes * 4 * h * w);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < 2 * h; ++i)
      for (std::size_t j = 0; j < 2 * w; ++j) y[(p * 2 * h + i) * 2 * w + j] = xv[(p * h + i / 2) * w + j / 2];
  return detail::make_result({x.dim(0), x.dim(1), 2 * h, 2 * w}, std::move(y), "upsample2x", {&x},
                             [planes, h, w](Node& out) {
                               if (double* g = detail::input_grad(out, 0)) {
                                 for (std::size_t p = 0; p < planes; ++p)
                                   for (std::size_t i = 0; i < 2 * h; ++i)
                                     for (std::size_t j = 0; j < 2 * w; ++j)
                                       g[(p * h + i / 2) * w + j / 2] += out.grad[(p * 2 * h + i) * 2 * w + j];
                               }
                             });
}

// Average pooling with a square window equal to its stride.
inline Tensor avg_pool2d(const Tensor& x, std::size_t window) {
  if (x.rank() != 4 || window == 0 || x.dim(2) % window != 0 || x.dim(3) % window != 0) {
    throw DimensionError("avg_pool2d: window " + std::to_string(window) + " does not tile " + shape_str(x.shape()));
  }
  const std::size_t planes = x.dim(0) * x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / window, ow = w / window;
  const double inv = 1.0 / static_cast<double>(window * window);
  const auto xv = x.values();
  std::vector<double> y(planes * oh * ow, 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < w; ++j) y[(p * oh + i / window) * ow + j / window] += xv[(p * h + i) * w + j];
  for (auto& v : y) v *= inv;
  return detail::make_result({x.dim(0), x.dim(1), oh, ow}, std::move(y), "avg_pool2d", {&x},
                             [planes, h, w, oh, ow, window, inv](Node& out) {
                               if (double* g = detail::input_grad(out, 0)) {
                                 for (std::size_t p = 0; p < planes; ++p)
                                   for (std::size_t i = 0; i < h; ++i)
                                     for (std::size_t j = 0; j < w; ++j)
                                       g[(p * h + i) * w + j] += inv * out.grad[(p * oh + i / window) * ow + j / window];
                               }
                             });
}

// ---------------------------------------------------------------------------
// Rows of x[N x 4] mapped to unit quaternions with nonnegative first
// (scalar) component. `floor` guards the norm against zero.
inline Tensor normalize_quaternion_rows(const Tensor& x, double floor = 1e-12) {
  if (x.rank() != 2 || x.dim(1) != 4) {
    throw DimensionError("normalize_quaternion_rows: expected [N x 4], got " + shape_str(x.shape()));
  }
  const std::size_t rows = x.dim(0);
  const auto xv = x.values();
  std::vector<double> y(xv.size());
  std::vector<double> factor(rows);  // sign / norm per row
  for (std::size_t r = 0; r < rows; ++r) {
    const double* q = xv.data() + 4 * r;
    const double norm = std::sqrt(q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3] + floor * floor);
    factor[r] = (q[0] < 0.0 ? -1.0 : 1.0) / norm;
    for (int c = 0; c < 4; ++c) y[4 * r + c] = q[c] * factor[r];
  }
  return detail::make_result(x.shape(), std::move(y), "normalize_quaternion_rows", {&x},
                             [rows, factor = std::move(factor)](Node& out) {
                               double* g = detail::input_grad(out, 0);
                               if (!g) return;
                               for (std::size_t r = 0; r < rows; ++r) {
                                 const double* yq = out.value.data() + 4 * r;
                                 const double* gy = out.grad.data() + 4 * r;
                                 // y = s x / n  =>  dx = (s/n) (gy - u (u . gy)) with u = s y.
                                 const double dot = yq[0] * gy[0] + yq[1] * gy[1] + yq[2] * gy[2] + yq[3] * gy[3];
                                 for (int c = 0; c < 4; ++c) g[4 * r + c] += factor[r] * (gy[c] - yq[c] * dot);
                               }
                             });
}

}  // namespace callig
