#include "fedreg/kernels.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <vector>
#include "fedreg/tensor.hpp"

namespace fedreg::kernels {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using MapConstMat = Eigen::Map<const RowMat>;
using MapVec = Eigen::Map<Eigen::VectorXd>;
using MapConstVec = Eigen::Map<const Eigen::VectorXd>;

// Keeps the im2col buffer around a few MB regardless of batch size.
constexpr std::size_t kColsBudget = std::size_t{1} << 19;

// Per-thread scratch reused across calls; fresh large allocations cost more than the small GEMMs here.
struct Scratch {
  fedreg::Buffer cols, out, dcols;
};

double* take(fedreg::Buffer& b, std::size_t n) {
  if (b.size() < n) b.resize(n);
  return b.data();
}

Scratch& scratch() {
  thread_local Scratch s;
  return s;
}

std::size_t chunk_size(const ConvShape& s) {
  const std::size_t per_sample = s.in_channels * 9 * s.height * s.width;
  return std::max<std::size_t>(1, std::min(s.batch, kColsBudget / std::max<std::size_t>(per_sample, 1)));
}

// Output pixels [lo, hi) of a row read a valid input pixel for a tap offset d in {-1, 0, 1}.
struct TapRange {
  std::size_t lo, hi;
};

TapRange tap_range(std::size_t extent, int d) {
  if (extent == 0) return {0, 0};
  return {d < 0 ? std::size_t{1} : 0, d > 0 ? extent - 1 : extent};
}

// cols is (C*9) x (n*H*W), column index = sample*H*W + pixel.
void im2col(const ConvShape& s, const double* x, std::size_t n, double* cols) {
  const std::size_t h = s.height, w = s.width, hw = h * w;
  const std::size_t ncols = n * hw;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(h, ky - 1);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(w, kx - 1);
        double* row = cols + ((c * 9) + ky * 3 + kx) * ncols;
        for (std::size_t smp = 0; smp < n; ++smp) {
          const double* plane = x + (smp * s.in_channels + c) * hw;
          double* dst = row + smp * hw;
          std::fill(dst, dst + ry.lo * w, 0.0);
          for (std::size_t yy = ry.lo; yy < ry.hi; ++yy) {
            double* out = dst + yy * w;
            const double* in = plane + (yy + ky - 1) * w + (kx - 1);
            std::fill(out, out + rx.lo, 0.0);
            std::copy(in + rx.lo, in + rx.hi, out + rx.lo);
            std::fill(out + rx.hi, out + w, 0.0);
          }
          std::fill(dst + ry.hi * w, dst + hw, 0.0);
        }
      }
    }
  }
}

void col2im_add(const ConvShape& s, const double* cols, std::size_t n, double* dx) {
  const std::size_t h = s.height, w = s.width, hw = h * w;
  const std::size_t ncols = n * hw;
  for (std::size_t c = 0; c < s.in_channels; ++c) {
    for (int ky = 0; ky < 3; ++ky) {
      const TapRange ry = tap_range(h, ky - 1);
      for (int kx = 0; kx < 3; ++kx) {
        const TapRange rx = tap_range(w, kx - 1);
        const double* row = cols + ((c * 9) + ky * 3 + kx) * ncols;
        for (std::size_t smp = 0; smp < n; ++smp) {
          double* plane = dx + (smp * s.in_channels + c) * hw;
          const double* src = row + smp * hw;
          for (std::size_t yy = ry.lo; yy < ry.hi; ++yy) {
            double* out = plane + (yy + ky - 1) * w + (kx - 1);
            const double* in = src + yy * w;
            for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) out[xx] += in[xx];
          }
        }
      }
    }
  }
}

// Small planes: the whole convolution as one (C_out*HW) x (C_in*HW) matrix, so a batch is a
// single GEMM instead of many short im2col copies.
constexpr std::size_t kUnrollMaxPixels = 16;

bool use_unrolled(const ConvShape& s) { return s.height * s.width <= kUnrollMaxPixels; }

template <class F>
void for_each_tap(const ConvShape& s, F&& f) {
  const std::size_t h = s.height, w = s.width, hw = h * w;
  for (std::size_t co = 0; co < s.out_channels; ++co)
    for (std::size_t ci = 0; ci < s.in_channels; ++ci)
      for (int ky = 0; ky < 3; ++ky)
        for (int kx = 0; kx < 3; ++kx) {
          const std::size_t wi = ((co * s.in_channels + ci) * 3 + ky) * 3 + kx;
          const TapRange ry = tap_range(h, ky - 1), rx = tap_range(w, kx - 1);
          for (std::size_t yy = ry.lo; yy < ry.hi; ++yy)
            for (std::size_t xx = rx.lo; xx < rx.hi; ++xx) {
              const std::size_t row = co * hw + yy * w + xx;
              const std::size_t col = ci * hw + (yy + ky - 1) * w + (xx + kx - 1);
              f(wi, row, col);
            }
        }
}

double* unrolled(const ConvShape& s, std::span<const double> w, fedreg::Buffer& buf) {
  const std::size_t rows = s.out_channels * s.height * s.width, cols = s.in_channels * s.height * s.width;
  double* m = take(buf, rows * cols);
  std::fill(m, m + rows * cols, 0.0);
  for_each_tap(s, [&](std::size_t wi, std::size_t r, std::size_t c) { m[r * cols + c] = w[wi]; });
  return m;
}

}  // namespace

void dense_forward(DenseShape s, std::span<const double> x, std::span<const double> w, std::span<const double> b,
                   std::span<double> y, bool relu) {
  MapConstMat X(x.data(), s.batch, s.in);
  MapConstMat W(w.data(), s.out, s.in);
  MapMat Y(y.data(), s.batch, s.out);
  Y.noalias() = X * W.transpose();
  // Bias and activation in one sweep; NaN passes through the ReLU.
  for (std::size_t r = 0; r < s.batch; ++r) {
    double* row = y.data() + r * s.out;
    if (relu) {
      for (std::size_t j = 0; j < s.out; ++j) {
        const double v = row[j] + b[j];
        row[j] = v < 0.0 ? 0.0 : v;
      }
    } else {
      for (std::size_t j = 0; j < s.out; ++j) row[j] += b[j];
    }
  }
}

void dense_backward(DenseShape s, std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                    std::span<double> dw, std::span<double> db, std::span<double> dx) {
  MapConstMat X(x.data(), s.batch, s.in);
  MapConstMat W(w.data(), s.out, s.in);
  MapConstMat dY(dy.data(), s.batch, s.out);
  MapMat(dw.data(), s.out, s.in).noalias() += dY.transpose() * X;
  MapVec(db.data(), s.out) += dY.colwise().sum().transpose();
  if (!dx.empty()) MapMat(dx.data(), s.batch, s.in).noalias() = dY * W;
}

void conv3x3_relu_forward(ConvShape s, std::span<const double> x, std::span<const double> w,
                          std::span<const double> b, std::span<double> y) {
  const std::size_t hw = s.height * s.width;
  Scratch& sc = scratch();
  if (use_unrolled(s)) {
    const std::size_t rows = s.out_channels * hw, cols = s.in_channels * hw;
    MapConstMat M(unrolled(s, w, sc.cols), rows, cols);
    MapMat Y(y.data(), s.batch, rows);
    Y.noalias() = MapConstMat(x.data(), s.batch, cols) * M.transpose();
    for (std::size_t smp = 0; smp < s.batch; ++smp)
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        double* dst = y.data() + (smp * s.out_channels + co) * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const double v = dst[p] + b[co];
          dst[p] = v < 0.0 ? 0.0 : v;
        }
      }
    return;
  }
  const std::size_t k = s.in_channels * 9;
  const std::size_t chunk = chunk_size(s);
  double* cols = take(sc.cols, k * chunk * hw);
  double* out = take(sc.out, s.out_channels * chunk * hw);
  MapConstMat W(w.data(), s.out_channels, k);
  for (std::size_t start = 0; start < s.batch; start += chunk) {
    const std::size_t n = std::min(chunk, s.batch - start);
    im2col(s, x.data() + start * s.in_channels * hw, n, cols);
    MapConstMat C(cols, k, n * hw);
    MapMat(out, s.out_channels, n * hw).noalias() = W * C;
    for (std::size_t smp = 0; smp < n; ++smp) {
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        double* dst = y.data() + ((start + smp) * s.out_channels + co) * hw;
        const double* src = out + co * n * hw + smp * hw;
        for (std::size_t p = 0; p < hw; ++p) {
          const double v = src[p] + b[co];
          dst[p] = v < 0.0 ? 0.0 : v;
        }
      }
    }
  }
}

void conv3x3_backward(ConvShape s, std::span<const double> x, std::span<const double> w, std::span<const double> dy,
                      std::span<double> dw, std::span<double> db, std::span<double> dx) {
  const std::size_t hw = s.height * s.width;
  Scratch& sc = scratch();
  if (use_unrolled(s)) {
    const std::size_t rows = s.out_channels * hw, cols = s.in_channels * hw;
    MapConstMat dY(dy.data(), s.batch, rows);
    for (std::size_t smp = 0; smp < s.batch; ++smp)
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const double* src = dy.data() + (smp * s.out_channels + co) * hw;
        double acc = 0.0;
        for (std::size_t p = 0; p < hw; ++p) acc += src[p];
        db[co] += acc;
      }
    MapMat dM(take(sc.out, rows * cols), rows, cols);
    dM.noalias() = dY.transpose() * MapConstMat(x.data(), s.batch, cols);
    const double* g = dM.data();
    for_each_tap(s, [&](std::size_t wi, std::size_t r, std::size_t c) { dw[wi] += g[r * cols + c]; });
    if (!dx.empty()) {
      MapConstMat M(unrolled(s, w, sc.cols), rows, cols);
      MapMat(dx.data(), s.batch, cols).noalias() = dY * M;
    }
    return;
  }
  const std::size_t k = s.in_channels * 9;
  const std::size_t chunk = chunk_size(s);
  double* cols = take(sc.cols, k * chunk * hw);
  double* dout = take(sc.out, s.out_channels * chunk * hw);
  double* dcols = dx.empty() ? nullptr : take(sc.dcols, k * chunk * hw);
  MapConstMat W(w.data(), s.out_channels, k);
  MapMat dW(dw.data(), s.out_channels, k);
  if (!dx.empty()) std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t start = 0; start < s.batch; start += chunk) {
    const std::size_t n = std::min(chunk, s.batch - start);
    for (std::size_t smp = 0; smp < n; ++smp) {
      for (std::size_t co = 0; co < s.out_channels; ++co) {
        const double* src = dy.data() + ((start + smp) * s.out_channels + co) * hw;
        std::copy(src, src + hw, dout + co * n * hw + smp * hw);
      }
    }
    MapConstMat d(dout, s.out_channels, n * hw);
    for (std::size_t co = 0; co < s.out_channels; ++co) db[co] += d.row(co).sum();
    im2col(s, x.data() + start * s.in_channels * hw, n, cols);
    MapConstMat C(cols, k, n * hw);
    dW.noalias() += d * C.transpose();
    if (!dx.empty()) {
      MapMat(dcols, k, n * hw).noalias() = W.transpose() * d;
      col2im_add(s, dcols, n, dx.data() + start * s.in_channels * hw);
    }
  }
}

void maxpool2x2_forward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> x,
                        std::span<double> y, std::span<std::uint32_t> argmax) {
  const std::size_t oh = height / 2, ow = width / 2;
  for (std::size_t p = 0; p < planes; ++p) {
    const double* in = x.data() + p * height * width;
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        std::size_t best = (2 * oy) * width + 2 * ox;
        for (std::size_t idx : {best + 1, best + width, best + width + 1})
          if (in[idx] > in[best]) best = idx;
        const std::size_t o = p * oh * ow + oy * ow + ox;
        y[o] = in[best];
        argmax[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
}

void maxpool2x2_backward(std::size_t planes, std::size_t height, std::size_t width, std::span<const double> dy,
                         std::span<const std::uint32_t> argmax, std::span<double> dx) {
  const std::size_t outs = (height / 2) * (width / 2);
  std::fill(dx.begin(), dx.end(), 0.0);
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t o = 0; o < outs; ++o) dx[p * height * width + argmax[p * outs + o]] += dy[p * outs + o];
}

}  // namespace fedreg::kernels
