#include "jacreg/filter.hpp"

#include <algorithm>
#include <cmath>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

GaussianFilter::GaussianFilter(double sigma, const Index3& dims) : sigma_(sigma), dims_(dims) {
  if (!(sigma > 0.0)) throw ConfigError("Gaussian sigma must be > 0");
  radius_ = static_cast<int>(std::ceil(4.0 * sigma));
  weights_.resize(static_cast<std::size_t>(2 * radius_ + 1));
  double sum = 0.0;
  for (int k = -radius_; k <= radius_; ++k) {
    const double w = std::exp(-0.5 * k * k / (sigma * sigma));
    weights_[static_cast<std::size_t>(k + radius_)] = w;
    sum += w;
  }
  for (auto& w : weights_) w /= sum;
  for (int a = 0; a < 3; ++a) {
    const int n = dims_[a];
    inv_norm_[a].resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
      double s = 0.0;
      for (int k = -radius_; k <= radius_; ++k)
        if (i + k >= 0 && i + k < n) s += weights_[static_cast<std::size_t>(k + radius_)];
      inv_norm_[a][static_cast<std::size_t>(i)] = 1.0 / s;
    }
  }
}

namespace {

// dst[i] = sum_k wk[k] * src[k][i] for i < n, accumulated in registers over
// blocks of the row so every output is stored once.
void weighted_sum(const double* const* src, const double* wk, int taps, double* dst, std::int64_t n) {
  constexpr int kBlock = 16;
  std::int64_t i = 0;
  for (; i + kBlock <= n; i += kBlock) {
    double acc[kBlock] = {};
    for (int k = 0; k < taps; ++k) {
      const double w = wk[k];
      const double* s = src[k] + i;
      for (int j = 0; j < kBlock; ++j) acc[j] += w * s[j];
    }
    std::copy(acc, acc + kBlock, dst + i);
  }
  for (; i < n; ++i) {
    double acc = 0.0;
    for (int k = 0; k < taps; ++k) acc += wk[k] * src[k][i];
    dst[i] = acc;
  }
}

}  // namespace

// Zero-padded convolution along one axis with the boundary renormalisation
// folded in: applied to the output for the forward filter and to the input
// for the adjoint.
void GaussianFilter::pass(const std::vector<double>& in, std::vector<double>& out, int axis,
                          bool adjoint) const {
  const int nx = dims_[0], ny = dims_[1], nz = dims_[2];
  const std::int64_t plane = static_cast<std::int64_t>(nx) * ny;
  const int r = radius_;
  const int taps = 2 * r + 1;
  const double* w = weights_.data() + r;  // w[k] for k in [-r, r]
  const double* s = inv_norm_[axis].data();
  out.resize(in.size());
  if (axis == 0) {
    parallel_for(0, nz, [&](std::int64_t z) {
      std::vector<double> pad(static_cast<std::size_t>(nx + 2 * r), 0.0);
      std::vector<const double*> src(static_cast<std::size_t>(taps));
      for (int k = 0; k < taps; ++k) src[static_cast<std::size_t>(k)] = pad.data() + k;
      for (int y = 0; y < ny; ++y) {
        const double* row = in.data() + z * plane + static_cast<std::int64_t>(y) * nx;
        double* dst = out.data() + z * plane + static_cast<std::int64_t>(y) * nx;
        double* p = pad.data() + r;
        if (adjoint) {
          for (int x = 0; x < nx; ++x) p[x] = s[x] * row[x];
        } else {
          std::copy(row, row + nx, p);
        }
        weighted_sum(src.data(), weights_.data(), taps, dst, nx);
        if (!adjoint)
          for (int x = 0; x < nx; ++x) dst[x] *= s[x];
      }
    });
  } else {
    // Rows (axis 1) or planes (axis 2) combined with per-tap weights.
    const int n_lines = axis == 1 ? ny : nz;
    const std::int64_t line_stride = axis == 1 ? nx : plane;
    const std::int64_t outer = axis == 1 ? nz : 1;
    parallel_for(0, outer * n_lines, [&](std::int64_t job) {
      const std::int64_t o = job / n_lines;
      const int q = static_cast<int>(job % n_lines);
      const double* base = in.data() + o * plane;
      double* dst = out.data() + o * plane + q * line_stride;
      const int k0 = std::max(-r, -q), k1 = std::min(r, n_lines - 1 - q);
      constexpr int kStack = 64;
      const double* src_stack[kStack];
      double wk_stack[kStack];
      std::vector<const double*> src_heap;
      std::vector<double> wk_heap;
      const double** src = src_stack;
      double* wk = wk_stack;
      if (taps > kStack) {
        src_heap.resize(static_cast<std::size_t>(taps));
        wk_heap.resize(static_cast<std::size_t>(taps));
        src = src_heap.data();
        wk = wk_heap.data();
      }
      int t = 0;
      for (int k = k0; k <= k1; ++k, ++t) {
        src[t] = base + static_cast<std::int64_t>(q + k) * line_stride;
        wk[t] = adjoint ? w[k] * s[q + k] : w[k] * s[q];
      }
      weighted_sum(src, wk, t, dst, line_stride);
    });
  }
}

void GaussianFilter::apply(const std::vector<double>& in, std::vector<double>& out) const {
  check_size(in);
  std::vector<double> a, b;
  pass(in, a, 0, false);
  pass(a, b, 1, false);
  pass(b, out, 2, false);
}

void GaussianFilter::apply_adjoint(const std::vector<double>& in, std::vector<double>& out) const {
  check_size(in);
  std::vector<double> a, b;
  pass(in, a, 2, true);
  pass(a, b, 1, true);
  pass(b, out, 0, true);
}

void GaussianFilter::check_size(const std::vector<double>& in) const {
  if (static_cast<std::int64_t>(in.size()) != static_cast<std::int64_t>(dims_[0]) * dims_[1] * dims_[2])
    throw DataError("GaussianFilter: buffer does not match filter dims");
}

}  // namespace jacreg
