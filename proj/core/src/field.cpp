#include "jacreg/field.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

DisplacementField::DisplacementField(const Grid3& g) : grid(g) {
  grid.validate();
  for (auto& c : u) c.assign(static_cast<std::size_t>(grid.size()), 0.0);
}

double DisplacementField::max_abs() const {
  double m = 0.0;
  for (const auto& c : u)
    for (double v : c) m = std::max(m, std::abs(v));
  return m;
}

void DisplacementField::check_finite() const {
  for (std::int64_t i = 0; i < size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      if (!std::isfinite(u[c][static_cast<std::size_t>(i)])) {
        const auto nx = grid.dims[0], ny = grid.dims[1];
        throw DataError("non-finite displacement at voxel (" + std::to_string(i % nx) + ", " +
                        std::to_string((i / nx) % ny) + ", " + std::to_string(i / (nx * ny)) +
                        ") component " + std::to_string(c));
      }
    }
  }
}

DisplacementField identity_field(const Grid3& grid) { return DisplacementField(grid); }

Volume3 JacobianMap::to_volume() const { return Volume3(grid, det); }

namespace {

struct AxisWeights {
  int i0;
  double t;
  bool clamped;
};

inline AxisWeights axis_weights(double p, int n) {
  bool clamped = false;
  if (p <= 0.0) {
    clamped = p < 0.0;
    p = 0.0;
  } else if (p >= n - 1) {
    clamped = p > n - 1;
    p = n - 1;
  }
  int i0 = static_cast<int>(std::floor(p));
  if (i0 > n - 2) i0 = n - 2;
  return {i0, p - i0, clamped};
}

inline int nearest_index(double p, int n) {
  const int i = static_cast<int>(std::floor(p + 0.5));
  return std::clamp(i, 0, n - 1);
}

void require_same_dims(const Grid3& a, const Grid3& b, const char* what) {
  if (a.dims != b.dims)
    throw DataError(std::string(what) + ": grid mismatch " + describe(a) + " vs " + describe(b));
}

}  // namespace

namespace {

[[gnu::always_inline]] inline double lerp_at(const std::vector<double>& d, const Index3& dims, const AxisWeights& ax,
               const AxisWeights& ay, const AxisWeights& az) {
  const std::int64_t sx = 1, sy = dims[0], sz = static_cast<std::int64_t>(dims[0]) * dims[1];
  const std::int64_t b = ax.i0 + sy * ay.i0 + sz * az.i0;
  const double wx0 = 1.0 - ax.t, wx1 = ax.t;
  const double wy0 = 1.0 - ay.t, wy1 = ay.t;
  const double wz0 = 1.0 - az.t, wz1 = az.t;
  auto v = [&](std::int64_t off) { return d[static_cast<std::size_t>(b + off)]; };
  const double c00 = wx0 * v(0) + wx1 * v(sx);
  const double c10 = wx0 * v(sy) + wx1 * v(sy + sx);
  const double c01 = wx0 * v(sz) + wx1 * v(sz + sx);
  const double c11 = wx0 * v(sz + sy) + wx1 * v(sz + sy + sx);
  const double c0 = wy0 * c00 + wy1 * c10;
  const double c1 = wy0 * c01 + wy1 * c11;
  return wz0 * c0 + wz1 * c1;
}

}  // namespace

double sample_trilinear(const std::vector<double>& d, const Index3& dims, const Vec3& p) {
  return lerp_at(d, dims, axis_weights(p[0], dims[0]), axis_weights(p[1], dims[1]),
                 axis_weights(p[2], dims[2]));
}

Vec3 sample_field(const DisplacementField& f, const Vec3& p) {
  const Index3& dims = f.grid.dims;
  const auto ax = axis_weights(p[0], dims[0]);
  const auto ay = axis_weights(p[1], dims[1]);
  const auto az = axis_weights(p[2], dims[2]);
  return {lerp_at(f.u[0], dims, ax, ay, az), lerp_at(f.u[1], dims, ax, ay, az),
          lerp_at(f.u[2], dims, ax, ay, az)};
}

namespace {

[[gnu::always_inline]] inline double trilinear_with_grad(const std::vector<double>& d, const Index3& dims, const AxisWeights& ax,
                           const AxisWeights& ay, const AxisWeights& az, Vec3& grad) {
  const std::int64_t sx = 1, sy = dims[0], sz = static_cast<std::int64_t>(dims[0]) * dims[1];
  const std::int64_t b = ax.i0 + sy * ay.i0 + sz * az.i0;
  auto v = [&](std::int64_t off) { return d[static_cast<std::size_t>(b + off)]; };
  const double v000 = v(0), v100 = v(sx), v010 = v(sy), v110 = v(sy + sx);
  const double v001 = v(sz), v101 = v(sz + sx), v011 = v(sz + sy), v111 = v(sz + sy + sx);
  const double tx = ax.t, ty = ay.t, tz = az.t;

  const double c00 = (1 - tx) * v000 + tx * v100;
  const double c10 = (1 - tx) * v010 + tx * v110;
  const double c01 = (1 - tx) * v001 + tx * v101;
  const double c11 = (1 - tx) * v011 + tx * v111;
  const double c0 = (1 - ty) * c00 + ty * c10;
  const double c1 = (1 - ty) * c01 + ty * c11;

  const double dx00 = v100 - v000, dx10 = v110 - v010, dx01 = v101 - v001, dx11 = v111 - v011;
  const double dx0 = (1 - ty) * dx00 + ty * dx10;
  const double dx1 = (1 - ty) * dx01 + ty * dx11;
  grad[0] = ax.clamped ? 0.0 : (1 - tz) * dx0 + tz * dx1;
  grad[1] = ay.clamped ? 0.0 : (1 - tz) * (c10 - c00) + tz * (c11 - c01);
  grad[2] = az.clamped ? 0.0 : c1 - c0;
  return (1 - tz) * c0 + tz * c1;
}

}  // namespace

namespace {

double grad_at(const std::vector<double>& d, const Index3& dims, const std::array<AxisWeights, 3>& w,
               Vec3& grad) {
  const double value = trilinear_with_grad(d, dims, w[0], w[1], w[2], grad);
  // On an interior grid plane the interpolant has a kink; use the mean of
  // the one-sided slopes there.
  for (int a = 0; a < 3; ++a) {
    if (w[a].t != 0.0 || w[a].i0 == 0 || w[a].clamped) continue;
    auto left = w;
    left[a] = {w[a].i0 - 1, 1.0, false};
    Vec3 g_left;
    trilinear_with_grad(d, dims, left[0], left[1], left[2], g_left);
    grad[a] = 0.5 * (grad[a] + g_left[a]);
  }
  return value;
}

}  // namespace

double sample_trilinear_grad(const std::vector<double>& d, const Index3& dims, const Vec3& p,
                             Vec3& grad) {
  const std::array<AxisWeights, 3> w{axis_weights(p[0], dims[0]), axis_weights(p[1], dims[1]),
                                     axis_weights(p[2], dims[2])};
  return grad_at(d, dims, w, grad);
}

Vec3 sample_field_grad(const DisplacementField& f, const Vec3& p, std::array<Vec3, 3>& jac) {
  const Index3& dims = f.grid.dims;
  const std::array<AxisWeights, 3> w{axis_weights(p[0], dims[0]), axis_weights(p[1], dims[1]),
                                     axis_weights(p[2], dims[2])};
  bool kink = false;
  for (const auto& a : w) kink = kink || (a.t == 0.0 && a.i0 > 0 && !a.clamped);
  if (kink)
    return {grad_at(f.u[0], dims, w, jac[0]), grad_at(f.u[1], dims, w, jac[1]),
            grad_at(f.u[2], dims, w, jac[2])};
  Vec3 v;
  for (int m = 0; m < 3; ++m) v[m] = trilinear_with_grad(f.u[m], dims, w[0], w[1], w[2], jac[m]);
  return v;
}

TrilinearStencil trilinear_stencil(const Index3& dims, const Vec3& p) {
  const auto ax = axis_weights(p[0], dims[0]);
  const auto ay = axis_weights(p[1], dims[1]);
  const auto az = axis_weights(p[2], dims[2]);
  const std::int64_t sy = dims[0], sz = static_cast<std::int64_t>(dims[0]) * dims[1];
  const std::int64_t b = ax.i0 + sy * ay.i0 + sz * az.i0;
  const double wx[2] = {1.0 - ax.t, ax.t};
  const double wy[2] = {1.0 - ay.t, ay.t};
  const double wz[2] = {1.0 - az.t, az.t};
  TrilinearStencil s{};
  int n = 0;
  for (int k = 0; k < 2; ++k)
    for (int j = 0; j < 2; ++j)
      for (int i = 0; i < 2; ++i, ++n) {
        s.index[n] = b + i + sy * j + sz * k;
        s.weight[n] = wx[i] * wy[j] * wz[k];
      }
  return s;
}

Volume3 warp(const Volume3& image, const DisplacementField& field, Interp interp) {
  require_same_dims(image.grid(), field.grid, "warp");
  Volume3 out(field.grid, 0.0, image.units());
  const auto& g = field.grid;
  const auto& src = image.data();
  parallel_for(0, g.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const auto i = g.index(x, y, static_cast<int>(z));
        const Vec3 p{x + field.u[0][i], y + field.u[1][i], z + field.u[2][i]};
        if (interp == Interp::trilinear) {
          out[i] = sample_trilinear(src, g.dims, p);
        } else {
          out[i] = image.at(nearest_index(p[0], g.dims[0]), nearest_index(p[1], g.dims[1]),
                            nearest_index(p[2], g.dims[2]));
        }
      }
    }
  });
  return out;
}

LabelMask warp(const LabelMask& mask, const DisplacementField& field, Interp interp) {
  if (interp != Interp::nearest)
    throw DataError("label masks can only be warped with nearest-neighbour interpolation");
  require_same_dims(mask.grid(), field.grid, "warp");
  LabelMask out(field.grid);
  const auto& g = field.grid;
  parallel_for(0, g.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const auto i = g.index(x, y, static_cast<int>(z));
        out[i] = mask.at(nearest_index(x + field.u[0][i], g.dims[0]),
                         nearest_index(y + field.u[1][i], g.dims[1]),
                         nearest_index(z + field.u[2][i], g.dims[2]));
      }
    }
  });
  return out;
}

DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner) {
  require_same_dims(outer.grid, inner.grid, "compose");
  DisplacementField out(inner.grid);
  const auto& g = inner.grid;
  parallel_for(0, g.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const auto i = static_cast<std::size_t>(g.index(x, y, static_cast<int>(z)));
        const Vec3 p{x + inner.u[0][i], y + inner.u[1][i], z + inner.u[2][i]};
        const Vec3 o = sample_field(outer, p);
        for (int c = 0; c < 3; ++c) out.u[c][i] = inner.u[c][i] + o[c];
      }
    }
  });
  return out;
}

namespace {

// d/d(axis) of component data at (x, y, z), h = 1 voxel.
inline double diff(const std::vector<double>& d, const Grid3& g, int x, int y, int z, int axis) {
  const int pos[3] = {x, y, z};
  const int n = g.dims[axis];
  const std::int64_t stride = axis == 0 ? 1 : (axis == 1 ? g.dims[0] : g.slice_size());
  const auto i = g.index(x, y, z);
  auto at = [&](std::int64_t k) { return d[static_cast<std::size_t>(k)]; };
  if (pos[axis] == 0) return at(i + stride) - at(i);
  if (pos[axis] == n - 1) return at(i) - at(i - stride);
  return 0.5 * (at(i + stride) - at(i - stride));
}

}  // namespace

JacobianMap jacobian_determinant(const DisplacementField& field) {
  const auto& g = field.grid;
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 3) throw DataError("jacobian_determinant needs at least 3 voxels per axis");
  JacobianMap jac;
  jac.grid = g;
  jac.det.assign(static_cast<std::size_t>(g.size()), 0.0);
  parallel_for(0, g.dims[2], [&](std::int64_t zz) {
    const int z = static_cast<int>(zz);
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        double m[3][3];
        for (int c = 0; c < 3; ++c)
          for (int a = 0; a < 3; ++a) m[c][a] = (c == a ? 1.0 : 0.0) + diff(field.u[c], g, x, y, z, a);
        const double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                           m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                           m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        jac.det[static_cast<std::size_t>(g.index(x, y, z))] = det;
      }
    }
  });
  jac.folding_count = std::count_if(jac.det.begin(), jac.det.end(), [](double d) { return d <= 0.0; });
  return jac;
}

DisplacementField upsample_field(const DisplacementField& field, int factor, const Grid3& target) {
  if (factor < 2) throw DataError("upsample_field: factor must be >= 2");
  target.validate();
  for (int a = 0; a < 3; ++a) {
    if (std::abs(target.dims[a] - factor * field.grid.dims[a]) > factor)
      throw DataError("upsample_field: target " + describe(target) +
                      " is inconsistent with source " + describe(field.grid) + " at factor " +
                      std::to_string(factor));
  }
  DisplacementField out(target);
  const auto& src = field.grid;
  parallel_for(0, target.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < target.dims[1]; ++y) {
      for (int x = 0; x < target.dims[0]; ++x) {
        const Vec3 p = src.to_voxel(target.to_world({double(x), double(y), double(z)}));
        const auto i = static_cast<std::size_t>(target.index(x, y, static_cast<int>(z)));
        for (int c = 0; c < 3; ++c) out.u[c][i] = factor * sample_trilinear(field.u[c], src.dims, p);
      }
    }
  });
  return out;
}

}  // namespace jacreg
