#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "jacreg/grid.hpp"

namespace jacreg {

// Dense displacement field u on a grid; the map is phi(x) = x + u(x) with x
// and u both in voxel units of the field's own grid. Components are stored
// as three separate x-fastest arrays.
struct DisplacementField {
  Grid3 grid;
  std::array<std::vector<double>, 3> u;

  DisplacementField() = default;
  explicit DisplacementField(const Grid3& g);

  std::int64_t size() const { return grid.size(); }
  Vec3 at(std::int64_t i) const {
    const auto k = static_cast<std::size_t>(i);
    return {u[0][k], u[1][k], u[2][k]};
  }
  void set(std::int64_t i, const Vec3& v) {
    const auto k = static_cast<std::size_t>(i);
    u[0][k] = v[0];
    u[1][k] = v[1];
    u[2][k] = v[2];
  }
  double max_abs() const;
  // Throws DataError naming the first non-finite voxel.
  void check_finite() const;
};

DisplacementField identity_field(const Grid3& grid);

struct JacobianMap {
  Grid3 grid;
  std::vector<double> det;
  std::int64_t folding_count = 0;  // voxels with det <= 0

  Volume3 to_volume() const;
};

enum class Interp { trilinear, nearest };

// Trilinear lookup at a continuous voxel coordinate; coordinates outside the
// grid are clamped to the boundary face.
double sample_trilinear(const std::vector<double>& data, const Index3& dims, const Vec3& p);

// Same lookup, also returning the spatial derivative of the interpolant.
// Derivative components along clamped axes are zero; on an interior grid
// plane the derivative is the mean of the two one-sided slopes.
double sample_trilinear_grad(const std::vector<double>& data, const Index3& dims, const Vec3& p,
                             Vec3& grad);

// All three components at p; the same arithmetic as sample_trilinear.
Vec3 sample_field(const DisplacementField& f, const Vec3& p);
// Also fills jac[m][k] = d u_m / d x_k, as sample_trilinear_grad.
Vec3 sample_field_grad(const DisplacementField& f, const Vec3& p, std::array<Vec3, 3>& jac);

// The eight corner indices and weights used by sample_trilinear at p.
struct TrilinearStencil {
  std::int64_t index[8];
  double weight[8];
};
TrilinearStencil trilinear_stencil(const Index3& dims, const Vec3& p);

// out(x) = image(x + u(x)). The image must share the field's dims.
Volume3 warp(const Volume3& image, const DisplacementField& field,
             Interp interp = Interp::trilinear);
// Label warping; throws DataError for Interp::trilinear.
LabelMask warp(const LabelMask& mask, const DisplacementField& field,
               Interp interp = Interp::nearest);

// phi_outer o phi_inner: u(x) = u_inner(x) + u_outer(x + u_inner(x)).
DisplacementField compose(const DisplacementField& outer, const DisplacementField& inner);

// det(I + grad u) with central differences inside and one-sided differences
// on the boundary faces. Requires dims >= 3.
JacobianMap jacobian_determinant(const DisplacementField& field);

// Lifts a field from a coarse grid onto target: components are trilinearly
// interpolated at the target voxel positions (matched through world
// coordinates) and multiplied by factor.
DisplacementField upsample_field(const DisplacementField& field, int factor, const Grid3& target);

}  // namespace jacreg
