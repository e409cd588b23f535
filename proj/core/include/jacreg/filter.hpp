#pragma once

#include <array>
#include <vector>

#include "jacreg/grid.hpp"

namespace jacreg {

// Separable Gaussian smoothing on an x-fastest grid. The kernel is truncated
// at 4 sigma and normalised to unit sum; near the boundary each 1D pass
// renormalises over the taps that fall inside the grid, so constants are
// preserved exactly. The adjoint is exposed for gradient back-propagation.
class GaussianFilter {
 public:
  GaussianFilter(double sigma, const Index3& dims);

  double sigma() const { return sigma_; }
  int radius() const { return radius_; }
  const std::vector<double>& weights() const { return weights_; }

  void apply(const std::vector<double>& in, std::vector<double>& out) const;
  // out = G^T in.
  void apply_adjoint(const std::vector<double>& in, std::vector<double>& out) const;

 private:
  void pass(const std::vector<double>& in, std::vector<double>& out, int axis, bool adjoint) const;
  void check_size(const std::vector<double>& in) const;

  double sigma_;
  int radius_;
  Index3 dims_;
  std::vector<double> weights_;                 // length 2 * radius + 1
  std::array<std::vector<double>, 3> inv_norm_;  // per-axis 1 / (in-bounds tap sum)
};

}  // namespace jacreg
