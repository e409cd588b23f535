#include "jacreg/grid.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "jacreg/errors.hpp"

namespace jacreg {

Vec3 Grid3::to_world(const Vec3& v) const {
  return {origin[0] + v[0] * spacing[0], origin[1] + v[1] * spacing[1],
          origin[2] + v[2] * spacing[2]};
}

Vec3 Grid3::to_voxel(const Vec3& w) const {
  return {(w[0] - origin[0]) / spacing[0], (w[1] - origin[1]) / spacing[1],
          (w[2] - origin[2]) / spacing[2]};
}

void Grid3::validate() const {
  for (int a = 0; a < 3; ++a) {
    if (dims[a] < 2) throw DataError("grid dimension " + std::to_string(a) + " is " +
                                     std::to_string(dims[a]) + ", must be >= 2");
    if (!(spacing[a] > 0.0) || !std::isfinite(spacing[a]))
      throw DataError("grid spacing along axis " + std::to_string(a) + " must be > 0");
    if (!std::isfinite(origin[a])) throw DataError("grid origin must be finite");
  }
}

bool same_shape(const Grid3& a, const Grid3& b) {
  if (a.dims != b.dims) return false;
  for (int i = 0; i < 3; ++i) {
    if (std::abs(a.spacing[i] - b.spacing[i]) > 1e-6 * std::max(1.0, std::abs(a.spacing[i])))
      return false;
  }
  return true;
}

std::string describe(const Grid3& g) {
  std::ostringstream os;
  os << g.dims[0] << "x" << g.dims[1] << "x" << g.dims[2] << " @ (" << g.spacing[0] << ", "
     << g.spacing[1] << ", " << g.spacing[2] << ") mm";
  return os.str();
}

Volume3::Volume3(Grid3 grid, double fill, IntensityUnits units)
    : grid_(grid), units_(units) {
  grid_.validate();
  data_.assign(static_cast<std::size_t>(grid_.size()), fill);
}

Volume3::Volume3(Grid3 grid, std::vector<double> data, IntensityUnits units)
    : grid_(grid), data_(std::move(data)), units_(units) {
  grid_.validate();
  if (static_cast<std::int64_t>(data_.size()) != grid_.size())
    throw DataError("volume data length " + std::to_string(data_.size()) +
                    " does not match grid " + describe(grid_));
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!std::isfinite(data_[i]))
      throw DataError("non-finite intensity at linear index " + std::to_string(i));
  }
}

LabelMask::LabelMask(Grid3 grid, std::int32_t fill) : grid_(grid) {
  grid_.validate();
  if (fill < 0) throw DataError("negative label");
  labels_.assign(static_cast<std::size_t>(grid_.size()), fill);
}

LabelMask::LabelMask(Grid3 grid, std::vector<std::int32_t> labels)
    : grid_(grid), labels_(std::move(labels)) {
  grid_.validate();
  if (static_cast<std::int64_t>(labels_.size()) != grid_.size())
    throw DataError("mask length does not match grid " + describe(grid_));
  if (std::any_of(labels_.begin(), labels_.end(), [](std::int32_t v) { return v < 0; }))
    throw DataError("label masks must be non-negative");
}

std::int32_t LabelMask::max_label() const {
  return labels_.empty() ? 0 : *std::max_element(labels_.begin(), labels_.end());
}

std::int64_t LabelMask::count(std::int32_t label) const {
  return std::count(labels_.begin(), labels_.end(), label);
}

std::int64_t LabelMask::count_nonzero() const {
  return std::count_if(labels_.begin(), labels_.end(), [](std::int32_t v) { return v != 0; });
}

LabelMask binarize(const LabelMask& mask) {
  LabelMask out(mask.grid());
  for (std::int64_t i = 0; i < mask.size(); ++i) out[i] = mask[i] != 0 ? 1 : 0;
  return out;
}

}  // namespace jacreg
