#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

namespace jacreg {

using Index3 = std::array<int, 3>;
using Vec3 = std::array<double, 3>;

// Axis-aligned regular grid. Voxel (i, j, k) sits at world position
// origin + (i, j, k) * spacing, in mm. Storage order is x-fastest everywhere.
struct Grid3 {
  Index3 dims{2, 2, 2};
  Vec3 spacing{1.0, 1.0, 1.0};
  Vec3 origin{0.0, 0.0, 0.0};

  std::int64_t size() const {
    return static_cast<std::int64_t>(dims[0]) * dims[1] * dims[2];
  }
  std::int64_t index(int x, int y, int z) const {
    return x + static_cast<std::int64_t>(dims[0]) * (y + static_cast<std::int64_t>(dims[1]) * z);
  }
  std::int64_t slice_size() const { return static_cast<std::int64_t>(dims[0]) * dims[1]; }
  double voxel_volume() const { return spacing[0] * spacing[1] * spacing[2]; }

  Vec3 to_world(const Vec3& voxel) const;
  Vec3 to_voxel(const Vec3& world) const;

  // Throws DataError when a dimension is < 2 or a spacing is not > 0.
  void validate() const;

  // Same dims, spacing and origin.
  bool operator==(const Grid3&) const = default;
};

// Same dims and spacing; origins may differ by rounding only.
bool same_shape(const Grid3& a, const Grid3& b);

std::string describe(const Grid3& g);

enum class IntensityUnits { dimensionless, hounsfield };

// Scalar field on a grid: CT intensities, probability maps, Jacobian maps.
class Volume3 {
 public:
  Volume3() = default;
  explicit Volume3(Grid3 grid, double fill = 0.0,
                   IntensityUnits units = IntensityUnits::dimensionless);
  // Takes ownership of data; throws DataError on length mismatch or non-finite values.
  Volume3(Grid3 grid, std::vector<double> data,
          IntensityUnits units = IntensityUnits::dimensionless);

  const Grid3& grid() const { return grid_; }
  IntensityUnits units() const { return units_; }
  void set_units(IntensityUnits u) { units_ = u; }

  std::int64_t size() const { return static_cast<std::int64_t>(data_.size()); }
  const std::vector<double>& data() const { return data_; }
  std::vector<double>& data() { return data_; }

  double& at(int x, int y, int z) { return data_[static_cast<std::size_t>(grid_.index(x, y, z))]; }
  double at(int x, int y, int z) const { return data_[static_cast<std::size_t>(grid_.index(x, y, z))]; }
  double& operator[](std::int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

 private:
  Grid3 grid_;
  std::vector<double> data_;
  IntensityUnits units_ = IntensityUnits::dimensionless;
};

// Integer label image, 0 = background.
class LabelMask {
 public:
  LabelMask() = default;
  explicit LabelMask(Grid3 grid, std::int32_t fill = 0);
  // Throws DataError on length mismatch or negative labels.
  LabelMask(Grid3 grid, std::vector<std::int32_t> labels);

  const Grid3& grid() const { return grid_; }
  std::int64_t size() const { return static_cast<std::int64_t>(labels_.size()); }
  const std::vector<std::int32_t>& labels() const { return labels_; }
  std::vector<std::int32_t>& labels() { return labels_; }

  std::int32_t& at(int x, int y, int z) { return labels_[static_cast<std::size_t>(grid_.index(x, y, z))]; }
  std::int32_t at(int x, int y, int z) const { return labels_[static_cast<std::size_t>(grid_.index(x, y, z))]; }
  std::int32_t& operator[](std::int64_t i) { return labels_[static_cast<std::size_t>(i)]; }
  std::int32_t operator[](std::int64_t i) const { return labels_[static_cast<std::size_t>(i)]; }

  std::int32_t max_label() const;
  std::int64_t count(std::int32_t label) const;
  std::int64_t count_nonzero() const;

 private:
  Grid3 grid_;
  std::vector<std::int32_t> labels_;
};

// Nonzero -> 1.
LabelMask binarize(const LabelMask& mask);

}  // namespace jacreg
