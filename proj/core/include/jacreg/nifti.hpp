#pragma once

#include <cstdint>
#include <string>

#include "jacreg/errors.hpp"
#include "jacreg/field.hpp"
#include "jacreg/grid.hpp"

namespace jacreg {

// NIfTI-1 single-file reader/writer (.nii, or gzip-compressed when the file
// starts with 0x1F8B). Little-endian only; grids must be axis-aligned.
namespace nifti {

enum class DataType : std::int16_t { uint8 = 2, int16 = 4, float32 = 16 };

// Raised for malformed or unsupported files.
class FormatError : public DataError {
 public:
  using DataError::DataError;
};

// Scalar image. Scaling slope/intercept are applied; when units is
// hounsfield the values are clamped to [-1024, 3071].
Volume3 load_volume(const std::string& path,
                    IntensityUnits units = IntensityUnits::dimensionless);

// Non-negative integer labels.
LabelMask load_mask(const std::string& path);

// 4D file with dim[4] = 3 and a "disp:voxel" or "disp:mm" description.
// Millimetre fields are converted to voxel units.
DisplacementField load_field(const std::string& path);

// Values are rounded and clamped for integer datatypes.
void save(const Volume3& vol, const std::string& path, DataType type = DataType::float32);
// Uses the narrowest of uint8/int16/float32 that holds every label.
void save(const LabelMask& mask, const std::string& path);
// Stored as float32 in voxel units with description "disp:voxel".
void save(const DisplacementField& field, const std::string& path);

}  // namespace nifti
}  // namespace jacreg
