#pragma once

#include "jacreg/grid.hpp"

namespace jacreg {

// Block-mean reduction. Output dims are ceil(dim / factor); each output voxel
// is the mean over its factor^3 block (partial edge blocks average only the
// voxels they contain). Spacing is multiplied by factor and the origin moves
// to the centre of the first block.
Volume3 downsample(const Volume3& vol, int factor);

// Grid produced by downsample(vol, factor) for a volume on `grid`.
Grid3 downsampled_grid(const Grid3& grid, int factor);

// Nearest-neighbour label transfer in world coordinates. Target voxels whose
// nearest source centre lies outside the source extent get label 0.
LabelMask resample_nearest(const LabelMask& mask, const Grid3& target);

}  // namespace jacreg
