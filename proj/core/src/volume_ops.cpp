#include "jacreg/volume_ops.hpp"

#include <cmath>
#include <string>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

Grid3 downsampled_grid(const Grid3& grid, int factor) {
  if (factor < 2) throw DataError("downsample factor must be >= 2, got " + std::to_string(factor));
  Grid3 out = grid;
  for (int a = 0; a < 3; ++a) {
    if (grid.dims[a] < 2 * factor)
      throw DataError("volume too small to downsample by " + std::to_string(factor) + ": " +
                      describe(grid));
    out.dims[a] = (grid.dims[a] + factor - 1) / factor;
    out.spacing[a] = grid.spacing[a] * factor;
    out.origin[a] = grid.origin[a] + 0.5 * (factor - 1) * grid.spacing[a];
  }
  return out;
}

Volume3 downsample(const Volume3& vol, int factor) {
  const Grid3& g = vol.grid();
  const Grid3 og = downsampled_grid(g, factor);
  Volume3 out(og, 0.0, vol.units());
  parallel_for(0, og.dims[2], [&](std::int64_t oz) {
    for (int oy = 0; oy < og.dims[1]; ++oy) {
      for (int ox = 0; ox < og.dims[0]; ++ox) {
        double sum = 0.0;
        int n = 0;
        const int z1 = std::min<int>(static_cast<int>(oz + 1) * factor, g.dims[2]);
        const int y1 = std::min((oy + 1) * factor, g.dims[1]);
        const int x1 = std::min((ox + 1) * factor, g.dims[0]);
        for (int z = static_cast<int>(oz) * factor; z < z1; ++z)
          for (int y = oy * factor; y < y1; ++y)
            for (int x = ox * factor; x < x1; ++x) {
              sum += vol.at(x, y, z);
              ++n;
            }
        out.at(ox, oy, static_cast<int>(oz)) = sum / n;
      }
    }
  });
  return out;
}

LabelMask resample_nearest(const LabelMask& mask, const Grid3& target) {
  target.validate();
  const Grid3& src = mask.grid();
  LabelMask out(target);
  parallel_for(0, target.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < target.dims[1]; ++y) {
      for (int x = 0; x < target.dims[0]; ++x) {
        const Vec3 p = src.to_voxel(target.to_world({double(x), double(y), double(z)}));
        int idx[3];
        bool inside = true;
        for (int a = 0; a < 3; ++a) {
          idx[a] = static_cast<int>(std::floor(p[a] + 0.5));
          if (idx[a] < 0 || idx[a] >= src.dims[a]) inside = false;
        }
        if (inside) out.at(x, y, static_cast<int>(z)) = mask.at(idx[0], idx[1], idx[2]);
      }
    }
  });
  return out;
}

}  // namespace jacreg
