#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <map>

namespace jacreg::oracle {

double trilinear(const std::vector<double>& data, const Index3& dims, double px, double py, double pz) {
  const double p[3] = {px, py, pz};
  int lo[3], hi[3];
  double t[3];
  for (int a = 0; a < 3; ++a) {
    const double c = std::min(std::max(p[a], 0.0), double(dims[a] - 1));
    lo[a] = static_cast<int>(std::floor(c));
    hi[a] = std::min(lo[a] + 1, dims[a] - 1);
    t[a] = c - lo[a];
  }
  double sum = 0.0;
  for (int corner = 0; corner < 8; ++corner) {
    double w = 1.0;
    int idx[3];
    for (int a = 0; a < 3; ++a) {
      const bool up = (corner >> a) & 1;
      idx[a] = up ? hi[a] : lo[a];
      w *= up ? t[a] : 1.0 - t[a];
    }
    sum += w * data[static_cast<std::size_t>(idx[0] + dims[0] * (idx[1] + dims[1] * idx[2]))];
  }
  return sum;
}

namespace {
Vec3 mapped(const DisplacementField& f, int x, int y, int z) {
  const auto i = f.grid.index(x, y, z);
  const auto v = f.at(i);
  return {x + v[0], y + v[1], z + v[2]};
}

double tet_volume(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
  const Vec3 u{b[0] - a[0], b[1] - a[1], b[2] - a[2]};
  const Vec3 v{c[0] - a[0], c[1] - a[1], c[2] - a[2]};
  const Vec3 w{d[0] - a[0], d[1] - a[1], d[2] - a[2]};
  return (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0]) +
          u[2] * (v[0] * w[1] - v[1] * w[0])) /
         6.0;
}
}  // namespace

double determinant_at(const DisplacementField& f, int x, int y, int z) {
  const Vec3 px = mapped(f, x + 1, y, z), mx = mapped(f, x - 1, y, z);
  const Vec3 py = mapped(f, x, y + 1, z), my = mapped(f, x, y - 1, z);
  const Vec3 pz = mapped(f, x, y, z + 1), mz = mapped(f, x, y, z - 1);
  Vec3 c0, c1, c2;
  for (int k = 0; k < 3; ++k) {
    c0[k] = 0.5 * (px[k] - mx[k]);
    c1[k] = 0.5 * (py[k] - my[k]);
    c2[k] = 0.5 * (pz[k] - mz[k]);
  }
  const Vec3 cross{c1[1] * c2[2] - c1[2] * c2[1], c1[2] * c2[0] - c1[0] * c2[2],
                   c1[0] * c2[1] - c1[1] * c2[0]};
  return c0[0] * cross[0] + c0[1] * cross[1] + c0[2] * cross[2];
}

double warped_box_volume(const DisplacementField& f, int lo, int hi) {
  double vol = 0.0;
  for (int z = lo; z < hi; ++z)
    for (int y = lo; y < hi; ++y)
      for (int x = lo; x < hi; ++x) {
        Vec3 v[8];
        for (int c = 0; c < 8; ++c) v[c] = mapped(f, x + (c & 1), y + ((c >> 1) & 1), z + ((c >> 2) & 1));
        // Six tetrahedra sharing the main diagonal v0-v7.
        const int tets[6][2] = {{1, 3}, {3, 2}, {2, 6}, {6, 4}, {4, 5}, {5, 1}};
        for (const auto& t : tets) vol += tet_volume(v[0], v[t[0]], v[t[1]], v[7]);
      }
  return vol;
}

std::vector<std::int32_t> flood_fill(const LabelMask& mask, int connectivity) {
  const auto& g = mask.grid();
  std::vector<std::int32_t> out(static_cast<std::size_t>(g.size()), 0);
  std::int32_t next = 0;
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const auto i = g.index(x, y, z);
        if (mask[i] == 0 || out[static_cast<std::size_t>(i)] != 0) continue;
        ++next;
        std::deque<Index3> q{{x, y, z}};
        out[static_cast<std::size_t>(i)] = next;
        while (!q.empty()) {
          const auto c = q.front();
          q.pop_front();
          for (int dz = -1; dz <= 1; ++dz)
            for (int dy = -1; dy <= 1; ++dy)
              for (int dx = -1; dx <= 1; ++dx) {
                const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
                if (manhattan == 0 || (connectivity == 6 && manhattan > 1)) continue;
                const int nx = c[0] + dx, ny = c[1] + dy, nz = c[2] + dz;
                if (nx < 0 || ny < 0 || nz < 0 || nx >= g.dims[0] || ny >= g.dims[1] || nz >= g.dims[2])
                  continue;
                const auto j = g.index(nx, ny, nz);
                if (mask[j] == 0 || out[static_cast<std::size_t>(j)] != 0) continue;
                out[static_cast<std::size_t>(j)] = next;
                q.push_back({nx, ny, nz});
              }
        }
      }
  return out;
}

bool same_partition(const std::vector<std::int32_t>& a, const std::vector<std::int32_t>& b) {
  if (a.size() != b.size()) return false;
  std::map<std::int32_t, std::int32_t> ab, ba;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if ((a[i] == 0) != (b[i] == 0)) return false;
    if (a[i] == 0) continue;
    auto [it1, new1] = ab.emplace(a[i], b[i]);
    auto [it2, new2] = ba.emplace(b[i], a[i]);
    if (it1->second != b[i] || it2->second != a[i]) return false;
  }
  return true;
}

DisplacementField smooth_random_field(const Grid3& g, double max_amp, std::mt19937_64& rng,
                                      double max_cycles) {
  std::uniform_real_distribution<double> phase(0.0, 2.0 * M_PI), freq(0.25 * max_cycles, max_cycles),
      amp(-1.0, 1.0);
  DisplacementField f(g);
  for (int c = 0; c < 3; ++c) {
    struct Wave {
      double a, kx, ky, kz, ph;
    };
    Wave w[3];
    double total = 0.0;
    for (auto& wv : w) {
      wv = {amp(rng), freq(rng) * 2 * M_PI / g.dims[0], freq(rng) * 2 * M_PI / g.dims[1],
            freq(rng) * 2 * M_PI / g.dims[2], phase(rng)};
      total += std::abs(wv.a);
    }
    const double scale = total > 0 ? max_amp / total : 0.0;
    for (int z = 0; z < g.dims[2]; ++z)
      for (int y = 0; y < g.dims[1]; ++y)
        for (int x = 0; x < g.dims[0]; ++x) {
          double v = 0.0;
          for (const auto& wv : w) v += wv.a * std::sin(wv.kx * x + wv.ky * y + wv.kz * z + wv.ph);
          f.u[c][static_cast<std::size_t>(g.index(x, y, z))] = scale * v;
        }
  }
  return f;
}

Volume3 smooth_random_image(const Grid3& g, std::mt19937_64& rng, double amplitude, double noise) {
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  struct Blob {
    double cx, cy, cz, s, a;
  };
  std::vector<Blob> blobs(6);
  for (auto& b : blobs)
    b = {uni(rng) * g.dims[0], uni(rng) * g.dims[1], uni(rng) * g.dims[2],
         1.5 + 2.0 * uni(rng), amplitude * (2.0 * uni(rng) - 1.0)};
  Volume3 v(g);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        double s = 0.0;
        for (const auto& b : blobs) {
          const double r2 = (x - b.cx) * (x - b.cx) + (y - b.cy) * (y - b.cy) + (z - b.cz) * (z - b.cz);
          s += b.a * std::exp(-0.5 * r2 / (b.s * b.s));
        }
        v.at(x, y, z) = s + noise * gauss(rng);
      }
  return v;
}

DisplacementField affine_field(const Grid3& g, const std::array<std::array<double, 3>, 3>& a,
                               const Vec3& c) {
  DisplacementField f(g);
  for (int z = 0; z < g.dims[2]; ++z)
    for (int y = 0; y < g.dims[1]; ++y)
      for (int x = 0; x < g.dims[0]; ++x) {
        const double r[3] = {x - c[0], y - c[1], z - c[2]};
        const auto i = static_cast<std::size_t>(g.index(x, y, z));
        for (int m = 0; m < 3; ++m) f.u[m][i] = a[m][0] * r[0] + a[m][1] * r[1] + a[m][2] * r[2];
      }
  return f;
}

double det3(const std::array<std::array<double, 3>, 3>& m) {
  return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
         m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
         m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
}

}  // namespace jacreg::oracle
