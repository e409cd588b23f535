#include <doctest.h>

#include <cmath>
#include <numeric>
#include <random>

#include "jacreg/errors.hpp"
#include "jacreg/volume_ops.hpp"

using namespace jacreg;

namespace {
Grid3 cube(int n, double s = 1.0) { return Grid3{{n, n, n}, {s, s, s}, {0, 0, 0}}; }

// Brute-force block mean over the requested output voxel.
double block_mean(const Volume3& v, int factor, int ox, int oy, int oz) {
  double sum = 0.0;
  int n = 0;
  for (int z = oz * factor; z < std::min((oz + 1) * factor, v.grid().dims[2]); ++z)
    for (int y = oy * factor; y < std::min((oy + 1) * factor, v.grid().dims[1]); ++y)
      for (int x = ox * factor; x < std::min((ox + 1) * factor, v.grid().dims[0]); ++x) {
        sum += v.at(x, y, z);
        ++n;
      }
  return sum / n;
}
}  // namespace

TEST_SUITE("core_volume") {

TEST_CASE("grid invariants") {
  CHECK_THROWS_AS(Volume3(Grid3{{1, 4, 4}}), DataError);
  CHECK_THROWS_AS(Volume3(Grid3{{4, 4, 4}, {1, 0, 1}}), DataError);
  CHECK_THROWS_AS(Volume3(cube(2), std::vector<double>(7, 0.0)), DataError);
  CHECK_THROWS_AS(Volume3(cube(2), std::vector<double>(8, NAN)), DataError);
  CHECK_THROWS_AS(LabelMask(cube(2), std::vector<std::int32_t>(8, -1)), DataError);
  Grid3 g{{3, 4, 5}};
  CHECK(g.size() == 60);
  CHECK(g.index(1, 2, 3) == 1 + 3 * (2 + 4 * 3));
}

TEST_CASE("downsample of a constant volume is constant") {
  Volume3 v(cube(8), 7.0);
  const auto d = downsample(v, 2);
  CHECK(d.grid().dims == Index3{4, 4, 4});
  for (double x : d.data()) CHECK(x == 7.0);
}

TEST_CASE("downsample first block of a 0..63 ramp") {
  std::vector<double> data(64);
  std::iota(data.begin(), data.end(), 0.0);
  Volume3 v(cube(4), data);
  const auto d = downsample(v, 2);
  CHECK(d.at(0, 0, 0) == doctest::Approx(block_mean(v, 2, 0, 0, 0)));
  CHECK(d.at(0, 0, 0) == 10.5);
}

TEST_CASE("downsample spacing, dims and partial blocks") {
  Volume3 v(cube(8, 1.0), 1.0);
  const auto d = downsample(v, 2);
  CHECK(d.grid().spacing == Vec3{2, 2, 2});
  CHECK(d.grid().dims == Index3{4, 4, 4});

  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> uni(-50, 50);
  Volume3 odd(Grid3{{7, 9, 6}});
  for (auto& x : odd.data()) x = uni(rng);
  const auto od = downsample(odd, 3);
  CHECK(od.grid().dims == Index3{3, 3, 2});
  for (int z = 0; z < 2; ++z)
    for (int y = 0; y < 3; ++y)
      for (int x = 0; x < 3; ++x) CHECK(od.at(x, y, z) == doctest::Approx(block_mean(odd, 3, x, y, z)).epsilon(1e-12));

  CHECK_THROWS_AS(downsample(v, 1), DataError);
  CHECK_THROWS_AS(downsample(Volume3(cube(6)), 4), DataError);
}

TEST_CASE("downsample preserves the global mean with full blocks") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> uni(-1000, 1000);
  for (int trial = 0; trial < 10; ++trial) {
    Volume3 v(Grid3{{8, 12, 16}});
    for (auto& x : v.data()) x = uni(rng);
    const auto d = downsample(v, 4);
    const double m0 = std::accumulate(v.data().begin(), v.data().end(), 0.0) / v.size();
    const double m1 = std::accumulate(d.data().begin(), d.data().end(), 0.0) / d.size();
    CHECK(std::abs(m1 - m0) <= 1e-6 * std::max(1.0, std::abs(m0)));
  }
}

TEST_CASE("downsample by 2 twice matches downsample by 4 dims") {
  for (int n : {8, 16, 24}) {
    Volume3 v(Grid3{{n, n + 8, n}});
    const auto twice = downsample(downsample(v, 2), 2);
    const auto once = downsample(v, 4);
    CHECK(twice.grid().dims == once.grid().dims);
    CHECK(twice.grid().origin == once.grid().origin);
  }
}

TEST_CASE("resample_nearest identical grid is identity and idempotent") {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> lab(0, 4);
  LabelMask m(Grid3{{6, 7, 8}, {1.5, 1.0, 2.5}, {-3, 2, 10}});
  for (auto& l : m.labels()) l = lab(rng);
  const auto r = resample_nearest(m, m.grid());
  CHECK(r.labels() == m.labels());
  CHECK(resample_nearest(r, r.grid()).labels() == r.labels());
}

TEST_CASE("resample_nearest 2x upsampling doubles the cube extent") {
  LabelMask m(cube(8, 2.0));
  for (int z = 2; z <= 4; ++z)
    for (int y = 2; y <= 4; ++y)
      for (int x = 2; x <= 4; ++x) m.at(x, y, z) = 1;
  Grid3 fine{{16, 16, 16}, {1, 1, 1}, {0, 0, 0}};
  const auto r = resample_nearest(m, fine);
  // Brute-force nearest lookup in world coordinates.
  std::int64_t expected = 0;
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) {
        int src[3] = {x, y, z};
        bool in = true;
        for (int a = 0; a < 3; ++a) {
          const int s = static_cast<int>(std::floor(src[a] / 2.0 + 0.5));
          in = in && s >= 2 && s <= 4;
        }
        expected += in;
        CHECK(r.at(x, y, z) == (in ? 1 : 0));
      }
  CHECK(r.count(1) == expected);
  CHECK(expected == 6 * 6 * 6);
}

TEST_CASE("resample_nearest outside the source extent is background") {
  LabelMask m(cube(4), 3);
  Grid3 far{{4, 4, 4}, {1, 1, 1}, {100, 100, 100}};
  CHECK(resample_nearest(m, far).count_nonzero() == 0);
  CHECK_THROWS_AS(resample_nearest(m, Grid3{{1, 4, 4}}), DataError);
}

}  // TEST_SUITE
