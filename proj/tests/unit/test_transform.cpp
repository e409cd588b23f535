#include <doctest.h>

#include <cmath>
#include <random>

#include "jacreg/errors.hpp"
#include "jacreg/field.hpp"
#include "jacreg/volume_ops.hpp"
#include "oracles.hpp"

using namespace jacreg;
using Mat3 = std::array<std::array<double, 3>, 3>;

namespace {
Grid3 cube(int n) { return Grid3{{n, n, n}}; }

bool interior(const Grid3& g, int x, int y, int z, int margin) {
  return x >= margin && y >= margin && z >= margin && x < g.dims[0] - margin &&
         y < g.dims[1] - margin && z < g.dims[2] - margin;
}

DisplacementField constant_field(const Grid3& g, const Vec3& t) {
  DisplacementField f(g);
  for (std::int64_t i = 0; i < f.size(); ++i) f.set(i, t);
  return f;
}

Mat3 random_matrix(std::mt19937_64& rng, double max_norm) {
  std::uniform_real_distribution<double> uni(-1.0, 1.0);
  Mat3 a;
  double fro = 0.0;
  for (auto& r : a)
    for (auto& v : r) {
      v = uni(rng);
      fro += v * v;
    }
  // Frobenius norm bounds the spectral norm.
  const double s = max_norm * 0.999 / std::sqrt(fro) * std::abs(uni(rng));
  for (auto& r : a)
    for (auto& v : r) v *= s;
  return a;
}
}  // namespace

TEST_SUITE("transform") {

TEST_CASE("identity field") {
  const Grid3 g{{5, 6, 7}};
  const auto id = identity_field(g);
  CHECK(id.max_abs() == 0.0);

  std::mt19937_64 rng(7);
  const auto img = oracle::smooth_random_image(g, rng);
  CHECK(warp(img, id).data() == img.data());

  const auto jac = jacobian_determinant(id);
  CHECK(jac.folding_count == 0);
  for (double d : jac.det) CHECK(d == 1.0);
}

TEST_CASE("warping a ramp by a unit translation") {
  const Grid3 g = cube(8);
  Volume3 ramp(g);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) ramp.at(x, y, z) = x;
  const auto out = warp(ramp, constant_field(g, {1, 0, 0}));
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 7; ++x) CHECK(out.at(x, y, z) == doctest::Approx(x + 1.0));
  // Clamp-to-edge beyond the last face.
  CHECK(out.at(7, 3, 3) == 7.0);
}

TEST_CASE("warp matches a brute-force trilinear oracle") {
  const Grid3 g = cube(8);
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    const auto img = oracle::smooth_random_image(g, rng);
    const auto f = oracle::smooth_random_field(g, 2.5, rng);
    const auto out = warp(img, f);
    for (int z = 0; z < 8; ++z)
      for (int y = 0; y < 8; ++y)
        for (int x = 0; x < 8; ++x) {
          const auto i = g.index(x, y, z);
          const double ref = oracle::trilinear(img.data(), g.dims, x + f.u[0][i], y + f.u[1][i], z + f.u[2][i]);
          CHECK(std::abs(out[i] - ref) <= 1e-6);
        }
  }
}

TEST_CASE("trilinear gradient matches finite differences") {
  const Grid3 g = cube(6);
  std::mt19937_64 rng(2);
  const auto img = oracle::smooth_random_image(g, rng);
  std::uniform_real_distribution<double> pos(0.2, 4.8);
  for (int k = 0; k < 50; ++k) {
    const Vec3 p{pos(rng), pos(rng), pos(rng)};
    Vec3 grad;
    const double v = sample_trilinear_grad(img.data(), g.dims, p, grad);
    CHECK(v == doctest::Approx(sample_trilinear(img.data(), g.dims, p)));
    for (int a = 0; a < 3; ++a) {
      Vec3 hi = p, lo = p;
      hi[a] += 1e-6;
      lo[a] -= 1e-6;
      const double fd = (sample_trilinear(img.data(), g.dims, hi) - sample_trilinear(img.data(), g.dims, lo)) / 2e-6;
      CHECK(grad[a] == doctest::Approx(fd).epsilon(1e-5));
    }
  }
}

TEST_CASE("masks only warp with nearest neighbour") {
  LabelMask m(cube(4), 1);
  CHECK_THROWS_AS(warp(m, identity_field(cube(4)), Interp::trilinear), DataError);
  CHECK(warp(m, identity_field(cube(4))).labels() == m.labels());
}

TEST_CASE("compose with identity") {
  const Grid3 g = cube(8);
  std::mt19937_64 rng(5);
  const auto f = oracle::smooth_random_field(g, 2.0, rng);
  const auto id = identity_field(g);
  const auto a = compose(f, id);
  const auto b = compose(id, f);
  for (int c = 0; c < 3; ++c) {
    CHECK(a.u[c] == f.u[c]);  // bitwise
    CHECK(b.u[c] == f.u[c]);
  }
  CHECK_THROWS_AS(compose(f, identity_field(cube(6))), DataError);
}

TEST_CASE("composing translations adds them") {
  const Grid3 g = cube(12);
  const Vec3 t1{1.5, -0.5, 0.25}, t2{-0.75, 1.0, 2.0};
  const auto c = compose(constant_field(g, t2), constant_field(g, t1));
  for (int z = 0; z < 12; ++z)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        if (!interior(g, x, y, z, 3)) continue;
        const auto v = c.at(g.index(x, y, z));
        for (int a = 0; a < 3; ++a) CHECK(v[a] == doctest::Approx(t1[a] + t2[a]));
      }
}

TEST_CASE("exact inverse translations compose to identity away from the boundary") {
  const Grid3 g = cube(12);
  const Vec3 t{2.0, -1.0, 1.5};
  const auto c = compose(constant_field(g, t), constant_field(g, {-t[0], -t[1], -t[2]}));
  for (int z = 0; z < 12; ++z)
    for (int y = 0; y < 12; ++y)
      for (int x = 0; x < 12; ++x) {
        if (!interior(g, x, y, z, 2)) continue;
        const auto v = c.at(g.index(x, y, z));
        for (int a = 0; a < 3; ++a) CHECK(std::abs(v[a]) <= 1e-6);
      }
}

TEST_CASE("jacobian of linear scaling") {
  const Grid3 g = cube(8);
  const auto f = oracle::affine_field(g, Mat3{{{0.1, 0, 0}, {0, 0.1, 0}, {0, 0, 0.1}}}, {0, 0, 0});
  const auto jac = jacobian_determinant(f);
  for (int z = 1; z < 7; ++z)
    for (int y = 1; y < 7; ++y)
      for (int x = 1; x < 7; ++x) CHECK(jac.det[g.index(x, y, z)] == doctest::Approx(1.331).epsilon(1e-12));
  CHECK_THROWS_AS(jacobian_determinant(identity_field(Grid3{{2, 5, 5}})), DataError);
}

TEST_CASE("jacobian matches the finite-difference determinant oracle") {
  const Grid3 g = cube(10);
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = oracle::smooth_random_field(g, 1.5, rng);
    const auto jac = jacobian_determinant(f);
    for (int z = 1; z < 9; ++z)
      for (int y = 1; y < 9; ++y)
        for (int x = 1; x < 9; ++x)
          CHECK(std::abs(jac.det[g.index(x, y, z)] - oracle::determinant_at(f, x, y, z)) <= 1e-9);
  }
}

TEST_CASE("jacobian is exact on random affine fields") {
  const Grid3 g = cube(8);
  std::mt19937_64 rng(23);
  for (int trial = 0; trial < 50; ++trial) {
    const auto a = random_matrix(rng, 0.5);
    Mat3 m = a;
    for (int i = 0; i < 3; ++i) m[i][i] += 1.0;
    const double expected = oracle::det3(m);
    const auto jac = jacobian_determinant(oracle::affine_field(g, a, {3.5, 3.5, 3.5}));
    for (int z = 1; z < 7; ++z)
      for (int y = 1; y < 7; ++y)
        for (int x = 1; x < 7; ++x) CHECK(std::abs(jac.det[g.index(x, y, z)] - expected) < 1e-9);
  }
}

TEST_CASE("folding is counted, not clamped") {
  const Grid3 g = cube(6);
  const auto f = oracle::affine_field(g, Mat3{{{-1.5, 0, 0}, {0, 0, 0}, {0, 0, 0}}}, {0, 0, 0});
  const auto jac = jacobian_determinant(f);
  CHECK(jac.folding_count == g.size());
  CHECK(jac.det[g.index(2, 2, 2)] == doctest::Approx(-0.5));
}

TEST_CASE("mean jacobian tracks warped volume on smooth fields") {
  const Grid3 g = cube(8);
  std::mt19937_64 rng(31);
  CHECK(oracle::warped_box_volume(identity_field(g), 0, 7) == doctest::Approx(343.0));
  for (int trial = 0; trial < 10; ++trial) {
    const auto f = oracle::smooth_random_field(g, 2.0, rng, 0.4);
    const auto jac = jacobian_determinant(f);
    // Trapezoid-weighted mean over the interior voxel box [1, 6]^3.
    double mean = 0.0, weight = 0.0;
    for (int z = 1; z <= 6; ++z)
      for (int y = 1; y <= 6; ++y)
        for (int x = 1; x <= 6; ++x) {
          double w = 1.0;
          for (int p : {x, y, z}) w *= (p == 1 || p == 6) ? 0.5 : 1.0;
          mean += w * jac.det[g.index(x, y, z)];
          weight += w;
        }
    mean /= weight;
    const double ratio = oracle::warped_box_volume(f, 1, 6) / 125.0;
    CHECK(std::abs(mean - ratio) <= 0.02 * ratio);
  }
}

TEST_CASE("warp then warp equals warp by the composition") {
  const Grid3 g = cube(16);
  std::mt19937_64 rng(41);
  // Smooth, slowly varying image so interpolation error stays small.
  Volume3 img(g);
  for (int z = 0; z < 16; ++z)
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x)
        img.at(x, y, z) = 100.0 + 10.0 * std::sin(0.08 * x) * std::cos(0.06 * y) + 5.0 * std::sin(0.05 * z);
  for (int trial = 0; trial < 3; ++trial) {
    const auto f = oracle::smooth_random_field(g, 0.8, rng, 0.4);
    const auto h = oracle::smooth_random_field(g, 0.8, rng, 0.4);
    // (img o f) o h = img o (f o h)
    const auto twice = warp(warp(img, f), h);
    const auto once = warp(img, compose(f, h));
    for (int z = 0; z < 16; ++z)
      for (int y = 0; y < 16; ++y)
        for (int x = 0; x < 16; ++x) {
          if (!interior(g, x, y, z, 3)) continue;
          const auto i = g.index(x, y, z);
          CHECK(std::abs(twice[i] - once[i]) <= 2e-4 * std::abs(once[i]));
        }
  }
}

TEST_CASE("upsample_field") {
  const Grid3 fine = cube(16);
  const Grid3 coarse = downsampled_grid(fine, 2);

  DisplacementField c(coarse);
  for (std::int64_t i = 0; i < c.size(); ++i) c.set(i, {1, 0, 0});
  const auto up = upsample_field(c, 2, fine);
  for (std::int64_t i = 0; i < up.size(); ++i) CHECK(up.at(i) == Vec3{2, 0, 0});

  CHECK(upsample_field(DisplacementField(coarse), 4, Grid3{{32, 32, 32}}).max_abs() == 0.0);

  // u = 0.05 x in world coordinates on both grids.
  DisplacementField lin(coarse);
  for (int z = 0; z < 8; ++z)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x) {
        const auto w = coarse.to_world({double(x), double(y), double(z)});
        lin.set(coarse.index(x, y, z), {0.05 * w[0] / coarse.spacing[0], 0, 0});
      }
  const auto lifted = upsample_field(lin, 2, fine);
  for (int z = 2; z < 14; ++z)
    for (int y = 2; y < 14; ++y)
      for (int x = 2; x < 14; ++x)
        CHECK(std::abs(lifted.u[0][fine.index(x, y, z)] - 0.05 * x) <= 1e-6);

  CHECK_THROWS_AS(upsample_field(lin, 2, cube(40)), DataError);
  CHECK_THROWS_AS(upsample_field(lin, 1, fine), DataError);
}

}  // TEST_SUITE
