#include "jacreg/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

namespace {

enum class Stream : std::uint64_t { anatomy = 1, flecks = 2, noise = 3 };

std::mt19937_64 make_rng(std::uint64_t seed, Stream s) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(s)};
  return std::mt19937_64(seq);
}

double norm2(const Vec3& v) { return v[0] * v[0] + v[1] * v[1] + v[2] * v[2]; }

void add_noise(Volume3& v, double sigma, std::uint64_t seed) {
  if (sigma <= 0.0) return;
  auto rng = make_rng(seed, Stream::noise);
  std::normal_distribution<double> n(0.0, sigma);
  for (auto& x : v.data()) x += n(rng);
}

// Cubic falloff from 1 at t <= 0 to 0 at t >= 1.
double falloff(double t) {
  if (t <= 0.0) return 1.0;
  if (t >= 1.0) return 0.0;
  return 1.0 - t * t * (3.0 - 2.0 * t);
}

double falloff_slope(double t) {
  if (t <= 0.0 || t >= 1.0) return 0.0;
  return -6.0 * t * (1.0 - t);
}

}  // namespace

void PhantomSpec::validate() const {
  try {
    grid.validate();
  } catch (const DataError& e) {
    throw ConfigError(std::string("phantom grid: ") + e.what());
  }
  const double min_spacing = std::min({grid.spacing[0], grid.spacing[1], grid.spacing[2]});
  for (std::size_t k = 0; k < lesions.size(); ++k) {
    const auto& l = lesions[k];
    const std::string which = "lesion " + std::to_string(k + 1);
    if (!(l.radius_mm > 2.0 * min_spacing))
      throw ConfigError(which + ": radius must exceed 2 voxels");
    double sum = 0.0;
    for (double f : l.composition) {
      if (!(f >= 0.0)) throw ConfigError(which + ": composition fractions must be >= 0");
      sum += f;
    }
    if (std::abs(sum - 1.0) > 1e-9) throw ConfigError(which + ": composition must sum to 1");
    if (l.site.empty()) throw ConfigError(which + ": empty site tag");
  }
  if (!(noise_sigma >= 0.0)) throw ConfigError("phantom noise_sigma must be >= 0");
  if (anatomy_blobs < 0) throw ConfigError("phantom anatomy_blobs must be >= 0");
  if (!(anatomy_sigma[0] > 0.0 && anatomy_sigma[1] >= anatomy_sigma[0]))
    throw ConfigError("phantom anatomy_sigma must be a positive range");
}

Phantom render_phantom(const PhantomSpec& spec) {
  spec.validate();
  const Grid3& g = spec.grid;
  const Index3 n = g.dims;

  for (std::size_t k = 0; k < spec.lesions.size(); ++k) {
    const auto& l = spec.lesions[k];
    const Vec3 lo = g.to_world({0.0, 0.0, 0.0});
    const Vec3 hi = g.to_world({n[0] - 1.0, n[1] - 1.0, n[2] - 1.0});
    for (int a = 0; a < 3; ++a)
      if (l.center_mm[a] - l.radius_mm < lo[a] || l.center_mm[a] + l.radius_mm > hi[a])
        throw DataError("lesion " + std::to_string(k + 1) + " extends outside the grid " +
                        describe(g));
  }

  Phantom p{Volume3(g, spec.background), LabelMask(g), LabelMask(g)};

  if (spec.anatomy_amplitude != 0.0 && spec.anatomy_blobs > 0) {
    auto rng = make_rng(spec.seed, Stream::anatomy);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    struct Blob {
      Vec3 c;
      double inv_two_s2, amp;
    };
    std::vector<Blob> blobs;
    for (int b = 0; b < spec.anatomy_blobs; ++b) {
      Blob blob;
      for (int a = 0; a < 3; ++a) blob.c[a] = unit(rng) * (n[a] - 1);
      const double s = spec.anatomy_sigma[0] + (spec.anatomy_sigma[1] - spec.anatomy_sigma[0]) * unit(rng);
      blob.inv_two_s2 = 1.0 / (2.0 * s * s);
      blob.amp = spec.anatomy_amplitude * (2.0 * unit(rng) - 1.0);
      blobs.push_back(blob);
    }
    auto& data = p.image.data();
    parallel_for(0, n[2], [&](std::int64_t z) {
      for (int y = 0; y < n[1]; ++y)
        for (int x = 0; x < n[0]; ++x) {
          double v = 0.0;
          for (const auto& b : blobs) {
            const Vec3 d{x - b.c[0], y - b.c[1], z - b.c[2]};
            v += b.amp * std::exp(-norm2(d) * b.inv_two_s2);
          }
          data[static_cast<std::size_t>(g.index(x, y, static_cast<int>(z)))] += v;
        }
    });
  }

  auto fleck_rng = make_rng(spec.seed, Stream::flecks);
  for (std::size_t k = 0; k < spec.lesions.size(); ++k) {
    const auto& l = spec.lesions[k];
    const double hypo_r = l.radius_mm * std::cbrt(l.composition[0]);
    std::vector<std::int64_t> shell;
    std::int64_t total = 0;
    for (int z = 0; z < n[2]; ++z)
      for (int y = 0; y < n[1]; ++y)
        for (int x = 0; x < n[0]; ++x) {
          const Vec3 w = g.to_world({double(x), double(y), double(z)});
          const double r = std::sqrt(norm2({w[0] - l.center_mm[0], w[1] - l.center_mm[1],
                                            w[2] - l.center_mm[2]}));
          if (r > l.radius_mm) continue;
          const std::int64_t i = g.index(x, y, z);
          ++total;
          p.tumour[i] = static_cast<std::int32_t>(k + 1);
          if (r <= hypo_r && l.composition[0] > 0.0) {
            p.subregions[i] = kHypo;
            p.image[i] = l.intensities[0];
          } else {
            p.subregions[i] = kIntermediate;
            p.image[i] = l.intensities[1];
            shell.push_back(i);
          }
        }
    // Hyper-dense flecks replace a random subset of the shell.
    std::shuffle(shell.begin(), shell.end(), fleck_rng);
    const auto flecks = std::min<std::size_t>(
        shell.size(), static_cast<std::size_t>(std::llround(l.composition[2] * double(total))));
    for (std::size_t j = 0; j < flecks; ++j) {
      p.subregions[shell[j]] = kHyper;
      p.image[shell[j]] = l.intensities[2];
    }
  }
  return p;
}

Phantom make_phantom(const PhantomSpec& spec) {
  Phantom p = render_phantom(spec);
  add_noise(p.image, spec.noise_sigma, spec.seed);
  return p;
}

AnalyticDeformation AnalyticDeformation::make_translation(const Vec3& t) {
  AnalyticDeformation d;
  d.kind = Kind::translation;
  d.translation = t;
  return d;
}

AnalyticDeformation AnalyticDeformation::make_linear(const std::array<Vec3, 3>& a, const Vec3& center) {
  AnalyticDeformation d;
  d.kind = Kind::linear;
  d.matrix = a;
  d.center = center;
  return d;
}

AnalyticDeformation AnalyticDeformation::make_radial_contraction(const Vec3& center, double core_radius,
                                                                 double rim_width, double alpha) {
  AnalyticDeformation d;
  d.kind = Kind::radial_contraction;
  d.center = center;
  d.core_radius = core_radius;
  d.rim_width = rim_width;
  d.alpha = alpha;
  return d;
}

void AnalyticDeformation::validate() const {
  switch (kind) {
    case Kind::translation:
      for (double t : translation)
        if (!std::isfinite(t)) throw ConfigError("translation must be finite");
      break;
    case Kind::linear: {
      double fro = 0.0;
      for (const auto& row : matrix) fro += norm2(row);
      if (!(std::sqrt(fro) < 0.5)) throw ConfigError("linear deformation needs ||A||_F < 0.5");
      break;
    }
    case Kind::radial_contraction:
      if (!(core_radius > 0.0)) throw ConfigError("contraction core_radius must be > 0");
      if (!(rim_width > 0.0)) throw ConfigError("contraction rim_width must be > 0");
      if (!(alpha > -1.0 && alpha < 1.0)) throw ConfigError("contraction alpha must lie in (-1, 1)");
      break;
  }
}

Vec3 AnalyticDeformation::displacement(const Vec3& x) const {
  switch (kind) {
    case Kind::translation:
      return translation;
    case Kind::linear: {
      const Vec3 d{x[0] - center[0], x[1] - center[1], x[2] - center[2]};
      Vec3 u{};
      for (int r = 0; r < 3; ++r) u[r] = matrix[r][0] * d[0] + matrix[r][1] * d[1] + matrix[r][2] * d[2];
      return u;
    }
    case Kind::radial_contraction: {
      const Vec3 d{x[0] - center[0], x[1] - center[1], x[2] - center[2]};
      const double s = falloff((std::sqrt(norm2(d)) - core_radius) / rim_width);
      return {-alpha * s * d[0], -alpha * s * d[1], -alpha * s * d[2]};
    }
  }
  return {};
}

double AnalyticDeformation::core_detj() const {
  switch (kind) {
    case Kind::translation:
      return 1.0;
    case Kind::linear: {
      const auto& a = matrix;
      const double m[3][3] = {{1 + a[0][0], a[0][1], a[0][2]},
                              {a[1][0], 1 + a[1][1], a[1][2]},
                              {a[2][0], a[2][1], 1 + a[2][2]}};
      return m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
             m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
             m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    }
    case Kind::radial_contraction:
      return std::pow(1.0 - alpha, 3);
  }
  return 1.0;
}

bool AnalyticDeformation::in_core(const Vec3& x) const {
  if (kind != Kind::radial_contraction) return true;
  const Vec3 d{x[0] - center[0], x[1] - center[1], x[2] - center[2]};
  return norm2(d) <= core_radius * core_radius;
}

std::string AnalyticDeformation::kind_name() const {
  switch (kind) {
    case Kind::translation:
      return "translation";
    case Kind::linear:
      return "linear";
    case Kind::radial_contraction:
      return "radial_contraction";
  }
  return "unknown";
}

DisplacementField sample_deformation(const AnalyticDeformation& d, const Grid3& grid) {
  d.validate();
  grid.validate();
  DisplacementField f(grid);
  const Index3 n = grid.dims;
  parallel_for(0, n[2], [&](std::int64_t z) {
    for (int y = 0; y < n[1]; ++y)
      for (int x = 0; x < n[0]; ++x)
        f.set(grid.index(x, y, static_cast<int>(z)), d.displacement({double(x), double(y), double(z)}));
  });
  if (d.kind == AnalyticDeformation::Kind::radial_contraction) {
    // Radial stretch 1 - a s - a s' r and tangential 1 - a s must stay positive.
    for (double r = 0.0; r <= d.core_radius + d.rim_width; r += 0.01) {
      const double t = (r - d.core_radius) / d.rim_width;
      const double s = falloff(t);
      const double radial = 1.0 - d.alpha * s - d.alpha * falloff_slope(t) * r / d.rim_width;
      if (radial <= 0.0 || 1.0 - d.alpha * s <= 0.0)
        throw DataError("radial contraction folds at radius " + std::to_string(r));
    }
  }
  const JacobianMap jac = jacobian_determinant(f);
  if (jac.folding_count > 0)
    throw DataError(d.kind_name() + " deformation folds at " + std::to_string(jac.folding_count) +
                    " voxels");
  return f;
}

Deformed apply_deformation(const Volume3& vol, const AnalyticDeformation& d) {
  DisplacementField truth = sample_deformation(d, vol.grid());
  Volume3 warped = warp(vol, truth);
  return {std::move(warped), std::move(truth)};
}

PhantomPair make_phantom_pair(const PhantomSpec& spec, const AnalyticDeformation& d) {
  Phantom clean = render_phantom(spec);
  Deformed base = apply_deformation(clean.image, d);
  PhantomPair pair;
  pair.baseline = std::move(base.warped);
  add_noise(pair.baseline, spec.noise_sigma, spec.seed + 1);
  pair.baseline_tumour = warp(clean.tumour, base.truth);
  pair.baseline_subregions = warp(clean.subregions, base.truth);
  pair.followup = std::move(clean.image);
  add_noise(pair.followup, spec.noise_sigma, spec.seed);
  pair.followup_tumour = std::move(clean.tumour);
  pair.followup_subregions = std::move(clean.subregions);
  pair.truth = std::move(base.truth);
  return pair;
}

}  // namespace jacreg
