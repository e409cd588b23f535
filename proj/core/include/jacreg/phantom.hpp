#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "jacreg/field.hpp"
#include "jacreg/grid.hpp"

namespace jacreg {

// Subregion classes shared by the phantom truth and the sub-segmentation.
enum Tissue : std::int32_t { kHypo = 1, kIntermediate = 2, kHyper = 3 };

struct LesionSpec {
  Vec3 center_mm{0.0, 0.0, 0.0};
  double radius_mm = 5.0;
  std::string site = "pelvis_ovaries";
  std::array<double, 3> composition{0.2, 0.7, 0.1};      // hypo, intermediate, hyper
  std::array<double, 3> intensities{-100.0, 40.0, 300.0};  // HU
};

struct PhantomSpec {
  Grid3 grid{{64, 64, 64}, {1.0, 1.0, 1.0}, {0.0, 0.0, 0.0}};
  std::vector<LesionSpec> lesions;
  double background = 0.0;
  // Peak amplitude of the smooth anatomy blobs; 0 disables them.
  double anatomy_amplitude = 60.0;
  int anatomy_blobs = 150;
  std::array<double, 2> anatomy_sigma{2.0, 5.0};  // blob std range, voxels
  double noise_sigma = 5.0;
  std::uint64_t seed = 0;

  // Throws ConfigError.
  void validate() const;
};

struct Phantom {
  Volume3 image;
  LabelMask tumour;      // lesion k of the spec carries label k + 1
  LabelMask subregions;  // Tissue classes inside lesions, 0 elsewhere
};

// Renders the spec and adds N(0, noise_sigma) noise drawn from spec.seed.
// Throws DataError when a lesion leaves the grid.
Phantom make_phantom(const PhantomSpec& spec);
// The same volume before noise.
Phantom render_phantom(const PhantomSpec& spec);

// Closed-form deformation in voxel units of the grid it is sampled on.
struct AnalyticDeformation {
  enum class Kind { translation, linear, radial_contraction };

  Kind kind = Kind::translation;
  Vec3 translation{0.0, 0.0, 0.0};
  std::array<Vec3, 3> matrix{};  // u(x) = A (x - center), rows of A
  Vec3 center{0.0, 0.0, 0.0};
  double core_radius = 10.0;
  double rim_width = 6.0;
  double alpha = 0.2;

  static AnalyticDeformation make_translation(const Vec3& t);
  static AnalyticDeformation make_linear(const std::array<Vec3, 3>& a, const Vec3& center);
  static AnalyticDeformation make_radial_contraction(const Vec3& center, double core_radius,
                                                     double rim_width, double alpha);

  // Throws ConfigError.
  void validate() const;
  Vec3 displacement(const Vec3& x) const;
  // det(I + grad u) inside the core (contraction) or anywhere (translation, linear).
  double core_detj() const;
  // Whether x lies where core_detj is exact.
  bool in_core(const Vec3& x) const;
  std::string kind_name() const;
};

// The truth field sampled on grid; throws DataError when its discrete
// Jacobian is <= 0 anywhere.
DisplacementField sample_deformation(const AnalyticDeformation& d, const Grid3& grid);

struct Deformed {
  Volume3 warped;
  DisplacementField truth;
};
// warped = warp(vol, truth).
Deformed apply_deformation(const Volume3& vol, const AnalyticDeformation& d);

// A longitudinal pair with a known map. The rendered phantom is the
// follow-up; the baseline is the clean phantom warped by truth, so that
// followup o truth ~ baseline and detJ(truth) is the follow-up/baseline
// volume ratio. Each timepoint gets independent noise.
struct PhantomPair {
  Volume3 baseline;
  Volume3 followup;
  LabelMask baseline_tumour;
  LabelMask followup_tumour;
  LabelMask baseline_subregions;
  LabelMask followup_subregions;
  DisplacementField truth;
};
PhantomPair make_phantom_pair(const PhantomSpec& spec, const AnalyticDeformation& d);

}  // namespace jacreg
