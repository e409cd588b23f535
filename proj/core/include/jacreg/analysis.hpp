#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "jacreg/field.hpp"
#include "jacreg/grid.hpp"

namespace jacreg {

struct LesionSet {
  LabelMask mask;  // lesion ids 1..K
  std::map<int, std::string> site_of;
  std::map<int, double> volumes_mm3;

  int count() const { return static_cast<int>(volumes_mm3.size()); }
  // site_of entry, or "unassigned".
  std::string site(int id) const;
};

// Maximal connected foreground components (nonzero voxels), labelled 1..K by
// decreasing voxel count; ties keep first-voxel order.
LesionSet connected_components(const LabelMask& mask, int connectivity = 26);

// Majority vote of the nonzero labels of site_labels inside each lesion,
// mapped through names; labels without a name become "label_<n>".
void assign_sites(LesionSet& lesions, const LabelMask& site_labels,
                  const std::map<int, std::string>& names);

// 2|A n B| / (|A| + |B|) over voxels equal to label; 1 when both are empty.
double dice(const LabelMask& a, const LabelMask& b, int label);

struct ErrorStats {
  double mean = 0.0;
  double median = 0.0;  // lower middle element
  double max = 0.0;
  std::int64_t count = 0;
};

// Per-voxel Euclidean distance between two fields (voxel units) over the
// nonzero voxels of roi, or the whole grid. Throws DataError on grid
// mismatch or an empty region.
ErrorStats displacement_error(const DisplacementField& estimated, const DisplacementField& truth,
                              const LabelMask* roi = nullptr);

// Distance |phi_ab(phi_ba(x)) - x| per voxel, summarised as above.
ErrorStats inverse_consistency_error(const DisplacementField& field_ab,
                                     const DisplacementField& field_ba,
                                     const LabelMask* roi = nullptr);

struct SdlogjResult {
  double value = 0.0;
  std::int64_t included = 0;
  std::int64_t excluded = 0;  // voxels with detJ <= 0
};

// Population std of ln(detJ) over the nonzero voxels of roi, or the whole
// grid when roi is null. Throws DataError when no voxel has detJ > 0.
SdlogjResult sdlogj(const JacobianMap& jac, const LabelMask* roi = nullptr);

struct RoiJacobianStats {
  int roi_id = 0;
  std::int64_t voxel_count = 0;
  // Absent when the ROI is empty (or, except folding, entirely folded).
  std::optional<double> median_detj, mean_detj, std_detj;
  std::optional<double> frac_shrinking, frac_expanding, folding_fraction;
};

// One row per id in 1..max_id over the voxels of rois carrying that id.
// Statistics skip detJ <= 0 voxels, which only count toward
// folding_fraction. The median is the lower middle element.
std::vector<RoiJacobianStats> roi_jacobian_stats(const JacobianMap& jac, const LabelMask& rois,
                                                 int max_id);
std::vector<RoiJacobianStats> roi_jacobian_stats(const JacobianMap& jac, const LesionSet& lesions);

// (detj_stat - 1) * 100; negative means shrinkage. Throws DataError for
// non-positive input.
double percent_volume_change(double detj_stat);
// e.g. "20% median volume shrinkage" for a median of 0.8.
std::string describe_volume_change(double detj_stat, const std::string& statistic = "median");

struct FcmConfig {
  int clusters = 3;
  double fuzziness = 2.0;
  double tol = 1e-5;
  int max_iter = 300;
  std::uint64_t seed = 0;  // initialisation is percentile based; kept for provenance

  // Throws ConfigError.
  void validate() const;
};

struct SubSegmentation {
  LabelMask class_map;                // 0 outside, 1..c by ascending center
  std::vector<std::int64_t> voxels;   // tumour voxel indices, ascending
  std::vector<double> memberships;    // voxels.size() x c, row-major
  std::vector<double> centers;        // ascending
  std::vector<double> objective;      // sum u^m d^2 after each iteration
  int iterations = 0;
  bool converged = false;

  int clusters() const { return static_cast<int>(centers.size()); }
  double membership(std::size_t row, int k) const {
    return memberships[row * centers.size() + static_cast<std::size_t>(k)];
  }
};

// Fuzzy c-means on the intensities of the nonzero voxels of tumour, started
// from the 10/50/90 (generally evenly spread) percentiles. Throws DataError
// for an empty mask or fewer distinct intensities than clusters.
SubSegmentation fcm_subsegment(const Volume3& image, const LabelMask& tumour, const FcmConfig& cfg = {});

enum class MatchKind { matched, disappeared, appeared, split, merge };
std::string to_string(MatchKind kind);

struct LesionOverlap {
  int baseline_id = 0;
  int followup_id = 0;
  double dice = 0.0;
};

struct LesionMatch {
  std::vector<int> baseline_ids;
  std::vector<int> followup_ids;
  MatchKind kind = MatchKind::matched;
  std::vector<LesionOverlap> overlaps;  // edges of the group with dice >= min_dice
};

// Warps follow-up labels into baseline space (nearest) and groups lesions by
// connected components of the bipartite graph of pairs with Dice >= min_dice.
// Each baseline and follow-up id lands in exactly one group. Groups with
// several lesions on both sides are reported as merge.
std::vector<LesionMatch> match_lesions(const LesionSet& baseline, const LesionSet& followup,
                                       const DisplacementField& field_ab, double min_dice = 0.1);

}  // namespace jacreg
