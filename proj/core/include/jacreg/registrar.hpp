#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "jacreg/field.hpp"
#include "jacreg/grid.hpp"
#include "jacreg/loss.hpp"

namespace jacreg {

// One optimisation stage. A level_factor of 4 or 2 solves on a block-mean
// reduced copy of the images and lifts the result back to full resolution.
struct RegistrationUnit {
  int level_factor = 1;
  double smoothing_sigma = 1.5;  // voxels, applied to each raw gradient
  int iterations = 100;
  double step_size = 0.1;  // largest per-voxel update of a step, working-grid voxels

  void validate() const;
};

struct RegistrationConfig {
  std::array<RegistrationUnit, 3> stage1{RegistrationUnit{4}, RegistrationUnit{2}, RegistrationUnit{1}};
  RegistrationUnit stage2{1};
  LossConfig loss;
  std::uint64_t seed = 0;
  double convergence_tol = 1e-5;

  void validate() const;
};

struct FieldPair {
  DisplacementField ab;
  DisplacementField ba;
};

struct UnitTrace {
  std::string label;
  int level_factor = 1;
  LossBreakdown initial;
  std::vector<LossBreakdown> accepted;  // one entry per accepted step
  int rejected = 0;
  std::string stop_reason;

  const LossBreakdown& final_loss() const { return accepted.empty() ? initial : accepted.back(); }
};

struct UnitResult {
  FieldPair fields;
  UnitTrace trace;
};

struct RegistrationResult {
  DisplacementField field_ab;
  DisplacementField field_ba;
  std::vector<UnitTrace> loss_trace;
  double runtime_seconds = 0.0;
  RegistrationConfig config_echo;
};

// The four images a bidirectional solve sees: phi_ab warps source_ab onto
// target_ab and phi_ba warps source_ba onto target_ba. For a plain pair
// (i_a, i_b) this is {i_a, i_b, i_b, i_a}; residual solves substitute the
// coarsely warped images as sources and pass the coarse fields, so that the
// regulariser acts on the full maps coarse o residual.
struct PairProblem {
  const Volume3& source_ab;
  const Volume3& target_ab;
  const Volume3& source_ba;
  const Volume3& target_ba;
  const DisplacementField* coarse_ab = nullptr;
  const DisplacementField* coarse_ba = nullptr;
};

// Alternating gradient descent on phi_ab and phi_ba under total_loss. Each
// raw gradient is Gaussian-smoothed and scaled so the largest voxel update
// equals the current step size. A step that raises the total is rejected
// and the step halved; after 10 halvings the unit stops.
UnitResult optimize_unit(const PairProblem& problem, const DisplacementField& init_ab,
                         const DisplacementField& init_ba, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg);
UnitResult optimize_unit(const Volume3& i_a, const Volume3& i_b, const DisplacementField& init_ab,
                         const DisplacementField& init_ba, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg);

// Solves a residual problem whose images are all on one grid and returns
// fields on that grid.
using ResidualSolver = std::function<UnitResult(const PairProblem&)>;

// Warps each source by the coarse field, solves the residual against the
// original targets, and returns compose(coarse, residual) per direction.
// The residual trace is appended to trace when given.
FieldPair two_step(const Volume3& i_a, const Volume3& i_b, const FieldPair& coarse,
                   const ResidualSolver& residual_solver, std::vector<UnitTrace>* trace = nullptr);

// Reduces the problem by unit.level_factor (coarse fields included),
// optimises from identity at low resolution and lifts both fields to the
// problem's grid.
UnitResult downsample_op(const PairProblem& problem, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg);

// Residual solver for a unit: downsample_op for factors > 1, a
// full-resolution optimize_unit from identity otherwise.
ResidualSolver unit_solver(const RegistrationUnit& unit, const RegistrationConfig& cfg);

// Stage 1 chains the three units coarse to fine with two_step; stage 2 adds
// one full-resolution two_step refinement.
RegistrationResult register_images(const Volume3& i_a, const Volume3& i_b,
                                   const RegistrationConfig& cfg);

}  // namespace jacreg
