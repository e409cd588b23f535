#include "jacreg/registrar.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <optional>

#include "jacreg/errors.hpp"
#include "jacreg/filter.hpp"
#include "jacreg/parallel.hpp"
#include "jacreg/volume_ops.hpp"

namespace jacreg {

void RegistrationUnit::validate() const {
  if (level_factor != 1 && level_factor != 2 && level_factor != 4)
    throw ConfigError("registration unit level_factor must be 1, 2 or 4");
  if (iterations < 0) throw ConfigError("registration unit iterations must be >= 0");
  if (!(step_size > 0.0)) throw ConfigError("registration unit step_size must be > 0");
  if (!(smoothing_sigma > 0.0)) throw ConfigError("registration unit smoothing_sigma must be > 0");
}

void RegistrationConfig::validate() const {
  for (const auto& u : stage1) u.validate();
  stage2.validate();
  for (std::size_t i = 1; i < stage1.size(); ++i)
    if (stage1[i].level_factor > stage1[i - 1].level_factor)
      throw ConfigError("stage1 level factors must be non-increasing");
  if (stage2.level_factor != 1) throw ConfigError("stage2 must run at full resolution (factor 1)");
  if (!(convergence_tol >= 0.0)) throw ConfigError("convergence_tol must be >= 0");
  loss.validate();
}

namespace {

constexpr int kMaxHalvings = 10;

void require_problem_grid(const PairProblem& p) {
  const auto& g = p.target_ab.grid();
  for (const Volume3* v : {&p.source_ab, &p.source_ba, &p.target_ba}) {
    if (v->grid().dims != g.dims)
      throw DataError("registration images must share one grid: " + describe(v->grid()) + " vs " +
                      describe(g));
  }
}

// Loss state for one direction: warped source and its LNCC moments.
struct DirectionState {
  std::vector<double> warped;
  LnccTerm::State lncc;
};

// The regulariser sees the full maps coarse o residual; without coarse
// fields these are the residual fields themselves.
struct RegState {
  DisplacementField full_ab, full_ba, composed;
  double value = 0.0;
};

class UnitObjective {
 public:
  UnitObjective(const PairProblem& p, const LossConfig& cfg)
      : p_(p), cfg_(cfg), term_ab_(p.target_ab, cfg), term_ba_(p.target_ba, cfg) {
    for (const DisplacementField* c : {p.coarse_ab, p.coarse_ba})
      if (c && c->grid.dims != p.target_ab.grid().dims)
        throw DataError("coarse field is not on the working grid " + describe(p.target_ab.grid()));
  }

  DirectionState direction_state(bool ab, const DisplacementField& f) const {
    DirectionState s;
    Volume3 warped = warp(ab ? p_.source_ab : p_.source_ba, f);
    s.warped = std::move(warped.data());
    s.lncc = (ab ? term_ab_ : term_ba_).forward(s.warped);
    return s;
  }

  DisplacementField full_map(bool ab, const DisplacementField& resid) const {
    const DisplacementField* coarse = ab ? p_.coarse_ab : p_.coarse_ba;
    return coarse ? compose(*coarse, resid) : resid;
  }

  RegState reg_state(const DisplacementField& ab, const DisplacementField& ba) const {
    return finish(RegState{full_map(true, ab), full_map(false, ba), {}, 0.0});
  }

  // Replaces one direction's full map, keeping the other.
  RegState reg_state_with(const RegState& base, bool ab, const DisplacementField& resid) const {
    RegState r;
    r.full_ab = ab ? full_map(true, resid) : base.full_ab;
    r.full_ba = ab ? base.full_ba : full_map(false, resid);
    return finish(std::move(r));
  }

  LossBreakdown breakdown(const DirectionState& ab, const DirectionState& ba, const RegState& reg) const {
    LossBreakdown l;
    l.sim_ab = ab.lncc.loss;
    l.sim_ba = ba.lncc.loss;
    l.reg = reg.value;
    l.total = l.sim_ab + l.sim_ba + cfg_.lambda * reg.value;
    return l;
  }

  DisplacementField gradient(bool ab, const DisplacementField& resid, const DirectionState& state,
                             const RegState& reg) const {
    std::vector<double> d_warped;
    (ab ? term_ab_ : term_ba_).backward(state.warped, state.lncc, d_warped);
    DisplacementField g = warp_field_gradient(ab ? p_.source_ab : p_.source_ba, resid, d_warped);
    if (cfg_.lambda != 0.0) {
      DisplacementField d_full;
      gradicon_backward(reg.full_ab, reg.full_ba, reg.composed, cfg_, ab ? &d_full : nullptr,
                        ab ? nullptr : &d_full);
      add_residual_gradient(ab ? p_.coarse_ab : p_.coarse_ba, resid, d_full, g);
    }
    try {
      g.check_finite();
    } catch (const DataError& e) {
      throw NumericalError(std::string("loss gradient: ") + e.what());
    }
    return g;
  }

 private:
  RegState finish(RegState r) const {
    r.value = gradicon_forward(r.full_ab, r.full_ba, cfg_, &r.composed);
    return r;
  }

  // full(x) = resid(x) + coarse(x + resid(x)), so
  // d/d resid_k = d_full_k + sum_m d_full_m * d_k coarse_m(x + resid(x)).
  void add_residual_gradient(const DisplacementField* coarse, const DisplacementField& resid,
                             const DisplacementField& d_full, DisplacementField& g) const {
    const double lambda = cfg_.lambda;
    const Grid3& grid = resid.grid;
    const Index3 n = grid.dims;
    parallel_for(0, n[2], [&](std::int64_t z) {
      for (int y = 0; y < n[1]; ++y)
        for (int x = 0; x < n[0]; ++x) {
          const auto i = static_cast<std::size_t>(grid.index(x, y, static_cast<int>(z)));
          double d[3] = {d_full.u[0][i], d_full.u[1][i], d_full.u[2][i]};
          if (coarse && (d[0] != 0.0 || d[1] != 0.0 || d[2] != 0.0)) {
            const Vec3 p{x + resid.u[0][i], y + resid.u[1][i], z + resid.u[2][i]};
            double acc[3] = {d[0], d[1], d[2]};
            std::array<Vec3, 3> jac;
            sample_field_grad(*coarse, p, jac);
            for (int m = 0; m < 3; ++m)
              for (int k = 0; k < 3; ++k) acc[k] += d[m] * jac[m][k];
            for (int k = 0; k < 3; ++k) d[k] = acc[k];
          }
          for (int k = 0; k < 3; ++k) g.u[k][i] += lambda * d[k];
        }
    });
  }

  const PairProblem& p_;
  const LossConfig& cfg_;
  LnccTerm term_ab_, term_ba_;
};

// Block mean of each component, rescaled to the reduced grid's voxel units.
DisplacementField downsample_field(const DisplacementField& f, int factor) {
  DisplacementField out;
  for (int c = 0; c < 3; ++c) {
    Volume3 comp = downsample(Volume3(f.grid, f.u[c]), factor);
    if (c == 0) out.grid = comp.grid();
    for (auto& v : comp.data()) v /= factor;
    out.u[c] = std::move(comp.data());
  }
  return out;
}

void check_finite(const LossBreakdown& l, const char* when) {
  if (!std::isfinite(l.total) || !std::isfinite(l.reg) || !std::isfinite(l.sim_ab) ||
      !std::isfinite(l.sim_ba))
    throw NumericalError(std::string("non-finite loss ") + when);
}

}  // namespace

UnitResult optimize_unit(const PairProblem& problem, const DisplacementField& init_ab,
                         const DisplacementField& init_ba, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg) {
  unit.validate();
  cfg.loss.validate();
  require_problem_grid(problem);
  const Grid3& g = problem.target_ab.grid();
  if (init_ab.grid.dims != g.dims || init_ba.grid.dims != g.dims)
    throw DataError("optimize_unit: initial fields are not on the working grid " + describe(g));

  UnitResult out;
  out.fields = {init_ab, init_ba};
  out.trace.level_factor = unit.level_factor;
  auto& f = out.fields;

  const UnitObjective obj(problem, cfg.loss);
  DirectionState s_ab = obj.direction_state(true, f.ab);
  DirectionState s_ba = obj.direction_state(false, f.ba);
  RegState reg = obj.reg_state(f.ab, f.ba);
  LossBreakdown current = obj.breakdown(s_ab, s_ba, reg);
  check_finite(current, "at initialisation");
  out.trace.initial = current;

  const GaussianFilter smoother(unit.smoothing_sigma, g.dims);
  double step[2] = {unit.step_size, unit.step_size};
  bool settled[2] = {false, false};
  int halvings = 0;
  out.trace.stop_reason = "iterations";

  for (int it = 0; it < unit.iterations; ++it) {
    const double before = current.total;
    bool budget_spent = false;
    for (int d = 0; d < 2 && !budget_spent; ++d) {
      if (settled[d]) continue;
      const bool ab = d == 0;
      DisplacementField grad = obj.gradient(ab, ab ? f.ab : f.ba, ab ? s_ab : s_ba, reg);
      double gmax = 0.0;
      for (int c = 0; c < 3; ++c) {
        std::vector<double> smoothed;
        smoother.apply(grad.u[c], smoothed);
        grad.u[c] = std::move(smoothed);
        for (double v : grad.u[c]) gmax = std::max(gmax, std::abs(v));
      }
      if (gmax == 0.0) {
        settled[d] = true;
        continue;
      }
      DisplacementField& field = ab ? f.ab : f.ba;
      while (true) {
        DisplacementField cand = field;
        const double scale = step[d] / gmax;
        for (int c = 0; c < 3; ++c)
          for (std::size_t i = 0; i < cand.u[c].size(); ++i) cand.u[c][i] -= scale * grad.u[c][i];
        DirectionState cand_state = obj.direction_state(ab, cand);
        RegState cand_reg = obj.reg_state_with(reg, ab, cand);
        const LossBreakdown trial = ab ? obj.breakdown(cand_state, s_ba, cand_reg)
                                       : obj.breakdown(s_ab, cand_state, cand_reg);
        if (std::isfinite(trial.total) && trial.total <= current.total) {
          field = std::move(cand);
          (ab ? s_ab : s_ba) = std::move(cand_state);
          reg = std::move(cand_reg);
          current = trial;
          out.trace.accepted.push_back(current);
          break;
        }
        ++out.trace.rejected;
        step[d] *= 0.5;
        if (++halvings >= kMaxHalvings) {
          budget_spent = true;
          break;
        }
      }
    }
    if (budget_spent) {
      out.trace.stop_reason = "step budget";
      break;
    }
    if (settled[0] && settled[1]) {
      out.trace.stop_reason = "stationary";
      break;
    }
    if (before - current.total <= cfg.convergence_tol * std::abs(before)) {
      out.trace.stop_reason = "converged";
      break;
    }
  }
  return out;
}

UnitResult optimize_unit(const Volume3& i_a, const Volume3& i_b, const DisplacementField& init_ab,
                         const DisplacementField& init_ba, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg) {
  return optimize_unit(PairProblem{i_a, i_b, i_b, i_a}, init_ab, init_ba, unit, cfg);
}

FieldPair two_step(const Volume3& i_a, const Volume3& i_b, const FieldPair& coarse,
                   const ResidualSolver& residual_solver, std::vector<UnitTrace>* trace) {
  if (i_a.grid().dims != i_b.grid().dims || coarse.ab.grid.dims != i_a.grid().dims ||
      coarse.ba.grid.dims != i_a.grid().dims)
    throw DataError("two_step: images and coarse fields must share one grid");
  const Volume3 moved_a = warp(i_a, coarse.ab);
  const Volume3 moved_b = warp(i_b, coarse.ba);
  UnitResult resid = residual_solver(PairProblem{moved_a, i_b, moved_b, i_a, &coarse.ab, &coarse.ba});
  if (trace) trace->push_back(std::move(resid.trace));
  return {compose(coarse.ab, resid.fields.ab), compose(coarse.ba, resid.fields.ba)};
}

UnitResult downsample_op(const PairProblem& problem, const RegistrationUnit& unit,
                         const RegistrationConfig& cfg) {
  if (unit.level_factor < 2) throw ConfigError("downsample_op needs level_factor >= 2");
  require_problem_grid(problem);
  const int k = unit.level_factor;
  const Volume3 sa = downsample(problem.source_ab, k);
  const Volume3 ta = downsample(problem.target_ab, k);
  const Volume3 sb = downsample(problem.source_ba, k);
  const Volume3 tb = downsample(problem.target_ba, k);
  std::optional<DisplacementField> coarse_ab, coarse_ba;
  if (problem.coarse_ab) coarse_ab = downsample_field(*problem.coarse_ab, k);
  if (problem.coarse_ba) coarse_ba = downsample_field(*problem.coarse_ba, k);
  const DisplacementField zero(sa.grid());
  const PairProblem low_problem{sa, ta, sb, tb, coarse_ab ? &*coarse_ab : nullptr,
                                coarse_ba ? &*coarse_ba : nullptr};
  UnitResult low = optimize_unit(low_problem, zero, zero, unit, cfg);
  const Grid3& full = problem.target_ab.grid();
  UnitResult out;
  out.fields = {upsample_field(low.fields.ab, k, full), upsample_field(low.fields.ba, k, full)};
  out.trace = std::move(low.trace);
  return out;
}

ResidualSolver unit_solver(const RegistrationUnit& unit, const RegistrationConfig& cfg) {
  return [unit, &cfg](const PairProblem& p) {
    if (unit.level_factor > 1) return downsample_op(p, unit, cfg);
    const DisplacementField zero(p.target_ab.grid());
    return optimize_unit(p, zero, zero, unit, cfg);
  };
}

RegistrationResult register_images(const Volume3& i_a, const Volume3& i_b,
                                   const RegistrationConfig& cfg) {
  cfg.validate();
  if (i_a.grid().dims != i_b.grid().dims)
    throw DataError("register: image grids differ: " + describe(i_a.grid()) + " vs " +
                    describe(i_b.grid()));
  const auto t0 = std::chrono::steady_clock::now();

  RegistrationResult result;
  result.config_echo = cfg;
  FieldPair pair{identity_field(i_a.grid()), identity_field(i_a.grid())};
  const char* labels[] = {"stage1.level0", "stage1.level1", "stage1.level2"};
  for (std::size_t i = 0; i < cfg.stage1.size(); ++i) {
    pair = two_step(i_a, i_b, pair, unit_solver(cfg.stage1[i], cfg), &result.loss_trace);
    result.loss_trace.back().label = labels[i];
  }
  pair = two_step(i_a, i_b, pair, unit_solver(cfg.stage2, cfg), &result.loss_trace);
  result.loss_trace.back().label = "stage2";

  // phi_ab is sampled on B's grid and phi_ba on A's, spacing and origin included.
  pair.ab.grid = i_b.grid();
  pair.ba.grid = i_a.grid();
  result.field_ab = std::move(pair.ab);
  result.field_ba = std::move(pair.ba);
  result.runtime_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return result;
}

}  // namespace jacreg
