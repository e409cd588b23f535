// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 when any
// criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "jacreg/analysis.hpp"
#include "jacreg/errors.hpp"
#include "jacreg/loss.hpp"
#include "jacreg/nifti.hpp"
#include "jacreg/parallel.hpp"
#include "jacreg/phantom.hpp"
#include "jacreg/pipeline.hpp"
#include "jacreg/registrar.hpp"
#include "oracles.hpp"

using namespace jacreg;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, double a) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, a);
  return buf;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path fresh_dir(const std::string& name) {
  const auto dir = fs::temp_directory_path() / "jacreg_acceptance" / name;
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

double max_field_diff(const DisplacementField& a, const DisplacementField& b) {
  double m = 0.0;
  for (int c = 0; c < 3; ++c)
    for (std::size_t i = 0; i < a.u[c].size(); ++i) m = std::max(m, std::abs(a.u[c][i] - b.u[c][i]));
  return m;
}

// 1. Interior detJ of random affine fields against det(I + A).
Outcome jacobian_exactness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(101);
  std::uniform_real_distribution<double> entry(-1.0, 1.0), norm_scale(0.0, 0.49);
  const Grid3 g{{16, 16, 16}};
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    std::array<std::array<double, 3>, 3> a{};
    double fro = 0.0;
    for (auto& row : a)
      for (auto& v : row) {
        v = entry(rng);
        fro += v * v;
      }
    const double target = norm_scale(rng);
    for (auto& row : a)
      for (auto& v : row) v *= target / std::sqrt(fro);
    std::array<std::array<double, 3>, 3> ipa = a;
    for (int k = 0; k < 3; ++k) ipa[k][k] += 1.0;
    const double expected = oracle::det3(ipa);
    const auto jac = jacobian_determinant(oracle::affine_field(g, a, {7.5, 7.5, 7.5}));
    for (int z = 1; z < 15; ++z)
      for (int y = 1; y < 15; ++y)
        for (int x = 1; x < 15; ++x)
          worst = std::max(worst, std::abs(jac.det[static_cast<std::size_t>(g.index(x, y, z))] - expected));
  }
  const double t = seconds_since(t0);
  return {worst < 1e-9 && t < 5.0, fmt("max |detJ - det(I+A)| = %.3g", worst) + fmt(", %.2f s", t)};
}

// 2. Analytic gradient against central differences of the total loss.
Outcome gradient_correctness() {
  const auto t0 = std::chrono::steady_clock::now();
  std::mt19937_64 rng(202);
  std::uniform_int_distribution<int> vox(0, 11), comp(0, 2);
  const LossConfig cfg;
  const double h = 1e-3;
  int checked = 0, failed = 0;
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const Grid3 g{{12, 12, 12}};
    const Volume3 a = oracle::smooth_random_image(g, rng), b = oracle::smooth_random_image(g, rng);
    DisplacementField ab = oracle::smooth_random_field(g, 1.5, rng);
    DisplacementField ba = oracle::smooth_random_field(g, 1.5, rng);
    const Wrt wrt = trial % 2 ? Wrt::field_ba : Wrt::field_ab;
    const auto grad = loss_gradient(a, b, ab, ba, cfg, wrt);
    auto& field = wrt == Wrt::field_ab ? ab : ba;
    for (int probe = 0; probe < 5; ++probe) {
      const int pos[3] = {vox(rng), vox(rng), vox(rng)};
      const int k = comp(rng);
      const auto i = static_cast<std::size_t>(g.index(pos[0], pos[1], pos[2]));
      // The trilinear interpolant is not differentiable on cell faces.
      const double p = pos[k] + field.u[k][i];
      const double frac = p - std::floor(p);
      if (frac < 0.01 || frac > 0.99) continue;
      const double saved = field.u[k][i];
      field.u[k][i] = saved + h;
      const double up = total_loss(a, b, ab, ba, cfg).total;
      field.u[k][i] = saved - h;
      const double down = total_loss(a, b, ab, ba, cfg).total;
      field.u[k][i] = saved;
      const double fd = (up - down) / (2 * h);
      if (std::abs(fd) < 1e-8) continue;
      const double rel = std::abs(grad.u[k][i] - fd) / std::abs(fd);
      worst = std::max(worst, rel);
      failed += rel > 1e-4;
      ++checked;
    }
  }
  const double t = seconds_since(t0);
  return {failed == 0 && checked >= 100 && t < 120.0,
          std::to_string(checked) + " probes, " + std::to_string(failed) + " outside 1e-4" +
              fmt(", worst relative error %.3g", worst) + fmt(", %.1f s", t)};
}

PhantomSpec registration_phantom(double radius) {
  PhantomSpec spec;
  LesionSpec l;
  l.center_mm = {32, 32, 32};
  l.radius_mm = radius;
  spec.lesions = {l};
  return spec;
}

struct TranslationRun {
  PhantomPair pair;
  RegistrationResult result;
};

// 3. Sphere translated by 3 voxels, full registration on one thread.
Outcome translation_recovery(const TranslationRun& run) {
  const auto& p = run.pair;
  const auto err = displacement_error(run.result.field_ab, p.truth, &p.baseline_tumour);
  const double pre = dice(p.baseline_tumour, p.followup_tumour, 1);
  const double post = dice(p.baseline_tumour, warp(p.followup_tumour, run.result.field_ab), 1);
  const double t = run.result.runtime_seconds;
  return {err.mean <= 0.5 && post >= 0.90 && pre <= 0.6 && t <= 60.0,
          fmt("in-lesion error %.3f vox", err.mean) + fmt(", DSC %.3f", pre) + fmt(" -> %.3f", post) +
              fmt(", %.1f s single-thread", t)};
}

// 4. Radial contraction through the file-based pipeline.
Outcome volumetric_response() {
  const auto dir = fresh_dir("contraction");
  PhantomConfig pc;
  pc.spec = registration_phantom(8.0);
  pc.deformation = AnalyticDeformation::make_radial_contraction({32, 32, 32}, 10.0, 6.0, 0.2);
  run_phantom(pc, dir.string());
  const auto cfg = load_pipeline_config((dir / "pipeline.json").string());
  run_register(cfg);
  const auto report = run_analyze(cfg);
  for (const auto& row : report.rows) {
    if (row.lesion_id != "1" || row.subregion != "all") continue;
    if (!row.median_detj || !row.pct_change) break;
    const double med = *row.median_detj, pct = *row.pct_change;
    return {std::abs(med - 0.512) <= 0.05 && std::abs(pct + 48.8) <= 5.0,
            fmt("median detJ %.4f", med) + fmt(" (analytic 0.512), pct_change %.2f%%", pct)};
  }
  return {false, "no lesion row with a median detJ"};
}

// 5. Inverse consistency with the default lambda against lambda = 0.
Outcome inverse_consistency(const TranslationRun& with_reg) {
  RegistrationConfig cfg;
  cfg.loss.lambda = 0.0;
  const auto without = register_images(with_reg.pair.followup, with_reg.pair.baseline, cfg);
  const double on = inverse_consistency_error(with_reg.result.field_ab, with_reg.result.field_ba).mean;
  const double off = inverse_consistency_error(without.field_ab, without.field_ba).mean;
  return {on <= 0.5 * off, fmt("mean |phi_ab(phi_ba(x)) - x| %.4f", on) + fmt(" (lambda 1.5) vs %.4f", off) +
                               fmt(" (lambda 0), ratio %.3f", on / off)};
}

// 6. SDlogJ closed forms.
Outcome sdlogj_properties() {
  const Grid3 g{{16, 16, 16}};
  const double id = sdlogj(jacobian_determinant(identity_field(g))).value;
  // Dyadic scale and centre keep every displacement exactly representable.
  const double s = 0.25;
  const auto scaled = oracle::affine_field(g, {{{s, 0, 0}, {0, s, 0}, {0, 0, s}}}, {8, 8, 8});
  const double sc = sdlogj(jacobian_determinant(scaled)).value;
  JacobianMap two;
  two.grid = g;
  two.det.resize(static_cast<std::size_t>(g.size()));
  for (std::size_t i = 0; i < two.det.size(); ++i) two.det[i] = i % 2 ? std::numbers::e : 1.0;
  const double tv = sdlogj(two).value;
  return {id == 0.0 && sc == 0.0 && tv == 0.5,
          fmt("identity %.17g", id) + fmt(", uniform scaling %.17g", sc) + fmt(", {1, e} %.17g", tv)};
}

// 7. Fuzzy c-means on a three-plateau tumour.
Outcome fcm_subsegmentation() {
  PhantomSpec spec;
  spec.grid = Grid3{{40, 40, 40}};
  spec.noise_sigma = 5.0;
  LesionSpec l;
  l.center_mm = {20, 20, 20};
  l.radius_mm = 12;
  spec.lesions = {l};
  const auto p = make_phantom(spec);
  const auto seg = fcm_subsegment(p.image, p.tumour);
  std::int64_t agree = 0;
  for (std::int64_t i = 0; i < p.tumour.size(); ++i)
    if (p.tumour[i]) agree += seg.class_map[i] == p.subregions[i];
  const double acc = static_cast<double>(agree) / static_cast<double>(seg.voxels.size());
  double worst_sum = 0.0;
  for (std::size_t r = 0; r < seg.voxels.size(); ++r) {
    double sum = 0.0;
    for (int k = 0; k < seg.clusters(); ++k) sum += seg.membership(r, k);
    worst_sum = std::max(worst_sum, std::abs(sum - 1.0));
  }
  int increases = 0;
  for (std::size_t t = 1; t < seg.objective.size(); ++t) increases += seg.objective[t] > seg.objective[t - 1];
  return {acc >= 0.99 && worst_sum <= 1e-6 && increases == 0,
          fmt("accuracy %.4f", acc) + fmt(", max |sum u - 1| %.2g", worst_sum) + ", " +
              std::to_string(increases) + " objective increases over " + std::to_string(seg.iterations) +
              " iterations"};
}

void fill_sphere(LabelMask& m, const Vec3& c, double r) {
  const auto& d = m.grid().dims;
  for (int z = 0; z < d[2]; ++z)
    for (int y = 0; y < d[1]; ++y)
      for (int x = 0; x < d[0]; ++x)
        if ((x - c[0]) * (x - c[0]) + (y - c[1]) * (y - c[1]) + (z - c[2]) * (z - c[2]) <= r * r)
          m.at(x, y, z) = 1;
}

// 8. Split, merge, disappearance and new lesions, each built separately and
// then together under a known translation.
Outcome lesion_matching() {
  const Grid3 g{{48, 32, 32}};
  struct Case {
    const char* name;
    std::vector<std::pair<Vec3, double>> base, follow;
    MatchKind expect;
  };
  // Follow-up spheres are given in baseline coordinates. The two small
  // spheres are one voxel apart so they stay separate components.
  const std::vector<Case> cases = {
      {"split", {{{24, 16, 16}, 9}}, {{{18, 16, 16}, 5}, {{30, 16, 16}, 5}}, MatchKind::split},
      {"merge", {{{18, 16, 16}, 5}, {{30, 16, 16}, 5}}, {{{24, 16, 16}, 9}}, MatchKind::merge},
      {"disappeared", {{{24, 16, 16}, 6}}, {}, MatchKind::disappeared},
      {"new", {}, {{{24, 16, 16}, 6}}, MatchKind::appeared},
  };
  const Vec3 shift{2.0, -1.0, 0.0};  // follow-up = baseline moved by +shift
  DisplacementField field(g);
  for (std::int64_t i = 0; i < field.size(); ++i) field.set(i, shift);

  std::string detail;
  bool ok = true;
  const auto check = [&](const std::vector<Case>& group, const std::string& label) {
    LabelMask base(g), follow(g);
    for (const auto& c : group) {
      for (const auto& [ctr, r] : c.base) fill_sphere(base, ctr, r);
      for (const auto& [ctr, r] : c.follow) fill_sphere(follow, {ctr[0] + shift[0], ctr[1] + shift[1], ctr[2] + shift[2]}, r);
    }
    const auto bl = connected_components(base), fl = connected_components(follow);
    const auto ms = match_lesions(bl, fl, field);
    std::vector<int> seen_b(static_cast<std::size_t>(bl.count()) + 1, 0);
    std::vector<int> seen_f(static_cast<std::size_t>(fl.count()) + 1, 0);
    for (const auto& m : ms) {
      for (int id : m.baseline_ids) ++seen_b[static_cast<std::size_t>(id)];
      for (int id : m.followup_ids) ++seen_f[static_cast<std::size_t>(id)];
    }
    for (std::size_t i = 1; i < seen_b.size(); ++i) ok = ok && seen_b[i] == 1;
    for (std::size_t i = 1; i < seen_f.size(); ++i) ok = ok && seen_f[i] == 1;
    std::vector<std::string> kinds;
    for (const auto& m : ms) kinds.push_back(to_string(m.kind));
    if (group.size() == 1) {
      const bool right = ms.size() == 1 && ms[0].kind == group[0].expect;
      ok = ok && right;
      detail += label + "=" + (ms.size() == 1 ? kinds[0] : std::to_string(ms.size()) + " groups") + " ";
    } else {
      std::vector<std::string> expected;
      for (const auto& c : group) expected.push_back(to_string(c.expect));
      std::sort(kinds.begin(), kinds.end());
      std::sort(expected.begin(), expected.end());
      ok = ok && kinds == expected;
      detail += label + (kinds == expected ? "=ok " : "=wrong ");
    }
  };
  for (const auto& c : cases) check({c}, c.name);
  // Two disjoint cases sharing one grid.
  std::vector<Case> pair1 = {cases[0], cases[2]};
  pair1[1].base = {{{42, 26, 26}, 4}};
  check(pair1, "split+disappeared");
  std::vector<Case> pair2 = {cases[1], cases[3]};
  pair2[1].follow = {{{40, 26, 26}, 4}};
  check(pair2, "merge+new");
  return {ok, detail + (ok ? "(ids partitioned)" : "")};
}

// 9. Reproducibility on a 32^3 phantom through the pipeline.
Outcome determinism() {
  PhantomConfig pc;
  pc.spec.grid = Grid3{{32, 32, 32}};
  LesionSpec l;
  l.center_mm = {16, 16, 16};
  l.radius_mm = 5;
  pc.spec.lesions = {l};
  pc.deformation = AnalyticDeformation::make_translation({2, 0, 0});
  const auto src = fresh_dir("determinism_src");
  run_phantom(pc, src.string());
  auto cfg = load_pipeline_config((src / "pipeline.json").string());

  const auto run_in = [&](const std::string& name, int threads) {
    auto c = cfg;
    c.threads = threads;
    c.io.output_dir = fresh_dir(name).string();
    run_register(c);
    run_analyze(c);
    set_thread_count(1);
    return fs::path(c.io.output_dir);
  };
  const auto a = run_in("determinism_a", 1), b = run_in("determinism_b", 1), t = run_in("determinism_t", 4);

  // Reports match except the measured wall-clock runtime.
  const auto without_runtime = [](const std::string& csv) {
    std::istringstream in(csv);
    std::string line, out;
    while (std::getline(in, line)) out += line.substr(0, line.rfind(',')) + "\n";
    return out;
  };
  bool same = slurp(a / "field_ab.nii.gz") == slurp(b / "field_ab.nii.gz") &&
              slurp(a / "field_ba.nii.gz") == slurp(b / "field_ba.nii.gz") &&
              slurp(a / "jacobian.nii.gz") == slurp(b / "jacobian.nii.gz") &&
              without_runtime(slurp(a / "report.csv")) == without_runtime(slurp(b / "report.csv")) &&
              slurp(a / "lesion_matches.json") == slurp(b / "lesion_matches.json") &&
              slurp(a / "subseg_baseline.nii.gz") == slurp(b / "subseg_baseline.nii.gz");
  const double diff = std::max(
      max_field_diff(nifti::load_field((a / "field_ab.nii.gz").string()), nifti::load_field((t / "field_ab.nii.gz").string())),
      max_field_diff(nifti::load_field((a / "field_ba.nii.gz").string()), nifti::load_field((t / "field_ba.nii.gz").string())));
  return {same && diff <= 1e-6, std::string(same ? "repeat runs bitwise identical" : "repeat runs differ") +
                                    fmt(", 1 vs 4 threads max field difference %.3g vox", diff)};
}

// 10. Percent-change convention at reporting precision.
Outcome percent_convention() {
  const double a = percent_volume_change(0.46), b = percent_volume_change(1.34);
  char sa[32], sb[32];
  std::snprintf(sa, sizeof sa, "%.6g", a);
  std::snprintf(sb, sizeof sb, "%.6g", b);
  const bool ok = a == -54.0 && std::string(sa) == "-54" && std::string(sb) == "34" &&
                  std::abs(b - 34.0) <= 1e-12 && describe_volume_change(0.46) == "54% median volume shrinkage";
  return {ok, std::string("0.46 -> ") + sa + "%, 1.34 -> +" + sb + "%" + fmt(" (binary value %.17g)", b)};
}

}  // namespace

int main() {
  set_thread_count(1);
  int failures = 0;
  const auto report = [&](int id, const char* name, const std::function<Outcome()>& fn) {
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", id, name, o.detail.c_str());
    std::fflush(stdout);
  };

  report(1, "jacobian exactness", jacobian_exactness);
  report(2, "gradient correctness", gradient_correctness);

  TranslationRun translation;
  bool translation_ok = true;
  std::string translation_error;
  try {
    PhantomSpec spec = registration_phantom(5.0);
    translation.pair = make_phantom_pair(spec, AnalyticDeformation::make_translation({3, 0, 0}));
    translation.result = register_images(translation.pair.followup, translation.pair.baseline, {});
  } catch (const std::exception& e) {
    translation_ok = false;
    translation_error = e.what();
  }
  const auto needs_translation = [&](Outcome (*fn)(const TranslationRun&)) {
    return [&, fn]() -> Outcome {
      if (!translation_ok) return {false, "translation registration failed: " + translation_error};
      return fn(translation);
    };
  };
  report(3, "translation recovery", needs_translation(translation_recovery));
  report(4, "volumetric response recovery", volumetric_response);
  report(5, "inverse-consistency efficacy", needs_translation(inverse_consistency));
  report(6, "sdlogj properties", sdlogj_properties);
  report(7, "fcm sub-segmentation", fcm_subsegmentation);
  report(8, "lesion matching", lesion_matching);
  report(9, "determinism", determinism);
  report(10, "percent-change convention", percent_convention);
  return failures == 0 ? 0 : 1;
}
