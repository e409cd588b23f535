#include "jacreg/analysis.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

namespace {

void require_same_dims(const Grid3& a, const Grid3& b, const char* what) {
  if (a.dims != b.dims)
    throw DataError(std::string(what) + ": grid mismatch " + describe(a) + " vs " + describe(b));
}

// Population mean and std, shifted by the first value so that constant
// input gives exactly zero spread.
std::pair<double, double> mean_std(const std::vector<double>& v) {
  const double shift = v.front();
  double sum = 0.0;
  for (double x : v) sum += x - shift;
  const double n = static_cast<double>(v.size());
  const double mean_shifted = sum / n;
  double ss = 0.0;
  for (double x : v) {
    const double d = (x - shift) - mean_shifted;
    ss += d * d;
  }
  return {shift + mean_shifted, std::sqrt(ss / n)};
}

double lower_median(std::vector<double> v) {
  const auto mid = v.begin() + static_cast<std::ptrdiff_t>((v.size() - 1) / 2);
  std::nth_element(v.begin(), mid, v.end());
  return *mid;
}

}  // namespace

std::string LesionSet::site(int id) const {
  const auto it = site_of.find(id);
  return it == site_of.end() ? "unassigned" : it->second;
}

LesionSet connected_components(const LabelMask& mask, int connectivity) {
  if (connectivity != 6 && connectivity != 26)
    throw ConfigError("connectivity must be 6 or 26, got " + std::to_string(connectivity));
  const Grid3& g = mask.grid();
  const Index3 n = g.dims;
  std::vector<Index3> offsets;
  for (int dz = -1; dz <= 1; ++dz)
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const int manhattan = std::abs(dx) + std::abs(dy) + std::abs(dz);
        if (manhattan == 0 || (connectivity == 6 && manhattan != 1)) continue;
        offsets.push_back({dx, dy, dz});
      }

  std::vector<std::int32_t> provisional(static_cast<std::size_t>(g.size()), 0);
  std::vector<std::int64_t> sizes;
  std::vector<std::int64_t> queue;
  for (std::int64_t start = 0; start < g.size(); ++start) {
    if (mask[start] == 0 || provisional[static_cast<std::size_t>(start)] != 0) continue;
    const auto id = static_cast<std::int32_t>(sizes.size() + 1);
    std::int64_t count = 0;
    queue.assign(1, start);
    provisional[static_cast<std::size_t>(start)] = id;
    while (!queue.empty()) {
      const std::int64_t i = queue.back();
      queue.pop_back();
      ++count;
      const int x = static_cast<int>(i % n[0]);
      const int y = static_cast<int>((i / n[0]) % n[1]);
      const int z = static_cast<int>(i / (static_cast<std::int64_t>(n[0]) * n[1]));
      for (const auto& o : offsets) {
        const int xx = x + o[0], yy = y + o[1], zz = z + o[2];
        if (xx < 0 || yy < 0 || zz < 0 || xx >= n[0] || yy >= n[1] || zz >= n[2]) continue;
        const std::int64_t j = g.index(xx, yy, zz);
        if (mask[j] == 0 || provisional[static_cast<std::size_t>(j)] != 0) continue;
        provisional[static_cast<std::size_t>(j)] = id;
        queue.push_back(j);
      }
    }
    sizes.push_back(count);
  }

  std::vector<int> order(sizes.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return sizes[a] > sizes[b]; });
  std::vector<std::int32_t> relabel(sizes.size() + 1, 0);
  for (std::size_t r = 0; r < order.size(); ++r) relabel[static_cast<std::size_t>(order[r]) + 1] = static_cast<std::int32_t>(r + 1);

  LesionSet out;
  out.mask = LabelMask(g);
  for (std::int64_t i = 0; i < g.size(); ++i)
    out.mask[i] = relabel[static_cast<std::size_t>(provisional[static_cast<std::size_t>(i)])];
  for (std::size_t r = 0; r < order.size(); ++r)
    out.volumes_mm3[static_cast<int>(r + 1)] = static_cast<double>(sizes[static_cast<std::size_t>(order[r])]) * g.voxel_volume();
  return out;
}

void assign_sites(LesionSet& lesions, const LabelMask& site_labels, const std::map<int, std::string>& names) {
  require_same_dims(lesions.mask.grid(), site_labels.grid(), "assign_sites");
  std::map<int, std::map<int, std::int64_t>> votes;
  for (std::int64_t i = 0; i < lesions.mask.size(); ++i) {
    const int id = lesions.mask[i];
    const int site = site_labels[i];
    if (id != 0 && site != 0) ++votes[id][site];
  }
  for (const auto& [id, tally] : votes) {
    int best = 0;
    std::int64_t best_count = -1;
    for (const auto& [site, count] : tally)
      if (count > best_count) {
        best = site;
        best_count = count;
      }
    const auto it = names.find(best);
    lesions.site_of[id] = it == names.end() ? "label_" + std::to_string(best) : it->second;
  }
}

double dice(const LabelMask& a, const LabelMask& b, int label) {
  require_same_dims(a.grid(), b.grid(), "dice");
  std::int64_t na = 0, nb = 0, both = 0;
  for (std::int64_t i = 0; i < a.size(); ++i) {
    const bool in_a = a[i] == label, in_b = b[i] == label;
    na += in_a;
    nb += in_b;
    both += in_a && in_b;
  }
  if (na + nb == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(na + nb);
}

namespace {

ErrorStats summarise_lengths(const DisplacementField& diff_a, const DisplacementField& diff_b,
                             const LabelMask* roi, const char* what) {
  if (roi) require_same_dims(diff_a.grid, roi->grid(), what);
  std::vector<double> len;
  len.reserve(static_cast<std::size_t>(diff_a.size()));
  for (std::int64_t i = 0; i < diff_a.size(); ++i) {
    if (roi && (*roi)[i] == 0) continue;
    const Vec3 a = diff_a.at(i), b = diff_b.at(i);
    len.push_back(std::hypot(a[0] - b[0], a[1] - b[1], a[2] - b[2]));
  }
  if (len.empty()) throw DataError(std::string(what) + ": empty region");
  ErrorStats s;
  s.count = static_cast<std::int64_t>(len.size());
  s.mean = std::accumulate(len.begin(), len.end(), 0.0) / static_cast<double>(len.size());
  s.max = *std::max_element(len.begin(), len.end());
  s.median = lower_median(std::move(len));
  return s;
}

}  // namespace

ErrorStats displacement_error(const DisplacementField& estimated, const DisplacementField& truth,
                              const LabelMask* roi) {
  require_same_dims(estimated.grid, truth.grid, "displacement_error");
  return summarise_lengths(estimated, truth, roi, "displacement_error");
}

ErrorStats inverse_consistency_error(const DisplacementField& field_ab,
                                     const DisplacementField& field_ba, const LabelMask* roi) {
  require_same_dims(field_ab.grid, field_ba.grid, "inverse_consistency_error");
  const DisplacementField round_trip = compose(field_ab, field_ba);
  return summarise_lengths(round_trip, identity_field(round_trip.grid), roi,
                           "inverse_consistency_error");
}

SdlogjResult sdlogj(const JacobianMap& jac, const LabelMask* roi) {
  if (roi) require_same_dims(jac.grid, roi->grid(), "sdlogj");
  SdlogjResult r;
  std::vector<double> logs;
  for (std::size_t i = 0; i < jac.det.size(); ++i) {
    if (roi && (*roi)[static_cast<std::int64_t>(i)] == 0) continue;
    if (jac.det[i] > 0.0) {
      logs.push_back(std::log(jac.det[i]));
    } else {
      ++r.excluded;
    }
  }
  if (logs.empty()) throw DataError("sdlogj: no voxel with positive Jacobian in the region");
  r.included = static_cast<std::int64_t>(logs.size());
  r.value = mean_std(logs).second;
  return r;
}

std::vector<RoiJacobianStats> roi_jacobian_stats(const JacobianMap& jac, const LabelMask& rois, int max_id) {
  require_same_dims(jac.grid, rois.grid(), "roi_jacobian_stats");
  if (max_id < 0) throw ConfigError("roi_jacobian_stats: max_id must be >= 0");
  std::vector<std::vector<double>> positive(static_cast<std::size_t>(max_id) + 1);
  std::vector<std::int64_t> total(static_cast<std::size_t>(max_id) + 1, 0);
  for (std::size_t i = 0; i < jac.det.size(); ++i) {
    const int id = rois[static_cast<std::int64_t>(i)];
    if (id < 1 || id > max_id) continue;
    ++total[static_cast<std::size_t>(id)];
    if (jac.det[i] > 0.0) positive[static_cast<std::size_t>(id)].push_back(jac.det[i]);
  }
  std::vector<RoiJacobianStats> rows;
  for (int id = 1; id <= max_id; ++id) {
    RoiJacobianStats s;
    s.roi_id = id;
    s.voxel_count = total[static_cast<std::size_t>(id)];
    const auto& v = positive[static_cast<std::size_t>(id)];
    if (s.voxel_count > 0) {
      s.folding_fraction = static_cast<double>(s.voxel_count - static_cast<std::int64_t>(v.size())) /
                           static_cast<double>(s.voxel_count);
    }
    if (!v.empty()) {
      const auto [mean, sd] = mean_std(v);
      s.median_detj = lower_median(v);
      s.mean_detj = mean;
      s.std_detj = sd;
      const auto n = static_cast<double>(v.size());
      s.frac_shrinking = static_cast<double>(std::count_if(v.begin(), v.end(), [](double d) { return d < 1.0; })) / n;
      s.frac_expanding = static_cast<double>(std::count_if(v.begin(), v.end(), [](double d) { return d > 1.0; })) / n;
    }
    rows.push_back(s);
  }
  return rows;
}

std::vector<RoiJacobianStats> roi_jacobian_stats(const JacobianMap& jac, const LesionSet& lesions) {
  return roi_jacobian_stats(jac, lesions.mask, lesions.count());
}

double percent_volume_change(double detj_stat) {
  if (!(detj_stat > 0.0) || !std::isfinite(detj_stat))
    throw DataError("percent_volume_change needs a positive Jacobian statistic, got " + std::to_string(detj_stat));
  return 100.0 * detj_stat - 100.0;
}

std::string describe_volume_change(double detj_stat, const std::string& statistic) {
  const double pct = percent_volume_change(detj_stat);
  if (pct == 0.0) return "no " + statistic + " volume change";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", std::abs(pct));
  return std::string(buf) + "% " + statistic + " volume " + (pct < 0.0 ? "shrinkage" : "expansion");
}

void FcmConfig::validate() const {
  if (clusters < 2) throw ConfigError("fcm clusters must be >= 2");
  if (!(fuzziness > 1.0)) throw ConfigError("fcm fuzziness must be > 1");
  if (!(tol > 0.0)) throw ConfigError("fcm tol must be > 0");
  if (max_iter < 1) throw ConfigError("fcm max_iter must be >= 1");
}

namespace {

// Membership rows for fixed centers; a voxel sitting on a center belongs to it alone.
void update_memberships(const std::vector<double>& x, const std::vector<double>& centers, double m,
                        std::vector<double>& u) {
  const std::size_t c = centers.size();
  const double expo = -1.0 / (m - 1.0);
  u.resize(x.size() * c);
  parallel_for(0, static_cast<std::int64_t>(x.size()), [&](std::int64_t ii) {
    const auto i = static_cast<std::size_t>(ii);
    double* row = u.data() + i * c;
    for (std::size_t k = 0; k < c; ++k) {
      if (x[i] == centers[k]) {
        std::fill(row, row + c, 0.0);
        row[k] = 1.0;
        return;
      }
    }
    double sum = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double d = x[i] - centers[k];
      row[k] = std::pow(d * d, expo);
      sum += row[k];
    }
    for (std::size_t k = 0; k < c; ++k) row[k] /= sum;
  });
}

std::vector<double> percentile_centers(std::vector<double> values, int c) {
  std::sort(values.begin(), values.end());
  auto pick = [&](const std::vector<double>& v) {
    std::vector<double> out;
    for (int k = 0; k < c; ++k) {
      const double q = 0.1 + 0.8 * k / (c - 1);
      out.push_back(v[static_cast<std::size_t>(std::llround(q * static_cast<double>(v.size() - 1)))]);
    }
    return out;
  };
  auto centers = pick(values);
  if (std::adjacent_find(centers.begin(), centers.end()) != centers.end()) {
    values.erase(std::unique(values.begin(), values.end()), values.end());
    centers = pick(values);
  }
  return centers;
}

}  // namespace

SubSegmentation fcm_subsegment(const Volume3& image, const LabelMask& tumour, const FcmConfig& cfg) {
  cfg.validate();
  require_same_dims(image.grid(), tumour.grid(), "fcm_subsegment");
  SubSegmentation out;
  std::vector<double> x;
  for (std::int64_t i = 0; i < tumour.size(); ++i)
    if (tumour[i] != 0) {
      out.voxels.push_back(i);
      x.push_back(image[i]);
    }
  if (x.empty()) throw DataError("fcm_subsegment: empty tumour mask");
  {
    std::vector<double> distinct = x;
    std::sort(distinct.begin(), distinct.end());
    const auto n = std::unique(distinct.begin(), distinct.end()) - distinct.begin();
    if (n < cfg.clusters)
      throw DataError("fcm_subsegment: " + std::to_string(n) + " distinct intensities for " +
                      std::to_string(cfg.clusters) + " clusters");
  }

  const std::size_t c = static_cast<std::size_t>(cfg.clusters);
  const double m = cfg.fuzziness;
  std::vector<double> centers = percentile_centers(x, cfg.clusters);
  std::vector<double>& u = out.memberships;
  for (int it = 1; it <= cfg.max_iter; ++it) {
    update_memberships(x, centers, m, u);
    std::vector<double> num(c, 0.0), den(c, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double w = std::pow(u[i * c + k], m);
        num[k] += w * x[i];
        den[k] += w;
      }
    double shift = 0.0;
    for (std::size_t k = 0; k < c; ++k) {
      const double next = den[k] > 0.0 ? num[k] / den[k] : centers[k];
      shift = std::max(shift, std::abs(next - centers[k]));
      centers[k] = next;
    }
    double objective = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i)
      for (std::size_t k = 0; k < c; ++k) {
        const double d = x[i] - centers[k];
        objective += std::pow(u[i * c + k], m) * d * d;
      }
    out.objective.push_back(objective);
    out.iterations = it;
    if (shift < cfg.tol) {
      out.converged = true;
      break;
    }
  }

  std::vector<std::size_t> order(c);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return centers[a] < centers[b]; });
  std::vector<double> sorted(c);
  for (std::size_t k = 0; k < c; ++k) sorted[k] = centers[order[k]];
  out.centers = sorted;
  update_memberships(x, out.centers, m, u);

  out.class_map = LabelMask(tumour.grid());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double* row = u.data() + i * c;
    const auto best = std::max_element(row, row + c) - row;
    out.class_map[out.voxels[i]] = static_cast<std::int32_t>(best + 1);
  }
  return out;
}

std::string to_string(MatchKind kind) {
  switch (kind) {
    case MatchKind::matched:
      return "matched";
    case MatchKind::disappeared:
      return "disappeared";
    case MatchKind::appeared:
      return "new";
    case MatchKind::split:
      return "split";
    case MatchKind::merge:
      return "merge";
  }
  return "unknown";
}

std::vector<LesionMatch> match_lesions(const LesionSet& baseline, const LesionSet& followup,
                                       const DisplacementField& field_ab, double min_dice) {
  if (!(min_dice > 0.0 && min_dice <= 1.0)) throw ConfigError("min_dice must lie in (0, 1]");
  require_same_dims(followup.mask.grid(), field_ab.grid, "match_lesions");
  require_same_dims(baseline.mask.grid(), field_ab.grid, "match_lesions");
  const int nb = baseline.count(), nf = followup.count();
  const LabelMask warped = warp(followup.mask, field_ab, Interp::nearest);

  std::vector<std::int64_t> base_count(static_cast<std::size_t>(nb) + 1, 0);
  std::vector<std::int64_t> follow_count(static_cast<std::size_t>(nf) + 1, 0);
  std::map<std::pair<int, int>, std::int64_t> inter;
  for (std::int64_t i = 0; i < warped.size(); ++i) {
    const int b = baseline.mask[i], f = warped[i];
    if (b > nb || f > nf) throw DataError("match_lesions: lesion labels are not contiguous");
    ++base_count[static_cast<std::size_t>(b)];
    ++follow_count[static_cast<std::size_t>(f)];
    if (b != 0 && f != 0) ++inter[{b, f}];
  }

  // Union-find over baseline nodes 0..nb-1 and follow-up nodes nb..nb+nf-1.
  std::vector<int> parent(static_cast<std::size_t>(nb + nf));
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](int a) {
    while (parent[static_cast<std::size_t>(a)] != a) a = parent[static_cast<std::size_t>(a)] = parent[static_cast<std::size_t>(parent[static_cast<std::size_t>(a)])];
    return a;
  };
  std::vector<LesionOverlap> edges;
  for (const auto& [key, both] : inter) {
    const auto [b, f] = key;
    const double d = 2.0 * static_cast<double>(both) /
                     static_cast<double>(base_count[static_cast<std::size_t>(b)] + follow_count[static_cast<std::size_t>(f)]);
    if (d < min_dice) continue;
    edges.push_back({b, f, d});
    const int rb = find(b - 1), rf = find(nb + f - 1);
    if (rb != rf) parent[static_cast<std::size_t>(std::max(rb, rf))] = std::min(rb, rf);
  }

  std::map<int, LesionMatch> groups;  // keyed by root, which is the smallest node
  for (int b = 1; b <= nb; ++b) groups[find(b - 1)].baseline_ids.push_back(b);
  for (int f = 1; f <= nf; ++f) groups[find(nb + f - 1)].followup_ids.push_back(f);
  for (const auto& e : edges) groups[find(e.baseline_id - 1)].overlaps.push_back(e);

  std::vector<LesionMatch> out;
  for (auto& [root, g] : groups) {
    const auto b = g.baseline_ids.size(), f = g.followup_ids.size();
    if (f == 0) {
      g.kind = MatchKind::disappeared;
    } else if (b == 0) {
      g.kind = MatchKind::appeared;
    } else if (b == 1 && f == 1) {
      g.kind = MatchKind::matched;
    } else if (b == 1) {
      g.kind = MatchKind::split;
    } else {
      g.kind = MatchKind::merge;
    }
    out.push_back(std::move(g));
  }
  return out;
}

}  // namespace jacreg
