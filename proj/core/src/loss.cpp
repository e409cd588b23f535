#include "jacreg/loss.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "jacreg/errors.hpp"
#include "jacreg/parallel.hpp"

namespace jacreg {

void LossConfig::validate() const {
  if (!(lncc_sigma > 0.0)) throw ConfigError("loss.lncc_sigma must be > 0");
  if (!(eps > 0.0)) throw ConfigError("loss.eps must be > 0");
  if (!(lambda >= 0.0)) throw ConfigError("loss.lambda must be >= 0");
  if (reg_subsample < 1) throw ConfigError("loss.reg_subsample must be >= 1");
}

namespace {

void require_same_dims(const Grid3& a, const Grid3& b, const char* what) {
  if (a.dims != b.dims)
    throw DataError(std::string(what) + ": grid mismatch " + describe(a) + " vs " + describe(b));
}

void throw_if_non_finite(const DisplacementField& f, const char* what) {
  try {
    f.check_finite();
  } catch (const DataError& e) {
    throw NumericalError(std::string(what) + ": " + e.what());
  }
}

// Per-slice sums combined in slice order.
double ordered_mean(const std::vector<double>& v, const Grid3& g) {
  const std::int64_t plane = g.slice_size();
  const double s = ordered_sum(g.dims[2], [&](std::int64_t z) {
    double acc = 0.0;
    const double* p = v.data() + z * plane;
    for (std::int64_t i = 0; i < plane; ++i) acc += p[i];
    return acc;
  });
  return s / static_cast<double>(g.size());
}

bool on_eval_lattice(int pos, int n, int stride) {
  return pos >= 1 && pos <= n - 2 && (pos - 1) % stride == 0;
}

std::int64_t eval_count(const Grid3& g, int stride) {
  std::int64_t m = 1;
  for (int a = 0; a < 3; ++a) m *= (g.dims[a] - 3) / stride + 1;
  return m;
}

void require_reg_dims(const Grid3& g) {
  for (int a = 0; a < 3; ++a)
    if (g.dims[a] < 3) throw DataError("gradicon_reg needs at least 3 voxels per axis");
}

}  // namespace

LnccTerm::LnccTerm(const Volume3& target, const LossConfig& cfg)
    : target_(&target), eps_(cfg.eps), filter_(cfg.lncc_sigma, target.grid().dims) {
  cfg.validate();
  const auto& t = target.data();
  std::vector<double> tt(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) tt[i] = t[i] * t[i];
  filter_.apply(t, mean_t_);
  std::vector<double> mean_tt;
  filter_.apply(tt, mean_tt);
  var_t_.resize(t.size());
  for (std::size_t i = 0; i < t.size(); ++i)
    var_t_[i] = std::max(0.0, mean_tt[i] - mean_t_[i] * mean_t_[i]);
}

LnccTerm::State LnccTerm::forward(const std::vector<double>& w) const {
  const auto& t = target_->data();
  if (w.size() != t.size()) throw DataError("lncc: warped image does not match target grid");
  State s;
  std::vector<double> ww(w.size()), wt(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    ww[i] = w[i] * w[i];
    wt[i] = w[i] * t[i];
  }
  filter_.apply(w, s.mean_w);
  filter_.apply(ww, s.mean_ww);
  filter_.apply(wt, s.mean_wt);
  std::vector<double> ncc2(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) {
    const double var_w = std::max(0.0, s.mean_ww[i] - s.mean_w[i] * s.mean_w[i]);
    const double cov = s.mean_wt[i] - s.mean_w[i] * mean_t_[i];
    ncc2[i] = cov * cov / (var_w * var_t_[i] + eps_);
  }
  s.loss = 1.0 - ordered_mean(ncc2, target_->grid());
  return s;
}

void LnccTerm::backward(const std::vector<double>& w, const State& s, std::vector<double>& grad) const {
  const auto& t = target_->data();
  const std::size_t n = w.size();
  std::vector<double> a(n), b(n), c(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double raw_var = s.mean_ww[i] - s.mean_w[i] * s.mean_w[i];
    const double var_w = std::max(0.0, raw_var);
    const double cov = s.mean_wt[i] - s.mean_w[i] * mean_t_[i];
    const double d = var_w * var_t_[i] + eps_;
    const double df_dcov = 2.0 * cov / d;
    const double df_dvar = raw_var > 0.0 ? -cov * cov * var_t_[i] / (d * d) : 0.0;
    a[i] = -mean_t_[i] * df_dcov - 2.0 * s.mean_w[i] * df_dvar;
    b[i] = df_dvar;
    c[i] = df_dcov;
  }
  std::vector<double> ga, gb, gc;
  filter_.apply_adjoint(a, ga);
  filter_.apply_adjoint(b, gb);
  filter_.apply_adjoint(c, gc);
  const double scale = -1.0 / static_cast<double>(n);
  grad.resize(n);
  for (std::size_t i = 0; i < n; ++i) grad[i] = scale * (ga[i] + 2.0 * w[i] * gb[i] + t[i] * gc[i]);
}

double lncc_loss(const Volume3& warped, const Volume3& target, const LossConfig& cfg) {
  require_same_dims(warped.grid(), target.grid(), "lncc_loss");
  return LnccTerm(target, cfg).forward(warped.data()).loss;
}

DisplacementField warp_field_gradient(const Volume3& source, const DisplacementField& field,
                                      const std::vector<double>& d_warped) {
  require_same_dims(source.grid(), field.grid, "warp_field_gradient");
  const Grid3& g = field.grid;
  DisplacementField out(g);
  parallel_for(0, g.dims[2], [&](std::int64_t z) {
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const auto i = static_cast<std::size_t>(g.index(x, y, static_cast<int>(z)));
        const Vec3 p{x + field.u[0][i], y + field.u[1][i], z + field.u[2][i]};
        Vec3 grad;
        sample_trilinear_grad(source.data(), g.dims, p, grad);
        for (int k = 0; k < 3; ++k) out.u[k][i] = d_warped[i] * grad[k];
      }
    }
  });
  return out;
}

double gradicon_forward(const DisplacementField& ab, const DisplacementField& ba,
                        const LossConfig& cfg, DisplacementField* composed) {
  require_same_dims(ab.grid, ba.grid, "gradicon_reg");
  require_reg_dims(ab.grid);
  DisplacementField c = compose(ab, ba);
  const Grid3& g = c.grid;
  const int s = cfg.reg_subsample;
  const std::int64_t strides[3] = {1, g.dims[0], g.slice_size()};
  const double sum = ordered_sum(g.dims[2], [&](std::int64_t zz) {
    const int z = static_cast<int>(zz);
    if (!on_eval_lattice(z, g.dims[2], s)) return 0.0;
    double acc = 0.0;
    for (int y = 0; y < g.dims[1]; ++y) {
      if (!on_eval_lattice(y, g.dims[1], s)) continue;
      for (int x = 0; x < g.dims[0]; ++x) {
        if (!on_eval_lattice(x, g.dims[0], s)) continue;
        const auto i = g.index(x, y, z);
        for (int m = 0; m < 3; ++m) {
          for (int a = 0; a < 3; ++a) {
            const double d = 0.5 * (c.u[m][static_cast<std::size_t>(i + strides[a])] -
                                    c.u[m][static_cast<std::size_t>(i - strides[a])]);
            acc += d * d;
          }
        }
      }
    }
    return acc;
  });
  if (composed) *composed = std::move(c);
  return sum / static_cast<double>(eval_count(g, s));
}

void gradicon_backward(const DisplacementField& ab, const DisplacementField& ba,
                       const DisplacementField& composed, const LossConfig& cfg,
                       DisplacementField* d_ab, DisplacementField* d_ba) {
  const Grid3& g = composed.grid;
  const int s = cfg.reg_subsample;
  const double inv_m = 1.0 / static_cast<double>(eval_count(g, s));

  // Gradient with respect to the composed field (adjoint of the stencil):
  // voxel i feeds +1/2 to the difference at i - e_a and -1/2 to i + e_a.
  DisplacementField gc(g);
  const std::int64_t strides[3] = {1, g.dims[0], g.slice_size()};
  std::array<std::vector<char>, 3> lattice;
  for (int a = 0; a < 3; ++a) {
    lattice[a].assign(static_cast<std::size_t>(g.dims[a]) + 2, 0);  // shifted by one
    for (int p = 0; p < g.dims[a]; ++p)
      lattice[a][static_cast<std::size_t>(p + 1)] = on_eval_lattice(p, g.dims[a], s);
  }
  auto on = [&](int a, int p) { return lattice[a][static_cast<std::size_t>(p + 1)] != 0; };
  parallel_for(0, g.dims[2], [&](std::int64_t zz) {
    const int z = static_cast<int>(zz);
    for (int y = 0; y < g.dims[1]; ++y) {
      for (int x = 0; x < g.dims[0]; ++x) {
        const int pos[3] = {x, y, z};
        const bool here[3] = {on(0, x), on(1, y), on(2, z)};
        bool lower[3], upper[3];
        for (int a = 0; a < 3; ++a) {
          const bool others = here[(a + 1) % 3] && here[(a + 2) % 3];
          lower[a] = others && on(a, pos[a] - 1);
          upper[a] = others && on(a, pos[a] + 1);
        }
        if (!(lower[0] || lower[1] || lower[2] || upper[0] || upper[1] || upper[2])) continue;
        const auto i = g.index(x, y, z);
        for (int m = 0; m < 3; ++m) {
          const double* u = composed.u[m].data();
          double acc = 0.0;
          for (int a = 0; a < 3; ++a) {
            const std::int64_t st = strides[a];
            if (lower[a]) acc += 0.5 * (u[i] - u[i - 2 * st]);
            if (upper[a]) acc -= 0.5 * (u[i + 2 * st] - u[i]);
          }
          gc.u[m][static_cast<std::size_t>(i)] = inv_m * acc;
        }
      }
    }
  });

  if (d_ba) {
    // Inner field: d C^m / d ba^k = delta_mk + d_k ab^m at x + ba(x).
    *d_ba = DisplacementField(g);
    parallel_for(0, g.dims[2], [&](std::int64_t z) {
      for (int y = 0; y < g.dims[1]; ++y) {
        for (int x = 0; x < g.dims[0]; ++x) {
          const auto i = static_cast<std::size_t>(g.index(x, y, static_cast<int>(z)));
          const Vec3 p{x + ba.u[0][i], y + ba.u[1][i], z + ba.u[2][i]};
          double out[3] = {gc.u[0][i], gc.u[1][i], gc.u[2][i]};
          std::array<Vec3, 3> jac;
          sample_field_grad(ab, p, jac);
          for (int m = 0; m < 3; ++m)
            for (int k = 0; k < 3; ++k) out[k] += gc.u[m][i] * jac[m][k];
          for (int k = 0; k < 3; ++k) d_ba->u[k][i] = out[k];
        }
      }
    });
  }
  if (d_ab) {
    // Outer field enters through trilinear sampling: scatter with the
    // interpolation weights, serially so the sum order is fixed.
    *d_ab = DisplacementField(g);
    for (int z = 0; z < g.dims[2]; ++z) {
      for (int y = 0; y < g.dims[1]; ++y) {
        for (int x = 0; x < g.dims[0]; ++x) {
          const auto i = static_cast<std::size_t>(g.index(x, y, z));
          const Vec3 p{x + ba.u[0][i], y + ba.u[1][i], z + ba.u[2][i]};
          const auto st = trilinear_stencil(g.dims, p);
          for (int n = 0; n < 8; ++n) {
            const auto j = static_cast<std::size_t>(st.index[n]);
            const double w = st.weight[n];
            for (int m = 0; m < 3; ++m) d_ab->u[m][j] += w * gc.u[m][i];
          }
        }
      }
    }
  }
}

double gradicon_reg(const DisplacementField& field_ab, const DisplacementField& field_ba,
                    const LossConfig& cfg) {
  cfg.validate();
  return gradicon_forward(field_ab, field_ba, cfg);
}

LossBreakdown total_loss(const Volume3& i_a, const Volume3& i_b, const DisplacementField& f_ab,
                         const DisplacementField& f_ba, const LossConfig& cfg) {
  cfg.validate();
  require_same_dims(i_a.grid(), i_b.grid(), "total_loss");
  require_same_dims(i_a.grid(), f_ab.grid, "total_loss");
  require_same_dims(i_a.grid(), f_ba.grid, "total_loss");
  LossBreakdown out;
  out.sim_ab = lncc_loss(warp(i_a, f_ab), i_b, cfg);
  out.sim_ba = lncc_loss(warp(i_b, f_ba), i_a, cfg);
  out.reg = gradicon_forward(f_ab, f_ba, cfg);
  out.total = out.sim_ab + out.sim_ba + cfg.lambda * out.reg;
  return out;
}

DisplacementField loss_gradient(const Volume3& i_a, const Volume3& i_b,
                                const DisplacementField& f_ab, const DisplacementField& f_ba,
                                const LossConfig& cfg, Wrt wrt) {
  cfg.validate();
  require_same_dims(i_a.grid(), i_b.grid(), "loss_gradient");
  require_same_dims(i_a.grid(), f_ab.grid, "loss_gradient");
  require_same_dims(i_a.grid(), f_ba.grid, "loss_gradient");

  const bool ab = wrt == Wrt::field_ab;
  const Volume3& source = ab ? i_a : i_b;
  const Volume3& target = ab ? i_b : i_a;
  const DisplacementField& field = ab ? f_ab : f_ba;

  const LnccTerm term(target, cfg);
  const Volume3 warped = warp(source, field);
  const auto state = term.forward(warped.data());
  std::vector<double> d_warped;
  term.backward(warped.data(), state, d_warped);
  DisplacementField grad = warp_field_gradient(source, field, d_warped);

  if (cfg.lambda != 0.0) {
    DisplacementField composed;
    gradicon_forward(f_ab, f_ba, cfg, &composed);
    DisplacementField d_reg;
    gradicon_backward(f_ab, f_ba, composed, cfg, ab ? &d_reg : nullptr, ab ? nullptr : &d_reg);
    for (int c = 0; c < 3; ++c)
      for (std::size_t i = 0; i < grad.u[c].size(); ++i) grad.u[c][i] += cfg.lambda * d_reg.u[c][i];
  }
  throw_if_non_finite(grad, "loss_gradient");
  return grad;
}

}  // namespace jacreg
