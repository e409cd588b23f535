#pragma once

#include <vector>

#include "jacreg/field.hpp"
#include "jacreg/filter.hpp"
#include "jacreg/grid.hpp"

namespace jacreg {

struct LossConfig {
  double lncc_sigma = 2.5;  // Gaussian window std, voxels
  double eps = 1e-5;        // variance floor
  double lambda = 1.5;      // inverse-consistency weight
  int reg_subsample = 1;    // stride between regulariser evaluation voxels

  // Throws ConfigError.
  void validate() const;
};

struct LossBreakdown {
  double sim_ab = 0.0;
  double sim_ba = 0.0;
  double reg = 0.0;
  double total = 0.0;
};

enum class Wrt { field_ab, field_ba };

// 1 - mean over voxels of cov^2 / (var_w * var_t + eps), with local moments
// taken under a Gaussian window. Result lies in [0, 1].
double lncc_loss(const Volume3& warped, const Volume3& target, const LossConfig& cfg);

// Mean squared Frobenius norm of grad(phi_ab o phi_ba) - I over interior
// voxels sampled with stride cfg.reg_subsample.
double gradicon_reg(const DisplacementField& field_ab, const DisplacementField& field_ba,
                    const LossConfig& cfg);

// sim_ab = lncc(i_a o phi_ab, i_b), sim_ba = lncc(i_b o phi_ba, i_a),
// reg = gradicon_reg(phi_ab, phi_ba), total = sim_ab + sim_ba + lambda * reg.
LossBreakdown total_loss(const Volume3& i_a, const Volume3& i_b, const DisplacementField& f_ab,
                         const DisplacementField& f_ba, const LossConfig& cfg);

// Exact gradient of total_loss with respect to every component of the
// selected field. Throws NumericalError naming the first non-finite voxel.
DisplacementField loss_gradient(const Volume3& i_a, const Volume3& i_b,
                                const DisplacementField& f_ab, const DisplacementField& f_ba,
                                const LossConfig& cfg, Wrt wrt);

// LNCC against a fixed target with the target-only moments cached. forward()
// keeps the moving-image moments so backward() can reuse them.
class LnccTerm {
 public:
  struct State {
    std::vector<double> mean_w, mean_ww, mean_wt;
    double loss = 0.0;
  };

  LnccTerm(const Volume3& target, const LossConfig& cfg);

  State forward(const std::vector<double>& warped) const;
  // d loss / d warped, written into grad.
  void backward(const std::vector<double>& warped, const State& state,
                std::vector<double>& grad) const;

  const GaussianFilter& filter() const { return filter_; }

 private:
  const Volume3* target_;
  double eps_;
  GaussianFilter filter_;
  std::vector<double> mean_t_, var_t_;
};

// Chain rule through warping: out_k(x) = d_warped(x) * d/dp_k source(x + u(x)).
DisplacementField warp_field_gradient(const Volume3& source, const DisplacementField& field,
                                      const std::vector<double>& d_warped);

// Regulariser value; when composed is non-null it receives phi_ab o phi_ba.
double gradicon_forward(const DisplacementField& field_ab, const DisplacementField& field_ba,
                        const LossConfig& cfg, DisplacementField* composed = nullptr);

// Gradient of the regulariser (without lambda) with respect to the requested
// fields; composed must come from gradicon_forward on the same pair.
void gradicon_backward(const DisplacementField& field_ab, const DisplacementField& field_ba,
                       const DisplacementField& composed, const LossConfig& cfg,
                       DisplacementField* d_ab, DisplacementField* d_ba);

}  // namespace jacreg
