#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "culab/nets.hpp"
#include "culab/tensor.hpp"

namespace culab::objectives {

// Winner-takes-all variants for the multi-modal regression loss: the mode
// closest to the ground truth (standard WTA) or the mode the uncertainty
// selector would pick.
enum class WtaMode { kClosestToGt, kPhiSelected };

std::string to_string(WtaMode v);
WtaMode wta_from_string(const std::string& s);

struct LossConfig {
  double alpha = 0.0;         // AUTL weight
  WtaMode wta = WtaMode::kClosestToGt;
  bool use_full_nll = false;  // log-det NLL instead of its Hadamard lower bound
  bool shared_phi = false;    // collapse per-agent phi to one shared value

  void validate() const;
};

struct LossBreakdown {
  double lap_cu = 0.0;
  double autl = 0.0;
  double total = 0.0;
  double q_value = 0.0;          // quadratic form of the winning mode
  std::vector<double> de;        // K x m displacement errors, mode-major
  std::size_t winner = 0;        // mode the regression loss was evaluated on
  Tensor total_tensor;           // differentiable scalar for backward()
};

// All trajectory arrays are agent-major m x S with S = 2T+ slices; the
// quadratic form treats each column as one draw from the m-variate
// distribution and sums over columns.
Tensor quad_form(const Tensor& y, const Tensor& mu, const Tensor& sigma_inv);

// Per-agent split of the quadratic form, c_i = sum_s r_si (Sigma^-1 r_s)_i;
// the c_i sum to quad_form.
Tensor agent_quad_contributions(const Tensor& y, const Tensor& mu, const Tensor& sigma_inv);

// Hadamard lower bound of the negative log-likelihood:
//   1/2 [ sum_i c_i/phi_i + S sum_i log phi_i - S sum_i log d_ii ].
// With all phi_i equal this is exactly the per-draw bound summed over the
// S draws. phi is m x 1, strictly positive.
Tensor lap_cu_loss(const Tensor& y, const Tensor& mu, const Tensor& phi,
                   const Tensor& sigma_inv, bool shared_phi = false);

// Full negative log-likelihood, with log det Sigma^-1 via Cholesky.
Tensor full_nll(const Tensor& y, const Tensor& mu, const Tensor& phi,
                const Tensor& sigma_inv, bool shared_phi = false);

// Auxiliary uncertainty training loss: sum_k sum_i |phi_ki - DE_ki| where
// DE_ki is the l2 norm of agent i's full-horizon residual in mode k.
Tensor autl(const std::vector<Tensor>& means, const Tensor& y,
            const std::vector<Tensor>& phi);

// Winner-takes-all total loss: regression term on the winning mode only,
// AUTL over all modes, total = lap_cu + alpha * autl.
LossBreakdown total_loss(const LossConfig& config, const nets::PredictiveOutput& out,
                         const Tensor& y);

// Sigma ~= phi * inverse(sigma_inv): covariance recovery from the model's
// auxiliary scalar and precision estimate.
std::vector<double> recover_covariance(double phi, const std::vector<double>& sigma_inv,
                                       std::size_t m);

// Numerical check that f(phi) = phi^{-m/2} exp(-g/phi) peaks at 2g/m and
// vanishes at both ends of (0, inf).
struct PhiStarCheck {
  double argmax = 0.0;
  double grid_argmax = 0.0;
  bool boundary_decay = false;
  bool grid_local_max = false;
};
PhiStarCheck phi_star_sanity(double g, std::size_t m);

}  // namespace culab::objectives
