#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "culab/rng.hpp"
#include "culab/stats.hpp"

namespace culab::metrics {

// ----- toy-problem metrics ------------------------------------------------------

// Pointwise errors between estimated and ground-truth distribution
// parameters. Trajectory arrays are agent-major m x 2T; matrices are the
// covariances (and their inverses), averaged per entry.
struct ToyComponents {
  double l2_mu = 0.0;
  double l1_sigma = 0.0;
  double l1_sigma_inv = 0.0;
};

ToyComponents toy_metrics(const std::vector<double>& est_mu,
                          const std::vector<double>& est_sigma,
                          const std::vector<double>& gt_mu,
                          const std::vector<double>& gt_sigma, std::size_t m,
                          std::size_t horizon);

// Test-set aggregate; kl is averaged over instances, kl_floor_flagged marks
// averages below the -0.01 Monte-Carlo noise floor.
struct ToyReport {
  double l2_mu = 0.0;
  double l1_sigma = 0.0;
  double l1_sigma_inv = 0.0;
  double kl = 0.0;
  double kl_stderr = 0.0;
  bool kl_floor_flagged = false;
};

// ----- KL divergences ------------------------------------------------------------

// Closed-form KL(p_g || p_e) between Gaussians.
double kl_gaussian(const stats::MvnParams& pg, const stats::MvnParams& pe);

struct McEstimate {
  double value = 0.0;
  double stderr = 0.0;
};

// Monte-Carlo KL(p_g || p_e) for multivariate Laplace distributions:
// mean of log p_g(x) - log p_e(x) over n >= 1000 draws from p_g.
McEstimate kl_laplace_mc(const stats::MvLaplaceParams& pg, const stats::MvLaplaceParams& pe,
                         std::size_t n, Rng& rng);
McEstimate kl_laplace_mc(const stats::MvLaplaceDensity& pg, const stats::MvLaplaceDensity& pe,
                         std::size_t n, Rng& rng);

// ----- forecasting metrics ---------------------------------------------------------

struct ForecastReport {
  double ade = 0.0;   // mean over modes and agents
  double fde = 0.0;
  double ade1 = 0.0;  // selected optimal trajectory
  double fde1 = 0.0;
  double adek = 0.0;  // per-agent best over modes
  double fdek = 0.0;
  double brier_fdek = 0.0;
  std::size_t k_used = 0;
};

// modes[k] and selected/y are agent-major m x 2T+ arrays. probs, when given,
// must be non-negative and sum to 1 within 1e-6.
ForecastReport forecast_metrics(const std::vector<std::vector<double>>& modes,
                                const std::vector<double>& selected,
                                const std::vector<double>& y, std::size_t m,
                                std::size_t horizon,
                                const std::optional<std::vector<double>>& probs);

// ----- stochasticity ----------------------------------------------------------------

// Element-wise unbiased variance across modes, then element-wise mean.
// modes[k] is one agent's 2T+ trajectory in mode k. Requires K >= 2.
double stochasticity(const std::vector<std::vector<double>>& modes);

struct CurveBin {
  double stochasticity_mean = 0.0;
  double uncertainty_mean = 0.0;
  std::size_t count = 0;
};

struct CurveReport {
  std::vector<CurveBin> bins;  // 10 equal-count bins by stochasticity
  double spearman = 0.0;
  bool spearman_defined = true;  // false (and 0) when a variable is constant
};

CurveReport stochasticity_uncertainty_curve(const std::vector<double>& stochasticity_values,
                                            const std::vector<double>& uncertainty_values,
                                            std::size_t bins = 10);

double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                 bool* defined = nullptr);

}  // namespace culab::metrics
