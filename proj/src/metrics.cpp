#include "culab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"

namespace culab::metrics {

ToyComponents toy_metrics(const std::vector<double>& est_mu,
                          const std::vector<double>& est_sigma,
                          const std::vector<double>& gt_mu,
                          const std::vector<double>& gt_sigma, std::size_t m,
                          std::size_t horizon) {
  if (est_mu.size() != m * horizon || gt_mu.size() != m * horizon) {
    throw DimensionError("toy_metrics: mean extents mismatch");
  }
  if (est_sigma.size() != m * m || gt_sigma.size() != m * m) {
    throw DimensionError("toy_metrics: sigma extents mismatch");
  }
  if (horizon % 2 != 0) throw DimensionError("toy_metrics: horizon must be 2*timestamps");

  ToyComponents out;
  const std::size_t points = horizon / 2;
  for (std::size_t agent = 0; agent < m; ++agent) {
    for (std::size_t t = 0; t < points; ++t) {
      double dx = est_mu[agent * horizon + 2 * t] - gt_mu[agent * horizon + 2 * t];
      double dy = est_mu[agent * horizon + 2 * t + 1] - gt_mu[agent * horizon + 2 * t + 1];
      out.l2_mu += std::sqrt(dx * dx + dy * dy);
    }
  }
  out.l2_mu /= static_cast<double>(m * points);

  auto est_inv = linalg::spd_inverse(est_sigma, m);
  auto gt_inv = linalg::spd_inverse(gt_sigma, m);
  for (std::size_t i = 0; i < m * m; ++i) {
    out.l1_sigma += std::abs(est_sigma[i] - gt_sigma[i]);
    out.l1_sigma_inv += std::abs(est_inv[i] - gt_inv[i]);
  }
  out.l1_sigma /= static_cast<double>(m * m);
  out.l1_sigma_inv /= static_cast<double>(m * m);
  return out;
}

double kl_gaussian(const stats::MvnParams& pg, const stats::MvnParams& pe) {
  const std::size_t k = pg.dim();
  if (pe.dim() != k) throw DimensionError("kl_gaussian: dimension mismatch");
  auto lg = linalg::cholesky(pg.covariance, k);
  auto le = linalg::cholesky(pe.covariance, k);
  auto e_inv = linalg::spd_inverse(pe.covariance, k);

  double trace = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j) trace += e_inv[i * k + j] * pg.covariance[j * k + i];

  double quad = 0.0;
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = 0; j < k; ++j)
      quad += (pg.mean[i] - pe.mean[i]) * e_inv[i * k + j] * (pg.mean[j] - pe.mean[j]);

  double logdet_ratio = linalg::cholesky_logdet(le, k) - linalg::cholesky_logdet(lg, k);
  return 0.5 * (logdet_ratio - static_cast<double>(k) + quad + trace);
}

McEstimate kl_laplace_mc(const stats::MvLaplaceParams& pg, const stats::MvLaplaceParams& pe,
                         std::size_t n, Rng& rng) {
  auto table = stats::MvLaplaceDensity::make_table(pg.dim());
  stats::MvLaplaceDensity dg(pg, table), de(pe, table);
  return kl_laplace_mc(dg, de, n, rng);
}

McEstimate kl_laplace_mc(const stats::MvLaplaceDensity& pg, const stats::MvLaplaceDensity& pe,
                         std::size_t n, Rng& rng) {
  if (n < 1000) throw ContractError("kl_laplace_mc: n must be >= 1000");
  if (pg.params().dim() != pe.params().dim()) {
    throw DimensionError("kl_laplace_mc: dimension mismatch");
  }
  const std::size_t m = pg.params().dim();
  auto samples = stats::mvlaplace_sample(pg.params(), rng, n);
  double sum = 0.0, sumsq = 0.0;
  std::vector<double> x(m);
  for (std::size_t i = 0; i < n; ++i) {
    std::copy(samples.begin() + i * m, samples.begin() + (i + 1) * m, x.begin());
    double ratio = pg.logpdf(x) - pe.logpdf(x);
    sum += ratio;
    sumsq += ratio * ratio;
  }
  McEstimate est;
  est.value = sum / static_cast<double>(n);
  double var = (sumsq - sum * sum / static_cast<double>(n)) / static_cast<double>(n - 1);
  est.stderr = std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  return est;
}

// ----- forecasting ------------------------------------------------------------------

namespace {

// Mean point-wise l2 distance and final-point distance for one agent row.
void agent_displacements(const double* pred, const double* truth, std::size_t horizon,
                         double* ade, double* fde) {
  const std::size_t points = horizon / 2;
  double acc = 0.0;
  for (std::size_t t = 0; t < points; ++t) {
    double dx = pred[2 * t] - truth[2 * t];
    double dy = pred[2 * t + 1] - truth[2 * t + 1];
    acc += std::sqrt(dx * dx + dy * dy);
  }
  *ade = acc / static_cast<double>(points);
  double dx = pred[horizon - 2] - truth[horizon - 2];
  double dy = pred[horizon - 1] - truth[horizon - 1];
  *fde = std::sqrt(dx * dx + dy * dy);
}

}  // namespace

ForecastReport forecast_metrics(const std::vector<std::vector<double>>& modes,
                                const std::vector<double>& selected,
                                const std::vector<double>& y, std::size_t m,
                                std::size_t horizon,
                                const std::optional<std::vector<double>>& probs) {
  if (modes.empty()) throw ContractError("forecast_metrics: no modes");
  const std::size_t kmodes = modes.size();
  for (const auto& mode : modes) {
    if (mode.size() != m * horizon) throw DimensionError("forecast_metrics: mode extents");
  }
  if (selected.size() != m * horizon || y.size() != m * horizon) {
    throw DimensionError("forecast_metrics: trajectory extents");
  }
  if (probs) {
    if (probs->size() != kmodes) throw ContractError("forecast_metrics: probs length != K");
    double total = 0.0;
    for (double p : *probs) {
      if (p < 0.0) throw ContractError("forecast_metrics: negative mode probability");
      total += p;
    }
    if (std::abs(total - 1.0) > 1e-6) {
      throw ContractError("forecast_metrics: mode probabilities must sum to 1");
    }
  }

  ForecastReport rep;
  rep.k_used = kmodes;
  for (std::size_t agent = 0; agent < m; ++agent) {
    double best_ade = 0.0, best_fde = 0.0;
    std::size_t best_fde_mode = 0;
    for (std::size_t k = 0; k < kmodes; ++k) {
      double ade = 0.0, fde = 0.0;
      agent_displacements(modes[k].data() + agent * horizon, y.data() + agent * horizon,
                          horizon, &ade, &fde);
      rep.ade += ade;
      rep.fde += fde;
      if (k == 0 || ade < best_ade) best_ade = ade;
      if (k == 0 || fde < best_fde) {
        best_fde = fde;
        best_fde_mode = k;
      }
    }
    rep.adek += best_ade;
    rep.fdek += best_fde;
    if (probs) {
      double p = (*probs)[best_fde_mode];
      rep.brier_fdek += best_fde + (1.0 - p) * (1.0 - p);
    }

    double ade1 = 0.0, fde1 = 0.0;
    agent_displacements(selected.data() + agent * horizon, y.data() + agent * horizon,
                        horizon, &ade1, &fde1);
    rep.ade1 += ade1;
    rep.fde1 += fde1;
  }
  const auto md = static_cast<double>(m);
  rep.ade /= md * static_cast<double>(kmodes);
  rep.fde /= md * static_cast<double>(kmodes);
  rep.ade1 /= md;
  rep.fde1 /= md;
  rep.adek /= md;
  rep.fdek /= md;
  if (probs) {
    rep.brier_fdek /= md;
  } else {
    rep.brier_fdek = rep.fdek;  // no confidence penalty available
  }
  return rep;
}

// ----- stochasticity -----------------------------------------------------------------

double stochasticity(const std::vector<std::vector<double>>& modes) {
  if (modes.size() < 2) throw ContractError("stochasticity: needs K >= 2 modes");
  const std::size_t len = modes.front().size();
  for (const auto& mode : modes) {
    if (mode.size() != len) throw DimensionError("stochasticity: mode lengths differ");
  }
  const auto kd = static_cast<double>(modes.size());
  double acc = 0.0;
  for (std::size_t e = 0; e < len; ++e) {
    double mean = 0.0;
    for (const auto& mode : modes) mean += mode[e];
    mean /= kd;
    double var = 0.0;
    for (const auto& mode : modes) var += (mode[e] - mean) * (mode[e] - mean);
    acc += var / (kd - 1.0);
  }
  return acc / static_cast<double>(len);
}

double spearman_rank_correlation(const std::vector<double>& a, const std::vector<double>& b,
                                 bool* defined) {
  if (a.size() != b.size() || a.size() < 2) {
    throw ContractError("spearman: need two same-length series");
  }
  auto ranks = [](const std::vector<double>& v) {
    const std::size_t n = v.size();
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return v[x] < v[y]; });
    std::vector<double> r(n);
    std::size_t i = 0;
    while (i < n) {
      std::size_t j = i;
      while (j + 1 < n && v[idx[j + 1]] == v[idx[i]]) ++j;
      double avg = 0.5 * static_cast<double>(i + j) + 1.0;  // average rank for ties
      for (std::size_t t = i; t <= j; ++t) r[idx[t]] = avg;
      i = j + 1;
    }
    return r;
  };
  auto ra = ranks(a);
  auto rb = ranks(b);
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    ma += ra[i];
    mb += rb[i];
  }
  ma /= static_cast<double>(ra.size());
  mb /= static_cast<double>(rb.size());
  double num = 0, va = 0, vb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    va += (ra[i] - ma) * (ra[i] - ma);
    vb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (va == 0.0 || vb == 0.0) {
    if (defined) *defined = false;
    return 0.0;  // constant series: correlation undefined, reported as 0
  }
  if (defined) *defined = true;
  return num / std::sqrt(va * vb);
}

CurveReport stochasticity_uncertainty_curve(const std::vector<double>& stochasticity_values,
                                            const std::vector<double>& uncertainty_values,
                                            std::size_t bins) {
  if (stochasticity_values.size() != uncertainty_values.size() ||
      stochasticity_values.empty()) {
    throw ContractError("stochasticity_uncertainty_curve: mismatched inputs");
  }
  CurveReport rep;
  rep.spearman =
      spearman_rank_correlation(stochasticity_values, uncertainty_values, &rep.spearman_defined);

  const std::size_t n = stochasticity_values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) {
    return stochasticity_values[x] < stochasticity_values[y];
  });
  bins = std::min(bins, n);
  rep.bins.resize(bins);
  for (std::size_t b = 0; b < bins; ++b) {
    std::size_t lo = b * n / bins, hi = (b + 1) * n / bins;
    CurveBin& bin = rep.bins[b];
    for (std::size_t i = lo; i < hi; ++i) {
      bin.stochasticity_mean += stochasticity_values[idx[i]];
      bin.uncertainty_mean += uncertainty_values[idx[i]];
      ++bin.count;
    }
    if (bin.count > 0) {
      bin.stochasticity_mean /= static_cast<double>(bin.count);
      bin.uncertainty_mean /= static_cast<double>(bin.count);
    }
  }
  return rep;
}

}  // namespace culab::metrics
