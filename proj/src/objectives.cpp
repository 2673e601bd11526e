#include "culab/objectives.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"

namespace culab::objectives {

std::string to_string(WtaMode v) {
  return v == WtaMode::kClosestToGt ? "closest-to-gt" : "phi-selected";
}

WtaMode wta_from_string(const std::string& s) {
  if (s == "closest-to-gt") return WtaMode::kClosestToGt;
  if (s == "phi-selected") return WtaMode::kPhiSelected;
  throw ConfigError("unknown wta mode: " + s);
}

void LossConfig::validate() const {
  if (alpha < 0.0) throw ConfigError("LossConfig: alpha must be non-negative");
}

namespace {

void check_traj_shapes(const Tensor& y, const Tensor& mu, const Tensor& sigma_inv,
                       const char* op) {
  if (y.rank() != 2 || mu.shape() != y.shape()) {
    throw DimensionError(std::string(op) + ": y and mu must be matching m x S arrays");
  }
  const std::size_t m = y.shape()[0];
  if (sigma_inv.rank() != 2 || sigma_inv.shape()[0] != m || sigma_inv.shape()[1] != m) {
    throw DimensionError(std::string(op) + ": sigma_inv must be m x m");
  }
}

std::vector<std::size_t> diag_positions(std::size_t m) {
  std::vector<std::size_t> idx(m);
  for (std::size_t i = 0; i < m; ++i) idx[i] = i * m + i;
  return idx;
}

Tensor phi_vector(const Tensor& phi, std::size_t m, const char* op) {
  if (phi.size() != m) {
    throw DimensionError(std::string(op) + ": phi must hold one value per agent");
  }
  for (double v : phi.values()) {
    if (!(v > 0.0)) throw DomainError(std::string(op) + ": phi must be strictly positive");
  }
  return phi.rank() == 1 ? phi : reshape(phi, {m});
}

}  // namespace

Tensor quad_form(const Tensor& y, const Tensor& mu, const Tensor& sigma_inv) {
  return sum(agent_quad_contributions(y, mu, sigma_inv));
}

Tensor agent_quad_contributions(const Tensor& y, const Tensor& mu, const Tensor& sigma_inv) {
  check_traj_shapes(y, mu, sigma_inv, "quad_form");
  Tensor r = sub(y, mu);
  Tensor ar = matmul(sigma_inv, r);
  return sum(mul(r, ar), 1);
}

namespace {

Tensor nll_impl(const Tensor& y, const Tensor& mu, const Tensor& phi,
                const Tensor& sigma_inv, bool shared_phi, bool full_logdet,
                const char* op) {
  check_traj_shapes(y, mu, sigma_inv, op);
  const std::size_t m = y.shape()[0];
  const auto slices = static_cast<double>(y.shape()[1]);
  for (std::size_t i = 0; i < m; ++i) {
    if (!(sigma_inv.at(i * m + i) > 0.0)) {
      throw DomainError(std::string(op) + ": sigma_inv diagonal must be positive");
    }
  }
  Tensor phiv = phi_vector(phi, m, op);
  Tensor c = agent_quad_contributions(y, mu, sigma_inv);

  Tensor data_term, log_phi_term;
  if (shared_phi) {
    Tensor shared = mean(phiv);
    data_term = div(sum(c), shared);
    log_phi_term = mul(log(shared), slices * static_cast<double>(m));
  } else {
    data_term = sum(div(c, phiv));
    log_phi_term = mul(sum(log(phiv)), slices);
  }
  Tensor logdet_term =
      full_logdet ? mul(logdet_spd(sigma_inv), slices)
                  : mul(sum(log(gather(sigma_inv, diag_positions(m)))), slices);
  return mul(sub(add(data_term, log_phi_term), logdet_term), 0.5);
}

}  // namespace

Tensor lap_cu_loss(const Tensor& y, const Tensor& mu, const Tensor& phi,
                   const Tensor& sigma_inv, bool shared_phi) {
  return nll_impl(y, mu, phi, sigma_inv, shared_phi, false, "lap_cu_loss");
}

Tensor full_nll(const Tensor& y, const Tensor& mu, const Tensor& phi,
                const Tensor& sigma_inv, bool shared_phi) {
  return nll_impl(y, mu, phi, sigma_inv, shared_phi, true, "full_nll");
}

Tensor autl(const std::vector<Tensor>& means, const Tensor& y,
            const std::vector<Tensor>& phi) {
  if (means.empty() || means.size() != phi.size()) {
    throw DimensionError("autl: means and phi must list the same K modes");
  }
  const std::size_t m = y.shape()[0];
  Tensor loss;
  for (std::size_t k = 0; k < means.size(); ++k) {
    Tensor de = row_norm(sub(means[k], y));  // l2 of each agent's horizon residual
    Tensor term = sum(abs(sub(phi_vector(phi[k], m, "autl"), de)));
    loss = k == 0 ? term : add(loss, term);
  }
  return loss;
}

LossBreakdown total_loss(const LossConfig& config, const nets::PredictiveOutput& out,
                         const Tensor& y) {
  config.validate();
  if (out.means.empty() || out.means.size() != out.phi.size() ||
      out.means.size() != out.sigma_inv.size()) {
    throw DimensionError("total_loss: inconsistent predictive output");
  }
  const std::size_t kmodes = out.means.size();
  const std::size_t m = y.shape()[0];

  LossBreakdown bd;
  bd.de.resize(kmodes * m);
  for (std::size_t k = 0; k < kmodes; ++k) {
    const auto& mv = out.means[k].values();
    const auto& yv = y.values();
    const std::size_t s = y.shape()[1];
    for (std::size_t agent = 0; agent < m; ++agent) {
      double ss = 0.0;
      for (std::size_t r = 0; r < s; ++r) {
        double d = mv[agent * s + r] - yv[agent * s + r];
        ss += d * d;
      }
      bd.de[k * m + agent] = std::sqrt(ss);
    }
  }

  // Winning mode: lowest total displacement, or lowest mean phi.
  std::size_t winner = 0;
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < kmodes; ++k) {
    double score = 0.0;
    if (config.wta == WtaMode::kClosestToGt) {
      for (std::size_t agent = 0; agent < m; ++agent) score += bd.de[k * m + agent];
    } else {
      for (double v : out.phi[k].values()) score += v;
    }
    if (score < best) {
      best = score;
      winner = k;
    }
  }
  bd.winner = winner;

  Tensor lap = config.use_full_nll
                   ? full_nll(y, out.means[winner], out.phi[winner], out.sigma_inv[winner],
                              config.shared_phi)
                   : lap_cu_loss(y, out.means[winner], out.phi[winner],
                                 out.sigma_inv[winner], config.shared_phi);
  Tensor aux = autl(out.means, y, out.phi);
  bd.total_tensor = add(lap, mul(aux, config.alpha));
  bd.lap_cu = lap.value();
  bd.autl = aux.value();
  bd.total = bd.total_tensor.value();
  bd.q_value = quad_form(y, out.means[winner], out.sigma_inv[winner]).value();
  return bd;
}

std::vector<double> recover_covariance(double phi, const std::vector<double>& sigma_inv,
                                       std::size_t m) {
  if (!(phi > 0.0)) throw DomainError("recover_covariance: phi must be positive");
  auto cov = linalg::spd_inverse(sigma_inv, m);
  for (double& v : cov) v *= phi;
  return cov;
}

PhiStarCheck phi_star_sanity(double g, std::size_t m) {
  if (!(g > 0.0)) throw DomainError("phi_star_sanity: g must be positive");
  const double md = static_cast<double>(m);
  auto logf = [&](double p) { return -0.5 * md * std::log(p) - g / p; };

  const double ref = 2.0 * g / md;
  PhiStarCheck check;

  // Log-spaced grid over six decades around the analytic stationary point.
  const int grid_n = 4000;
  double best_lf = -std::numeric_limits<double>::infinity();
  double lo = ref * 1e-3, hi = ref * 1e3;
  for (int i = 0; i <= grid_n; ++i) {
    double p = lo * std::pow(hi / lo, static_cast<double>(i) / grid_n);
    double v = logf(p);
    if (v > best_lf) {
      best_lf = v;
      check.grid_argmax = p;
    }
  }

  // Golden-section refinement around the grid argmax.
  double a = check.grid_argmax / 1.1, b = check.grid_argmax * 1.1;
  const double golden = (std::sqrt(5.0) - 1.0) / 2.0;
  double x1 = b - golden * (b - a), x2 = a + golden * (b - a);
  double f1 = logf(x1), f2 = logf(x2);
  for (int it = 0; it < 200 && (b - a) > 1e-12 * ref; ++it) {
    if (f1 < f2) {
      a = x1;
      x1 = x2;
      f1 = f2;
      x2 = a + golden * (b - a);
      f2 = logf(x2);
    } else {
      b = x2;
      x2 = x1;
      f2 = f1;
      x1 = b - golden * (b - a);
      f1 = logf(x1);
    }
  }
  check.argmax = 0.5 * (a + b);
  check.boundary_decay = logf(ref * 1e-12) < best_lf - 50.0 && logf(ref * 1e12) < best_lf - 10.0;
  check.grid_local_max =
      logf(check.argmax) > logf(check.argmax + 0.1) && logf(check.argmax) > logf(std::max(check.argmax - 0.1, 1e-12));
  return check;
}

}  // namespace culab::objectives
