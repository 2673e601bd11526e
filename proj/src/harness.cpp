#include "culab/harness.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"
#include "culab/rng.hpp"
#include "culab/stats.hpp"
#include "culab/textio.hpp"

namespace culab::harness {

// ----- config parsing -----------------------------------------------------------

ConfigSections parse_config_text(const std::string& text, const std::string& origin) {
  ConfigSections sections;
  std::istringstream in(text);
  std::string line, section;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos) continue;
    auto last = line.find_last_not_of(" \t\r");
    std::string trimmed = line.substr(first, last - first + 1);
    if (trimmed.front() == '[') {
      if (trimmed.back() != ']') {
        throw ParseError(origin + ":" + std::to_string(lineno) + ": unterminated section");
      }
      section = trimmed.substr(1, trimmed.size() - 2);
      sections.try_emplace(section);
      continue;
    }
    auto eq = trimmed.find('=');
    if (eq == std::string::npos) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    }
    auto strip = [](std::string s) {
      auto b = s.find_first_not_of(" \t");
      auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    std::string key = strip(trimmed.substr(0, eq));
    std::string value = strip(trimmed.substr(eq + 1));
    if (key.empty()) {
      throw ParseError(origin + ":" + std::to_string(lineno) + ": empty key");
    }
    sections[section][key] = value;
  }
  return sections;
}

ConfigSections parse_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_config_text(text, path);
}

namespace {

class SectionReader {
 public:
  SectionReader(const ConfigSections& sections, const std::string& name)
      : name_(name) {
    auto it = sections.find(name);
    if (it != sections.end()) entries_ = it->second;
  }

  std::optional<std::string> get(const std::string& key) {
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    seen_.push_back(key);
    return it->second;
  }

  template <typename T, typename Fn>
  void apply(const std::string& key, T& target, Fn parse) {
    if (auto v = get(key)) target = parse(*v);
  }

  void check_consumed() const {
    for (const auto& [key, value] : entries_) {
      if (std::find(seen_.begin(), seen_.end(), key) == seen_.end()) {
        throw ConfigError("unknown key '" + key + "' in section [" + name_ + "]");
      }
    }
  }

 private:
  std::string name_;
  std::map<std::string, std::string> entries_;
  std::vector<std::string> seen_;
};

std::size_t parse_size(const std::string& v) {
  return static_cast<std::size_t>(std::stoull(v));
}
std::uint64_t parse_u64(const std::string& v) { return std::stoull(v); }
double parse_real(const std::string& v) { return std::stod(v); }
bool parse_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("expected boolean, got '" + v + "'");
}

}  // namespace

RunConfig RunConfig::from_file(const std::string& path) {
  auto sections = parse_config_file(path);
  RunConfig cfg;

  SectionReader data(sections, "data");
  data.apply("train", cfg.train_path, [](const std::string& v) { return v; });
  data.apply("val", cfg.val_path, [](const std::string& v) { return v; });
  data.apply("test", cfg.test_path, [](const std::string& v) { return v; });
  data.check_consumed();

  SectionReader model(sections, "model");
  model.apply("hidden_width", cfg.model.hidden_width, parse_size);
  model.apply("layers", cfg.model.layers, parse_size);
  model.apply("k", cfg.model.k, parse_size);
  model.apply("tau", cfg.model.tau, parse_real);
  model.apply("estimator", cfg.model.estimator, nets::estimator_from_string);
  model.apply("interaction", cfg.model.interaction, nets::interaction_from_string);
  model.apply("activation", cfg.model.activation, nets::activation_from_string);
  model.apply("positivity", cfg.model.positivity, nets::positivity_from_string);
  model.apply("stop_grad_mu_input", cfg.model.stop_grad_mu_input, parse_bool);
  model.apply("per_timestep_phi", cfg.model.per_timestep_phi, parse_bool);
  model.check_consumed();

  SectionReader loss(sections, "loss");
  loss.apply("alpha", cfg.loss.alpha, parse_real);
  loss.apply("wta", cfg.loss.wta, objectives::wta_from_string);
  loss.apply("use_full_nll", cfg.loss.use_full_nll, parse_bool);
  loss.apply("shared_phi", cfg.loss.shared_phi, parse_bool);
  loss.check_consumed();

  SectionReader optim(sections, "optim");
  optim.apply("lr", cfg.optim.lr, parse_real);
  optim.apply("steps", cfg.optim.steps, parse_size);
  optim.apply("batch", cfg.optim.batch, parse_size);
  optim.apply("clip", cfg.optim.clip, parse_real);
  optim.apply("eval_every", cfg.optim.eval_every, parse_size);
  optim.apply("trace_every", cfg.optim.trace_every, parse_size);
  optim.check_consumed();

  SectionReader run(sections, "run");
  run.apply("id", cfg.run_id, [](const std::string& v) { return v; });
  run.apply("seed", cfg.seed, parse_u64);
  run.check_consumed();

  cfg.apply_seed(cfg.seed);
  return cfg;
}

void RunConfig::apply_seed(std::uint64_t new_seed) {
  seed = new_seed;
  model.init_seed = textio::fnv1a("init", new_seed ^ 0x9E3779B97F4A7C15ULL);
}

std::string RunConfig::echo() const {
  std::ostringstream out;
  out << "[data]\ntrain = " << train_path << "\nval = " << val_path
      << "\ntest = " << test_path << "\n[model]\n"
      << model.to_json() << "\n[loss]\nalpha = " << textio::format_double(loss.alpha)
      << "\nwta = " << objectives::to_string(loss.wta)
      << "\nuse_full_nll = " << (loss.use_full_nll ? "true" : "false")
      << "\nshared_phi = " << (loss.shared_phi ? "true" : "false")
      << "\n[optim]\nlr = " << textio::format_double(optim.lr) << "\nsteps = " << optim.steps
      << "\nbatch = " << optim.batch << "\nclip = " << textio::format_double(optim.clip)
      << "\neval_every = " << optim.eval_every << "\n[run]\nid = " << run_id
      << "\nseed = " << seed << "\n";
  return out.str();
}

// ----- dataset <-> tensors --------------------------------------------------------

namespace {

Tensor stack_past(const datagen::Dataset& data, const std::vector<std::size_t>& idx) {
  const std::size_t m = data.meta.m;
  const std::size_t w = 2 * data.meta.t_minus;
  std::vector<double> flat;
  flat.reserve(idx.size() * m * w);
  for (std::size_t i : idx) {
    const auto& past = data.instances[i].past;
    flat.insert(flat.end(), past.begin(), past.end());
  }
  return Tensor::from({idx.size() * m, w}, std::move(flat));
}

Tensor future_tensor(const datagen::Dataset& data, std::size_t i) {
  const std::size_t m = data.meta.m;
  const std::size_t w = 2 * data.meta.t_plus;
  return Tensor::from({m, w}, data.instances[i].future);
}

double mean_of(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

// Recovered covariance (phi-mean * inverse precision) of mode k.
std::vector<double> recovered_covariance(const nets::PredictiveOutput& out, std::size_t k,
                                         std::size_t m) {
  double phi = mean_of(out.phi[k].values());
  return objectives::recover_covariance(phi, out.sigma_inv[k].values(), m);
}

}  // namespace

// ----- evaluation -------------------------------------------------------------------

double toy_val_proxy(const nets::Model& model, const datagen::Dataset& data) {
  const std::size_t m = data.meta.m;
  double acc = 0.0;
  std::size_t used = 0;
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const auto& inst = data.instances[i];
    if (!inst.gt_sigma || !inst.gt_lambda) {
      throw ContractError("toy_val_proxy: instance lacks ground-truth parameters");
    }
    auto out = model.forward_one(Tensor::from({m, 2 * data.meta.t_minus}, inst.past));
    auto est_cov = recovered_covariance(out, 0, m);
    std::vector<double> gt_cov = *inst.gt_sigma;
    for (double& v : gt_cov) v *= *inst.gt_lambda;
    stats::MvnParams pg(std::vector<double>(m, 0.0), gt_cov);
    stats::MvnParams pe(std::vector<double>(m, 0.0), est_cov);
    acc += metrics::kl_gaussian(pg, pe);
    ++used;
  }
  return acc / static_cast<double>(used);
}

metrics::ToyReport eval_toy(const nets::Model& model, const datagen::Dataset& data,
                            std::size_t kl_samples, std::uint64_t kl_seed) {
  const std::size_t m = data.meta.m;
  const std::size_t horizon = 2 * data.meta.t_plus;
  auto table = stats::MvLaplaceDensity::make_table(m);

  metrics::ToyReport rep;
  double kl_var_acc = 0.0;
  Rng root(kl_seed);
  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const auto& inst = data.instances[i];
    if (!inst.gt_mean || !inst.gt_sigma || !inst.gt_lambda) {
      throw ContractError("eval_toy: instance lacks ground-truth parameters");
    }
    auto out = model.forward_one(Tensor::from({m, 2 * data.meta.t_minus}, inst.past));

    double phi = mean_of(out.phi[0].values());
    auto gamma_hat = linalg::spd_inverse(out.sigma_inv[0].values(), m);
    auto est_cov = gamma_hat;
    for (double& v : est_cov) v *= phi;

    std::vector<double> gt_cov = *inst.gt_sigma;
    for (double& v : gt_cov) v *= *inst.gt_lambda;

    auto comp = metrics::toy_metrics(out.means[0].values(), est_cov, *inst.gt_mean, gt_cov,
                                     m, horizon);
    rep.l2_mu += comp.l2_mu;
    rep.l1_sigma += comp.l1_sigma;
    rep.l1_sigma_inv += comp.l1_sigma_inv;

    // KL between the centered noise distributions: ground truth (Gamma =
    // sigma_gt, lambda_gt) against the estimate (Gamma-hat, phi-mean).
    stats::MvLaplaceParams pg(std::vector<double>(m, 0.0), *inst.gt_sigma, *inst.gt_lambda);
    stats::MvLaplaceParams pe(std::vector<double>(m, 0.0), gamma_hat, phi);
    stats::MvLaplaceDensity dg(pg, table), de(pe, table);
    Rng rng = root.split(i);
    auto est = metrics::kl_laplace_mc(dg, de, kl_samples, rng);
    rep.kl += est.value;
    kl_var_acc += est.stderr * est.stderr;
  }
  const auto n = static_cast<double>(data.instances.size());
  rep.l2_mu /= n;
  rep.l1_sigma /= n;
  rep.l1_sigma_inv /= n;
  rep.kl /= n;
  rep.kl_stderr = std::sqrt(kl_var_acc) / n;
  rep.kl_floor_flagged = rep.kl < -0.01;
  return rep;
}

ForecastEval eval_forecast(const nets::Model& model, const datagen::Dataset& data,
                           std::uint64_t selector_seed) {
  const std::size_t m = data.meta.m;
  const std::size_t horizon = 2 * data.meta.t_plus;
  const std::size_t kmodes = model.config().k;

  ForecastEval ev;
  std::vector<double> sto_values, unc_values;
  Rng selector_rng(selector_seed);
  std::size_t count = 0;

  for (std::size_t i = 0; i < data.instances.size(); ++i) {
    const auto& inst = data.instances[i];
    auto out = model.forward_one(Tensor::from({m, 2 * data.meta.t_minus}, inst.past));
    auto sel = nets::select(out);

    std::vector<std::vector<double>> modes(kmodes);
    for (std::size_t k = 0; k < kmodes; ++k) modes[k] = out.means[k].values();

    // Mode probabilities: softmax of the negated per-mode mean phi.
    std::vector<double> probs(kmodes);
    double zmax = -1e300;
    for (std::size_t k = 0; k < kmodes; ++k) {
      probs[k] = -mean_of(out.phi[k].values());
      zmax = std::max(zmax, probs[k]);
    }
    double zsum = 0.0;
    for (auto& p : probs) {
      p = std::exp(p - zmax);
      zsum += p;
    }
    for (auto& p : probs) p /= zsum;

    auto rep = metrics::forecast_metrics(modes, sel.mean, inst.future, m, horizon, probs);
    ev.report.ade += rep.ade;
    ev.report.fde += rep.fde;
    ev.report.ade1 += rep.ade1;
    ev.report.fde1 += rep.fde1;
    ev.report.adek += rep.adek;
    ev.report.fdek += rep.fdek;
    ev.report.brier_fdek += rep.brier_fdek;
    ev.report.k_used = rep.k_used;

    // Uniformly random per-agent mode selection baseline.
    std::vector<double> random_mean(m * horizon);
    for (std::size_t agent = 0; agent < m; ++agent) {
      std::size_t k = selector_rng.next_u64() % kmodes;
      std::copy(modes[k].begin() + agent * horizon, modes[k].begin() + (agent + 1) * horizon,
                random_mean.begin() + agent * horizon);
    }
    auto random_rep =
        metrics::forecast_metrics(modes, random_mean, inst.future, m, horizon, std::nullopt);
    ev.random_selector_fde += random_rep.fde1;

    // Calibration of the selected mode's phi against its displacement error.
    for (std::size_t agent = 0; agent < m; ++agent) {
      double ss = 0.0;
      for (std::size_t r = 0; r < horizon; ++r) {
        double d = sel.mean[agent * horizon + r] - inst.future[agent * horizon + r];
        ss += d * d;
      }
      ev.phi_calibration += std::abs(sel.phi[agent] - std::sqrt(ss));
    }

    if (kmodes >= 2) {
      // Scene stochasticity: per-agent across-mode variance, agent-mean.
      double sto = 0.0;
      for (std::size_t agent = 0; agent < m; ++agent) {
        std::vector<std::vector<double>> agent_modes(kmodes,
                                                     std::vector<double>(horizon));
        for (std::size_t k = 0; k < kmodes; ++k)
          std::copy(modes[k].begin() + agent * horizon,
                    modes[k].begin() + (agent + 1) * horizon, agent_modes[k].begin());
        sto += metrics::stochasticity(agent_modes);
      }
      sto_values.push_back(sto / static_cast<double>(m));
      unc_values.push_back(mean_of(sel.phi));
    }
    ++count;
  }

  const auto n = static_cast<double>(count);
  ev.report.ade /= n;
  ev.report.fde /= n;
  ev.report.ade1 /= n;
  ev.report.fde1 /= n;
  ev.report.adek /= n;
  ev.report.fdek /= n;
  ev.report.brier_fdek /= n;
  ev.random_selector_fde /= n;
  ev.phi_calibration /= n * static_cast<double>(m);
  if (sto_values.size() >= 2) {
    ev.curve = metrics::stochasticity_uncertainty_curve(sto_values, unc_values);
  }
  return ev;
}

double forecast_val_metric(const nets::Model& model, const datagen::Dataset& data) {
  const std::size_t m = data.meta.m;
  const std::size_t horizon = 2 * data.meta.t_plus;
  double acc = 0.0;
  for (const auto& inst : data.instances) {
    auto out = model.forward_one(Tensor::from({m, 2 * data.meta.t_minus}, inst.past));
    auto sel = nets::select(out);
    double fde = 0.0;
    for (std::size_t agent = 0; agent < m; ++agent) {
      double dx = sel.mean[agent * horizon + horizon - 2] -
                  inst.future[agent * horizon + horizon - 2];
      double dy = sel.mean[agent * horizon + horizon - 1] -
                  inst.future[agent * horizon + horizon - 1];
      fde += std::sqrt(dx * dx + dy * dy);
    }
    acc += fde / static_cast<double>(m);
  }
  return acc / static_cast<double>(data.instances.size());
}

// ----- training ---------------------------------------------------------------------

TrainResult train_loop(const RunConfig& config, const datagen::Dataset& train,
                       const datagen::Dataset& val) {
  if (train.instances.empty() || val.instances.empty()) {
    throw ContractError("train_loop: empty dataset");
  }
  if (config.optim.batch == 0) throw ConfigError("train_loop: batch must be positive");
  const bool toy = train.meta.kind == "toy";

  nets::ModelConfig mc = config.model;
  mc.m = train.meta.m;
  mc.t_minus = train.meta.t_minus;
  mc.t_plus = train.meta.t_plus;
  nets::Model model(mc);

  // Deep parameter copy; Model handles otherwise share parameter storage.
  auto snapshot = [&](const nets::Model& src) {
    nets::Model copy(mc);
    for (std::size_t i = 0; i < src.params().size(); ++i) {
      copy.params()[i].mutable_values() = src.params()[i].values();
    }
    return copy;
  };

  TrainResult result{snapshot(model), snapshot(model)};

  auto eval_metric = [&](const nets::Model& mdl) {
    return toy ? toy_val_proxy(mdl, val) : forecast_val_metric(mdl, val);
  };
  result.best_metric = eval_metric(model);
  result.best_step = 0;
  result.evals.push_back({0, result.best_metric});

  Rng shuffle_rng = Rng(config.seed).split(textio::fnv1a("shuffle"));
  std::vector<std::size_t> order(train.instances.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();  // force an initial shuffle

  GradientDescent opt{config.optim.lr,
                      config.optim.clip > 0.0 ? std::optional<double>(config.optim.clip)
                                              : std::nullopt};
  const std::size_t batch = std::min(config.optim.batch, train.instances.size());

  auto snapshot = [&](const nets::Model& src) {
    nets::Model copy(mc);
    for (std::size_t i = 0; i < src.params().size(); ++i) {
      copy.params()[i].mutable_values() = src.params()[i].values();
    }
    return copy;
  };

  for (std::size_t step = 1; step <= config.optim.steps; ++step) {
    std::vector<std::size_t> idx(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      if (cursor >= order.size()) {
        // Fisher-Yates reshuffle per epoch.
        for (std::size_t i = order.size(); i-- > 1;) {
          std::size_t j = shuffle_rng.next_u64() % (i + 1);
          std::swap(order[i], order[j]);
        }
        cursor = 0;
      }
      idx[b] = order[cursor++];
    }

    Tensor stacked = stack_past(train, idx);
    auto outs = model.forward_batch(stacked, batch);
    Tensor loss_sum;
    double lap_acc = 0.0, autl_acc = 0.0;
    for (std::size_t b = 0; b < batch; ++b) {
      auto bd = objectives::total_loss(config.loss, outs[b], future_tensor(train, idx[b]));
      lap_acc += bd.lap_cu;
      autl_acc += bd.autl;
      loss_sum = b == 0 ? bd.total_tensor : add(loss_sum, bd.total_tensor);
    }
    Tensor loss = mul(loss_sum, 1.0 / static_cast<double>(batch));
    double loss_value = loss.value();

    if (!std::isfinite(loss_value)) {
      result.aborted = true;
      result.abort_reason = "non-finite loss at step " + std::to_string(step);
      result.final_model = snapshot(model);
      return result;
    }

    zero_grads(model.params());
    backward(loss);
    opt.step(model.params());

    if (step % config.optim.trace_every == 0 || step == config.optim.steps) {
      result.trace.push_back({step, loss_value, lap_acc / static_cast<double>(batch),
                              autl_acc / static_cast<double>(batch)});
    }
    if (step % config.optim.eval_every == 0 || step == config.optim.steps) {
      double metric = eval_metric(model);
      result.evals.push_back({step, metric});
      if (metric < result.best_metric) {
        result.best_metric = metric;
        result.best_step = step;
        result.best_model = snapshot(model);
      }
    }
  }
  result.final_model = snapshot(model);

  // Health check: 100-point moving average of the traced loss should not
  // rise by more than 5% after step 500.
  const std::size_t window = std::max<std::size_t>(1, 100 / config.optim.trace_every);
  double best_avg = 1e300;
  for (std::size_t i = 0; i + window <= result.trace.size(); ++i) {
    if (result.trace[i + window - 1].step < 500) continue;
    double avg = 0.0;
    for (std::size_t j = i; j < i + window; ++j) avg += result.trace[j].total;
    avg /= static_cast<double>(window);
    double scale = std::max({std::abs(best_avg), std::abs(avg), 1.0});
    if (avg > best_avg + 0.05 * scale) result.health_ok = false;
    best_avg = std::min(best_avg, avg);
  }
  return result;
}

// ----- reports -------------------------------------------------------------------------

const std::vector<std::string> kReportValueColumns = {
    "l2_mu",      "l1_sigma",   "l1_sigma_inv", "kl",         "kl_stderr",
    "ade",        "fde",        "ade1",         "fde1",       "adek",
    "fdek",       "brier_fdek", "spearman",     "phi_calibration",
    "random_fde", "final_loss", "best_step",    "best_val_metric", "health_ok"};

std::string report_csv(const std::vector<ReportRow>& rows) {
  std::ostringstream out;
  out << "run_id,split,kind,estimator,interaction,alpha,seed,config_hash,data_hash";
  for (const auto& c : kReportValueColumns) out << ',' << c;
  out << "\n";
  for (const auto& row : rows) {
    out << row.run_id << ',' << row.split << ',' << row.kind << ',' << row.estimator << ','
        << row.interaction << ',' << textio::format_double(row.alpha) << ',' << row.seed
        << ',' << row.config_hash << ',' << row.data_hash;
    for (const auto& c : kReportValueColumns) {
      out << ',';
      auto it = row.values.find(c);
      if (it != row.values.end()) out << textio::format_double(it->second);
    }
    out << "\n";
  }
  return out.str();
}

std::string report_json(const std::vector<ReportRow>& rows) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& row : rows) {
    nlohmann::json j = {
        {"run_id", row.run_id},       {"split", row.split},
        {"kind", row.kind},           {"estimator", row.estimator},
        {"interaction", row.interaction}, {"alpha", row.alpha},
        {"seed", row.seed},           {"config_hash", row.config_hash},
        {"data_hash", row.data_hash},
    };
    for (const auto& [k, v] : row.values) j["values"][k] = v;
    arr.push_back(std::move(j));
  }
  return arr.dump(2) + "\n";
}

std::string plot_csv(const std::string& run_id, const TrainResult& train,
                     const metrics::CurveReport* curve) {
  std::ostringstream out;
  out << "run_id,series,x,y\n";
  for (const auto& p : train.trace) {
    out << run_id << ",loss_total," << p.step << ',' << textio::format_double(p.total)
        << "\n";
    out << run_id << ",loss_lap_cu," << p.step << ',' << textio::format_double(p.lap_cu)
        << "\n";
    out << run_id << ",loss_autl," << p.step << ',' << textio::format_double(p.autl) << "\n";
  }
  for (const auto& p : train.evals) {
    out << run_id << ",val_metric," << p.step << ',' << textio::format_double(p.metric)
        << "\n";
  }
  if (curve) {
    for (const auto& bin : curve->bins) {
      out << run_id << ",stochasticity_uncertainty,"
          << textio::format_double(bin.stochasticity_mean) << ','
          << textio::format_double(bin.uncertainty_mean) << "\n";
    }
  }
  return out.str();
}

std::string text_hash_hex(const std::string& text) {
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(textio::fnv1a(text)));
  return std::string(buf);
}

std::string file_hash_hex(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("file_hash_hex: cannot open " + path);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return text_hash_hex(bytes);
}

// ----- full cell -------------------------------------------------------------------------

CellResult run_cell(const RunConfig& config, const datagen::Dataset& train,
                    const datagen::Dataset& val, const datagen::Dataset& test,
                    std::size_t toy_kl_samples) {
  CellResult cell{config, train_loop(config, train, val)};
  const bool toy = train.meta.kind == "toy";
  const std::string config_hash = text_hash_hex(config.echo());

  auto base_row = [&](const std::string& split) {
    ReportRow row;
    row.run_id = config.run_id;
    row.split = split;
    row.kind = train.meta.kind;
    row.estimator = nets::to_string(config.model.estimator);
    row.interaction = nets::to_string(config.model.interaction);
    row.alpha = config.loss.alpha;
    row.seed = config.seed;
    row.config_hash = config_hash;
    row.values["best_step"] = static_cast<double>(cell.train.best_step);
    row.values["best_val_metric"] = cell.train.best_metric;
    row.values["health_ok"] = cell.train.health_ok ? 1.0 : 0.0;
    if (!cell.train.trace.empty()) {
      row.values["final_loss"] = cell.train.trace.back().total;
    }
    return row;
  };

  const nets::Model& best = cell.train.best_model;
  if (toy) {
    auto test_rep = eval_toy(best, test, toy_kl_samples, config.seed ^ 0x7E57);
    cell.toy_test = test_rep;
    ReportRow row = base_row("test");
    row.values["l2_mu"] = test_rep.l2_mu;
    row.values["l1_sigma"] = test_rep.l1_sigma;
    row.values["l1_sigma_inv"] = test_rep.l1_sigma_inv;
    row.values["kl"] = test_rep.kl;
    row.values["kl_stderr"] = test_rep.kl_stderr;
    cell.rows.push_back(std::move(row));
  } else {
    auto test_rep = eval_forecast(best, test, config.seed ^ 0x5E1EC7);
    cell.forecast_test = test_rep;
    ReportRow row = base_row("test");
    row.values["ade"] = test_rep.report.ade;
    row.values["fde"] = test_rep.report.fde;
    row.values["ade1"] = test_rep.report.ade1;
    row.values["fde1"] = test_rep.report.fde1;
    row.values["adek"] = test_rep.report.adek;
    row.values["fdek"] = test_rep.report.fdek;
    row.values["brier_fdek"] = test_rep.report.brier_fdek;
    row.values["spearman"] = test_rep.curve.spearman;
    row.values["phi_calibration"] = test_rep.phi_calibration;
    row.values["random_fde"] = test_rep.random_selector_fde;
    cell.rows.push_back(std::move(row));
  }
  return cell;
}

}  // namespace culab::harness
