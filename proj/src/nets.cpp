#include "culab/nets.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "culab/errors.hpp"
#include "culab/rng.hpp"
#include "culab/textio.hpp"

namespace culab::nets {

namespace {

// Keeps the positivity maps strictly positive even where softplus/exp
// underflow to zero in double precision.
constexpr double kPositivityFloor = 1e-8;

}  // namespace

std::string to_string(EstimatorKind v) {
  switch (v) {
    case EstimatorKind::kPeCu: return "pe-cu";
    case EstimatorKind::kCuNpe: return "cu-npe";
    case EstimatorKind::kIuOnly: return "iu-only";
  }
  throw ContractError("bad EstimatorKind");
}
std::string to_string(Interaction v) {
  return v == Interaction::kNone ? "none" : "attention";
}
std::string to_string(Activation v) { return v == Activation::kTanh ? "tanh" : "relu"; }
std::string to_string(Positivity v) {
  return v == Positivity::kSoftplus ? "softplus" : "exp";
}

EstimatorKind estimator_from_string(const std::string& s) {
  if (s == "pe-cu") return EstimatorKind::kPeCu;
  if (s == "cu-npe") return EstimatorKind::kCuNpe;
  if (s == "iu-only") return EstimatorKind::kIuOnly;
  throw ConfigError("unknown estimator kind: " + s);
}
Interaction interaction_from_string(const std::string& s) {
  if (s == "none") return Interaction::kNone;
  if (s == "attention") return Interaction::kAttention;
  throw ConfigError("unknown interaction: " + s);
}
Activation activation_from_string(const std::string& s) {
  if (s == "tanh") return Activation::kTanh;
  if (s == "relu") return Activation::kRelu;
  throw ConfigError("unknown activation: " + s);
}
Positivity positivity_from_string(const std::string& s) {
  if (s == "softplus") return Positivity::kSoftplus;
  if (s == "exp") return Positivity::kExp;
  throw ConfigError("unknown positivity map: " + s);
}

void ModelConfig::validate() const {
  if (!(tau > 0.0)) throw ConfigError("ModelConfig: tau must be positive");
  if (k < 1) throw ConfigError("ModelConfig: K must be >= 1");
  if (hidden_width == 0 || layers == 0) {
    throw ConfigError("ModelConfig: hidden_width and layers must be positive");
  }
  if (m == 0 || t_minus == 0 || t_plus == 0) {
    throw ConfigError("ModelConfig: extents must be positive");
  }
}

std::string ModelConfig::to_json() const {
  nlohmann::json j = {
      {"hidden_width", hidden_width},
      {"layers", layers},
      {"k", k},
      {"tau", tau},
      {"estimator", to_string(estimator)},
      {"interaction", to_string(interaction)},
      {"activation", to_string(activation)},
      {"positivity", to_string(positivity)},
      {"init_seed", init_seed},
      {"stop_grad_mu_input", stop_grad_mu_input},
      {"per_timestep_phi", per_timestep_phi},
      {"m", m},
      {"t_minus", t_minus},
      {"t_plus", t_plus},
  };
  return j.dump();
}

ModelConfig ModelConfig::from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ModelConfig: bad json: ") + e.what());
  }
  ModelConfig c;
  try {
    c.hidden_width = j.at("hidden_width").get<std::size_t>();
    c.layers = j.at("layers").get<std::size_t>();
    c.k = j.at("k").get<std::size_t>();
    c.tau = j.at("tau").get<double>();
    c.estimator = estimator_from_string(j.at("estimator").get<std::string>());
    c.interaction = interaction_from_string(j.at("interaction").get<std::string>());
    c.activation = activation_from_string(j.at("activation").get<std::string>());
    c.positivity = positivity_from_string(j.at("positivity").get<std::string>());
    c.init_seed = j.at("init_seed").get<std::uint64_t>();
    c.stop_grad_mu_input = j.at("stop_grad_mu_input").get<bool>();
    c.per_timestep_phi = j.at("per_timestep_phi").get<bool>();
    c.m = j.at("m").get<std::size_t>();
    c.t_minus = j.at("t_minus").get<std::size_t>();
    c.t_plus = j.at("t_plus").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("ModelConfig: missing/typed field: ") + e.what());
  }
  c.validate();
  return c;
}

// ----- model -------------------------------------------------------------------

Tensor Model::add_param(const std::string& name, Shape shape, std::size_t fan_in) {
  Rng rng = Rng(config_.init_seed).split(textio::fnv1a(name));
  double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::vector<double> data(shape_size(shape));
  for (auto& v : data) v = bound * (2.0 * rng.next_double() - 1.0);
  Tensor t = Tensor::param(std::move(shape), std::move(data));
  params_.push_back(t);
  names_.push_back(name);
  return t;
}

Model::Model(const ModelConfig& config) : config_(config) {
  config_.validate();
  const std::size_t h = config_.hidden_width;
  const std::size_t in = 2 * config_.t_minus;
  const std::size_t out = 2 * config_.t_plus;
  const std::size_t m = config_.m;

  for (std::size_t l = 0; l < config_.layers; ++l) {
    std::size_t fan = l == 0 ? in : h;
    enc_w_.push_back(add_param("enc.w" + std::to_string(l), {fan, h}, fan));
    enc_b_.push_back(add_param("enc.b" + std::to_string(l), {h}, fan));
  }
  if (config_.interaction == Interaction::kAttention) {
    att_wq_ = add_param("att.wq", {h, h}, h);
    att_wk_ = add_param("att.wk", {h, h}, h);
    att_wv_ = add_param("att.wv", {h, h}, h);
  }
  for (std::size_t k = 0; k < config_.k; ++k) {
    std::string p = "mu." + std::to_string(k) + ".";
    mu_w1_.push_back(add_param(p + "w1", {h, h}, h));
    mu_b1_.push_back(add_param(p + "b1", {h}, h));
    mu_w2_.push_back(add_param(p + "w2", {h, out}, h));
    mu_b2_.push_back(add_param(p + "b2", {out}, h));
  }
  const std::size_t zin = h + out;  // per-agent feature + per-agent mode mean
  const std::size_t phi_out = config_.per_timestep_phi ? config_.t_plus : 1;
  phi_w1_ = add_param("phi.w1", {zin, h}, zin);
  phi_b1_ = add_param("phi.b1", {h}, zin);
  phi_w2_ = add_param("phi.w2", {h, phi_out}, h);
  phi_b2_ = add_param("phi.b2", {phi_out}, h);

  switch (config_.estimator) {
    case EstimatorKind::kPeCu:
      f_w1_ = add_param("f.w1", {zin, h}, zin);
      f_b1_ = add_param("f.b1", {h}, zin);
      f_w2_ = add_param("f.w2", {h, h}, h);
      f_b2_ = add_param("f.b2", {h}, h);
      break;
    case EstimatorKind::kCuNpe: {
      const std::size_t flat_in = m * zin;
      const std::size_t head_out = m * (m - 1) / 2 + m;
      npe_w1_ = add_param("npe.w1", {flat_in, h}, flat_in);
      npe_b1_ = add_param("npe.b1", {h}, flat_in);
      npe_w2_ = add_param("npe.w2", {h, head_out}, h);
      npe_b2_ = add_param("npe.b2", {head_out}, h);
      break;
    }
    case EstimatorKind::kIuOnly:
      iu_w1_ = add_param("iu.w1", {zin, h}, zin);
      iu_b1_ = add_param("iu.b1", {h}, zin);
      iu_w2_ = add_param("iu.w2", {h, 1}, h);
      iu_b2_ = add_param("iu.b2", {1}, h);
      break;
  }
}

Tensor Model::positivity_map(const Tensor& t) const {
  Tensor mapped = config_.positivity == Positivity::kSoftplus ? softplus(t) : exp(t);
  return add(mapped, kPositivityFloor);
}

namespace {

Tensor activate(Activation a, const Tensor& t) {
  return a == Activation::kTanh ? tanh(t) : relu(t);
}

}  // namespace

Tensor Model::encode(const Tensor& stacked_past, std::size_t batch) const {
  if (stacked_past.rank() != 2 || stacked_past.shape()[0] != batch * config_.m ||
      stacked_past.shape()[1] != 2 * config_.t_minus) {
    throw DimensionError("encode: expected (batch*m) x 2T- input");
  }
  Tensor hcur = stacked_past;
  for (std::size_t l = 0; l < enc_w_.size(); ++l) {
    hcur = activate(config_.activation, add_row_bias(matmul(hcur, enc_w_[l]), enc_b_[l]));
  }
  if (config_.interaction == Interaction::kAttention) {
    const std::size_t m = config_.m;
    const double scale = 1.0 / std::sqrt(static_cast<double>(config_.hidden_width));
    std::vector<Tensor> rows;
    rows.reserve(batch);
    for (std::size_t b = 0; b < batch; ++b) {
      Tensor e = slice_rows(hcur, b * m, m);
      Tensor q = matmul(e, att_wq_);
      Tensor kk = matmul(e, att_wk_);
      Tensor v = matmul(e, att_wv_);
      Tensor scores = mul(matmul(q, transpose(kk)), scale);
      Tensor attn = softmax_rows(scores);
      rows.push_back(add(e, matmul(attn, v)));  // residual path
    }
    hcur = batch == 1 ? rows.front() : concat_rows(rows);
  }
  return hcur;
}

std::vector<PredictiveOutput> Model::forward_batch(const Tensor& stacked_past,
                                                   std::size_t batch) const {
  const std::size_t m = config_.m;
  const std::size_t h = config_.hidden_width;
  const std::size_t out = 2 * config_.t_plus;
  Tensor feat = encode(stacked_past, batch);

  std::vector<PredictiveOutput> result(batch);
  for (auto& r : result) {
    r.means.reserve(config_.k);
    r.phi.reserve(config_.k);
    r.sigma_inv.reserve(config_.k);
  }

  // Constant tau * I reused across instances and modes.
  std::vector<double> tau_eye(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) tau_eye[i * m + i] = config_.tau;
  Tensor tau_i = Tensor::from({m, m}, tau_eye);

  std::vector<std::size_t> lower_positions, diag_positions;
  if (config_.estimator == EstimatorKind::kCuNpe) {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < i; ++j) lower_positions.push_back(i * m + j);
  }
  for (std::size_t i = 0; i < m; ++i) diag_positions.push_back(i * m + i);
  std::vector<double> eye(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i) eye[i * m + i] = 1.0;
  Tensor unit_i = Tensor::from({m, m}, eye);

  for (std::size_t k = 0; k < config_.k; ++k) {
    Tensor mu = add_row_bias(
        matmul(activate(config_.activation,
                        add_row_bias(matmul(feat, mu_w1_[k]), mu_b1_[k])),
               mu_w2_[k]),
        mu_b2_[k]);  // (batch*m) x 2T+

    Tensor mu_for_heads = config_.stop_grad_mu_input ? mu.detach() : mu;
    Tensor z = concat_cols(feat, mu_for_heads);

    Tensor phi_raw = add_row_bias(
        matmul(activate(config_.activation, add_row_bias(matmul(z, phi_w1_), phi_b1_)),
               phi_w2_),
        phi_b2_);
    Tensor phi_pos = positivity_map(phi_raw);  // (batch*m) x (1 or T+)

    Tensor fproj;
    if (config_.estimator == EstimatorKind::kPeCu) {
      fproj = add_row_bias(
          matmul(activate(config_.activation, add_row_bias(matmul(z, f_w1_), f_b1_)),
                 f_w2_),
          f_b2_);  // (batch*m) x h
    }
    Tensor iu_pos;
    if (config_.estimator == EstimatorKind::kIuOnly) {
      Tensor raw = add_row_bias(
          matmul(activate(config_.activation, add_row_bias(matmul(z, iu_w1_), iu_b1_)),
                 iu_w2_),
          iu_b2_);
      iu_pos = positivity_map(raw);  // (batch*m) x 1
    }

    for (std::size_t b = 0; b < batch; ++b) {
      PredictiveOutput& po = result[b];
      po.means.push_back(slice_rows(mu, b * m, m));

      Tensor phi_b = slice_rows(phi_pos, b * m, m);
      if (config_.per_timestep_phi) {
        po.phi_time.push_back(phi_b);
        po.phi.push_back(reshape(mean(phi_b, 1), {m, 1}));
      } else {
        po.phi.push_back(phi_b);
      }

      switch (config_.estimator) {
        case EstimatorKind::kPeCu: {
          Tensor fb = slice_rows(fproj, b * m, m);
          po.sigma_inv.push_back(add(matmul(fb, transpose(fb)), tau_i));
          break;
        }
        case EstimatorKind::kCuNpe: {
          Tensor zb = reshape(slice_rows(z, b * m, m), {1, m * (h + out)});
          Tensor row = add_row_bias(
              matmul(activate(config_.activation,
                              add_row_bias(matmul(zb, npe_w1_), npe_b1_)),
                     npe_w2_),
              npe_b2_);  // 1 x (m(m-1)/2 + m)
          const std::size_t nl = m * (m - 1) / 2;
          std::vector<std::size_t> lidx(nl), didx(m);
          for (std::size_t i = 0; i < nl; ++i) lidx[i] = i;
          for (std::size_t i = 0; i < m; ++i) didx[i] = nl + i;
          Tensor lmat = nl > 0
                            ? add(scatter(gather(row, lidx), lower_positions, {m, m}), unit_i)
                            : unit_i;
          Tensor dvals = positivity_map(gather(row, didx));
          Tensor dmat = scatter(dvals, diag_positions, {m, m});
          po.sigma_inv.push_back(matmul(matmul(lmat, dmat), transpose(lmat)));
          break;
        }
        case EstimatorKind::kIuOnly: {
          Tensor vb = reshape(slice_rows(iu_pos, b * m, m), {m});
          po.sigma_inv.push_back(scatter(vb, diag_positions, {m, m}));
          break;
        }
      }
    }
  }
  return result;
}

PredictiveOutput Model::forward_one(const Tensor& past) const {
  return forward_batch(past, 1).front();
}

Selection select(const PredictiveOutput& out) {
  if (out.phi.empty()) throw ContractError("select: empty predictive output");
  const std::size_t kmodes = out.phi.size();
  const std::size_t m = out.phi.front().shape()[0];
  const std::size_t horizon = out.means.front().shape()[1];
  Selection sel;
  sel.mode_per_agent.resize(m);
  sel.mean.resize(m * horizon);
  sel.phi.resize(m);
  for (std::size_t agent = 0; agent < m; ++agent) {
    std::size_t best = 0;
    double best_phi = out.phi[0].at(agent);
    for (std::size_t k = 1; k < kmodes; ++k) {
      double v = out.phi[k].at(agent);
      if (v < best_phi) {  // strict: ties keep the lowest mode index
        best_phi = v;
        best = k;
      }
    }
    sel.mode_per_agent[agent] = best;
    sel.phi[agent] = best_phi;
    const auto& mv = out.means[best].values();
    for (std::size_t r = 0; r < horizon; ++r) sel.mean[agent * horizon + r] = mv[agent * horizon + r];
  }
  return sel;
}

// ----- checkpoints ---------------------------------------------------------------

void Model::save_checkpoint(const std::string& path) const {
  std::ofstream outf(path, std::ios::binary);
  if (!outf) throw ParseError("save_checkpoint: cannot open " + path);
  outf << config_.to_json() << "\n";
  for (std::size_t i = 0; i < params_.size(); ++i) {
    outf << names_[i] << ' ' << params_[i].size();
    for (double v : params_[i].values()) outf << ' ' << textio::format_double(v);
    outf << "\n";
  }
  if (!outf) throw ParseError("save_checkpoint: write failure on " + path);
}

Model Model::load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("load_checkpoint: cannot open " + path);
  std::string header;
  if (!std::getline(in, header)) throw ParseError("load_checkpoint: missing header");
  Model model(ModelConfig::from_json(header));

  std::string line;
  std::size_t index = 0;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (index >= model.params_.size()) {
      throw ParseError("load_checkpoint: more arrays than parameters");
    }
    std::istringstream ss(line);
    std::string name;
    std::size_t count = 0;
    ss >> name >> count;
    if (name != model.names_[index]) {
      throw ParseError("load_checkpoint: expected parameter '" + model.names_[index] +
                       "', found '" + name + "'");
    }
    if (count != model.params_[index].size()) {
      throw ParseError("load_checkpoint: size mismatch for " + name);
    }
    auto& data = model.params_[index].mutable_values();
    std::string tok;
    for (std::size_t i = 0; i < count; ++i) {
      if (!(ss >> tok)) throw ParseError("load_checkpoint: truncated array for " + name);
      data[i] = textio::parse_double(tok, "checkpoint " + name);
    }
    ++index;
  }
  if (index != model.params_.size()) {
    throw ParseError("load_checkpoint: missing parameter arrays");
  }
  return model;
}

}  // namespace culab::nets
