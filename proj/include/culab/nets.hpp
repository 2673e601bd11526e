#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "culab/tensor.hpp"

namespace culab::nets {

// The three interchangeable uncertainty estimators: the permutation-
// equivariant estimator, the square-root-free Cholesky baseline (not
// permutation-equivariant; that is the point of the baseline), and the
// diagonal-only baseline.
enum class EstimatorKind { kPeCu, kCuNpe, kIuOnly };
enum class Interaction { kNone, kAttention };
enum class Activation { kTanh, kRelu };
enum class Positivity { kSoftplus, kExp };

std::string to_string(EstimatorKind v);
std::string to_string(Interaction v);
std::string to_string(Activation v);
std::string to_string(Positivity v);
EstimatorKind estimator_from_string(const std::string& s);
Interaction interaction_from_string(const std::string& s);
Activation activation_from_string(const std::string& s);
Positivity positivity_from_string(const std::string& s);

struct ModelConfig {
  std::size_t hidden_width = 64;
  std::size_t layers = 3;  // encoder hidden layers
  std::size_t k = 1;       // prediction modes
  double tau = 1e-3;
  EstimatorKind estimator = EstimatorKind::kPeCu;
  Interaction interaction = Interaction::kNone;
  Activation activation = Activation::kTanh;
  Positivity positivity = Positivity::kSoftplus;
  std::uint64_t init_seed = 0;
  // Whether gradients from the uncertainty heads flow back into the
  // predicted means they consume (default) or are stopped.
  bool stop_grad_mu_input = false;
  // Phi head emits one value per timestep instead of one per agent; the
  // time-mean is what selection and the losses consume.
  bool per_timestep_phi = false;
  // Input/output extents, fixed by the dataset.
  std::size_t m = 4;
  std::size_t t_minus = 50;
  std::size_t t_plus = 50;

  void validate() const;
  std::string to_json() const;
  static ModelConfig from_json(const std::string& text);
};

// Per-instance model output. means[k] is m x 2T+, phi[k] is m x 1 strictly
// positive, sigma_inv[k] is the m x m agent-coupling precision estimate.
struct PredictiveOutput {
  std::vector<Tensor> means;
  std::vector<Tensor> phi;
  std::vector<Tensor> phi_time;  // K entries of m x T+ when per_timestep_phi
  std::vector<Tensor> sigma_inv;
};

// Uncertainty-based selection: per agent, the mode with the lowest phi
// (ties to the lowest index).
struct Selection {
  std::vector<std::size_t> mode_per_agent;  // m
  std::vector<double> mean;                 // m x 2T+ assembled from chosen modes
  std::vector<double> phi;                  // m, phi of the chosen mode
};

Selection select(const PredictiveOutput& out);

class Model {
 public:
  explicit Model(const ModelConfig& config);

  const ModelConfig& config() const { return config_; }
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& param_names() const { return names_; }

  // Latent features for stacked per-agent inputs ((batch*m) x 2T-). Rows of
  // the result track agent rows of the input.
  Tensor encode(const Tensor& stacked_past, std::size_t batch) const;

  std::vector<PredictiveOutput> forward_batch(const Tensor& stacked_past,
                                              std::size_t batch) const;
  PredictiveOutput forward_one(const Tensor& past) const;  // past is m x 2T-

  void save_checkpoint(const std::string& path) const;
  static Model load_checkpoint(const std::string& path);

 private:
  Tensor add_param(const std::string& name, Shape shape, std::size_t fan_in);
  Tensor positivity_map(const Tensor& t) const;

  ModelConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;

  // Parameter handles (views into params_).
  std::vector<Tensor> enc_w_, enc_b_;
  Tensor att_wq_, att_wk_, att_wv_;
  std::vector<Tensor> mu_w1_, mu_b1_, mu_w2_, mu_b2_;  // per mode
  Tensor phi_w1_, phi_b1_, phi_w2_, phi_b2_;
  Tensor f_w1_, f_b1_, f_w2_, f_b2_;        // pe-cu projection
  Tensor npe_w1_, npe_b1_, npe_w2_, npe_b2_;
  Tensor iu_w1_, iu_b1_, iu_w2_, iu_b2_;
};

}  // namespace culab::nets
