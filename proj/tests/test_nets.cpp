#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <numeric>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"
#include "culab/nets.hpp"
#include "culab/rng.hpp"
#include "culab/tensor.hpp"
#include "testing.hpp"

using namespace culab;
using namespace culab::nets;
using culab::testing::random_vector;

namespace {

ModelConfig small_config(EstimatorKind est = EstimatorKind::kPeCu) {
  ModelConfig c;
  c.hidden_width = 16;
  c.layers = 2;
  c.k = 2;
  c.m = 4;
  c.t_minus = 5;
  c.t_plus = 5;
  c.tau = 1e-3;
  c.estimator = est;
  c.init_seed = 17;
  return c;
}

Tensor random_past(Rng& rng, const ModelConfig& c) {
  return Tensor::from({c.m, 2 * c.t_minus}, random_vector(rng, c.m * 2 * c.t_minus, -2, 2));
}

// Permutes agent rows of an m x w row-major array.
std::vector<double> permute_rows(const std::vector<double>& v, std::size_t w,
                                 const std::vector<std::size_t>& perm) {
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < perm.size(); ++i) {
    std::copy(v.begin() + perm[i] * w, v.begin() + (perm[i] + 1) * w, out.begin() + i * w);
  }
  return out;
}

// P A P^T for row-major m x m.
std::vector<double> conjugate(const std::vector<double>& a, const std::vector<std::size_t>& perm) {
  const std::size_t m = perm.size();
  std::vector<double> out(m * m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) out[i * m + j] = a[perm[i] * m + perm[j]];
  return out;
}

Tensor& find_param(Model& model, const std::string& name) {
  for (std::size_t i = 0; i < model.param_names().size(); ++i) {
    if (model.param_names()[i] == name) return model.params()[i];
  }
  throw std::runtime_error("no such param: " + name);
}

double softplus_inverse(double y) { return std::log(std::expm1(y)); }

}  // namespace

TEST_CASE("interaction=none encoder is separable per agent") {
  auto cfg = small_config();
  Model model(cfg);
  Rng rng(1);
  Tensor past = random_past(rng, cfg);
  auto out = model.forward_one(past);

  // Zero agent 2's history; rows of other agents must be bit-identical.
  std::vector<double> zeroed = past.values();
  std::fill(zeroed.begin() + 2 * 10, zeroed.begin() + 3 * 10, 0.0);
  auto out2 = model.forward_one(Tensor::from(past.shape(), zeroed));
  for (std::size_t k = 0; k < cfg.k; ++k) {
    for (std::size_t agent = 0; agent < cfg.m; ++agent) {
      if (agent == 2) continue;
      for (std::size_t r = 0; r < 2 * cfg.t_plus; ++r) {
        CHECK(out.means[k].at(agent * 10 + r) == out2.means[k].at(agent * 10 + r));
      }
      CHECK(out.phi[k].at(agent) == out2.phi[k].at(agent));
    }
  }
}

TEST_CASE("pe-cu pipeline is permutation-equivariant") {
  auto cfg = small_config();
  cfg.interaction = Interaction::kAttention;
  Model model(cfg);
  Rng rng(2);
  std::vector<std::size_t> perm = {2, 0, 3, 1};
  for (int trial = 0; trial < 10; ++trial) {
    Tensor past = random_past(rng, cfg);
    Tensor permuted = Tensor::from(past.shape(), permute_rows(past.values(), 10, perm));
    auto base = model.forward_one(past);
    auto swapped = model.forward_one(permuted);
    for (std::size_t k = 0; k < cfg.k; ++k) {
      CHECK(culab::testing::max_abs_diff(swapped.means[k].values(),
                                         permute_rows(base.means[k].values(), 10, perm)) <
            1e-9);
      CHECK(culab::testing::max_abs_diff(swapped.phi[k].values(),
                                         permute_rows(base.phi[k].values(), 1, perm)) < 1e-9);
      CHECK(culab::testing::max_abs_diff(swapped.sigma_inv[k].values(),
                                         conjugate(base.sigma_inv[k].values(), perm)) < 1e-9);
    }
  }
}

TEST_CASE("single-agent attention reduces to the residual V path") {
  auto cfg = small_config();
  cfg.m = 1;
  cfg.interaction = Interaction::kAttention;
  Model with_att(cfg);
  auto cfg_plain = cfg;
  cfg_plain.interaction = Interaction::kNone;
  Model plain(cfg_plain);  // same init seed: shared names initialize identically

  Rng rng(3);
  Tensor past = Tensor::from({1, 10}, random_vector(rng, 10, -1, 1));
  Tensor e = plain.encode(past, 1);
  Tensor v = matmul(e, find_param(with_att, "att.wv"));
  Tensor expected = add(e, v);  // softmax over one agent is exactly 1
  Tensor got = with_att.encode(past, 1);
  CHECK(culab::testing::max_abs_diff(got.values(), expected.values()) < 1e-12);
}

TEST_CASE("phi outputs are strictly positive") {
  for (auto positivity : {Positivity::kSoftplus, Positivity::kExp}) {
    auto cfg = small_config();
    cfg.positivity = positivity;
    Model model(cfg);
    Rng rng(4);
    for (int trial = 0; trial < 20; ++trial) {
      auto out = model.forward_one(random_past(rng, cfg));
      for (const auto& phi : out.phi)
        for (double v : phi.values()) CHECK(v > 0.0);
    }
  }
}

TEST_CASE("pe-cu sigma-inverse: min eigenvalue >= tau") {
  auto cfg = small_config();
  Rng rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    ModelConfig c = cfg;
    c.init_seed = 1000 + trial;
    Model model(c);
    auto out = model.forward_one(random_past(rng, c));
    for (const auto& s : out.sigma_inv) {
      auto eig = linalg::jacobi_eigenvalues(s.values(), c.m);
      CHECK(eig.front() >= c.tau * (1.0 - 1e-9));
      CHECK(linalg::asymmetry(s.values(), c.m) == 0.0);
    }
  }
}

TEST_CASE("pe-cu with zero projection weights gives exactly tau * I") {
  auto cfg = small_config();
  Model model(cfg);
  auto zero_out = [&](const std::string& name) {
    auto& vals = find_param(model, name).mutable_values();
    std::fill(vals.begin(), vals.end(), 0.0);
  };
  zero_out("f.w2");
  zero_out("f.b2");
  Rng rng(6);
  auto out = model.forward_one(random_past(rng, cfg));
  for (const auto& s : out.sigma_inv) {
    for (std::size_t i = 0; i < cfg.m; ++i)
      for (std::size_t j = 0; j < cfg.m; ++j)
        CHECK(s.at(i * cfg.m + j) == (i == j ? cfg.tau : 0.0));
  }
}

TEST_CASE("cu-npe LDL assembly: L = I, D = diag(2,3)") {
  auto cfg = small_config(EstimatorKind::kCuNpe);
  cfg.m = 2;
  Model model(cfg);
  auto& w2 = find_param(model, "npe.w2").mutable_values();
  std::fill(w2.begin(), w2.end(), 0.0);
  auto& b2 = find_param(model, "npe.b2").mutable_values();
  b2[0] = 0.0;                                  // strictly-lower entry of L
  b2[1] = softplus_inverse(2.0 - 1e-8);         // D_00 (positivity floor is 1e-8)
  b2[2] = softplus_inverse(3.0 - 1e-8);
  Rng rng(7);
  auto out = model.forward_one(random_past(rng, cfg));
  const auto& s = out.sigma_inv[0].values();
  CHECK(s[0] == doctest::Approx(2.0).epsilon(1e-9));
  CHECK(s[1] == doctest::Approx(0.0));
  CHECK(s[2] == doctest::Approx(0.0));
  CHECK(s[3] == doctest::Approx(3.0).epsilon(1e-9));
}

TEST_CASE("cu-npe is positive definite but not permutation-equivariant") {
  auto cfg = small_config(EstimatorKind::kCuNpe);
  Rng rng(8);
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    ModelConfig c = cfg;
    c.init_seed = 2000 + trial;
    Model model(c);
    Tensor past = random_past(rng, c);
    auto out = model.forward_one(past);
    for (const auto& s : out.sigma_inv) {
      auto eig = linalg::jacobi_eigenvalues(s.values(), c.m);
      CHECK(eig.front() > 0.0);
    }
    std::vector<std::size_t> perm = {1, 2, 3, 0};
    auto swapped = model.forward_one(
        Tensor::from(past.shape(), permute_rows(past.values(), 10, perm)));
    worst = std::max(worst,
                     culab::testing::max_abs_diff(swapped.sigma_inv[0].values(),
                                                  conjugate(out.sigma_inv[0].values(), perm)));
  }
  CHECK(worst > 1e-3);  // the falsification harness must find violations
}

TEST_CASE("iu-only estimator is diagonal and positive") {
  auto cfg = small_config(EstimatorKind::kIuOnly);
  Model model(cfg);
  Rng rng(9);
  auto out = model.forward_one(random_past(rng, cfg));
  for (const auto& s : out.sigma_inv) {
    for (std::size_t i = 0; i < cfg.m; ++i)
      for (std::size_t j = 0; j < cfg.m; ++j) {
        if (i == j) {
          CHECK(s.at(i * cfg.m + j) > 0.0);
        } else {
          CHECK(s.at(i * cfg.m + j) == 0.0);  // bit-zero off-diagonals
        }
      }
  }
}

TEST_CASE("iu-only with constant head equals pe-cu with zero projection") {
  auto cfg = small_config(EstimatorKind::kIuOnly);
  Model iu(cfg);
  auto& w2 = find_param(iu, "iu.w2").mutable_values();
  std::fill(w2.begin(), w2.end(), 0.0);
  find_param(iu, "iu.b2").mutable_values()[0] = softplus_inverse(cfg.tau - 1e-8);

  Model pe(small_config(EstimatorKind::kPeCu));
  for (auto name : {"f.w2", "f.b2"}) {
    auto& vals = find_param(pe, name).mutable_values();
    std::fill(vals.begin(), vals.end(), 0.0);
  }
  Rng rng(10);
  Tensor past = random_past(rng, cfg);
  auto iu_out = iu.forward_one(past);
  auto pe_out = pe.forward_one(past);
  CHECK(culab::testing::max_abs_diff(iu_out.sigma_inv[0].values(),
                                     pe_out.sigma_inv[0].values()) < 1e-12);
}

TEST_CASE("select picks the lowest-phi mode per agent") {
  PredictiveOutput out;
  // K = 3, m = 1; phi 3, 1, 2 -> mode 1.
  for (double v : {3.0, 1.0, 2.0}) {
    out.phi.push_back(Tensor::from({1, 1}, {v}));
    out.means.push_back(Tensor::from({1, 2}, {v, v}));
    out.sigma_inv.push_back(Tensor::from({1, 1}, {1.0}));
  }
  auto sel = select(out);
  CHECK(sel.mode_per_agent[0] == 1);
  CHECK(sel.mean == std::vector<double>{1.0, 1.0});

  // All phi equal -> first mode wins.
  PredictiveOutput tie;
  for (int k = 0; k < 3; ++k) {
    tie.phi.push_back(Tensor::from({1, 1}, {5.0}));
    tie.means.push_back(Tensor::from({1, 2}, {double(k), double(k)}));
  }
  CHECK(select(tie).mode_per_agent[0] == 0);

  // Scaling phi by a positive constant cannot change the argmin.
  PredictiveOutput scaled;
  for (double v : {3.0, 1.0, 2.0}) {
    scaled.phi.push_back(Tensor::from({1, 1}, {10.0 * v}));
    scaled.means.push_back(Tensor::from({1, 2}, {v, v}));
  }
  CHECK(select(scaled).mode_per_agent[0] == 1);
}

TEST_CASE("initialization determinism") {
  Model a(small_config()), b(small_config());
  REQUIRE(a.params().size() == b.params().size());
  for (std::size_t i = 0; i < a.params().size(); ++i) {
    CHECK(a.params()[i].values() == b.params()[i].values());
  }
  auto cfg = small_config();
  cfg.init_seed = 18;
  Model c(cfg);
  CHECK(a.params()[0].values() != c.params()[0].values());
}

TEST_CASE("checkpoint round-trip is bit-exact") {
  auto cfg = small_config();
  cfg.interaction = Interaction::kAttention;
  Model model(cfg);
  auto path = (std::filesystem::temp_directory_path() / "culab_ckpt.txt").string();
  model.save_checkpoint(path);
  Model loaded = Model::load_checkpoint(path);
  CHECK(loaded.config().to_json() == cfg.to_json());
  REQUIRE(loaded.params().size() == model.params().size());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    CHECK(loaded.params()[i].values() == model.params()[i].values());
  }
  std::remove(path.c_str());
}

TEST_CASE("per-timestep phi variant") {
  auto cfg = small_config();
  cfg.per_timestep_phi = true;
  Model model(cfg);
  Rng rng(12);
  auto out = model.forward_one(random_past(rng, cfg));
  REQUIRE(out.phi_time.size() == cfg.k);
  CHECK(out.phi_time[0].shape() == Shape{cfg.m, cfg.t_plus});
  // Reported phi is the time-mean of the per-timestep head.
  for (std::size_t agent = 0; agent < cfg.m; ++agent) {
    double s = 0.0;
    for (std::size_t t = 0; t < cfg.t_plus; ++t) s += out.phi_time[0].at(agent * cfg.t_plus + t);
    CHECK(out.phi[0].at(agent) == doctest::Approx(s / cfg.t_plus).epsilon(1e-12));
  }
}

TEST_CASE("config validation") {
  auto cfg = small_config();
  cfg.tau = 0.0;
  CHECK_THROWS_AS(Model{cfg}, ConfigError);
  auto cfg2 = small_config();
  cfg2.k = 0;
  CHECK_THROWS_AS(Model{cfg2}, ConfigError);
}
