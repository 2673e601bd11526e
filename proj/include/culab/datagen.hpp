#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace culab::datagen {

// One scene. Trajectory arrays are agent-major: value at [agent * 2T + r]
// with r = 2*t + d (d = 0 for x, 1 for y). The ground-truth fields are
// present exactly when the instance is synthetic with known parameters.
struct Instance {
  std::string id;
  std::vector<double> past;    // m * 2*t_minus
  std::vector<double> future;  // m * 2*t_plus
  std::optional<std::vector<double>> gt_mean;   // m * 2*t_plus
  std::optional<std::vector<double>> gt_sigma;  // m * m
  std::optional<double> gt_lambda;
};

struct DatasetMeta {
  std::string kind;  // "toy" or "scenes"
  std::size_t m = 0;
  std::size_t t_minus = 0;
  std::size_t t_plus = 0;
};

struct Dataset {
  DatasetMeta meta;
  std::vector<Instance> instances;
};

// Throws if the instance extents disagree with the meta extents.
void validate_instance(const DatasetMeta& meta, const Instance& inst, std::size_t record_index);

// ----- synthetic quaternary-Laplace trajectories ------------------------------

struct SyntheticSpec {
  std::size_t m = 4;           // agent count
  std::size_t timestamps = 50;
  std::size_t dims = 2;
  // Gamma scale of the generating Laplace; empty selects a seed-derived
  // correlation-normalized matrix with eigenvalue spread [0.3, 2].
  std::vector<double> sigma_gt;
  double lambda_gt = 1.0;
  std::size_t train_count = 36000;
  std::size_t val_count = 7000;
  std::size_t test_count = 7000;
  std::uint64_t seed = 0;
  // Straight-line motion: positions uniform in [-pos_range, pos_range]^2,
  // per-step speeds uniform in [speed_min, speed_max].
  double pos_range = 10.0;
  double speed_min = 0.1;
  double speed_max = 1.0;
  // One exponential draw per (timestamp, dim) slice (default), or one per
  // instance -- the other reading of the generation recipe.
  bool phi_per_instance = false;
};

std::vector<double> default_sigma_gt(std::size_t m, std::uint64_t seed);

struct ToyData {
  Dataset train, val, test;
  std::vector<double> sigma_gt;  // the matrix actually used
};

ToyData gen_toy(const SyntheticSpec& spec);

// ----- desk-scale multi-modal scenes -------------------------------------------

struct SceneSpec {
  std::size_t agents = 4;
  std::size_t archetypes = 3;  // straight / turn-left / turn-right / stop
  double coupling = 0.7;       // follower adopts the leader archetype w.p. coupling
  double noise_scale = 0.3;
  // Fraction of scenes whose past carries no archetype hint, so the future
  // mode is genuinely ambiguous there.
  double ambiguous_fraction = 0.5;
  std::size_t t_minus = 10;
  std::size_t t_plus = 15;
  std::size_t train_count = 4000;
  std::size_t val_count = 500;
  std::size_t test_count = 1000;
  std::uint64_t seed = 0;
};

struct ScenesData {
  Dataset train, val, test;
  // Archetype index per [scene][agent], per split; not serialized.
  std::vector<std::vector<int>> train_archetypes, val_archetypes, test_archetypes;
};

ScenesData gen_scenes(const SceneSpec& spec);

// ----- serialization --------------------------------------------------------------

// Line-delimited text: a JSON header carrying the extents, then one record
// line per instance. Round-trips are bit-exact (shortest round-trip float
// formatting).
void save(const Dataset& dataset, const std::string& path);
Dataset load(const std::string& path);

}  // namespace culab::datagen
