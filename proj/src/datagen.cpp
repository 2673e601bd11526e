#include "culab/datagen.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>

#include <json.hpp>

#include "culab/errors.hpp"
#include "culab/linalg.hpp"
#include "culab/rng.hpp"
#include "culab/stats.hpp"

namespace culab::datagen {

namespace {

constexpr std::uint64_t kSigmaStream = 0x51C3;
constexpr std::uint64_t kTrainStream = 1, kValStream = 2, kTestStream = 3;

std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

}  // namespace

void validate_instance(const DatasetMeta& meta, const Instance& inst,
                       std::size_t record_index) {
  auto fail = [&](const std::string& what) {
    throw DimensionError("record " + std::to_string(record_index) + " (" + inst.id +
                         "): " + what);
  };
  if (inst.past.size() != meta.m * 2 * meta.t_minus) fail("past extent mismatch");
  if (inst.future.size() != meta.m * 2 * meta.t_plus) fail("future extent mismatch");
  if (inst.gt_mean && inst.gt_mean->size() != meta.m * 2 * meta.t_plus)
    fail("gt_mean extent mismatch");
  if (inst.gt_sigma && inst.gt_sigma->size() != meta.m * meta.m)
    fail("gt_sigma extent mismatch");
  if (inst.gt_lambda && !(*inst.gt_lambda > 0.0)) fail("gt_lambda must be positive");
}

std::vector<double> default_sigma_gt(std::size_t m, std::uint64_t seed) {
  Rng rng = Rng(seed).split(kSigmaStream);
  // Random orthogonal basis by Gram-Schmidt on a Gaussian matrix.
  std::vector<std::vector<double>> q(m, std::vector<double>(m));
  for (auto& row : q)
    for (auto& v : row) v = rng.next_normal();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < i; ++j) {
      double dot = 0.0;
      for (std::size_t k = 0; k < m; ++k) dot += q[i][k] * q[j][k];
      for (std::size_t k = 0; k < m; ++k) q[i][k] -= dot * q[j][k];
    }
    double norm = 0.0;
    for (double v : q[i]) norm += v * v;
    norm = std::sqrt(norm);
    for (double& v : q[i]) v /= norm;
  }
  std::vector<double> eig(m);
  for (auto& e : eig) e = 0.3 + 1.7 * rng.next_double();
  std::vector<double> a(m * m, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < m; ++k) s += q[k][i] * eig[k] * q[k][j];
      a[i * m + j] = s;
    }
  // Normalize to unit diagonal so the matrix reads as a correlation matrix.
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < m; ++j) {
      if (i != j) a[i * m + j] /= std::sqrt(a[i * m + i] * a[j * m + j]);
    }
  for (std::size_t i = 0; i < m; ++i) a[i * m + i] = 1.0;
  linalg::require_spd(a, m);
  return a;
}

namespace {

Instance make_toy_instance(const SyntheticSpec& spec, const std::vector<double>& chol,
                           const std::string& id, Rng rng) {
  const std::size_t m = spec.m;
  const std::size_t rows = spec.timestamps * spec.dims;
  Instance inst;
  inst.id = id;

  // Uniform straight-line ground-truth trajectory per agent.
  std::vector<double> mu(m * rows);
  for (std::size_t agent = 0; agent < m; ++agent) {
    double px = -spec.pos_range + 2.0 * spec.pos_range * rng.next_double();
    double py = -spec.pos_range + 2.0 * spec.pos_range * rng.next_double();
    double theta = 2.0 * std::numbers::pi * rng.next_double();
    double speed = spec.speed_min + (spec.speed_max - spec.speed_min) * rng.next_double();
    double vx = speed * std::cos(theta), vy = speed * std::sin(theta);
    for (std::size_t t = 0; t < spec.timestamps; ++t) {
      mu[agent * rows + 2 * t] = px + static_cast<double>(t) * vx;
      mu[agent * rows + 2 * t + 1] = py + static_cast<double>(t) * vy;
    }
  }

  // Per (timestamp, dim) slice: one exponential draw and one correlated
  // Gaussian draw across agents; x = mu + sqrt(Phi) * g.
  std::vector<double> x(m * rows);
  std::vector<double> z(m), g(m);
  double phi_instance = spec.phi_per_instance
                            ? -spec.lambda_gt * std::log(rng.next_open())
                            : 0.0;
  for (std::size_t r = 0; r < rows; ++r) {
    double phi = spec.phi_per_instance ? phi_instance
                                       : -spec.lambda_gt * std::log(rng.next_open());
    double sphi = std::sqrt(phi);
    for (std::size_t k = 0; k < m; ++k) z[k] = rng.next_normal();
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t k = 0; k <= i; ++k) s += chol[i * m + k] * z[k];
      g[i] = s;
      x[i * rows + r] = mu[i * rows + r] + sphi * s;
    }
  }

  inst.past = x;
  inst.future = std::move(x);  // density estimation: the target is the observed data
  inst.gt_mean = std::move(mu);
  return inst;
}

}  // namespace

ToyData gen_toy(const SyntheticSpec& spec) {
  if (spec.m == 0 || spec.timestamps == 0 || spec.dims != 2) {
    throw ConfigError("gen_toy: m and timestamps must be positive, dims must be 2");
  }
  if (spec.train_count == 0 || spec.val_count == 0 || spec.test_count == 0) {
    throw ConfigError("gen_toy: split counts must be positive");
  }
  if (!(spec.lambda_gt > 0.0)) throw DomainError("gen_toy: lambda_gt must be positive");

  ToyData out;
  out.sigma_gt =
      spec.sigma_gt.empty() ? default_sigma_gt(spec.m, spec.seed) : spec.sigma_gt;
  linalg::require_spd(out.sigma_gt, spec.m);
  auto chol = linalg::cholesky(out.sigma_gt, spec.m);

  DatasetMeta meta{"toy", spec.m, spec.timestamps, spec.timestamps};
  Rng root(spec.seed);

  struct Split {
    Dataset* ds;
    std::uint64_t stream;
    std::size_t count;
    const char* tag;
  };
  out.train.meta = out.val.meta = out.test.meta = meta;
  for (Split split : {Split{&out.train, kTrainStream, spec.train_count, "train"},
                      Split{&out.val, kValStream, spec.val_count, "val"},
                      Split{&out.test, kTestStream, spec.test_count, "test"}}) {
    Rng branch = root.split(split.stream);
    split.ds->instances.reserve(split.count);
    for (std::size_t i = 0; i < split.count; ++i) {
      std::string id = "toy-" + std::string(split.tag) + "-" + std::to_string(i);
      Instance inst = make_toy_instance(spec, chol, id, branch.split(i));
      inst.gt_sigma = out.sigma_gt;
      inst.gt_lambda = spec.lambda_gt;
      split.ds->instances.push_back(std::move(inst));
    }
  }
  return out;
}

// ----- scenes ----------------------------------------------------------------------

namespace {

// Archetype palette; a spec with archetypes = A uses the first A entries.
enum Archetype { kStraight = 0, kTurnLeft = 1, kTurnRight = 2, kStop = 3 };

struct AgentMotion {
  double px, py, heading, speed;
};

void roll_out(std::vector<double>& dst, std::size_t offset, AgentMotion state, int archetype,
              std::size_t steps, std::size_t horizon) {
  for (std::size_t t = 0; t < steps; ++t) {
    double frac = static_cast<double>(t + 1) / static_cast<double>(horizon);
    double heading = state.heading;
    double speed = state.speed;
    switch (archetype) {
      case kTurnLeft:
        heading += frac * std::numbers::pi / 2.0;
        break;
      case kTurnRight:
        heading -= frac * std::numbers::pi / 2.0;
        break;
      case kStop:
        speed *= std::max(0.0, 1.0 - 2.0 * frac);
        break;
      default:
        break;
    }
    state.px += speed * std::cos(heading);
    state.py += speed * std::sin(heading);
    dst[offset + 2 * t] = state.px;
    dst[offset + 2 * t + 1] = state.py;
  }
}

}  // namespace

ScenesData gen_scenes(const SceneSpec& spec) {
  if (spec.archetypes < 2) throw ConfigError("gen_scenes: archetypes must be >= 2");
  if (spec.archetypes > 4) throw ConfigError("gen_scenes: at most 4 archetypes supported");
  if (spec.agents == 0 || spec.t_minus == 0 || spec.t_plus == 0) {
    throw ConfigError("gen_scenes: agents and horizons must be positive");
  }
  if (spec.coupling < 0.0 || spec.coupling > 1.0) {
    throw ConfigError("gen_scenes: coupling must lie in [0, 1]");
  }

  ScenesData out;
  DatasetMeta meta{"scenes", spec.agents, spec.t_minus, spec.t_plus};
  out.train.meta = out.val.meta = out.test.meta = meta;
  Rng root(spec.seed);

  struct Split {
    Dataset* ds;
    std::vector<std::vector<int>>* arch;
    std::uint64_t stream;
    std::size_t count;
    const char* tag;
  };
  for (Split split :
       {Split{&out.train, &out.train_archetypes, kTrainStream, spec.train_count, "train"},
        Split{&out.val, &out.val_archetypes, kValStream, spec.val_count, "val"},
        Split{&out.test, &out.test_archetypes, kTestStream, spec.test_count, "test"}}) {
    Rng branch = root.split(split.stream);
    split.ds->instances.reserve(split.count);
    for (std::size_t s = 0; s < split.count; ++s) {
      Rng rng = branch.split(s);
      const std::size_t m = spec.agents;
      const std::size_t pr = 2 * spec.t_minus, fr = 2 * spec.t_plus;
      Instance inst;
      inst.id = "scene-" + std::string(split.tag) + "-" + std::to_string(s);
      inst.past.resize(m * pr);
      inst.future.resize(m * fr);
      std::vector<double> clean(m * fr);

      int leader = static_cast<int>(rng.next_u64() % spec.archetypes);
      std::vector<int> arch(m);
      for (std::size_t a = 0; a < m; ++a) {
        if (a == 0) {
          arch[a] = leader;
        } else {
          arch[a] = rng.next_double() < spec.coupling
                        ? leader
                        : static_cast<int>(rng.next_u64() % spec.archetypes);
        }
      }
      bool ambiguous = rng.next_double() < spec.ambiguous_fraction;
      double scene_noise = spec.noise_scale * (0.5 + rng.next_double());

      for (std::size_t a = 0; a < m; ++a) {
        AgentMotion motion;
        motion.px = -10.0 + 20.0 * rng.next_double();
        motion.py = -10.0 + 20.0 * rng.next_double();
        motion.heading = 2.0 * std::numbers::pi * rng.next_double();
        motion.speed = 0.5 + rng.next_double();

        // Past: straight approach ending at the current pose, with a mild
        // archetype hint in unambiguous scenes (heading drift toward the
        // upcoming turn, deceleration before a stop).
        double hint_turn = 0.0, hint_brake = 0.0;
        if (!ambiguous) {
          if (arch[a] == kTurnLeft) hint_turn = 0.25;
          if (arch[a] == kTurnRight) hint_turn = -0.25;
          if (arch[a] == kStop) hint_brake = 0.3;
        }
        for (std::size_t t = 0; t < spec.t_minus; ++t) {
          double back = static_cast<double>(spec.t_minus - t);
          double frac = static_cast<double>(t) / static_cast<double>(spec.t_minus);
          double heading = motion.heading - hint_turn * (1.0 - frac);
          double speed = motion.speed * (1.0 + hint_brake * (back / spec.t_minus - 1.0));
          inst.past[a * pr + 2 * t] =
              motion.px - back * speed * std::cos(heading) + 0.05 * rng.next_normal();
          inst.past[a * pr + 2 * t + 1] =
              motion.py - back * speed * std::sin(heading) + 0.05 * rng.next_normal();
        }

        roll_out(clean, a * fr, motion, arch[a], spec.t_plus, spec.t_plus);
        for (std::size_t r = 0; r < fr; ++r) {
          inst.future[a * fr + r] = clean[a * fr + r] + scene_noise * rng.next_normal();
        }
      }
      inst.gt_mean = std::move(clean);
      split.arch->push_back(std::move(arch));
      split.ds->instances.push_back(std::move(inst));
    }
  }
  return out;
}

// ----- serialization ----------------------------------------------------------------

void save(const Dataset& dataset, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("save: cannot open " + path + " for writing");

  nlohmann::json header = {
      {"version", 1},
      {"kind", dataset.meta.kind},
      {"m", dataset.meta.m},
      {"t_minus", dataset.meta.t_minus},
      {"t_plus", dataset.meta.t_plus},
      {"count", dataset.instances.size()},
  };
  out << header.dump() << "\n";

  std::size_t index = 0;
  for (const Instance& inst : dataset.instances) {
    validate_instance(dataset.meta, inst, index);
    if (inst.id.find_first_of(" \t\n") != std::string::npos) {
      throw ParseError("save: instance id contains whitespace: " + inst.id);
    }
    std::string line = inst.id;
    auto append = [&line](const std::vector<double>& v) {
      for (double x : v) {
        line += ' ';
        line += format_double(x);
      }
    };
    append(inst.past);
    append(inst.future);
    if (inst.gt_mean) {
      line += " gt:m";
      append(*inst.gt_mean);
    }
    if (inst.gt_sigma) {
      line += " gt:s";
      append(*inst.gt_sigma);
    }
    if (inst.gt_lambda) {
      line += " gt:l ";
      line += format_double(*inst.gt_lambda);
    }
    out << line << "\n";
    ++index;
  }
  if (!out) throw ParseError("save: write failure on " + path);
}

namespace {

class RecordReader {
 public:
  RecordReader(const std::string& line, std::size_t record_index)
      : line_(line), pos_(0), record_(record_index) {}

  std::string next_token() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    if (pos_ >= line_.size()) {
      throw ParseError("record " + std::to_string(record_) + ": unexpected end of line");
    }
    std::size_t start = pos_;
    while (pos_ < line_.size() && line_[pos_] != ' ') ++pos_;
    return line_.substr(start, pos_ - start);
  }

  bool at_end() {
    while (pos_ < line_.size() && line_[pos_] == ' ') ++pos_;
    return pos_ >= line_.size();
  }

  double next_double() {
    std::string tok = next_token();
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tok.data(), tok.data() + tok.size(), v);
    if (ec != std::errc() || ptr != tok.data() + tok.size()) {
      throw ParseError("record " + std::to_string(record_) + ": bad number '" + tok + "'");
    }
    return v;
  }

  std::vector<double> next_array(std::size_t count, const char* what) {
    std::vector<double> v(count);
    for (std::size_t i = 0; i < count; ++i) {
      if (at_end()) {
        throw ParseError("record " + std::to_string(record_) + ": truncated " + what +
                         " (expected " + std::to_string(count) + " values, found " +
                         std::to_string(i) + ")");
      }
      v[i] = next_double();
    }
    return v;
  }

 private:
  const std::string& line_;
  std::size_t pos_;
  std::size_t record_;
};

}  // namespace

Dataset load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("load: cannot open " + path);

  std::string header_line;
  if (!std::getline(in, header_line)) throw ParseError("load: missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(header_line);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load: bad header: ") + e.what());
  }
  if (!header.contains("version") || header["version"] != 1) {
    throw ParseError("load: unsupported or missing version");
  }

  Dataset ds;
  std::size_t count = 0;
  try {
    ds.meta.kind = header.at("kind").get<std::string>();
    ds.meta.m = header.at("m").get<std::size_t>();
    ds.meta.t_minus = header.at("t_minus").get<std::size_t>();
    ds.meta.t_plus = header.at("t_plus").get<std::size_t>();
    count = header.at("count").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("load: header field error: ") + e.what());
  }

  const std::size_t past_len = ds.meta.m * 2 * ds.meta.t_minus;
  const std::size_t future_len = ds.meta.m * 2 * ds.meta.t_plus;
  ds.instances.reserve(count);

  std::string line;
  for (std::size_t rec = 0; rec < count; ++rec) {
    if (!std::getline(in, line)) {
      throw ParseError("load: file truncated at record " + std::to_string(rec) + " of " +
                       std::to_string(count));
    }
    RecordReader reader(line, rec);
    Instance inst;
    inst.id = reader.next_token();
    inst.past = reader.next_array(past_len, "past");
    inst.future = reader.next_array(future_len, "future");
    while (!reader.at_end()) {
      std::string marker = reader.next_token();
      if (marker == "gt:m") {
        inst.gt_mean = reader.next_array(future_len, "gt_mean");
      } else if (marker == "gt:s") {
        inst.gt_sigma = reader.next_array(ds.meta.m * ds.meta.m, "gt_sigma");
      } else if (marker == "gt:l") {
        inst.gt_lambda = reader.next_double();
      } else {
        throw ParseError("record " + std::to_string(rec) + ": unknown marker '" + marker +
                         "'");
      }
    }
    validate_instance(ds.meta, inst, rec);
    ds.instances.push_back(std::move(inst));
  }
  return ds;
}

}  // namespace culab::datagen
