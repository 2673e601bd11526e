#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "culab/datagen.hpp"
#include "culab/metrics.hpp"
#include "culab/nets.hpp"
#include "culab/objectives.hpp"

namespace culab::harness {

// ----- configuration ---------------------------------------------------------------

struct OptimConfig {
  double lr = 1e-3;
  std::size_t steps = 20000;
  std::size_t batch = 32;
  double clip = 5.0;
  std::size_t eval_every = 500;
  std::size_t trace_every = 50;
};

struct RunConfig {
  std::string run_id = "run";
  std::string train_path, val_path, test_path;
  nets::ModelConfig model;
  objectives::LossConfig loss;
  OptimConfig optim;
  std::uint64_t seed = 0;

  // Flat key-value text with [data] / [model] / [loss] / [optim] / [run]
  // sections; unknown keys are an error.
  static RunConfig from_file(const std::string& path);

  // Re-derives the model init seed from the run seed so that one --seed
  // switch changes initialization and batch order together.
  void apply_seed(std::uint64_t new_seed);

  // Canonical text of the effective configuration (hashed into reports).
  std::string echo() const;
};

// Parsed INI-style sections (exposed for the CLI's gen-data overrides).
using ConfigSections = std::map<std::string, std::map<std::string, std::string>>;
ConfigSections parse_config_text(const std::string& text, const std::string& origin);
ConfigSections parse_config_file(const std::string& path);

// ----- training -----------------------------------------------------------------------

struct TracePoint {
  std::size_t step = 0;
  double total = 0.0;
  double lap_cu = 0.0;
  double autl = 0.0;
};

struct EvalPoint {
  std::size_t step = 0;
  double metric = 0.0;  // validation selection metric (lower is better)
};

struct TrainResult {
  nets::Model final_model;
  nets::Model best_model;  // checkpoint with the best validation metric
  std::size_t best_step = 0;
  double best_metric = 0.0;
  std::vector<TracePoint> trace;
  std::vector<EvalPoint> evals;
  bool health_ok = true;  // smoothed loss never rose > 5% after step 500
  bool aborted = false;   // non-finite loss; best_model is the last good state
  std::string abort_reason;
};

// Mini-batch gradient descent on the winner-takes-all total loss.
// Validation metric: toy datasets use the Gaussian-KL proxy between the
// recovered and ground-truth covariances; scene datasets use FDE of the
// uncertainty-selected mode.
TrainResult train_loop(const RunConfig& config, const datagen::Dataset& train,
                       const datagen::Dataset& val);

// ----- evaluation ----------------------------------------------------------------------

// Full toy-problem evaluation: distribution-parameter errors plus the
// Monte-Carlo Laplace KL (kl_samples draws per instance, seeded).
metrics::ToyReport eval_toy(const nets::Model& model, const datagen::Dataset& data,
                            std::size_t kl_samples, std::uint64_t kl_seed);

// Cheap selection proxy used during training on toy data.
double toy_val_proxy(const nets::Model& model, const datagen::Dataset& data);

struct ForecastEval {
  metrics::ForecastReport report;   // averaged over instances
  metrics::CurveReport curve;       // stochasticity vs selected-mode phi
  double phi_calibration = 0.0;     // mean |phi* - DE*| per agent
  double random_selector_fde = 0.0; // FDE of a uniformly random per-agent selector
};

ForecastEval eval_forecast(const nets::Model& model, const datagen::Dataset& data,
                           std::uint64_t selector_seed);

double forecast_val_metric(const nets::Model& model, const datagen::Dataset& data);

// ----- reports -------------------------------------------------------------------------

struct ReportRow {
  std::string run_id;
  std::string split;
  std::string kind;  // "toy" or "scenes"
  std::string estimator;
  std::string interaction;
  double alpha = 0.0;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string data_hash;
  std::map<std::string, double> values;
};

extern const std::vector<std::string> kReportValueColumns;

std::string report_csv(const std::vector<ReportRow>& rows);
std::string report_json(const std::vector<ReportRow>& rows);
// Long-format (series, x, y) rows for plotting, e.g. loss traces and the
// stochasticity-uncertainty bins.
std::string plot_csv(const std::string& run_id, const TrainResult& train,
                     const metrics::CurveReport* curve);

std::string file_hash_hex(const std::string& path);
std::string text_hash_hex(const std::string& text);

// ----- one full cell: train, select, evaluate -------------------------------------------

struct CellResult {
  RunConfig config;  // effective values
  TrainResult train;
  std::vector<ReportRow> rows;                   // val + test rows
  std::optional<metrics::ToyReport> toy_test;
  std::optional<ForecastEval> forecast_test;
};

CellResult run_cell(const RunConfig& config, const datagen::Dataset& train,
                    const datagen::Dataset& val, const datagen::Dataset& test,
                    std::size_t toy_kl_samples = 10000);

}  // namespace culab::harness
