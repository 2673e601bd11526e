// cu-lab: command-line front end for the collaborative-uncertainty
// regression laboratory. Subcommands: gen-data, train, eval, ablate, report.
// Exit codes: 0 ok, 1 user/config error, 2 numeric failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "culab/datagen.hpp"
#include "culab/errors.hpp"
#include "culab/harness.hpp"
#include "culab/metrics.hpp"
#include "culab/nets.hpp"
#include "culab/textio.hpp"

namespace fs = std::filesystem;
using namespace culab;

namespace {

void write_text(const fs::path& path, const std::string& text) {
  fs::create_directories(path.parent_path().empty() ? "." : path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot open for writing: " + path.string());
  out << text;
  if (!out) throw ConfigError("write failure: " + path.string());
}

std::string self_code_hash() {
  std::error_code ec;
  auto exe = fs::read_symlink("/proc/self/exe", ec);
  if (ec) return "unknown";
  try {
    return harness::file_hash_hex(exe.string());
  } catch (...) {
    return "unknown";
  }
}

// ----- gen-data --------------------------------------------------------------------

struct GenDataArgs {
  std::string preset;
  std::string out_dir;
  std::uint64_t seed = 0;
  std::size_t train_count = 0, val_count = 0, test_count = 0;  // 0 = preset default
};

int cmd_gen_data(const GenDataArgs& args) {
  fs::create_directories(args.out_dir);
  nlohmann::json manifest = {{"preset", args.preset}, {"seed", args.seed}};

  auto write_split = [&](const datagen::Dataset& ds, const char* name) {
    fs::path p = fs::path(args.out_dir) / (std::string(name) + ".ds");
    datagen::save(ds, p.string());
    manifest["files"][name] = {{"path", p.string()},
                               {"hash", harness::file_hash_hex(p.string())},
                               {"count", ds.instances.size()}};
  };

  if (args.preset == "toy" || args.preset == "toy-small") {
    datagen::SyntheticSpec spec;
    spec.seed = args.seed;
    if (args.preset == "toy-small") {
      spec.train_count = 3600;
      spec.val_count = 700;
      spec.test_count = 700;
    }
    if (args.train_count) spec.train_count = args.train_count;
    if (args.val_count) spec.val_count = args.val_count;
    if (args.test_count) spec.test_count = args.test_count;
    auto data = datagen::gen_toy(spec);
    write_split(data.train, "train");
    write_split(data.val, "val");
    write_split(data.test, "test");
  } else if (args.preset == "scenes") {
    datagen::SceneSpec spec;
    spec.seed = args.seed;
    if (args.train_count) spec.train_count = args.train_count;
    if (args.val_count) spec.val_count = args.val_count;
    if (args.test_count) spec.test_count = args.test_count;
    auto data = datagen::gen_scenes(spec);
    write_split(data.train, "train");
    write_split(data.val, "val");
    write_split(data.test, "test");
  } else {
    throw ConfigError("unknown preset: " + args.preset);
  }

  write_text(fs::path(args.out_dir) / "gen-manifest.json", manifest.dump(2) + "\n");
  std::cout << "wrote " << args.out_dir << "/{train,val,test}.ds\n";
  return 0;
}

// ----- train ------------------------------------------------------------------------

struct TrainArgs {
  std::string config_path;
  std::string out_dir;
  std::optional<std::uint64_t> seed;
};

int run_one_training(harness::RunConfig cfg, const std::string& out_dir) {
  auto train = datagen::load(cfg.train_path);
  auto val = datagen::load(cfg.val_path);
  auto test = datagen::load(cfg.test_path);

  auto t0 = std::chrono::steady_clock::now();
  auto cell = harness::run_cell(cfg, train, val, test);
  auto wall =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(out_dir);
  const std::string test_hash = harness::file_hash_hex(cfg.test_path);
  for (auto& row : cell.rows) row.data_hash = test_hash;

  cell.train.best_model.save_checkpoint((fs::path(out_dir) / "checkpoint_best.txt").string());
  cell.train.final_model.save_checkpoint(
      (fs::path(out_dir) / "checkpoint_final.txt").string());
  write_text(fs::path(out_dir) / "report.csv", harness::report_csv(cell.rows));
  write_text(fs::path(out_dir) / "report.json", harness::report_json(cell.rows));
  const metrics::CurveReport* curve =
      cell.forecast_test ? &cell.forecast_test->curve : nullptr;
  write_text(fs::path(out_dir) / "plot.csv",
             harness::plot_csv(cfg.run_id, cell.train, curve));

  nlohmann::json record = {
      {"run_id", cfg.run_id},
      {"seed", cfg.seed},
      {"config_hash", harness::text_hash_hex(cfg.echo())},
      {"config_echo", cfg.echo()},
      {"code_hash", self_code_hash()},
      {"data_hash",
       {{"train", harness::file_hash_hex(cfg.train_path)},
        {"val", harness::file_hash_hex(cfg.val_path)},
        {"test", test_hash}}},
      {"wallclock_s", wall},
      {"best_step", cell.train.best_step},
      {"best_val_metric", cell.train.best_metric},
      {"health_ok", cell.train.health_ok},
      {"aborted", cell.train.aborted},
      {"abort_reason", cell.train.abort_reason},
  };
  write_text(fs::path(out_dir) / "run-record.json", record.dump(2) + "\n");

  if (cell.train.aborted) {
    std::cerr << "training aborted: " << cell.train.abort_reason
              << " (last good checkpoint kept at checkpoint_best.txt)\n";
    return 2;
  }
  std::cout << "run " << cfg.run_id << " done in " << wall << " s; reports in " << out_dir
            << "\n";
  return 0;
}

int cmd_train(const TrainArgs& args) {
  harness::RunConfig cfg = harness::RunConfig::from_file(args.config_path);
  if (args.seed) cfg.apply_seed(*args.seed);
  return run_one_training(cfg, args.out_dir);
}

// ----- eval -------------------------------------------------------------------------

struct EvalArgs {
  std::string checkpoint;
  std::string data_path;
  std::string out_dir;
  std::size_t kl_samples = 10000;
  std::uint64_t seed = 0;
};

int cmd_eval(const EvalArgs& args) {
  const std::string hash_before = harness::file_hash_hex(args.checkpoint);
  nets::Model model = nets::Model::load_checkpoint(args.checkpoint);
  auto data = datagen::load(args.data_path);

  harness::ReportRow row;
  row.run_id = "eval";
  row.split = "eval";
  row.kind = data.meta.kind;
  row.estimator = nets::to_string(model.config().estimator);
  row.interaction = nets::to_string(model.config().interaction);
  row.seed = args.seed;
  row.config_hash = harness::text_hash_hex(model.config().to_json());
  row.data_hash = harness::file_hash_hex(args.data_path);

  const metrics::CurveReport* curve = nullptr;
  metrics::CurveReport curve_store;
  if (data.meta.kind == "toy") {
    auto rep = harness::eval_toy(model, data, args.kl_samples, args.seed);
    row.values["l2_mu"] = rep.l2_mu;
    row.values["l1_sigma"] = rep.l1_sigma;
    row.values["l1_sigma_inv"] = rep.l1_sigma_inv;
    row.values["kl"] = rep.kl;
    row.values["kl_stderr"] = rep.kl_stderr;
  } else {
    auto rep = harness::eval_forecast(model, data, args.seed);
    row.values["ade"] = rep.report.ade;
    row.values["fde"] = rep.report.fde;
    row.values["ade1"] = rep.report.ade1;
    row.values["fde1"] = rep.report.fde1;
    row.values["adek"] = rep.report.adek;
    row.values["fdek"] = rep.report.fdek;
    row.values["brier_fdek"] = rep.report.brier_fdek;
    row.values["spearman"] = rep.curve.spearman;
    row.values["phi_calibration"] = rep.phi_calibration;
    row.values["random_fde"] = rep.random_selector_fde;
    curve_store = rep.curve;
    curve = &curve_store;
  }
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "eval-report.csv", harness::report_csv({row}));
  write_text(fs::path(args.out_dir) / "eval-report.json", harness::report_json({row}));
  if (curve) {
    harness::TrainResult empty{nets::Model(model.config()), nets::Model(model.config())};
    write_text(fs::path(args.out_dir) / "eval-plot.csv",
               harness::plot_csv("eval", empty, curve));
  }

  // Evaluation is read-only by contract; verify the checkpoint bytes.
  if (harness::file_hash_hex(args.checkpoint) != hash_before) {
    throw NumericError("eval: checkpoint file changed during evaluation");
  }
  std::cout << "eval done; reports in " << args.out_dir << "\n";
  return 0;
}

// ----- ablate -----------------------------------------------------------------------

struct AblateArgs {
  std::string config_path;
  std::string grid;  // estimator-interaction | cu-gain | autl
  std::string out_dir;
  std::vector<std::uint64_t> seeds = {1};
  std::size_t parallel = 2;
};

int cmd_ablate(const AblateArgs& args) {
  harness::RunConfig base = harness::RunConfig::from_file(args.config_path);
  auto train = datagen::load(base.train_path);
  auto val = datagen::load(base.val_path);
  auto test = datagen::load(base.test_path);
  const std::string test_hash = harness::file_hash_hex(base.test_path);

  struct Cell {
    std::string name;
    harness::RunConfig config;
  };
  std::vector<Cell> cells;
  auto add_cell = [&](const std::string& name, nets::EstimatorKind est,
                      nets::Interaction inter, double alpha, std::uint64_t seed) {
    harness::RunConfig cfg = base;
    cfg.model.estimator = est;
    cfg.model.interaction = inter;
    cfg.loss.alpha = alpha;
    cfg.apply_seed(seed);
    cfg.run_id = name;
    cells.push_back({name, std::move(cfg)});
  };

  for (std::uint64_t seed : args.seeds) {
    std::string suffix = "-s" + std::to_string(seed);
    if (args.grid == "estimator-interaction") {
      for (auto est : {nets::EstimatorKind::kIuOnly, nets::EstimatorKind::kCuNpe,
                       nets::EstimatorKind::kPeCu}) {
        for (auto inter : {nets::Interaction::kNone, nets::Interaction::kAttention}) {
          add_cell(nets::to_string(est) + "-" + nets::to_string(inter) + suffix, est, inter,
                   base.loss.alpha, seed);
        }
      }
    } else if (args.grid == "cu-gain") {
      for (auto est : {nets::EstimatorKind::kIuOnly, nets::EstimatorKind::kPeCu}) {
        for (auto inter : {nets::Interaction::kNone, nets::Interaction::kAttention}) {
          add_cell(nets::to_string(est) + "-" + nets::to_string(inter) + suffix, est, inter,
                   base.loss.alpha, seed);
        }
      }
    } else if (args.grid == "autl") {
      add_cell("autl-off" + suffix, base.model.estimator, base.model.interaction, 0.0, seed);
      add_cell("autl-on" + suffix, base.model.estimator, base.model.interaction,
               base.loss.alpha > 0.0 ? base.loss.alpha : 0.5, seed);
    } else {
      throw ConfigError("unknown ablation grid: " + args.grid);
    }
  }

  std::vector<harness::CellResult> results(cells.size(),
                                           harness::CellResult{base, harness::TrainResult{
                                               nets::Model(base.model),
                                               nets::Model(base.model)}});
  std::mutex io_mutex;
  std::size_t next = 0;
  std::mutex next_mutex;
  auto worker = [&]() {
    while (true) {
      std::size_t index;
      {
        std::lock_guard<std::mutex> lock(next_mutex);
        if (next >= cells.size()) return;
        index = next++;
      }
      auto result = harness::run_cell(cells[index].config, train, val, test);
      {
        std::lock_guard<std::mutex> lock(io_mutex);
        results[index] = std::move(result);
        std::cout << "cell " << cells[index].name << " done\n";
      }
    }
  };
  std::size_t nthreads = std::max<std::size_t>(1, std::min(args.parallel, cells.size()));
  std::vector<std::thread> pool;
  for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
  for (auto& t : pool) t.join();

  std::vector<harness::ReportRow> rows;
  for (auto& result : results) {
    for (auto row : result.rows) {
      row.data_hash = test_hash;
      rows.push_back(std::move(row));
    }
  }
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "ablation-report.csv", harness::report_csv(rows));
  write_text(fs::path(args.out_dir) / "ablation-report.json", harness::report_json(rows));

  // Improvement rates of adding CU estimation, per interaction setting
  // (the Fig. 10-style analysis; only meaningful for the cu-gain grid).
  if (args.grid == "cu-gain") {
    std::ostringstream delta;
    delta << "seed,interaction,metric,iu,iu_cu,delta_percent\n";
    for (std::uint64_t seed : args.seeds) {
      for (auto inter : {nets::Interaction::kNone, nets::Interaction::kAttention}) {
        auto find_row = [&](nets::EstimatorKind est) -> const harness::ReportRow* {
          std::string id = nets::to_string(est) + "-" + nets::to_string(inter) + "-s" +
                           std::to_string(seed);
          for (const auto& row : rows) {
            if (row.run_id == id && row.split == "test") return &row;
          }
          return nullptr;
        };
        const auto* iu = find_row(nets::EstimatorKind::kIuOnly);
        const auto* cu = find_row(nets::EstimatorKind::kPeCu);
        if (!iu || !cu) continue;
        for (const std::string metric : {"fde1", "fdek", "ade1", "adek"}) {
          double a = iu->values.at(metric), b = cu->values.at(metric);
          double rel = a != 0.0 ? (a - b) / a * 100.0 : 0.0;
          delta << seed << ',' << nets::to_string(inter) << ',' << metric << ','
                << textio::format_double(a) << ',' << textio::format_double(b) << ','
                << textio::format_double(rel) << "\n";
        }
      }
    }
    write_text(fs::path(args.out_dir) / "cu-gain-delta.csv", delta.str());
  }
  std::cout << "ablation grid '" << args.grid << "' complete (" << cells.size()
            << " cells); reports in " << args.out_dir << "\n";
  return 0;
}

// ----- report -----------------------------------------------------------------------

struct ReportArgs {
  std::string in_dir;
  std::string out_dir;
};

int cmd_report(const ReportArgs& args) {
  std::vector<std::string> csv_files, plot_files;
  for (const auto& entry : fs::recursive_directory_iterator(args.in_dir)) {
    if (!entry.is_regular_file()) continue;
    auto name = entry.path().filename().string();
    if (name == "report.csv" || name == "ablation-report.csv" || name == "eval-report.csv") {
      csv_files.push_back(entry.path().string());
    } else if (name == "plot.csv" || name == "eval-plot.csv") {
      plot_files.push_back(entry.path().string());
    }
  }
  std::sort(csv_files.begin(), csv_files.end());
  std::sort(plot_files.begin(), plot_files.end());
  if (csv_files.empty()) throw ConfigError("report: no report.csv files under " + args.in_dir);

  auto merge = [](const std::vector<std::string>& files) {
    std::string merged;
    bool first = true;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      std::string line;
      bool header = true;
      while (std::getline(in, line)) {
        if (header) {
          if (first) merged += line + "\n";
          header = false;
          continue;
        }
        merged += line + "\n";
      }
      first = false;
    }
    return merged;
  };
  fs::create_directories(args.out_dir);
  write_text(fs::path(args.out_dir) / "merged-report.csv", merge(csv_files));
  if (!plot_files.empty()) {
    write_text(fs::path(args.out_dir) / "merged-plot.csv", merge(plot_files));
  }
  std::cout << "merged " << csv_files.size() << " report files into " << args.out_dir
            << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"cu-lab: collaborative-uncertainty regression laboratory"};
  app.require_subcommand(1);

  GenDataArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "generate synthetic datasets");
  gen_cmd->add_option("--preset", gen.preset, "toy | toy-small | scenes")->required();
  gen_cmd->add_option("--out", gen.out_dir, "output directory")->required();
  gen_cmd->add_option("--seed", gen.seed, "generation seed")->envname("CU_LAB_SEED");
  gen_cmd->add_option("--train-count", gen.train_count, "override train count");
  gen_cmd->add_option("--val-count", gen.val_count, "override val count");
  gen_cmd->add_option("--test-count", gen.test_count, "override test count");

  TrainArgs train;
  std::uint64_t train_seed = 0;
  auto* train_cmd = app.add_subcommand("train", "train one model");
  train_cmd->add_option("--config", train.config_path, "run config file")->required();
  train_cmd->add_option("--out", train.out_dir, "output directory")->required();
  auto* train_seed_opt =
      train_cmd->add_option("--seed", train_seed, "override run seed")->envname("CU_LAB_SEED");

  EvalArgs eval;
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint");
  eval_cmd->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  eval_cmd->add_option("--data", eval.data_path, "dataset file")->required();
  eval_cmd->add_option("--out", eval.out_dir, "output directory")->required();
  eval_cmd->add_option("--kl-samples", eval.kl_samples, "MC samples per instance (toy)");
  eval_cmd->add_option("--seed", eval.seed, "evaluation seed")->envname("CU_LAB_SEED");

  AblateArgs ablate;
  auto* ablate_cmd = app.add_subcommand("ablate", "run an ablation grid");
  ablate_cmd->add_option("--config", ablate.config_path, "base run config")->required();
  ablate_cmd->add_option("--grid", ablate.grid, "estimator-interaction | cu-gain | autl")
      ->required();
  ablate_cmd->add_option("--out", ablate.out_dir, "output directory")->required();
  ablate_cmd->add_option("--seeds", ablate.seeds, "training seeds")->delimiter(',');
  ablate_cmd->add_option("--parallel", ablate.parallel, "concurrent cells");

  ReportArgs report;
  auto* report_cmd = app.add_subcommand("report", "aggregate run reports");
  report_cmd->add_option("--in", report.in_dir, "directory to scan")->required();
  report_cmd->add_option("--out", report.out_dir, "output directory")->required();

  try {
    app.parse(argc, argv);
    if (*gen_cmd) return cmd_gen_data(gen);
    if (*train_cmd) {
      if (*train_seed_opt) train.seed = train_seed;
      return cmd_train(train);
    }
    if (*eval_cmd) return cmd_eval(eval);
    if (*ablate_cmd) return cmd_ablate(ablate);
    if (*report_cmd) return cmd_report(report);
    return 1;
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 1;
  } catch (const ContractError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const DimensionError& e) {
    std::cerr << "dimension error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const DefinitenessError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const DomainError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
