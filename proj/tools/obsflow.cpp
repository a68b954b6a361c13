// Command-line front end binding the pipeline end to end: simulate a system,
// check an observability rank, generate datasets, train, evaluate, roll out.
//
// Every file-producing command takes --out DIR, writes fixed product names
// into it plus a resolved_config.json snapshot, and stamps each product with
// the snapshot's CRC-32 (a "config_hash" key in JSON, a leading comment line
// in CSV). Exit codes: 0 ok, 2 usage/config, 3 numerical failure, 4 I/O.

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "obsflow/checkpoint.hpp"
#include "obsflow/crc32.hpp"
#include "obsflow/datagen.hpp"
#include "obsflow/dynsys.hpp"
#include "obsflow/errors.hpp"
#include "obsflow/harness.hpp"
#include "obsflow/io.hpp"
#include "obsflow/neuralop.hpp"
#include "obsflow/observability.hpp"
#include "obsflow/threads.hpp"

namespace fs = std::filesystem;
using njson = nlohmann::json;
using namespace obsflow;

namespace {

std::string fmt(double x) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::vector<double> parse_numbers(const std::string& text, const char* what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t used = 0;
      out.push_back(std::stod(item, &used));
      while (used < item.size() && std::isspace(static_cast<unsigned char>(item[used]))) ++used;
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw ConfigError(std::string(what) + ": cannot parse '" + item + "' as a number");
    }
  }
  if (out.empty()) throw ConfigError(std::string(what) + ": empty list");
  return out;
}

std::vector<std::size_t> parse_indices(const std::string& text, const char* what) {
  std::vector<std::size_t> out;
  for (double x : parse_numbers(text, what)) {
    if (x < 0.0 || x != std::floor(x))
      throw ConfigError(std::string(what) + ": indices must be non-negative integers");
    out.push_back(static_cast<std::size_t>(x));
  }
  return out;
}

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f || !(f << text)) throw IoError("cannot write " + path.string());
}

njson parse_config_file(const std::string& path) {
  njson j;
  try {
    j = njson::parse(read_file(path));
  } catch (const njson::parse_error& e) {
    throw ConfigError(path + ": malformed JSON: " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path + ": config must be a JSON object");
  for (const auto& [key, value] : j.items()) {
    (void)value;
    if (key != "task" && key != "model" && key != "train")
      throw ConfigError(path + ": unknown key '" + key + "'");
  }
  return j;
}

/// Hashes the snapshot, embeds the hash, and writes it to out/. Returns the
/// hash as 8 hex digits.
std::string write_snapshot(const fs::path& out, njson snapshot) {
  const std::string canon = snapshot.dump();
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", Crc32::of(canon.data(), canon.size()));
  snapshot["config_hash"] = hex;
  write_file(out / "resolved_config.json", snapshot.dump(2) + "\n");
  return hex;
}

std::string stamp_json(const std::string& payload, const std::string& hash) {
  njson j = njson::parse(payload);
  j["config_hash"] = hash;
  return j.dump(2) + "\n";
}

std::string stamp_csv(const std::string& payload, const std::string& hash) {
  return "# config_hash=" + hash + "\n" + payload;
}

fs::path make_out_dir(const std::string& out) {
  std::error_code ec;
  fs::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out + ": " + ec.message());
  return fs::path(out);
}

/// Threads resolution order: explicit flag, OBSFLOW_THREADS, then auto.
int resolve_thread_flag(int flag) {
  if (flag >= 0) return flag;
  if (const char* env = std::getenv("OBSFLOW_THREADS")) {
    try {
      const int v = std::stoi(env);
      if (v < 0) throw std::out_of_range("negative");
      return v;
    } catch (const std::exception&) {
      throw ConfigError(std::string("OBSFLOW_THREADS: cannot parse '") + env + "'");
    }
  }
  return 0;
}

struct SystemOpts {
  std::string name;
  long l96_dim = 40;
  double l96_forcing = 8.0;
  long ks_points = 128;
  double ks_length = 32.0 * M_PI;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--system", name, "System: l63, l96, or ks")->required();
    cmd->add_option("--dim", l96_dim, "State dimension (l96)");
    cmd->add_option("--forcing", l96_forcing, "Forcing constant (l96)");
    cmd->add_option("--ks-points", ks_points, "Grid points (ks)");
    cmd->add_option("--ks-length", ks_length, "Domain length (ks)");
  }

  /// Full-state spec: everything observed, nothing latent. Good for
  /// simulation output, which carries the whole state anyway.
  dynsys::SystemSpec build() const {
    std::size_t d = 0;
    if (name == "l63") {
      d = 3;
    } else if (name == "l96") {
      if (l96_dim < 4) throw ConfigError("--dim must be at least 4");
      d = static_cast<std::size_t>(l96_dim);
    } else if (name == "ks") {
      if (ks_points < 2) throw ConfigError("--ks-points must be at least 2");
      d = static_cast<std::size_t>(ks_points);
    } else {
      throw ConfigError("unknown system '" + name + "' (expected l63, l96, or ks)");
    }
    std::vector<std::size_t> all(d);
    for (std::size_t i = 0; i < d; ++i) all[i] = i;
    if (name == "l63") return dynsys::make_l63(all, {});
    if (name == "l96") return dynsys::make_l96(d, l96_forcing, all, {});
    return dynsys::make_ks(d, ks_length, all, {});
  }
};

int run_simulate(const SystemOpts& sys_opts, const std::string& x0_text,
                 std::optional<std::uint64_t> seed, double burn, double t1, double dt,
                 const std::string& out) {
  const dynsys::SystemSpec sys = sys_opts.build();
  if (x0_text.empty() == !seed)
    throw ConfigError("simulate: give exactly one of --x0 and --seed");
  std::vector<double> x0;
  if (!x0_text.empty()) {
    x0 = parse_numbers(x0_text, "--x0");
    if (x0.size() != sys.state_dim())
      throw ConfigError("--x0: expected " + std::to_string(sys.state_dim()) + " components");
  } else {
    x0 = data::sample_nu0(sys, 1, *seed)[0];
  }
  if (burn > 0.0) x0 = data::burn_in(sys, {x0}, burn)[0];

  dynsys::TrajectoryBundle traj;
  if (sys.kind == dynsys::SystemKind::KS) {
    traj = dynsys::ks_integrate_etdrk4(x0, sys_opts.ks_length, dt,
                                       dynsys::aligned_steps(0.0, t1, dt));
  } else {
    traj = dynsys::integrate_rk4(sys, x0, 0.0, t1, dt);
  }

  const fs::path dir = make_out_dir(out);
  njson snapshot{{"command", "simulate"},
                 {"system", sys_opts.name},
                 {"x0", x0},
                 {"seed", seed ? njson(*seed) : njson()},
                 {"burn", burn},
                 {"t1", t1},
                 {"dt", dt}};
  const std::string hash = write_snapshot(dir, snapshot);

  std::string csv = "t";
  for (std::size_t c = 0; c < traj.states.cols; ++c) csv += ",x" + std::to_string(c);
  csv += "\n";
  for (std::size_t i = 0; i < traj.states.rows; ++i) {
    csv += fmt(traj.times[i]);
    for (std::size_t c = 0; c < traj.states.cols; ++c) csv += "," + fmt(traj.states(i, c));
    csv += "\n";
  }
  write_file(dir / "trajectory.csv", stamp_csv(csv, hash));
  std::printf("trajectory.csv: %zu rows, %zu columns\n", traj.states.rows,
              traj.states.cols + 1);
  return 0;
}

int run_observability(const SystemOpts& sys_opts, const std::string& point_text, int order,
                      double tolerance, const std::string& observed_text) {
  const std::vector<double> point = parse_numbers(point_text, "--point");
  if (order < 1) throw ConfigError("--order must be at least 1");
  std::vector<std::size_t> observed{0};
  if (!observed_text.empty()) observed = parse_indices(observed_text, "--observed");

  obs::RankReport rep;
  if (sys_opts.name == "l63") {
    if (point.size() != 3) throw ConfigError("--point: expected 3 components");
    obs::L63Field fld;
    fld.p = observed;
    rep = obs::check_observability(fld, point, order, nullptr, tolerance);
  } else if (sys_opts.name == "l96") {
    obs::L96Field fld;
    fld.d = static_cast<std::size_t>(sys_opts.l96_dim);
    fld.F = sys_opts.l96_forcing;
    fld.p = observed;
    if (point.size() != fld.d)
      throw ConfigError("--point: expected " + std::to_string(fld.d) + " components");
    rep = obs::check_observability(fld, point, order, nullptr, tolerance);
  } else if (sys_opts.name == "ks") {
    obs::KsField fld = obs::make_ks_field(static_cast<std::size_t>(sys_opts.ks_points),
                                sys_opts.ks_length, observed);
    if (point.size() != fld.n)
      throw ConfigError("--point: expected " + std::to_string(fld.n) + " components");
    rep = obs::check_observability(fld, point, order, nullptr, tolerance);
  } else {
    throw ConfigError("unknown system '" + sys_opts.name + "' (expected l63, l96, or ks)");
  }

  njson snapshot{{"command", "observability"}, {"system", sys_opts.name},
                 {"point", point},            {"order", order},
                 {"tolerance", tolerance},    {"observed", observed}};
  const std::string canon = snapshot.dump();
  char hex[16];
  std::snprintf(hex, sizeof(hex), "%08x", Crc32::of(canon.data(), canon.size()));
  std::printf("%s", stamp_json(rep.to_json(), hex).c_str());
  return 0;
}

int run_gen_data(const std::string& config_path, long count, const std::string& split_text,
                 std::uint64_t seed, int threads, const std::string& out) {
  const njson cfg = parse_config_file(config_path);
  if (!cfg.contains("task")) throw ConfigError(config_path + ": missing 'task' section");
  const data::TaskSpec task = data::TaskSpec::from_json(cfg["task"].dump());
  const data::Split split = data::split_from_string(split_text);
  const int t_count = resolve_thread_flag(threads);

  const data::Dataset ds = data::generate(task, count, seed, split, t_count);
  const fs::path dir = make_out_dir(out);
  njson snapshot{{"command", "gen-data"},
                 {"task", njson::parse(task.to_json())},
                 {"count", count},
                 {"split", split_text},
                 {"seed", seed}};
  write_snapshot(dir, snapshot);
  data::save_dataset(ds, (dir / "data.obsf").string());
  std::printf("data.obsf: %ld samples, %ld retries\n", ds.num_samples(), ds.retries);
  return 0;
}

int run_train(const std::string& config_path, const std::string& data_path,
              const std::string& resume_path, const std::string& out) {
  const njson cfg = parse_config_file(config_path);
  const data::Dataset ds = data::load_dataset(data_path);
  if (cfg.contains("task")) {
    const data::TaskSpec task = data::TaskSpec::from_json(cfg["task"].dump());
    if (task.hash() != ds.task.hash())
      throw ConfigError(config_path + ": 'task' section does not match the dataset");
  }
  if (!cfg.contains("train")) throw ConfigError(config_path + ": missing 'train' section");
  const harness::TrainConfig tc = harness::TrainConfig::from_json(cfg["train"].dump());

  harness::TrainResult res;
  if (!resume_path.empty()) {
    if (cfg.contains("model"))
      throw ConfigError(config_path + ": --resume uses the checkpoint's model config; "
                                      "drop the 'model' section");
    res = harness::train_resume(nop::load_checkpoint(resume_path), ds, tc);
  } else {
    if (!cfg.contains("model")) throw ConfigError(config_path + ": missing 'model' section");
    njson mj = cfg["model"];
    // The window geometry is the dataset's; filling it in here keeps config
    // files free of duplicated shape bookkeeping.
    if (!mj.contains("d_in")) mj["d_in"] = ds.task.input_dim();
    if (!mj.contains("d_out")) mj["d_out"] = ds.task.output_dim();
    if (!mj.contains("input_len")) mj["input_len"] = ds.task.input_len();
    if (!mj.contains("output_len")) mj["output_len"] = ds.task.output_len();
    res = harness::train(nop::ModelConfig::from_json(mj.dump()), ds, tc);
  }

  const fs::path dir = make_out_dir(out);
  njson snapshot{{"command", "train"},
                 {"task", njson::parse(ds.task.to_json())},
                 {"model", njson::parse(res.best.config.to_json())},
                 {"train", njson::parse(tc.to_json())},
                 {"data", data_path},
                 {"resume", resume_path.empty() ? njson() : njson(resume_path)}};
  const std::string hash = write_snapshot(dir, snapshot);

  nop::save_checkpoint(res.best, (dir / "checkpoint.obsp").string());
  std::string csv = "epoch,train_loss,val_loss\n";
  std::size_t vi = 0;
  for (std::size_t e = 0; e < res.train_loss.size(); ++e) {
    const int epoch = static_cast<int>(e) + 1;
    csv += std::to_string(epoch) + "," + fmt(res.train_loss[e]) + ",";
    const bool validated = (epoch % tc.checkpoint_every == 0 || epoch == tc.epochs) &&
                           vi < res.val_loss.size();
    if (validated) csv += fmt(res.val_loss[vi++]);
    csv += "\n";
  }
  write_file(dir / "loss_history.csv", stamp_csv(csv, hash));
  std::printf("checkpoint.obsp: best epoch %ld of %d, %ld optimizer steps\n",
              static_cast<long>(res.best_epoch),
              tc.epochs, res.best.train_steps);
  return 0;
}

int run_eval(const std::string& ckpt_path, const std::string& data_path, bool force,
             int threads, const std::string& out) {
  const nop::Checkpoint ckpt = nop::load_checkpoint(ckpt_path);
  const data::Dataset ds = data::load_dataset(data_path);
  const int t_count = resolve_thread_flag(threads);

  harness::EvalReport report = harness::evaluate(ckpt, ds, t_count, force);
  std::optional<harness::EvalReport> baseline;
  if (ds.task.task == data::TaskKind::Forecasting) {
    baseline = harness::constant_baseline(ds);
    harness::attach_baseline(report, *baseline);
  }

  const fs::path dir = make_out_dir(out);
  njson snapshot{{"command", "eval"},
                 {"checkpoint", ckpt_path},
                 {"data", data_path},
                 {"task", njson::parse(ds.task.to_json())},
                 {"force", force}};
  const std::string hash = write_snapshot(dir, snapshot);

  write_file(dir / "report.json", stamp_json(harness::eval_report_to_json(report), hash));
  write_file(dir / "per_sample.csv", stamp_csv(harness::eval_report_to_csv(report), hash));
  if (baseline)
    write_file(dir / "baseline_report.json",
               stamp_json(harness::eval_report_to_json(*baseline), hash));
  std::printf("relative L2: mean %.6f, median %.6f over %zu samples\n", report.mean,
              report.median, report.per_sample.size());
  if (report.improvement_pct)
    std::printf("improvement over constant baseline: %.2f%%\n", *report.improvement_pct);
  return 0;
}

int run_rollout(const std::string& ckpt_path, const std::string& data_path, long blocks,
                int bins, int trajectories, bool force, const std::string& out) {
  const nop::Checkpoint ckpt = nop::load_checkpoint(ckpt_path);
  const data::Dataset ds = data::load_dataset(data_path);
  if (ckpt.task_hash != ds.task.hash() && !force)
    throw ConfigError("rollout: checkpoint was trained for a different task");
  const nop::Model model = nop::restore_model(ckpt);

  const harness::RolloutStats stats = harness::rollout_stats(model, ds, blocks, bins);

  const fs::path dir = make_out_dir(out);
  njson snapshot{{"command", "rollout"}, {"checkpoint", ckpt_path}, {"data", data_path},
                 {"blocks", blocks},     {"bins", bins},            {"force", force}};
  const std::string hash = write_snapshot(dir, snapshot);
  write_file(dir / "rollout.json", stamp_json(harness::rollout_stats_to_json(stats), hash));
  write_file(dir / "histogram.csv", stamp_csv(harness::rollout_stats_to_csv(stats), hash));

  // A few paired prediction/truth trajectories for plotting.
  const long n_in = ds.task.input_len();
  const long step_rows = ds.task.output_len() - 1;
  const long junction = n_in - 1;
  int written = 0;
  for (std::size_t j = 0; j < ds.inputs.size() && written < trajectories; ++j) {
    const nop::RolloutResult r =
        nop::rollout(model, ds.inputs[j], ds.task.input_t1, ds.task.dt, blocks);
    if (r.diverged || r.completed_blocks != blocks) continue;
    const Mat truth = data::regenerate_observed(ds.task, ds.base_seed, ds.streams[j],
                                                junction + blocks * step_rows + 1);
    std::string csv = "t";
    for (std::size_t c = 0; c < r.values.cols; ++c) csv += ",pred_" + std::to_string(c);
    for (std::size_t c = 0; c < r.values.cols; ++c) csv += ",true_" + std::to_string(c);
    csv += "\n";
    for (std::size_t i = 0; i < r.values.rows; ++i) {
      csv += fmt(r.times[i]);
      for (std::size_t c = 0; c < r.values.cols; ++c) csv += "," + fmt(r.values(i, c));
      for (std::size_t c = 0; c < r.values.cols; ++c)
        csv += "," + fmt(truth(static_cast<std::size_t>(junction) + 1 + i, c));
      csv += "\n";
    }
    write_file(dir / ("sample_" + std::to_string(written) + ".csv"), stamp_csv(csv, hash));
    ++written;
  }
  std::printf("rollout: %ld samples used, %ld divergent, overlap %.4f\n", stats.samples_used,
              stats.samples_divergent, stats.overlap);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Neural-operator reconstruction pipeline for partially observed dynamics"};
  app.require_subcommand(1);

  SystemOpts sim_sys;
  std::string sim_x0, sim_out;
  std::optional<std::uint64_t> sim_seed;
  double sim_burn = 0.0, sim_t1 = 0.0, sim_dt = 0.0;
  auto* sim = app.add_subcommand("simulate", "Integrate one trajectory to CSV");
  sim_sys.add_flags(sim);
  sim->add_option("--x0", sim_x0, "Initial state, comma-separated");
  sim->add_option("--seed", sim_seed, "Draw the initial state instead");
  sim->add_option("--burn", sim_burn, "Discard this much lead-in time");
  sim->add_option("--t1", sim_t1, "End time")->required();
  sim->add_option("--dt", sim_dt, "Sample spacing")->required();
  sim->add_option("--out", sim_out, "Output directory")->required();

  SystemOpts obs_sys;
  std::string obs_point, obs_observed;
  int obs_order = 2;
  double obs_tol = 1e-8;
  auto* obs = app.add_subcommand("observability", "Rank test at a point, JSON to stdout");
  obs_sys.add_flags(obs);
  obs->add_option("--point", obs_point, "Base point, comma-separated")->required();
  obs->add_option("--order", obs_order, "Lie-derivative stack order");
  obs->add_option("--tolerance", obs_tol, "Relative singular-value cutoff");
  obs->add_option("--observed", obs_observed, "Observed indices (default 0)");

  std::string gen_config, gen_split = "train", gen_out;
  long gen_count = 0;
  std::uint64_t gen_seed = 0;
  int gen_threads = -1;
  auto* gen = app.add_subcommand("gen-data", "Generate a dataset to OBSF1");
  gen->add_option("--config", gen_config, "Config JSON with a 'task' section")->required();
  gen->add_option("--count", gen_count, "Number of samples")->required();
  gen->add_option("--split", gen_split, "train or test");
  gen->add_option("--seed", gen_seed, "Base seed")->required();
  gen->add_option("--threads", gen_threads, "Worker cap (default: OBSFLOW_THREADS or auto)");
  gen->add_option("--out", gen_out, "Output directory")->required();

  std::string train_config, train_data, train_resume, train_out;
  auto* tr = app.add_subcommand("train", "Train a model, write checkpoint and loss history");
  tr->add_option("--config", train_config, "Config JSON with 'model' and 'train'")->required();
  tr->add_option("--data", train_data, "Training dataset (OBSF1)")->required();
  tr->add_option("--resume", train_resume, "Continue from this checkpoint");
  tr->add_option("--out", train_out, "Output directory")->required();

  std::string eval_ckpt, eval_data, eval_out;
  bool eval_force = false;
  int eval_threads = -1;
  auto* ev = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  ev->add_option("--checkpoint", eval_ckpt, "Checkpoint (OBSP1)")->required();
  ev->add_option("--data", eval_data, "Evaluation dataset (OBSF1)")->required();
  ev->add_flag("--force", eval_force, "Allow mismatched task hashes");
  ev->add_option("--threads", eval_threads, "Worker cap (default: OBSFLOW_THREADS or auto)");
  ev->add_option("--out", eval_out, "Output directory")->required();

  std::string roll_ckpt, roll_data, roll_out;
  long roll_blocks = 0;
  int roll_bins = 100, roll_traj = 3;
  bool roll_force = false;
  auto* roll = app.add_subcommand("rollout", "Iterate forecasts and compare distributions");
  roll->add_option("--checkpoint", roll_ckpt, "Checkpoint (OBSP1)")->required();
  roll->add_option("--data", roll_data, "Forecasting dataset (OBSF1)")->required();
  roll->add_option("--blocks", roll_blocks, "Forecast windows to chain")->required();
  roll->add_option("--bins", roll_bins, "Histogram bins");
  roll->add_option("--trajectories", roll_traj, "Sample trajectory CSVs to write");
  roll->add_flag("--force", roll_force, "Allow mismatched task hashes");
  roll->add_option("--out", roll_out, "Output directory")->required();

  try {
    app.parse(argc, argv);
    if (sim->parsed())
      return run_simulate(sim_sys, sim_x0, sim_seed, sim_burn, sim_t1, sim_dt, sim_out);
    if (obs->parsed())
      return run_observability(obs_sys, obs_point, obs_order, obs_tol, obs_observed);
    if (gen->parsed())
      return run_gen_data(gen_config, gen_count, gen_split, gen_seed, gen_threads, gen_out);
    if (tr->parsed()) return run_train(train_config, train_data, train_resume, train_out);
    if (ev->parsed())
      return run_eval(eval_ckpt, eval_data, eval_force, eval_threads, eval_out);
    if (roll->parsed())
      return run_rollout(roll_ckpt, roll_data, roll_blocks, roll_bins, roll_traj, roll_force,
                         roll_out);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "usage error: %s\n", e.what());
    return 2;
  } catch (const NumericalError& e) {
    std::fprintf(stderr, "numerical failure: %s\n", e.what());
    return 3;
  } catch (const IoError& e) {
    std::fprintf(stderr, "i/o error: %s\n", e.what());
    return 4;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
