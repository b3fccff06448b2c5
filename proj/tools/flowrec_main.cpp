// flowrec command line: preprocess / train / eval / sweep / trace / baseline.
// A structured JSON config file drives everything; flags override file values.
// Exit codes: 0 success, 1 runtime error, 2 usage or config error.

#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "flowrec/config.hpp"
#include "flowrec/dataset.hpp"
#include "flowrec/eval.hpp"
#include "flowrec/kernels.hpp"
#include "flowrec/sampler.hpp"
#include "flowrec/trainer.hpp"

namespace fs = std::filesystem;
using namespace flowrec;

namespace {

// FLOWREC_LOG=quiet|info|debug (default info)
int log_level() {
  const char* v = std::getenv("FLOWREC_LOG");
  if (!v) return 1;
  const std::string s(v);
  if (s == "quiet") return 0;
  if (s == "debug") return 2;
  return 1;
}

void info(const std::string& msg) {
  if (log_level() >= 1) std::cerr << msg << "\n";
}

void debug(const std::string& msg) {
  if (log_level() >= 2) std::cerr << msg << "\n";
}

void require_file(const std::string& path, const char* what) {
  if (path.empty())
    throw std::invalid_argument(std::string(what) + " path is required");
  if (!fs::exists(path))
    throw std::invalid_argument(std::string(what) + " not found: " + path);
}

// out_dir/<confighash>-<timestamp>, created on first use.
std::string run_dir(const RunConfig& cfg) {
  std::time_t now = std::time(nullptr);
  char stamp[32];
  std::strftime(stamp, sizeof stamp, "%Y%m%d-%H%M%S", std::localtime(&now));
  fs::path dir = fs::path(cfg.out_dir) / (config_hash(cfg) + "-" + stamp);
  fs::create_directories(dir);
  return dir.string();
}

void write_config(const RunConfig& cfg, const std::string& dir) {
  std::ofstream out(fs::path(dir) / "config.json");
  out << config_to_json(cfg).dump(2) << "\n";
}

uint64_t hash_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return fnv1a(ss.str());
}

std::string report_summary(const EvalReport& r) {
  std::ostringstream ss;
  ss << std::fixed << std::setprecision(4);
  ss << r.phase << " T=" << r.steps << "  hr@5 " << r.overall.hr5 * 100
     << "  ndcg@5 " << r.overall.ndcg5 * 100 << "  hr@10 "
     << r.overall.hr10 * 100 << "  ndcg@10 " << r.overall.ndcg10 * 100
     << "  users " << r.overall.users;
  return ss.str();
}

Phase parse_phase(const std::string& s) {
  if (s == "valid") return Phase::valid;
  if (s == "test") return Phase::test;
  throw std::invalid_argument("unknown phase: " + s + " (expected valid or test)");
}

struct CommonArgs {
  std::string config_path;
  std::string backend;
  RunConfig cfg;

  // Load the config file (if any) before subcommand flags are applied.
  void load() {
    if (!config_path.empty()) {
      require_file(config_path, "config");
      cfg = load_config_file(config_path);
    }
    if (backend == "serial") kern::set_backend(kern::Backend::serial);
    else if (backend == "openmp") kern::set_backend(kern::Backend::openmp);
    else if (!backend.empty())
      throw std::invalid_argument("unknown backend: " + backend);
  }
};

int cmd_preprocess(const CommonArgs& a, std::string snapshot_out) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.data_path, "data");

  Snapshot snap =
      preprocess(cfg.data_path, cfg.data_format, cfg.data_strict, config_hash(cfg));

  if (snapshot_out.empty()) {
    const std::string dir = run_dir(cfg);
    write_config(cfg, dir);
    snapshot_out = (fs::path(dir) / "snapshot.bin").string();
  }
  save_snapshot(snap, snapshot_out);

  const DatasetStats& s = snap.stats;
  std::cout << "sequences " << s.sequences << "\n"
            << "items " << s.items << "\n"
            << "actions " << s.actions << "\n"
            << std::fixed << std::setprecision(2)  //
            << "avg_length " << s.avg_length << "\n"
            << "sparsity " << s.sparsity * 100.0 << "%\n"
            << "five_core_iterations " << s.five_core_iterations << "\n"
            << "snapshot " << snapshot_out << "\n"
            << "snapshot_hash " << std::hex << hash_file(snapshot_out) << "\n";
  return 0;
}

int cmd_train(const CommonArgs& a, std::string ckpt_out, std::string log_out,
              std::string report_out, const std::string& resume) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.snapshot_path, "snapshot");
  if (!resume.empty()) require_file(resume, "checkpoint");

  Snapshot snap = load_snapshot(cfg.snapshot_path);

  std::string dir;
  auto ensure_dir = [&]() {
    if (dir.empty()) {
      dir = run_dir(cfg);
      write_config(cfg, dir);
    }
    return dir;
  };
  if (ckpt_out.empty()) ckpt_out = (fs::path(ensure_dir()) / "model.ckpt").string();
  if (log_out.empty()) log_out = (fs::path(ensure_dir()) / "train_log.jsonl").string();
  if (report_out.empty()) report_out = (fs::path(ensure_dir()) / "report.json").string();

  std::ofstream log(log_out, resume.empty() ? std::ios::trunc : std::ios::app);
  if (!log) throw std::runtime_error("cannot open for writing: " + log_out);

  TrainConfig tc = cfg.train;
  tc.seed = cfg.seed;
  info("training on " + cfg.snapshot_path + " (" +
       std::to_string(snap.catalog.n_items()) + " items, " +
       std::to_string(snap.split.users_total) + " users)");
  TrainResult res = train(snap, cfg.model, tc, ckpt_out, resume, &log,
                          config_hash(cfg), config_to_json(cfg).dump());

  info("best epoch " + std::to_string(res.best_epoch) + ", val ndcg@10 " +
       std::to_string(res.best_val_ndcg10) + " (" +
       std::to_string(res.epochs_run) + " epochs run)");

  SamplerConfig sc = cfg.sampler;
  sc.mod = tc.mod;
  EvalReport rep = evaluate(res.model, snap, Phase::test, sc, cfg.eval_workers);
  double secs = 0;
  for (const EpochLog& e : res.history) secs += e.seconds;
  rep.train_seconds_per_epoch = res.history.empty() ? 0 : secs / res.history.size();
  rep.config_json = config_to_json(cfg).dump();

  const std::string csv = fs::path(report_out).replace_extension(".csv").string();
  write_report(rep, report_out, csv);
  std::cout << report_summary(rep) << "\n"
            << "checkpoint " << ckpt_out << "\n"
            << "report " << report_out << "\n";
  return 0;
}

int cmd_eval(const CommonArgs& a, const std::string& ckpt,
             const std::string& phase_name, std::string report_out,
             const std::string& trace_out, int trace_users,
             const std::string& ranked_out) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.snapshot_path, "snapshot");
  require_file(ckpt, "checkpoint");

  Snapshot snap = load_snapshot(cfg.snapshot_path);
  ParamStore ps = load_model(ckpt);
  const Phase phase = parse_phase(phase_name);

  SamplerConfig sc = cfg.sampler;
  sc.mod = cfg.train.mod;

  double pass = 0;
  std::vector<Trajectory> traces;
  auto ranks = rank_users(ps, snap, phase, sc, cfg.eval_workers, &pass,
                          trace_out.empty() ? nullptr : &traces,
                          trace_out.empty() ? 0 : trace_users);
  EvalReport rep = aggregate_report(ranks, snap, phase, sc.steps);
  rep.infer_seconds = pass;
  rep.config_hash = snap.config_hash;
  rep.config_json = config_to_json(cfg).dump();

  if (!trace_out.empty()) {
    trace_export(traces, trace_out);
    info("trace " + trace_out);
  }
  if (!ranked_out.empty()) {
    dump_ranked_lists(ps, snap, phase, sc, ranked_out);
    info("ranked lists " + ranked_out);
  }

  if (report_out.empty()) {
    const std::string dir = run_dir(cfg);
    write_config(cfg, dir);
    report_out = (fs::path(dir) / "report.json").string();
  }
  write_report(rep, report_out,
               fs::path(report_out).replace_extension(".csv").string());
  std::cout << report_summary(rep) << "\n"
            << "report " << report_out << "\n";
  return 0;
}

int cmd_sweep(const CommonArgs& a, const std::string& ckpt,
              const std::string& phase_name, std::string report_out) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.snapshot_path, "snapshot");
  require_file(ckpt, "checkpoint");

  Snapshot snap = load_snapshot(cfg.snapshot_path);
  ParamStore ps = load_model(ckpt);

  SamplerConfig sc = cfg.sampler;
  sc.mod = cfg.train.mod;
  EvalReport rep = steps_sweep(ps, snap, parse_phase(phase_name),
                               cfg.sweep_grid, sc, cfg.eval_workers);
  rep.config_json = config_to_json(cfg).dump();

  if (report_out.empty()) {
    const std::string dir = run_dir(cfg);
    write_config(cfg, dir);
    report_out = (fs::path(dir) / "sweep.json").string();
  }
  write_report(rep, report_out,
               fs::path(report_out).replace_extension(".csv").string());

  std::cout << "steps  hr@10    ndcg@10  seconds\n" << std::fixed;
  for (const auto& e : rep.steps_sweep)
    std::cout << std::setw(5) << e.steps << "  " << std::setprecision(4)
              << std::setw(7) << e.metrics.hr10 * 100 << "  " << std::setw(7)
              << e.metrics.ndcg10 * 100 << "  " << std::setprecision(3)
              << e.infer_seconds << "\n";
  std::cout << "report " << report_out << "\n";
  return 0;
}

int cmd_trace(const CommonArgs& a, const std::string& ckpt,
              const std::string& phase_name, const std::string& out,
              int users) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.snapshot_path, "snapshot");
  require_file(ckpt, "checkpoint");
  if (out.empty()) throw std::invalid_argument("--out path is required");

  Snapshot snap = load_snapshot(cfg.snapshot_path);
  ParamStore ps = load_model(ckpt);

  SamplerConfig sc = cfg.sampler;
  sc.mod = cfg.train.mod;
  std::vector<Trajectory> traces;
  rank_users(ps, snap, parse_phase(phase_name), sc, 1, nullptr, &traces, users);
  trace_export(traces, out);
  std::cout << "trace " << out << " (" << traces.size() << " users, T="
            << sc.steps << ")\n";
  return 0;
}

int cmd_baseline(const CommonArgs& a, const std::string& phase_name,
                 std::string report_out) {
  const RunConfig& cfg = a.cfg;
  require_file(cfg.snapshot_path, "snapshot");

  Snapshot snap = load_snapshot(cfg.snapshot_path);
  const Phase phase = parse_phase(phase_name);
  EvalReport rep =
      aggregate_report(rank_users_popularity(snap, phase), snap, phase, 0);
  rep.config_hash = snap.config_hash;
  rep.config_json = config_to_json(cfg).dump();
  rep.phase = phase_name;

  if (report_out.empty()) {
    const std::string dir = run_dir(cfg);
    write_config(cfg, dir);
    report_out = (fs::path(dir) / "baseline.json").string();
  }
  write_report(rep, report_out,
               fs::path(report_out).replace_extension(".csv").string());
  std::cout << "popularity " << report_summary(rep) << "\n"
            << "report " << report_out << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"flowrec: flow-matching sequential recommender"};
  app.require_subcommand(1);

  CommonArgs common;
  app.add_option("--config", common.config_path, "JSON config file");
  app.add_option("--backend", common.backend, "compute backend: serial|openmp");

  // Deferred overrides: only applied when the flag was actually given.
  auto& cfg = common.cfg;
  std::string seed_s, out_dir_s;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--seed", seed_s, "root RNG seed");
    sub->add_option("--out-dir", out_dir_s, "artifact directory (default runs)");
  };

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "ingest a log and write a snapshot");
  std::string data_path, format_s, snapshot_out;
  bool lenient = false;
  add_common(pre);
  pre->add_option("--data", data_path, "interaction log path");
  pre->add_option("--format", format_s, "tsv|csv|movielens_dat");
  pre->add_flag("--lenient", lenient, "skip malformed rows instead of failing");
  pre->add_option("--snapshot", snapshot_out, "snapshot output path");

  // train
  auto* tr = app.add_subcommand("train", "train a model from a snapshot");
  std::string snapshot_path, ckpt_out, log_out, report_out, resume, encoder_s,
      mod_mode_s;
  int epochs = -1, batch = -1, patience = -1, eval_steps = -1, eval_workers = -1;
  int d = -1, layers = -1, heads = -1, max_len = -1, flow_hidden = -1;
  double lr = -1, alpha = -1, beta = -1, clip_norm = -1, mod_delta = -1;
  double emb_dropout = -1, hidden_dropout = -1;
  bool no_prior = false, no_cfm = false, no_align = false, all_prefix = false;
  bool grad_clip = false, learned_time_proj = false;
  add_common(tr);
  tr->add_option("--snapshot", snapshot_path, "preprocessed snapshot");
  tr->add_option("--ckpt", ckpt_out, "checkpoint output path");
  tr->add_option("--log", log_out, "epoch log output path (line JSON)");
  tr->add_option("--report", report_out, "final test report path (json)");
  tr->add_option("--resume", resume, "resume from this checkpoint");
  tr->add_option("--epochs", epochs, "max epochs");
  tr->add_option("--batch", batch, "batch size");
  tr->add_option("--patience", patience, "early-stopping patience");
  tr->add_option("--lr", lr, "Adam learning rate");
  tr->add_option("--alpha", alpha, "flow-matching loss weight");
  tr->add_option("--beta", beta, "alignment loss weight");
  tr->add_option("--eval-steps", eval_steps, "Euler steps for validation");
  tr->add_option("--eval-workers", eval_workers, "validation eval shards");
  tr->add_option("--d", d, "embedding width");
  tr->add_option("--layers", layers, "encoder layers");
  tr->add_option("--heads", heads, "attention heads");
  tr->add_option("--max-len", max_len, "context window length");
  tr->add_option("--flow-hidden", flow_hidden, "flow MLP hidden width (0 = 2d)");
  tr->add_option("--emb-dropout", emb_dropout, "embedding dropout");
  tr->add_option("--hidden-dropout", hidden_dropout, "hidden dropout");
  tr->add_option("--encoder", encoder_s, "transformer|gru");
  tr->add_flag("--learned-time-proj", learned_time_proj,
               "learned affine over the time code");
  tr->add_flag("--no-prior", no_prior, "disable the prior loss");
  tr->add_flag("--no-cfm", no_cfm, "disable the flow-matching loss");
  tr->add_flag("--no-align", no_align, "disable the alignment loss");
  tr->add_flag("--all-prefix", all_prefix, "train on every prefix position");
  tr->add_flag("--grad-clip", grad_clip, "clip the global gradient norm");
  tr->add_option("--clip-norm", clip_norm, "gradient norm limit");
  tr->add_option("--mod-mode", mod_mode_s,
                 "unit_mean_mult|literal_mult|additive|off");
  tr->add_option("--mod-delta", mod_delta, "modulation variance");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string eval_ckpt, phase_s = "test", trace_out, ranked_out;
  int steps = -1, trace_users = 5, workers = -1;
  bool mask_history = false;
  add_common(ev);
  ev->add_option("--snapshot", snapshot_path, "preprocessed snapshot");
  ev->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate");
  ev->add_option("--steps", steps, "Euler steps T");
  ev->add_option("--workers", workers, "eval shards");
  ev->add_option("--phase", phase_s, "valid|test");
  ev->add_flag("--mask-history", mask_history, "exclude seen items from ranking");
  ev->add_option("--trace", trace_out, "trajectory CSV output");
  ev->add_option("--trace-users", trace_users, "users to trace");
  ev->add_option("--ranked", ranked_out, "top-100 ranked-list dump (line JSON)");
  ev->add_option("--report", report_out, "report output path (json)");

  // sweep
  auto* sw = app.add_subcommand("sweep", "evaluate over the sampling-step grid");
  std::string grid_s;
  add_common(sw);
  sw->add_option("--snapshot", snapshot_path, "preprocessed snapshot");
  sw->add_option("--ckpt", eval_ckpt, "checkpoint to evaluate");
  sw->add_option("--grid", grid_s, "comma-separated step counts");
  sw->add_option("--workers", workers, "eval shards");
  sw->add_option("--phase", phase_s, "valid|test");
  sw->add_option("--report", report_out, "report output path (json)");

  // trace
  auto* tc = app.add_subcommand("trace", "export inference trajectories");
  std::string trace_path;
  int users = 5;
  add_common(tc);
  tc->add_option("--snapshot", snapshot_path, "preprocessed snapshot");
  tc->add_option("--ckpt", eval_ckpt, "checkpoint to trace");
  tc->add_option("--out", trace_path, "trajectory CSV output");
  tc->add_option("--users", users, "users to trace");
  tc->add_option("--steps", steps, "Euler steps T");
  tc->add_option("--phase", phase_s, "valid|test");

  // baseline
  auto* bl = app.add_subcommand("baseline", "popularity-ranking floor");
  add_common(bl);
  bl->add_option("--snapshot", snapshot_path, "preprocessed snapshot");
  bl->add_option("--phase", phase_s, "valid|test");
  bl->add_option("--report", report_out, "report output path (json)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;  // help exits 0, parse errors are usage errors
  }

  try {
    common.load();
    // Flag overrides on top of file values.
    if (!seed_s.empty()) cfg.seed = std::stoull(seed_s);
    if (!out_dir_s.empty()) cfg.out_dir = out_dir_s;
    if (!data_path.empty()) cfg.data_path = data_path;
    if (!format_s.empty()) cfg.data_format = parse_log_format(format_s);
    if (lenient) cfg.data_strict = false;
    if (!snapshot_path.empty()) cfg.snapshot_path = snapshot_path;
    if (epochs >= 0) cfg.train.max_epochs = epochs;
    if (batch > 0) cfg.train.batch_size = batch;
    if (patience >= 0) cfg.train.patience = patience;
    if (lr > 0) cfg.train.lr = lr;
    if (alpha >= 0) cfg.train.alpha = alpha;
    if (beta >= 0) cfg.train.beta = beta;
    if (eval_steps > 0) cfg.train.eval_steps = eval_steps;
    if (eval_workers > 0) cfg.eval_workers = eval_workers;
    if (d > 0) cfg.model.d = d;
    if (layers > 0) cfg.model.layers = layers;
    if (heads > 0) cfg.model.heads = heads;
    if (max_len > 0) cfg.model.max_len = max_len;
    if (flow_hidden >= 0) cfg.model.flow_hidden = flow_hidden;
    if (emb_dropout >= 0) cfg.model.emb_dropout = emb_dropout;
    if (hidden_dropout >= 0) cfg.model.hidden_dropout = hidden_dropout;
    if (!encoder_s.empty()) {
      if (encoder_s == "gru") cfg.model.gru_encoder = true;
      else if (encoder_s == "transformer") cfg.model.gru_encoder = false;
      else throw std::invalid_argument("unknown encoder: " + encoder_s);
    }
    if (learned_time_proj) cfg.model.learned_time_proj = true;
    if (no_prior) cfg.train.use_prior = false;
    if (no_cfm) cfg.train.use_cfm = false;
    if (no_align) cfg.train.use_align = false;
    if (all_prefix) cfg.train.all_prefix = true;
    if (grad_clip) cfg.train.grad_clip = true;
    if (clip_norm > 0) cfg.train.clip_norm = clip_norm;
    if (!mod_mode_s.empty()) cfg.train.mod.mode = parse_mod_mode(mod_mode_s);
    if (mod_delta > 0) cfg.train.mod.delta = mod_delta;
    if (steps > 0) cfg.sampler.steps = steps;
    if (mask_history) cfg.sampler.mask_history = true;
    if (workers > 0) cfg.eval_workers = workers;
    if (!grid_s.empty()) {
      cfg.sweep_grid.clear();
      std::stringstream ss(grid_s);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) cfg.sweep_grid.push_back(std::stoi(tok));
      if (cfg.sweep_grid.empty())
        throw std::invalid_argument("empty sweep grid");
    }
    cfg.train.eval_workers = cfg.eval_workers;
    cfg.sampler.mod = cfg.train.mod;

    debug("backend " +
          std::string(kern::backend() == kern::Backend::openmp ? "openmp"
                                                               : "serial"));
    if (pre->parsed()) return cmd_preprocess(common, snapshot_out);
    if (tr->parsed()) return cmd_train(common, ckpt_out, log_out, report_out, resume);
    if (ev->parsed())
      return cmd_eval(common, eval_ckpt, phase_s, report_out, trace_out,
                      trace_users, ranked_out);
    if (sw->parsed()) return cmd_sweep(common, eval_ckpt, phase_s, report_out);
    if (tc->parsed())
      return cmd_trace(common, eval_ckpt, phase_s, trace_path, users);
    if (bl->parsed()) return cmd_baseline(common, phase_s, report_out);
    throw std::invalid_argument("no subcommand given");
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}
