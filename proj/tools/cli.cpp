#include "cli.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "gnmap/checkpoint.hpp"
#include "gnmap/error.hpp"
#include "gnmap/evalkit.hpp"
#include "gnmap/grad_suite.hpp"
#include "gnmap/rng.hpp"

namespace gnmap::cli {

namespace fs = std::filesystem;
using nlohmann::json;

LogLevel log_level_from_env() {
  const char* v = std::getenv("GNMAP_LOG");
  if (v == nullptr || *v == '\0') return LogLevel::info;
  const std::string s(v);
  if (s == "error") return LogLevel::error;
  if (s == "info") return LogLevel::info;
  if (s == "debug") return LogLevel::debug;
  throw ConfigError("GNMAP_LOG must be one of error, info, debug (got '" + s + "')");
}

RunConfig run_config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("run config must be a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key == "synth") {
      c.synth = synth_config_from_json(value);
    } else if (key == "model") {
      c.model = model_config_from_json(value);
      c.model_geometry_set = value.contains("geometry");
    } else if (key == "pretrain") {
      c.pretrain = train_config_from_json(value, c.pretrain);
    } else if (key == "finetune") {
      c.finetune = train_config_from_json(value, c.finetune);
    } else if (key == "eval") {
      for (const auto& [k, v] : value.items()) {
        if (k != "threshold" || !v.is_number()) throw ConfigError("eval config: bad key '" + k + "'");
        c.threshold = v.get<double>();
      }
    } else {
      throw ConfigError("run config: unknown section '" + key + "'");
    }
  }
  return c;
}

json run_config_to_json(const RunConfig& c) {
  json model = model_config_to_json(c.model);
  if (!c.model_geometry_set) model.erase("geometry");
  return {{"synth", synth_config_to_json(c.synth)},
          {"model", std::move(model)},
          {"pretrain", train_config_to_json(c.pretrain)},
          {"finetune", train_config_to_json(c.finetune)},
          {"eval", {{"threshold", c.threshold}}}};
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  const json j = json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config file " + path.string() + " is not valid JSON");
  return run_config_from_json(j);
}

void set_tile_total(SynthConfig& c, int total) {
  if (total < 3) throw ConfigError("--tiles must be at least 3 (one per split), got " + std::to_string(total));
  c.valid_tiles = c.test_tiles = std::max(1, total / 10);
  c.train_tiles = total - 2 * c.valid_tiles;
}

namespace {

class Log {
 public:
  Log(std::ostream& err, LogLevel level) : err_(err), level_(level) {}
  void info(const std::string& msg) const {
    if (level_ >= LogLevel::info) err_ << "[gnmap] " << msg << "\n";
  }
  void debug(const std::string& msg) const {
    if (level_ >= LogLevel::debug) err_ << "[gnmap:debug] " << msg << "\n";
  }
  void error(const std::string& msg) const { err_ << "[gnmap] error: " << msg << "\n"; }

 private:
  std::ostream& err_;
  LogLevel level_;
};

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

void write_file(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw std::runtime_error("cannot write " + path.string());
}

// Output locations are checked before any work starts, so a bad path fails
// without leaving partial results behind.
void require_writable_dir(const fs::path& dir) {
  std::error_code ec;
  if (fs::exists(dir, ec) && !fs::is_directory(dir, ec)) {
    throw ConfigError(dir.string() + " exists and is not a directory");
  }
  fs::create_directories(dir, ec);
  if (ec) throw ConfigError("cannot create " + dir.string() + ": " + ec.message());
  const fs::path probe = dir / ".gnmap-write-probe";
  {
    std::ofstream p(probe);
    if (!p) throw ConfigError(dir.string() + " is not writable");
  }
  fs::remove(probe, ec);
}

void require_writable_file(const fs::path& file) {
  if (file.empty()) throw ConfigError("empty output path");
  if (fs::is_directory(file)) throw ConfigError(file.string() + " is a directory");
  require_writable_dir(file.parent_path().empty() ? fs::path(".") : file.parent_path());
}

fs::path sibling(const fs::path& file, const std::string& suffix) {
  return file.parent_path() / (file.filename().string() + suffix);
}

json manifest(const std::string& command, const std::vector<std::string>& args, const RunConfig& cfg) {
  return {{"tool", "gnmap"}, {"command", command}, {"argv", args}, {"config", run_config_to_json(cfg)}};
}

Dataset open_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw ConfigError("dataset directory " + dir.string() + " does not exist");
  return load_dataset(dir);
}

const std::vector<TileSample>& split_of(const Dataset& ds, const std::string& name) {
  if (name != "train" && name != "valid" && name != "test") {
    throw ConfigError("--split must be train, valid or test");
  }
  return ds.split(name);
}

// Resolves the model config against a dataset: the dataset decides the raster
// geometry unless the config names one, in which case they must agree.
ModelConfig model_for(const RunConfig& cfg, const Dataset& ds) {
  ModelConfig m = cfg.model;
  if (!cfg.model_geometry_set) m.geometry = ds.config.geometry;
  if (!(m.geometry == ds.config.geometry)) {
    throw ConfigError("model geometry differs from the dataset geometry");
  }
  m.validate();
  int most = 0;
  for (const char* s : {"train", "valid", "test"}) {
    for (const TileSample& t : ds.split(s)) most = std::max(most, static_cast<int>(t.tours.size()));
  }
  if (most > m.max_tours) {
    throw ConfigError("dataset has tiles with " + std::to_string(most) + " tours but the model takes at most " +
                      std::to_string(m.max_tours));
  }
  return m;
}

struct Options {
  std::optional<std::string> config;
  std::optional<std::uint64_t> seed;
};

RunConfig resolve_base(const Options& o) {
  RunConfig cfg = o.config ? load_run_config(*o.config) : RunConfig{};
  if (o.seed) {
    cfg.synth.seed = *o.seed;
    cfg.pretrain.seed = *o.seed;
    cfg.finetune.seed = *o.seed;
  }
  return cfg;
}

struct TrainFlags {
  std::optional<int> steps, batch;
  std::optional<double> lr, mask_ratio;
  bool no_augment = false;

  void add_to(CLI::App* app, bool pretrain) {
    app->add_option("--steps", steps, "Optimizer steps")->check(CLI::NonNegativeNumber);
    app->add_option("--batch", batch, "Tiles per step")->check(CLI::PositiveNumber);
    app->add_option("--lr", lr, "Adam learning rate")->check(CLI::PositiveNumber);
    if (pretrain) app->add_option("--mask-ratio", mask_ratio, "Fraction of patches removed");
    app->add_flag("--no-augment", no_augment, "Train on the tiles as stored");
  }
  void apply(TrainConfig& t) const {
    if (steps) t.steps = *steps;
    if (batch) t.batch = *batch;
    if (lr) t.lr = *lr;
    if (mask_ratio) t.mask_ratio = *mask_ratio;
    if (no_augment) t.augment = false;
    t.validate();
  }
};

// --- commands ---------------------------------------------------------------

struct SynthArgs {
  Options common;
  std::string out;
  std::optional<int> tiles, tours;
  std::optional<double> coverage, jitter;
};

int cmd_synth(const SynthArgs& a, const std::vector<std::string>& argv, std::ostream& out, const Log& log) {
  RunConfig cfg = resolve_base(a.common);
  SynthConfig& s = cfg.synth;
  if (a.tiles) set_tile_total(s, *a.tiles);
  if (a.tours) s.tours_per_tile = *a.tours;
  if (a.coverage) s.coverage = *a.coverage;
  if (a.jitter) s.jitter_sigma = *a.jitter;
  s.validate();

  const fs::path dir(a.out);
  if (fs::exists(dir) && fs::is_directory(dir) && !fs::is_empty(dir)) {
    if (!fs::exists(dir / "manifest.json")) {
      throw ConfigError("refusing to write into non-empty directory " + dir.string());
    }
    log.info("replacing dataset at " + dir.string());
    fs::remove_all(dir);
  }
  require_writable_dir(dir);

  const Dataset ds = gen_dataset(s);
  write_dataset(ds, dir);
  write_file(dir / "run.json", manifest("synth", argv, cfg).dump(1) + "\n");
  long tours = 0;
  for (const char* split : {"train", "valid", "test"}) {
    for (const TileSample& t : ds.split(split)) tours += static_cast<long>(t.tours.size());
  }
  out << "wrote " << ds.train.size() + ds.valid.size() + ds.test.size() << " tiles (" << ds.train.size() << " train, "
      << ds.valid.size() << " valid, " << ds.test.size() << " test) with " << tours << " tours to " << dir.string()
      << "\n";
  return kExitOk;
}

struct TrainArgs {
  Options common;
  TrainFlags flags;
  std::string data, out;
  std::optional<std::string> init;
};

void write_training_outputs(const fs::path& ckpt_path, const Checkpoint& ckpt, const TrainResult& result,
                            const json& run_manifest) {
  save_checkpoint(ckpt, ckpt_path);
  write_file(sibling(ckpt_path, ".loss.csv"), loss_curve_csv(result.losses));
  write_file(sibling(ckpt_path, ".json"), run_manifest.dump(1) + "\n");
}

StepCallback progress(const Log& log, int steps) {
  const long every = std::max(1, steps / 10);
  return [&log, every](long step, double loss) {
    if (step % every == 0) log.info("step " + std::to_string(step) + " loss " + fmt("%.6f", loss));
    log.debug("step " + std::to_string(step) + " loss " + fmt("%.9g", loss));
  };
}

int cmd_train(Phase phase, const TrainArgs& a, const std::vector<std::string>& argv, std::ostream& out,
              const Log& log) {
  RunConfig cfg = resolve_base(a.common);
  a.flags.apply(cfg.train(phase));
  const Dataset ds = open_dataset(a.data);
  const ModelConfig mc = model_for(cfg, ds);
  std::optional<Checkpoint> init;
  if (a.init) {
    if (!fs::exists(*a.init)) throw ConfigError("no checkpoint at " + *a.init);
    init = load_checkpoint(*a.init);
  }
  const fs::path ckpt_path(a.out);
  require_writable_file(ckpt_path);

  const std::uint64_t root = cfg.train(phase).seed;
  GnMapNet net(mc, derive_seed(root, "model"));
  if (init) {
    const auto carried = carry_shared(net, *init);
    out << "carried " << carried.size() << " encoder/decoder tensors from " << *a.init << "\n";
    for (const auto& name : carried) log.debug("carried " + name);
  }
  TrainConfig tc = cfg.train(phase);
  tc.seed = derive_seed(root, std::string(phase_name(phase)));

  log.info(std::string(phase_name(phase)) + ": " + std::to_string(tc.steps) + " steps on " +
           std::to_string(ds.train.size()) + " tiles");
  const TrainResult result = phase == Phase::pretrain ? pretrain_run(net, ds.train, tc, progress(log, tc.steps))
                                                      : finetune_run(net, ds.train, tc, progress(log, tc.steps));

  json meta = {{"dataset", fs::absolute(a.data).string()}, {"train", train_config_to_json(cfg.train(phase))}};
  if (a.init) meta["init"] = fs::absolute(*a.init).string();
  json m = manifest(std::string(phase_name(phase)), argv, cfg);
  m["seeds"] = {{"root", root}, {"model", derive_seed(root, "model")}, {"train", tc.seed}};
  m["model"] = model_config_to_json(mc);
  m["outputs"] = {ckpt_path.string(), sibling(ckpt_path, ".loss.csv").string()};
  write_training_outputs(ckpt_path, make_checkpoint(net, phase, tc.steps, root, meta), result, m);

  if (result.losses.empty()) {
    out << "no steps run; wrote " << ckpt_path.string() << "\n";
  } else {
    out << "final loss " << fmt("%.6f", result.losses.back()) << " after " << result.losses.size() << " steps; wrote "
        << ckpt_path.string() << "\n";
  }
  return kExitOk;
}

struct EvalArgs {
  Options common;
  std::string data, out, split = "test";
  std::optional<std::string> checkpoint;
  std::optional<double> threshold;
  bool oracle = false;
  bool single_tour = false;
};

GnMapNet& restore(std::optional<GnMapNet>& slot, const fs::path& path, const Dataset& ds) {
  if (!fs::exists(path)) throw ConfigError("no checkpoint at " + path.string());
  const Checkpoint ckpt = load_checkpoint(path);
  if (!(ckpt.model.geometry == ds.config.geometry)) {
    throw ConfigError("checkpoint geometry differs from the dataset geometry");
  }
  slot.emplace(ckpt.model, 0);
  load_into(*slot, ckpt);
  return *slot;
}

int cmd_evaluate(const EvalArgs& a, const std::vector<std::string>& argv, std::ostream& out, const Log& log) {
  RunConfig cfg = resolve_base(a.common);
  if (a.threshold) cfg.threshold = *a.threshold;
  if (!(cfg.threshold > 0.0)) throw ConfigError("--threshold must be positive");
  if (a.oracle == a.checkpoint.has_value()) {
    throw ConfigError("evaluate needs exactly one of --checkpoint or --oracle-gt");
  }
  const Dataset ds = open_dataset(a.data);
  const std::vector<TileSample>& tiles = split_of(ds, a.split);
  if (tiles.empty()) throw ConfigError("split " + a.split + " is empty");
  std::optional<GnMapNet> net;
  if (a.checkpoint) restore(net, *a.checkpoint, ds);
  const fs::path dir(a.out);
  require_writable_dir(dir);

  std::vector<std::pair<std::string, EvalReport>> rows;
  const EvalReport main = a.oracle ? evaluate_oracle(tiles, cfg.threshold) : evaluate_model(*net, tiles, cfg.threshold);
  rows.emplace_back(a.oracle ? "GT" : "GNMap", main);
  json report = report_to_json(main);
  report["split"] = a.split;
  if (a.single_tour) {
    const auto [best, index] = best_single_tour(tiles, cfg.threshold);
    rows.emplace_back("single tour #" + std::to_string(index), best);
    report["single_tour"] = report_to_json(best);
    report["single_tour"]["tour"] = index;
  }
  log.info("evaluated " + std::to_string(main.n) + " " + a.split + " tiles");
  const std::string table = render_table(rows);

  json m = manifest("evaluate", argv, cfg);
  m["dataset"] = fs::absolute(a.data).string();
  if (a.checkpoint) m["checkpoint"] = fs::absolute(*a.checkpoint).string();
  write_file(dir / "report.json", report.dump(1) + "\n");
  write_file(dir / "report.csv", render_csv(main));
  write_file(dir / "table.txt", table);
  write_file(dir / "run.json", m.dump(1) + "\n");
  out << table;
  return kExitOk;
}

struct AblateArgs {
  Options common;
  TrainFlags flags;
  std::string data, pretrained, out, split = "test";
};

std::string render_ablation(const EvalReport& fresh, const EvalReport& pre) {
  const std::string delta = (pre.f1 >= fresh.f1 ? "+" : "") + percent(pre.f1 - fresh.f1);
  std::string s = "Method   | mAP  | mAR  | F1   | delta F1\n";
  s += "w/o Pre. | " + percent(fresh.mAP) + " | " + percent(fresh.mAR) + " | " + percent(fresh.f1) + " | -\n";
  s += "w/ Pre.  | " + percent(pre.mAP) + " | " + percent(pre.mAR) + " | " + percent(pre.f1) + " | " + delta + "\n";
  return s;
}

int cmd_ablate(const AblateArgs& a, const std::vector<std::string>& argv, std::ostream& out, const Log& log) {
  RunConfig cfg = resolve_base(a.common);
  a.flags.apply(cfg.finetune);
  const Dataset ds = open_dataset(a.data);
  const std::vector<TileSample>& tiles = split_of(ds, a.split);
  const ModelConfig mc = model_for(cfg, ds);
  if (!fs::exists(a.pretrained)) throw ConfigError("no checkpoint at " + a.pretrained);
  const Checkpoint pre = load_checkpoint(a.pretrained);
  const fs::path dir(a.out);
  require_writable_dir(dir);

  const std::uint64_t root = cfg.finetune.seed;
  TrainConfig tc = cfg.finetune;
  tc.seed = derive_seed(root, "finetune");
  EvalReport reports[2];
  for (int with = 0; with < 2; ++with) {
    GnMapNet net(mc, derive_seed(root, "model"));
    if (with) log.info("carried " + std::to_string(carry_shared(net, pre).size()) + " tensors");
    log.info(with ? "finetuning from the pretrained checkpoint" : "finetuning from fresh initialization");
    const TrainResult r = finetune_run(net, ds.train, tc, progress(log, tc.steps));
    reports[with] = evaluate_model(net, tiles, cfg.threshold);
    const fs::path ckpt = dir / (with ? "with_pretraining.ckpt" : "without_pretraining.ckpt");
    save_checkpoint(make_checkpoint(net, Phase::finetune, tc.steps, root), ckpt);
    write_file(sibling(ckpt, ".loss.csv"), loss_curve_csv(r.losses));
  }
  const std::string table = render_ablation(reports[0], reports[1]);
  json result = {{"split", a.split},
                 {"rows", {{{"method", "w/o Pre."}, {"report", report_to_json(reports[0])}},
                           {{"method", "w/ Pre."}, {"report", report_to_json(reports[1])}}}},
                 {"delta_f1", reports[1].f1 - reports[0].f1}};
  json m = manifest("ablate", argv, cfg);
  m["seeds"] = {{"root", root}, {"model", derive_seed(root, "model")}, {"train", tc.seed}};
  m["pretrained"] = fs::absolute(a.pretrained).string();
  write_file(dir / "ablation.json", result.dump(1) + "\n");
  write_file(dir / "table.txt", table);
  write_file(dir / "run.json", m.dump(1) + "\n");
  out << table;
  return kExitOk;
}

struct GradArgs {
  std::string module = "all";
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
};

int cmd_grad_check(const GradArgs& a, std::ostream& out, const Log& log) {
  std::vector<std::string> modules;
  if (a.module == "all") {
    modules = grad_suite_modules();
  } else {
    const auto& known = grad_suite_modules();
    if (std::find(known.begin(), known.end(), a.module) == known.end()) {
      throw ConfigError("unknown module '" + a.module + "'");
    }
    modules = {a.module};
  }
  json results = json::array();
  bool all_pass = true;
  for (const std::string& m : modules) {
    const nn::GradCheckReport r = run_grad_check(m, a.seed);
    const bool pass = r.passed(a.tolerance);
    all_pass = all_pass && pass;
    log.info(m + ": max relative error " + fmt("%.3g", r.max_rel_error) + (pass ? "" : " FAIL"));
    results.push_back({{"module", m},
                       {"seed", a.seed},
                       {"max_rel_error", r.max_rel_error},
                       {"tolerance", a.tolerance},
                       {"pass", pass}});
  }
  out << (results.size() == 1 ? results[0] : results).dump(1) << "\n";
  return all_pass ? kExitOk : kExitRuntime;
}

void add_common(CLI::App* app, Options& o) {
  app->add_option("--config", o.config, "JSON run config; flags override it");
  app->add_option("--seed", o.seed, "Root seed");
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  LogLevel level;
  try {
    level = log_level_from_env();
  } catch (const ConfigError& e) {
    err << "[gnmap] error: " << e.what() << "\n";
    return kExitConfig;
  }
  const Log log(err, level);

  CLI::App app{"Fuse multi-tour map tiles with a shared attention autoencoder."};
  app.name(args.empty() ? "gnmap" : fs::path(args[0]).filename().string());
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* s = app.add_subcommand("synth", "Generate a synthetic multi-tour dataset");
  add_common(s, synth.common);
  s->add_option("--out", synth.out, "Dataset directory")->required();
  s->add_option("--tiles", synth.tiles, "Total tiles, split 8:1:1");
  s->add_option("--tours", synth.tours, "Mean tours per tile");
  s->add_option("--coverage", synth.coverage, "Per-tour element retention");
  s->add_option("--jitter", synth.jitter, "Vertex jitter sigma in meters");

  TrainArgs pre, fine;
  CLI::App* p = app.add_subcommand("pretrain", "Masked-completion pretraining");
  CLI::App* f = app.add_subcommand("finetune", "Multi-tour fusion finetuning");
  for (auto [cmd, ta] : {std::pair{p, &pre}, std::pair{f, &fine}}) {
    add_common(cmd, ta->common);
    ta->flags.add_to(cmd, cmd == p);
    cmd->add_option("--data", ta->data, "Dataset directory")->required();
    cmd->add_option("--out", ta->out, "Checkpoint to write")->required();
  }
  f->add_option("--init", fine.init, "Pretraining checkpoint to start from");

  EvalArgs ev;
  CLI::App* e = app.add_subcommand("evaluate", "Score fused rasters against ground truth");
  add_common(e, ev.common);
  e->add_option("--data", ev.data, "Dataset directory")->required();
  e->add_option("--out", ev.out, "Report directory")->required();
  e->add_option("--checkpoint", ev.checkpoint, "Finetuned checkpoint");
  e->add_option("--split", ev.split, "train, valid or test");
  e->add_option("--threshold", ev.threshold, "Match distance in meters");
  e->add_flag("--oracle-gt", ev.oracle, "Score the ground truth against itself");
  e->add_flag("--single-tour", ev.single_tour, "Also score the best single tour");

  AblateArgs ab;
  CLI::App* a = app.add_subcommand("ablate", "Finetune with and without pretraining and compare");
  add_common(a, ab.common);
  ab.flags.add_to(a, false);
  a->add_option("--data", ab.data, "Dataset directory")->required();
  a->add_option("--pretrained", ab.pretrained, "Pretraining checkpoint")->required();
  a->add_option("--out", ab.out, "Output directory")->required();
  a->add_option("--split", ab.split, "Split to evaluate on");

  GradArgs gr;
  CLI::App* g = app.add_subcommand("grad-check", "Finite-difference gradient checks");
  g->add_option("--module", gr.module, "Module name or 'all'");
  g->add_option("--seed", gr.seed, "Seed for shapes and values");
  g->add_option("--tolerance", gr.tolerance, "Maximum relative error");

  try {
    std::vector<std::string> rest(args.rbegin(), args.rend());
    if (!rest.empty()) rest.pop_back();
    app.parse(rest);
  } catch (const CLI::ParseError& ex) {
    const int code = app.exit(ex, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*s) return cmd_synth(synth, args, out, log);
    if (*p) return cmd_train(Phase::pretrain, pre, args, out, log);
    if (*f) return cmd_train(Phase::finetune, fine, args, out, log);
    if (*e) return cmd_evaluate(ev, args, out, log);
    if (*a) return cmd_ablate(ab, args, out, log);
    if (*g) return cmd_grad_check(gr, out, log);
  } catch (const ConfigError& ex) {
    log.error(ex.what());
    return kExitConfig;
  } catch (const std::exception& ex) {
    log.error(ex.what());
    return kExitRuntime;
  }
  return kExitConfig;
}

}  // namespace gnmap::cli
