#include "cbcl/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>
#include <spdlog/sinks/stdout_color_sinks.h>
#include <spdlog/spdlog.h>

#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "cbcl/agg_var.hpp"
#include "cbcl/arrangements.hpp"
#include "cbcl/classifier.hpp"
#include "cbcl/cleaning_sim.hpp"
#include "cbcl/protocol.hpp"

namespace cbcl::cli {
namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

std::shared_ptr<spdlog::logger> logger() {
  if (auto existing = spdlog::get("cbcl")) return existing;
  auto created = spdlog::stderr_color_mt("cbcl");
  created->set_pattern("[%l] %v");
  return created;
}

void configure_logging() {
  const char* env = std::getenv("CBCL_LOG");
  logger()->set_level(env ? spdlog::level::from_str(env) : spdlog::level::warn);
}

template <typename T>
T parse_value(const std::string& key, const std::string& text) {
  T v{};
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw UsageError("bad value `" + text + "` for `" + key + "`");
  }
  return v;
}

std::string shortest(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for writing");
  f << text;
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": write failed");
}

std::string read_text(const fs::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError(DataError::Kind::kIo, path.string() + ": cannot open for reading");
  std::ostringstream buf;
  buf << f.rdbuf();
  return buf.str();
}

std::string fixed(double v, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pad(std::string s, std::size_t width) {
  if (s.size() < width) s.append(width - s.size(), ' ');
  return s;
}

}  // namespace

SyntheticSpec parse_synthetic(const std::string& text) {
  SyntheticSpec spec;
  if (text.empty() || text == "default") return spec;
  std::istringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw UsageError("--synthetic: expected key=value, got `" + item + "`");
    const std::string key = item.substr(0, eq);
    const std::string value = item.substr(eq + 1);
    if (key == "classes") {
      spec.n_classes = parse_value<std::uint32_t>(key, value);
    } else if (key == "dim") {
      spec.dim = parse_value<std::uint32_t>(key, value);
    } else if (key == "per_class") {
      spec.per_class_count = parse_value<std::uint32_t>(key, value);
    } else if (key == "scale") {
      spec.class_mean_scale = parse_value<double>(key, value);
    } else if (key == "stddev") {
      spec.within_class_stddev = parse_value<double>(key, value);
    } else if (key == "seed") {
      spec.seed = parse_value<std::uint64_t>(key, value);
    } else {
      throw UsageError("--synthetic: unknown key `" + key + "`");
    }
  }
  return spec;
}

std::string format_synthetic(const SyntheticSpec& spec) {
  return "classes=" + std::to_string(spec.n_classes) + ",dim=" + std::to_string(spec.dim) +
         ",per_class=" + std::to_string(spec.per_class_count) +
         ",scale=" + shortest(spec.class_mean_scale) +
         ",stddev=" + shortest(spec.within_class_stddev) + ",seed=" + std::to_string(spec.seed);
}

void ExperimentConfig::validate() const {
  if (dataset.empty() == !synthetic.has_value()) {
    throw UsageError("exactly one of --dataset or --synthetic is required");
  }
  if (synthetic) synthetic->validate();
  if (shots < 1) throw UsageError("--shots must be >= 1");
  if (classes_per_increment < 1) throw UsageError("--classes-per-inc must be >= 1");
  if (runs < 1) throw UsageError("--runs must be >= 1");
  if (method != "cbcl" && method != "ft" && method != "flb") {
    throw UsageError("--method must be one of cbcl, ft, flb");
  }
  if (folds < 2) throw UsageError("--folds must be >= 2");
  try {
    parse_grid(grid);
  } catch (const DataError& e) {
    throw UsageError(std::string("--grid: ") + e.what());
  }
  try {
    train.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
}

std::string ExperimentConfig::to_json() const {
  ordered_json j;
  j["dataset"] = dataset;
  j["synthetic"] = synthetic ? format_synthetic(*synthetic) : std::string();
  j["shots"] = shots;
  j["classes_per_increment"] = classes_per_increment;
  j["runs"] = runs;
  j["method"] = method;
  j["seed"] = seed;
  j["grid"] = grid;
  j["folds"] = folds;
  j["learning_rate"] = train.learning_rate;
  j["epochs"] = train.epochs;
  j["batch_size"] = train.batch_size;
  j["out"] = out;
  return j.dump(2) + "\n";
}

ExperimentConfig ExperimentConfig::from_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw DataError(DataError::Kind::kMalformedHeader,
                    std::string("config: ") + e.what() + " (byte " + std::to_string(e.byte) + ")",
                    e.byte);
  }
  ExperimentConfig c;
  try {
    c.dataset = j.value("dataset", c.dataset);
    if (const std::string s = j.value("synthetic", std::string()); !s.empty()) {
      c.synthetic = parse_synthetic(s);
    }
    c.shots = j.value("shots", c.shots);
    c.classes_per_increment = j.value("classes_per_increment", c.classes_per_increment);
    c.runs = j.value("runs", c.runs);
    c.method = j.value("method", c.method);
    c.seed = j.value("seed", c.seed);
    c.grid = j.value("grid", c.grid);
    c.folds = j.value("folds", c.folds);
    c.train.learning_rate = j.value("learning_rate", c.train.learning_rate);
    c.train.epochs = j.value("epochs", c.train.epochs);
    c.train.batch_size = j.value("batch_size", c.train.batch_size);
    c.out = j.value("out", c.out);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(DataError::Kind::kMalformedHeader, std::string("config: ") + e.what());
  }
  return c;
}

Dataset load_dataset(const ExperimentConfig& cfg) {
  if (cfg.synthetic) return generate_synthetic(*cfg.synthetic);
  Dataset ds = load_features(cfg.dataset, format_from_path(cfg.dataset));
  ds.validate();
  return ds;
}

namespace {

// Flags shared by the experiment-style commands.
struct ExperimentFlags {
  ExperimentConfig cfg;
  std::string synthetic_text;
  std::string config_path;
  std::size_t threads = 1;
  std::map<std::string, CLI::Option*> opts;

  void add_to(CLI::App* app, bool with_runs) {
    opts["dataset"] = app->add_option("--dataset", cfg.dataset, "Feature file (CBFV binary or .csv)");
    opts["synthetic"] = app->add_option("--synthetic", synthetic_text,
                                        "Synthetic dataset, e.g. classes=22,dim=32,seed=1");
    opts["shots"] = app->add_option("--shots", cfg.shots, "Training examples per class");
    opts["classes-per-inc"] =
        app->add_option("--classes-per-inc", cfg.classes_per_increment, "Classes per increment");
    opts["seed"] = app->add_option("--seed", cfg.seed, "Master seed");
    opts["grid"] = app->add_option("--grid", cfg.grid, "auto or D1,D2,.../n1,n2,...");
    opts["folds"] = app->add_option("--folds", cfg.folds, "Cross-validation folds");
    opts["out"] = app->add_option("--out", cfg.out, "Output directory");
    if (with_runs) {
      opts["runs"] = app->add_option("--runs", cfg.runs, "Randomised runs");
      opts["method"] = app->add_option("--method", cfg.method, "cbcl, ft or flb");
      opts["lr"] = app->add_option("--lr", cfg.train.learning_rate, "Baseline SGD learning rate");
      opts["epochs"] = app->add_option("--epochs", cfg.train.epochs, "Baseline epochs");
      opts["batch-size"] = app->add_option("--batch-size", cfg.train.batch_size, "Baseline batch");
      opts["config"] = app->add_option("--config", config_path, "Re-run from a saved config.json");
    }
    app->add_option("--threads", threads, "Worker threads; results do not depend on it")
        ->check(CLI::PositiveNumber);
  }

  // Applies a saved config first, then any flag given on the command line.
  ExperimentConfig resolve() const {
    ExperimentConfig c = cfg;
    if (!config_path.empty()) {
      c = ExperimentConfig::from_json(read_text(config_path));
      auto given = [&](const char* name) { return opts.at(name)->count() > 0; };
      if (given("dataset")) { c.dataset = cfg.dataset; c.synthetic.reset(); }
      if (given("synthetic")) { c.synthetic = parse_synthetic(synthetic_text); c.dataset.clear(); }
      if (given("shots")) c.shots = cfg.shots;
      if (given("classes-per-inc")) c.classes_per_increment = cfg.classes_per_increment;
      if (given("seed")) c.seed = cfg.seed;
      if (given("grid")) c.grid = cfg.grid;
      if (given("folds")) c.folds = cfg.folds;
      if (given("out")) c.out = cfg.out;
      if (given("runs")) c.runs = cfg.runs;
      if (given("method")) c.method = cfg.method;
      if (given("lr")) c.train.learning_rate = cfg.train.learning_rate;
      if (given("epochs")) c.train.epochs = cfg.train.epochs;
      if (given("batch-size")) c.train.batch_size = cfg.train.batch_size;
    } else if (opts.at("synthetic")->count() > 0) {
      c.synthetic = parse_synthetic(synthetic_text);
    }
    c.validate();
    return c;
  }
};

struct RunResult {
  std::vector<IncrementMetrics> metrics;
  std::vector<Hyperparams> hyperparams;  // cbcl only
};

RunResult run_one(const Dataset& ds, const ExperimentConfig& cfg, std::size_t run) {
  const std::uint64_t run_seed = derive_seed(cfg.seed, run);
  const IncrementPlan plan = make_plan(ds, cfg.classes_per_increment, cfg.shots, run_seed);
  RunResult r;
  if (cfg.method == "cbcl") {
    CbclOptions options{parse_grid(cfg.grid), cfg.folds};
    SessionState state = run_cbcl_session(ds, plan, options);
    r.metrics = std::move(state.metrics);
    r.hyperparams = std::move(state.hyper_history);
  } else {
    TrainConfig train = cfg.train;
    train.seed = derive_seed(run_seed, kTrainStream);
    r.metrics = run_baseline_session(
        ds, plan, cfg.method == "ft" ? BaselineMethod::kFineTune : BaselineMethod::kFewShotBaseline,
        train);
  }
  return r;
}

std::string summary_table(const ExperimentConfig& cfg, const RunSummary& s) {
  std::string out = "method " + cfg.method + "  runs " + std::to_string(cfg.runs) + "  shots " +
                    std::to_string(cfg.shots) + "  classes/increment " +
                    std::to_string(cfg.classes_per_increment) + "\n";
  out += "increment  classes  mean_accuracy  std_accuracy\n";
  for (std::size_t i = 0; i < s.per_increment_mean.size(); ++i) {
    out += pad(std::to_string(i + 1), 11) + pad(std::to_string(s.n_classes_seen[i]), 9) +
           pad(fixed(s.per_increment_mean[i]), 15) + fixed(s.per_increment_std[i]) + "\n";
  }
  out += "average incremental accuracy " + fixed(s.average_incremental_accuracy) + "\n";
  return out;
}

int cmd_run(const ExperimentFlags& flags, std::ostream& out) {
  const ExperimentConfig cfg = flags.resolve();
  const Dataset ds = load_dataset(cfg);
  logger()->info("run: {} examples, {} classes, dim {}", ds.size(), ds.n_classes(), ds.dim());
  const std::function<RunResult(std::size_t)> job = [&](std::size_t r) {
    logger()->debug("run {} started", r);
    return run_one(ds, cfg, r);
  };
  const auto results = parallel_map(cfg.runs, flags.threads, job);

  std::vector<std::vector<IncrementMetrics>> all;
  std::string records;
  std::string hyper_records;
  for (std::size_t r = 0; r < results.size(); ++r) {
    all.push_back(results[r].metrics);
    for (const auto& m : results[r].metrics) {
      ordered_json j;
      j["run"] = r;
      j["increment"] = m.increment_index;
      j["n_classes_seen"] = m.n_classes_seen;
      j["accuracy"] = m.accuracy;
      records += j.dump() + "\n";
    }
    for (std::size_t i = 0; i < results[r].hyperparams.size(); ++i) {
      ordered_json j;
      j["run"] = r;
      j["increment"] = i + 1;
      j["D"] = results[r].hyperparams[i].threshold;
      j["n_vote"] = results[r].hyperparams[i].n_vote;
      hyper_records += j.dump() + "\n";
    }
  }
  const RunSummary summary = aggregate_runs(all);
  const std::string table = summary_table(cfg, summary);
  out << table;
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    write_text(fs::path(cfg.out) / "metrics.jsonl", records);
    write_text(fs::path(cfg.out) / "summary.txt", table);
    write_text(fs::path(cfg.out) / "config.json", cfg.to_json());
    if (cfg.method == "cbcl") write_text(fs::path(cfg.out) / "hyperparams.jsonl", hyper_records);
  }
  return kOk;
}

int cmd_tune(const ExperimentFlags& flags, std::ostream& out) {
  ExperimentConfig cfg = flags.resolve();
  cfg.method = "cbcl";
  cfg.runs = 1;
  const Dataset ds = load_dataset(cfg);
  const IncrementPlan plan =
      make_plan(ds, cfg.classes_per_increment, cfg.shots, derive_seed(cfg.seed, 0));
  const SessionState state = run_cbcl_session(ds, plan, {parse_grid(cfg.grid), cfg.folds});
  std::string table = "increment  classes  D            n_vote  accuracy\n";
  std::string records;
  for (std::size_t i = 0; i < state.hyper_history.size(); ++i) {
    const auto& h = state.hyper_history[i];
    const auto& m = state.metrics[i];
    table += pad(std::to_string(i + 1), 11) + pad(std::to_string(m.n_classes_seen), 9) +
             pad(fixed(h.threshold, 6), 13) + pad(std::to_string(h.n_vote), 8) +
             fixed(m.accuracy) + "\n";
    ordered_json j;
    j["increment"] = i + 1;
    j["D"] = h.threshold;
    j["n_vote"] = h.n_vote;
    j["accuracy"] = m.accuracy;
    records += j.dump() + "\n";
  }
  out << table;
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    write_text(fs::path(cfg.out) / "tune.jsonl", records);
    write_text(fs::path(cfg.out) / "tune.txt", table);
    save_model_store(state.store, fs::path(cfg.out) / "model.cbms");
  }
  return kOk;
}

int cmd_gen(const std::string& synthetic, const std::string& path, const std::string& format,
            std::ostream& out) {
  if (path.empty()) throw UsageError("gen: --out is required");
  const SyntheticSpec spec = parse_synthetic(synthetic);
  const Dataset ds = generate_synthetic(spec);
  const FeatureFormat fmt = format.empty() ? format_from_path(path) : parse_format(format);
  save_features(ds, path, fmt);
  out << "wrote " << path << ": " << ds.size() << " examples, " << ds.n_classes()
      << " classes, dim " << ds.dim() << "\n";
  return kOk;
}

int cmd_validate(const std::string& path, const std::string& format, std::ostream& out) {
  const FeatureFormat fmt = format.empty() ? format_from_path(path) : parse_format(format);
  const Dataset ds = load_features(path, fmt);
  ds.validate();
  out << "ok " << path << ": " << ds.size() << " records, dim " << ds.dim() << ", "
      << ds.n_classes() << " classes\n";
  return kOk;
}

int cmd_arrange_learn(const std::string& store_path, const std::string& labels_path,
                      const std::string& name, const std::string& scene_path, std::ostream& out) {
  ArrangementStore store;
  if (fs::exists(store_path)) {
    store = load_arrangement_store(store_path);
  } else {
    if (labels_path.empty()) {
      throw UsageError("arrange learn: --labels is required when creating a new store");
    }
    store.classes = load_label_map(labels_path);
  }
  const Scene scene = load_scene(scene_path, store.classes);
  learn_arrangement(store, name, scene);
  save_arrangement_store(store, store_path);
  out << "learned " << name << " (" << store.centroids.size() << " arrangements, vector length "
      << arrangement_length(store.n_classes()) << ")\n";
  return kOk;
}

int cmd_arrange_check(const std::string& store_path, const std::string& scene_path,
                      const std::string& out_path, std::ostream& out) {
  const ArrangementStore store = load_arrangement_store(store_path);
  const Scene scene = load_scene(scene_path, store.classes);
  const ArrangementVerdict verdict = check_arrangement(store, scene);
  const std::string text = format_verdict(verdict, store.classes);
  out << text;
  if (!out_path.empty()) write_text(out_path, text);
  return kOk;
}

struct CleanFlags {
  std::size_t trials = 10000;
  std::size_t objects = 6;
  std::size_t targets = 2;
  std::string target_class;
  double p_miss = 0.2;
  double p_move_fail = 0.0;
};

int cmd_clean_sim(const ExperimentFlags& flags, const CleanFlags& clean, std::ostream& out) {
  ExperimentConfig cfg = flags.resolve();
  const Dataset ds = load_dataset(cfg);
  const IncrementPlan plan =
      make_plan(ds, cfg.classes_per_increment, cfg.shots, derive_seed(cfg.seed, 0));
  const SessionState state = run_cbcl_session(ds, plan, {parse_grid(cfg.grid), cfg.folds});
  const std::size_t n_vote = state.hyper_history.back().n_vote;
  const Split split = split_shots(ds, cfg.shots, plan.split_seed());
  const TestPool pool(split.test);
  const CentroidIndex index(state.store);

  CleaningTrialSpec spec;
  spec.n_objects = clean.objects;
  spec.n_targets = clean.targets;
  spec.target_class =
      clean.target_class.empty() ? plan.class_order.front() : ds.label_map.id(clean.target_class);
  spec.p_detect_miss = clean.p_miss;
  spec.p_move_fail = clean.p_move_fail;
  spec.seed = derive_seed(cfg.seed, 0xc1ea);
  try {
    spec.validate();
  } catch (const DataError& e) {
    throw UsageError(e.what());
  }
  const ErrorBreakdown b = run_campaign(spec, clean.trials, index, n_vote, pool, flags.threads);
  const double expected = expected_classification_error(spec, index, n_vote, pool);
  std::string text = "target " + ds.label_map.name(spec.target_class) + "  trials " +
                     std::to_string(clean.trials) + "\n" + format_breakdown(b) +
                     "expected classification error " + fixed(expected, 2) + "\n";
  out << text;
  if (!cfg.out.empty()) {
    fs::create_directories(cfg.out);
    ordered_json j;
    j["target_class"] = ds.label_map.name(spec.target_class);
    j["trials"] = clean.trials;
    j["detection_error"] = b.detection_error;
    j["classification_error"] = b.classification_error;
    j["movement_error"] = b.movement_error;
    j["expected_classification_error"] = expected;
    j["objects"] = b.counts.objects;
    j["missed"] = b.counts.missed;
    j["classified"] = b.counts.classified;
    j["misclassified"] = b.counts.misclassified;
    j["move_attempts"] = b.counts.move_attempts;
    j["move_failures"] = b.counts.move_failures;
    write_text(fs::path(cfg.out) / "breakdown.json", j.dump(2) + "\n");
    write_text(fs::path(cfg.out) / "breakdown.txt", text);
  }
  return kOk;
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  configure_logging();
  CLI::App app{"Few-shot class-incremental learning with centroid-based concept learning", "cbcl"};
  app.require_subcommand(1);
  app.set_help_all_flag("--help-all");

  std::string gen_synthetic;
  std::string gen_out;
  std::string gen_format;
  auto* gen = app.add_subcommand("gen", "Generate a synthetic feature file");
  gen->add_option("--synthetic", gen_synthetic, "classes=..,dim=..,per_class=..,scale=..,stddev=..,seed=..");
  gen->add_option("--out", gen_out, "Output feature file")->required();
  gen->add_option("--format", gen_format, "binary or csv (default from extension)");

  ExperimentFlags run_flags;
  auto* run = app.add_subcommand("run", "Run an incremental experiment");
  run_flags.add_to(run, true);

  ExperimentFlags tune_flags;
  auto* tune = app.add_subcommand("tune", "Show the hyperparameters chosen at each increment");
  tune_flags.add_to(tune, false);

  std::string validate_path;
  std::string validate_format;
  auto* validate = app.add_subcommand("validate", "Check a feature file");
  validate->add_option("file", validate_path, "Feature file")->required();
  validate->add_option("--format", validate_format, "binary or csv (default from extension)");

  auto* arrange = app.add_subcommand("arrange", "Learn or check object arrangements");
  arrange->require_subcommand(1);
  std::string store_path;
  std::string labels_path;
  std::string arrangement_name;
  std::string scene_path;
  std::string verdict_out;
  auto* learn = arrange->add_subcommand("learn", "Learn an arrangement from one scene");
  learn->add_option("--store", store_path, "Arrangement store file")->required();
  learn->add_option("--labels", labels_path, "Label map (needed for a new store)");
  learn->add_option("--name", arrangement_name, "Arrangement name")->required();
  learn->add_option("--scene", scene_path, "Scene file")->required();
  auto* check = arrange->add_subcommand("check", "Check a scene against learned arrangements");
  check->add_option("--store", store_path, "Arrangement store file")->required();
  check->add_option("--scene", scene_path, "Scene file")->required();
  check->add_option("--out", verdict_out, "Also write the verdict here");

  ExperimentFlags clean_flags;
  CleanFlags clean;
  auto* clean_sim = app.add_subcommand("clean-sim", "Simulate the table-cleaning task");
  clean_flags.add_to(clean_sim, false);
  clean_sim->add_option("--trials", clean.trials, "Number of simulated tables");
  clean_sim->add_option("--objects", clean.objects, "Objects per table");
  clean_sim->add_option("--targets", clean.targets, "Objects of the class to clean");
  clean_sim->add_option("--target-class", clean.target_class, "Class to clean (name)");
  clean_sim->add_option("--p-miss", clean.p_miss, "Detection miss probability");
  clean_sim->add_option("--p-move-fail", clean.p_move_fail, "Movement failure probability");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*gen) return cmd_gen(gen_synthetic, gen_out, gen_format, out);
    if (*run) return cmd_run(run_flags, out);
    if (*tune) return cmd_tune(tune_flags, out);
    if (*validate) return cmd_validate(validate_path, validate_format, out);
    if (*learn) return cmd_arrange_learn(store_path, labels_path, arrangement_name, scene_path, out);
    if (*check) return cmd_arrange_check(store_path, scene_path, verdict_out, out);
    if (*clean_sim) return cmd_clean_sim(clean_flags, clean, out);
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n" << app.help();
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << "\n";
    return kDataError;
  } catch (const InvariantError& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  } catch (const std::exception& e) {
    err << "internal error: " << e.what() << "\n";
    return kInternalError;
  }
  return kUsage;
}

}  // namespace cbcl::cli
