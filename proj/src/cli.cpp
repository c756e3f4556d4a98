#include "modsel/cli.hpp"

#include <chrono>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "json.hpp"
#include "modsel/optimizer.hpp"
#include "modsel/rng.hpp"
#include "modsel/universe.hpp"

namespace modsel {

using nlohmann::json;
using nlohmann::ordered_json;
namespace fs = std::filesystem;

namespace {

constexpr const char* kFallbackJudge = "gemini-1.5-pro";

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::ConfigError, "cannot open " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw Error(ErrorCode::ConfigError, "cannot write " + path.string());
}

fs::path absolute_path(const fs::path& p) { return fs::absolute(p).lexically_normal(); }

SystemGraph resolve_system(const std::string& system) {
  if (fs::exists(system)) return load_system(system);
  for (const auto& name : builtin_system_names()) {
    if (name == system) return builtin_system(name);
  }
  throw Error(ErrorCode::ConfigError, "system '" + system + "' is neither a file nor a built-in system");
}

ordered_json named(const SystemGraph& graph, const Allocation& f, const ModelPool& pool) {
  return ordered_json::parse(allocation_json(graph, f, pool));
}

std::string fixed2(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << v;
  return os.str();
}

ordered_json report_json(const OptimizerReport& r, const RunConfig& cfg, const SystemGraph& graph,
                         const ModelPool& pool, const DatasetSplit& split, const std::string& judge) {
  ordered_json history = ordered_json::array();
  for (const auto& h : r.history) {
    history.push_back({{"iteration", h.iteration},
                       {"cost", h.cost},
                       {"allocation", named(graph, h.allocation, pool)},
                       {"train_accuracy", h.train_accuracy}});
  }
  ordered_json doc;
  doc["optimizer"] = r.optimizer;
  doc["system"] = graph.name();
  doc["pool"] = pool.name();
  doc["dataset"] = cfg.dataset.stem().string();
  doc["seed"] = cfg.seed;
  doc["budget"] = cfg.budget;
  doc["gamma"] = cfg.gamma;
  doc["judge"] = r.optimizer == "llmselector" ? json(judge) : json(nullptr);
  doc["train_size"] = split.train.size();
  doc["eval_size"] = split.eval.size();
  doc["best_allocation"] = named(graph, r.best_allocation, pool);
  doc["train_accuracy"] = r.train_accuracy;
  doc["eval_accuracy"] = r.eval_accuracy ? json(*r.eval_accuracy) : json(nullptr);
  doc["allocations_evaluated"] = r.allocations_evaluated;
  doc["allocations_to_best"] = r.allocations_to_best;
  doc["iterations"] = r.iterations;
  doc["converged"] = r.converged;
  doc["budget_exhausted"] = r.budget_exhausted;
  doc["history"] = std::move(history);
  return doc;
}

std::string diagnoses_jsonl(const OptimizerReport& r, const SystemGraph& graph, const ModelPool& pool) {
  std::string out;
  for (const auto& d : r.diagnoses) {
    ordered_json rec{{"task_id", d.task_id},
                     {"module", d.module.index},
                     {"allocation", named(graph, d.allocation, pool)},
                     {"judged", d.judged},
                     {"error_flag", d.error_flag},
                     {"estimated_perf", d.estimated_perf},
                     {"end_to_end", d.end_to_end},
                     {"combined_score", d.combined_score},
                     {"unparseable", d.unparseable},
                     {"raw_judgment", d.raw_judgment}};
    out += rec.dump() + "\n";
  }
  return out;
}

int check_universe(const fs::path& path, std::size_t cap, std::ostream& out) {
  const auto table = parse_perf_table(read_text(path), cap);
  bool ok = true;
  if (const auto c = check_intra_monotone(table)) {
    ok = false;
    out << "intra-monotone: FAIL module " << c->module.index << " models " << c->k.index << " vs "
        << c->k_prime.index << " task " << c->task << " f=" << c->f.label() << " f'=" << c->f_prime.label() << "\n";
  } else {
    out << "intra-monotone: pass\n";
  }
  if (const auto c = check_inter_monotone(table)) {
    ok = false;
    out << "inter-monotone: FAIL module " << c->module.index << " hurts module " << c->other.index << " models "
        << c->k.index << " vs " << c->k_prime.index << " task " << c->task << " f=" << c->f.label()
        << " f'=" << c->f_prime.label() << "\n";
  } else {
    out << "inter-monotone: pass\n";
  }
  std::size_t unique = 0;
  std::string tied;
  for (std::size_t z = 0; z < table.tasks(); ++z) {
    const auto r = check_unique_optimum(table, z);
    if (r.unique) {
      ++unique;
    } else if (tied.size() < 200) {
      tied += " " + std::to_string(z) + "(" + std::to_string(r.maximizers.size()) + ")";
    }
  }
  out << "unique optimum: " << (unique == table.tasks() ? "pass" : "FAIL") << " " << unique << "/"
      << table.tasks() << " tasks";
  if (!tied.empty()) out << ", ties at task(maximizers):" << tied;
  out << "\n";
  return ok && unique == table.tasks() ? 0 : 3;
}

int gen(const std::string& benchmark, const fs::path& dir, std::uint64_t seed, std::optional<std::size_t> n,
        std::optional<std::size_t> entries, const std::string& tpl_name, std::ostream& out) {
  if (benchmark == "table-arithmetic") {
    TableArithmeticConfig cfg;
    cfg.seed = seed;
    if (n) cfg.n_questions = *n;
    if (entries) cfg.entries_per_row = *entries;
    const auto path = dir / "table-arithmetic.jsonl";
    write_dataset(path, gen_table_arithmetic(cfg));
    out << path.string() << "\n";
    return 0;
  }
  if (benchmark == "table-bias") {
    TableBiasConfig cfg;
    cfg.seed = seed;
    if (n) cfg.n_questions = *n;
    if (entries) cfg.entries_per_row = *entries;
    const auto path = dir / "table-bias.jsonl";
    write_dataset(path, gen_table_bias(cfg));
    out << path.string() << "\n";
    return 0;
  }
  if (benchmark == "universe") {
    const auto u = gen_universe(universe_template(tpl_name, seed), seed);
    write_text(dir / "system.json", dump_system(u.system));
    write_text(dir / "pool.json", universe_fixture_json(u));
    write_dataset(dir / "dataset.jsonl", u.tasks);
    write_text(dir / "optimum.json", optimum_json(u));
    RunConfig run;
    run.seed = seed;
    run.budget = std::max<std::size_t>(25, u.models.size() * (2 * u.system.size() + 1));
    ordered_json manifest{{"optimizer", "selector"}, {"seed", seed},         {"budget", run.budget},
                          {"gamma", 0.0},            {"judge", kJudgeName},  {"system", "system.json"},
                          {"models", "pool.json"},   {"dataset", "dataset.jsonl"}, {"split", 0.5}};
    write_text(dir / "manifest.json", manifest.dump(2) + "\n");
    for (const char* f : {"system.json", "pool.json", "dataset.jsonl", "optimum.json", "manifest.json"}) {
      out << (dir / f).string() << "\n";
    }
    return 0;
  }
  throw Error(ErrorCode::UnknownBenchmark,
              "unknown benchmark '" + benchmark + "' (expected table-arithmetic, table-bias or universe)");
}

}  // namespace

RunConfig parse_manifest(const std::string& text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("manifest is not valid JSON: ") + err.what());
  }
  const auto rel = [&](const std::string& p) { return fs::path(p).is_absolute() ? fs::path(p) : base_dir / p; };
  RunConfig cfg;
  try {
    const std::string system = doc.at("system").get<std::string>();
    cfg.system = fs::exists(rel(system)) ? rel(system).string() : system;
    cfg.models = rel(doc.at("models").get<std::string>());
    cfg.dataset = rel(doc.at("dataset").get<std::string>());
    cfg.optimizer = doc.value("optimizer", cfg.optimizer);
    cfg.budget = doc.value("budget", cfg.budget);
    cfg.gamma = doc.value("gamma", cfg.gamma);
    if (doc.contains("judge") && !doc.at("judge").is_null()) cfg.judge = doc.at("judge").get<std::string>();
    cfg.seed = doc.value("seed", cfg.seed);
    cfg.split = doc.value("split", cfg.split);
    if (doc.contains("start") && !doc.at("start").is_null()) cfg.start = doc.at("start").get<std::string>();
    cfg.workers = doc.value("workers", cfg.workers);
    cfg.short_circuit = doc.value("short_circuit", cfg.short_circuit);
  } catch (const json::exception& err) {
    throw Error(ErrorCode::ConfigError, std::string("malformed manifest: ") + err.what());
  }
  return cfg;
}

std::string manifest_json(const RunConfig& cfg) {
  ordered_json doc;
  doc["optimizer"] = cfg.optimizer;
  doc["seed"] = cfg.seed;
  doc["budget"] = cfg.budget;
  doc["gamma"] = cfg.gamma;
  doc["judge"] = cfg.judge ? json(*cfg.judge) : json(nullptr);
  doc["system"] = fs::exists(cfg.system) ? absolute_path(cfg.system).string() : cfg.system;
  doc["models"] = absolute_path(cfg.models).string();
  doc["dataset"] = absolute_path(cfg.dataset).string();
  doc["split"] = cfg.split;
  doc["start"] = cfg.start ? json(*cfg.start) : json(nullptr);
  doc["workers"] = cfg.workers;
  doc["short_circuit"] = cfg.short_circuit;
  return doc.dump(2) + "\n";
}

int cmd_optimize(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
  try {
    const auto began = std::chrono::steady_clock::now();
    const auto graph = resolve_system(cfg.system);
    std::shared_ptr<ResponseCache> cache;
    if (cfg.cache_dir) cache = std::make_shared<ResponseCache>(*cfg.cache_dir);
    auto pool = load_pool(cfg.models, cache);
    const auto tasks = load_dataset(cfg.dataset);
    const auto split = split_dataset(tasks, cfg.split, derive_seed(cfg.seed, "split"));
    const auto candidates = pool.candidates();

    SearchOptions options;
    options.seed = cfg.seed;
    options.workers = cfg.workers;
    options.eval_tasks = split.eval;
    if (cfg.start) options.start = parse_allocation(*cfg.start, graph, pool);

    std::string judge;
    OptimizerReport report;
    if (cfg.optimizer == "selector" || cfg.optimizer == "llmselector") {
      judge = cfg.judge.value_or(pool.default_judge().value_or(kFallbackJudge));
      DiagnoserConfig dc;
      dc.judge_model = pool.id(judge);
      dc.gamma = cfg.gamma;
      dc.short_circuit = cfg.short_circuit;
      if (!(cfg.gamma >= 0.0)) throw Error(ErrorCode::ConfigError, "--gamma must be non-negative");
      options.record_diagnoses = true;
      report = llmselector(graph, pool, candidates, split.train, cfg.budget, dc, options);
    } else if (cfg.optimizer == "greedy") {
      report = greedy_search(graph, pool, candidates, split.train, cfg.budget, options);
    } else if (cfg.optimizer == "random") {
      report = random_search(graph, pool, candidates, split.train, cfg.budget, options);
    } else if (cfg.optimizer == "exhaustive") {
      report = exhaustive_search(graph, pool, candidates, split.train, options);
    } else {
      throw Error(ErrorCode::ConfigError, "unknown optimizer '" + cfg.optimizer +
                                              "' (expected selector, exhaustive, random or greedy)");
    }

    fs::create_directories(cfg.out);
    write_text(cfg.out / "report.json", report_json(report, cfg, graph, pool, split, judge).dump(2) + "\n");
    write_text(cfg.out / "manifest.json", manifest_json(cfg));
    write_text(cfg.out / "curve.csv", curve_csv(report));
    if (!report.diagnoses.empty()) write_text(cfg.out / "diagnoses.jsonl", diagnoses_jsonl(report, graph, pool));
    for (const auto* half : {&split.train, &split.eval}) {
      for (const auto& task : *half) {
        write_trace(cfg.out, execute(graph, report.best_allocation, task, pool), task, graph, pool);
      }
    }
    const auto stats = pool.stats();
    const auto elapsed =
        std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - began).count();
    const ordered_json stats_doc{{"backend_calls", stats.backend_calls},
                                 {"remote_calls", stats.remote_calls},
                                 {"cache_hits", stats.cache_hits},
                                 {"judge_calls", report.judge_calls},
                                 {"elapsed_ms", elapsed}};
    write_text(cfg.out / "stats.json", stats_doc.dump(2) + "\n");

    out << "best allocation: " << allocation_json(graph, report.best_allocation, pool) << "\n"
        << "train accuracy: " << fixed2(report.train_accuracy) << "\n"
        << "eval accuracy: " << (report.eval_accuracy ? fixed2(*report.eval_accuracy) : "n/a") << "\n"
        << "allocations evaluated: " << report.allocations_evaluated << " (best reached after "
        << report.allocations_to_best << ")\n";
    if (report.budget_exhausted) out << "budget exhausted before the stop rule fired\n";
    out << "report: " << (cfg.out / "report.json").string() << "\n";
    return 0;
  } catch (const EndpointError& e) {
    err << "modsel: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    err << "modsel: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    err << "modsel: " << e.what() << "\n";
    return 1;
  }
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Per-module model allocation for compound AI systems", "modsel"};
  app.require_subcommand(1);

  RunConfig cfg;
  std::optional<std::string> manifest, judge, start, cache_dir;
  std::string out_dir;
  bool no_short_circuit = false;
  auto* opt = app.add_subcommand("optimize", "Search for the best allocation on the train split");
  auto* o_manifest = opt->add_option("--manifest", manifest, "Run manifest; explicit flags override it");
  auto* o_system = opt->add_option("--system", cfg.system, "System file or built-in name");
  auto* o_models = opt->add_option("--models", cfg.models, "Model pool file");
  auto* o_dataset = opt->add_option("--dataset", cfg.dataset, "Dataset (JSON lines)");
  auto* o_optimizer = opt->add_option("--optimizer", cfg.optimizer, "selector, exhaustive, random or greedy");
  auto* o_budget = opt->add_option("--budget", cfg.budget, "Allocation evaluations allowed");
  auto* o_gamma = opt->add_option("--gamma", cfg.gamma, "Weight of end-to-end correctness in module scores");
  opt->add_option("--judge", judge, "Diagnoser model (pool member)");
  auto* o_seed = opt->add_option("--seed", cfg.seed, "Seed for split, start allocation and sampling");
  auto* o_split = opt->add_option("--split", cfg.split, "Train fraction");
  opt->add_option("--cache-dir", cache_dir, "Persistent response cache directory");
  opt->add_option("--out", out_dir, "Output directory")->required();
  opt->add_option("--start", start, "Start allocation, e.g. locate=sim-claude,solve=sim-gemini");
  auto* o_workers = opt->add_option("--workers", cfg.workers, "Concurrent tasks");
  opt->add_flag("--no-short-circuit", no_short_circuit, "Ask the judge even when the final answer is correct");

  std::string benchmark, tpl_name = "case-study", gen_out = ".";
  std::uint64_t gen_seed = 0;
  std::optional<std::size_t> gen_n, gen_entries;
  auto* g = app.add_subcommand("gen", "Generate a synthetic dataset or universe");
  g->add_option("benchmark", benchmark, "table-arithmetic, table-bias or universe")->required();
  g->add_option("--out", gen_out, "Output directory");
  g->add_option("--seed", gen_seed, "Generator seed");
  g->add_option("--n", gen_n, "Number of questions");
  g->add_option("--entries", gen_entries, "Entries per table row");
  g->add_option("--template", tpl_name, "Universe template: case-study, greedy-trap, self-refine-trap, random");

  std::string check_path;
  std::size_t cap = 10000;
  auto* c = app.add_subcommand("check", "Verify monotonicity and unique-optimum assumptions of a universe");
  c->add_option("universe", check_path, "Universe fixture or performance table")->required();
  c->add_option("--cap", cap, "Enumeration cap on K^L");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  try {
    if (*opt) {
      RunConfig run = cfg;
      if (manifest) {
        run = parse_manifest(read_text(*manifest), fs::path(*manifest).parent_path());
        if (*o_system) run.system = cfg.system;
        if (*o_models) run.models = cfg.models;
        if (*o_dataset) run.dataset = cfg.dataset;
        if (*o_optimizer) run.optimizer = cfg.optimizer;
        if (*o_budget) run.budget = cfg.budget;
        if (*o_gamma) run.gamma = cfg.gamma;
        if (*o_seed) run.seed = cfg.seed;
        if (*o_split) run.split = cfg.split;
        if (*o_workers) run.workers = cfg.workers;
      } else if (!*o_system || !*o_models || !*o_dataset) {
        err << "modsel: optimize needs --system, --models and --dataset (or --manifest)\n";
        return 1;
      }
      (void)o_manifest;
      if (judge) run.judge = judge;
      if (start) run.start = start;
      if (cache_dir) run.cache_dir = fs::path(*cache_dir);
      if (no_short_circuit) run.short_circuit = false;
      run.out = out_dir;
      return cmd_optimize(run, out, err);
    }
    if (*g) return gen(benchmark, gen_out, gen_seed, gen_n, gen_entries, tpl_name, out);
    return check_universe(check_path, cap, out);
  } catch (const EndpointError& e) {
    err << "modsel: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    err << "modsel: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace modsel
