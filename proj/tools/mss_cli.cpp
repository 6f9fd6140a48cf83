// mss: truth discovery from conflicting claims of dependent sources.
//
//   mss fit   --claims claims.csv --out dir
//   mss grid  --claims claims.csv --out dir [--grid grid.json] [--restarts 3]
//   mss synth --sources 50 --objects 100 --out dir
//   mss eval  --pred dir/truths.csv --truth truth.csv

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>
#include <json.hpp>

#include <mss/mss.hpp>

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kUsageError = 2;
constexpr int kDataError = 1;
constexpr int kNumericalError = 3;

// Raised for bad flag values found after CLI11 has parsed argv.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct HyperFlags {
  std::string config;
  std::optional<double> kappa, b1, b0, eta1, theta1, eta0, theta0;
  std::optional<std::size_t> truncation;

  void attach(CLI::App& app) {
    app.add_option("--config", config, "JSON file of hyperparameters")->check(CLI::ExistingFile);
    app.add_option("--kappa", kappa, "stick-breaking concentration");
    app.add_option("--b1", b1, "Beta prior count for reliable");
    app.add_option("--b0", b0, "Beta prior count for unreliable");
    app.add_option("--eta1", eta1, "reliable regime weight on the true value");
    app.add_option("--theta1", theta1, "reliable regime weight on each false value");
    app.add_option("--eta0", eta0, "unreliable regime weight on the true value");
    app.add_option("--theta0", theta0, "unreliable regime weight on each false value");
    app.add_option("--truncation", truncation, "maximum number of explicit groups");
  }

  mss::Hyperparams resolve() const {
    mss::Hyperparams h;
    if (!config.empty()) {
      std::ifstream in(config);
      try {
        h = mss::hyperparams_from_json(nlohmann::json::parse(in), h);
      } catch (const std::exception& e) {
        throw UsageError("bad --config: " + std::string(e.what()));
      }
    }
    if (kappa) h.kappa = *kappa;
    if (b1) h.b1 = *b1;
    if (b0) h.b0 = *b0;
    if (eta1) h.eta_reliable = *eta1;
    if (theta1) h.theta_reliable = *theta1;
    if (eta0) h.eta_unreliable = *eta0;
    if (theta0) h.theta_unreliable = *theta0;
    if (truncation) h.truncation = *truncation;
    try {
      h.validate();
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    return h;
  }
};

struct FitFlags {
  std::string claims;
  std::string domains;
  std::string out;
  double tol = 1e-6;
  std::size_t max_sweeps = 200;
  std::uint64_t seed = 20130101;
  std::optional<std::size_t> threads;
  std::string format = "json";

  void attach(CLI::App& app) {
    app.add_option("--claims", claims, "claims file (.csv or .json)")->required()->check(CLI::ExistingFile);
    app.add_option("--domains", domains, "JSON map of object_id -> [labels]")->check(CLI::ExistingFile);
    app.add_option("--out", out, "output directory")->required();
    app.add_option("--tol", tol, "relative ELBO change that stops the sweeps")->check(CLI::NonNegativeNumber);
    app.add_option("--max-sweeps", max_sweeps, "sweep limit")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "seed for the initial state");
    app.add_option("--threads", threads, "worker threads (default $MSS_THREADS or 1)")
        ->check(CLI::PositiveNumber);
    app.add_option("--format", format, "format of the stdout summary")
        ->check(CLI::IsMember({"json", "csv"}));
  }

  mss::FitOptions options() const {
    mss::FitOptions o;
    o.tol = tol;
    o.max_sweeps = max_sweeps;
    o.seed = seed;
    o.threads = thread_count();
    return o;
  }

  std::size_t thread_count() const {
    if (threads) {
      return *threads;
    }
    if (const char* env = std::getenv("MSS_THREADS"); env != nullptr && *env != '\0') {
      char* end = nullptr;
      const unsigned long v = std::strtoul(env, &end, 10);
      if (*end != '\0' || v == 0) {
        throw UsageError("MSS_THREADS must be a positive integer");
      }
      return v;
    }
    return 1;
  }
};

mss::ClaimSet load_claims(const FitFlags& f) {
  const fs::path path(f.claims);
  const auto format = path.extension() == ".json" ? mss::ClaimFormat::Json : mss::ClaimFormat::Csv;
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + f.claims);
  }
  if (f.domains.empty()) {
    return mss::parse_claims(in, format);
  }
  std::ifstream din(f.domains);
  ordered_json domains;
  try {
    domains = ordered_json::parse(din);
  } catch (const nlohmann::json::parse_error& e) {
    throw mss::ParseError(1, std::string("invalid domains JSON: ") + e.what());
  }
  return mss::parse_claims(in, format, &domains);
}

// Thread count is left out on purpose: outputs must not depend on it.
ordered_json provenance(const std::string& command, const mss::Hyperparams& h, const FitFlags& f) {
  ordered_json j;
  j["command"] = command;
  j["claims"] = f.claims;
  if (!f.domains.empty()) {
    j["domains"] = f.domains;
  }
  j["hyperparams"] = mss::to_json(h);
  j["seed"] = f.seed;
  j["tol"] = f.tol;
  j["max_sweeps"] = f.max_sweeps;
  return j;
}

std::ofstream open_output(const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw std::runtime_error("cannot write " + path.string());
  }
  return out;
}

void write_fit_outputs(const fs::path& dir, const mss::FitResult& fit, const mss::ClaimSet& cs,
                       const mss::Hyperparams& h, const ordered_json& config) {
  const auto report = mss::make_report(fit, cs, h);
  auto json = mss::to_json(report, cs);
  json["config"] = config;
  open_output(dir / "report.json") << json.dump(2) << '\n';
  const std::string header = "# config: " + config.dump() + "\n";
  auto truths = open_output(dir / "truths.csv");
  truths << header;
  mss::write_truths_csv(truths, report, cs);
  auto reliability = open_output(dir / "reliability.csv");
  reliability << header;
  mss::write_reliability_csv(reliability, report);
  mss::write_ranking_table(std::cerr, report);
}

void print_summary(const std::string& format, const ordered_json& summary) {
  if (format == "json") {
    std::cout << summary.dump() << '\n';
    return;
  }
  std::string keys;
  std::string values;
  for (const auto& [key, value] : summary.items()) {
    keys += (keys.empty() ? "" : ",") + key;
    const std::string v = value.is_string() ? value.get<std::string>() : value.dump();
    values += (values.empty() ? "" : ",") + mss::detail::csv_escape(v);
  }
  std::cout << keys << '\n' << values << '\n';
}

int run_fit(const HyperFlags& hf, const FitFlags& ff) {
  const auto h = hf.resolve();
  auto opts = ff.options();
  const auto cs = load_claims(ff);
  std::cerr << "fit: " << cs.num_sources() << " sources, " << cs.num_objects() << " objects, "
            << cs.num_claims() << " claims\n";
  opts.on_sweep = [](std::size_t sweep, double elbo) {
    std::cerr << "sweep " << sweep << " elbo " << mss::format_double(elbo) << '\n';
  };
  const auto fit = mss::fit(cs, h, opts);
  fs::create_directories(ff.out);
  write_fit_outputs(ff.out, fit, cs, h, provenance("fit", h, ff));
  print_summary(ff.format, {{"elbo", fit.final_elbo()},
                            {"iterations", fit.iterations},
                            {"converged", fit.converged},
                            {"out", ff.out}});
  return 0;
}

int run_grid(const HyperFlags& hf, const FitFlags& ff, const std::string& grid_path,
             std::optional<std::size_t> restarts) {
  const auto base = hf.resolve();
  mss::GridSpec grid;
  if (!grid_path.empty()) {
    std::ifstream in(grid_path);
    try {
      grid = mss::grid_from_json(nlohmann::json::parse(in));
    } catch (const std::exception& e) {
      throw UsageError("bad --grid: " + std::string(e.what()));
    }
  }
  if (restarts) {
    grid.restarts_per_config = *restarts;
  }
  const auto configs = mss::enumerate_grid(grid, base);
  const auto cs = load_claims(ff);
  std::cerr << "grid: " << configs.size() << " configurations x " << grid.restarts_per_config
            << " restarts\n";
  mss::GridOptions go;
  go.fit = ff.options();
  go.threads = ff.thread_count();
  const auto result = mss::grid_search(cs, configs, grid.restarts_per_config, go);

  fs::create_directories(ff.out);
  auto config = provenance("grid", result.best, ff);
  config["grid"] = {{"eta_theta_values", grid.eta_theta_values},
                    {"b_values", grid.b_values},
                    {"kappa_values", grid.kappa_values},
                    {"restarts_per_config", grid.restarts_per_config},
                    {"careless", grid.careless},
                    {"malicious", grid.malicious}};
  auto board = mss::leaderboard_to_json(result);
  board["config"] = config;
  open_output(fs::path(ff.out) / "leaderboard.json") << board.dump(2) << '\n';
  auto table = open_output(fs::path(ff.out) / "leaderboard.txt");
  table << "# config: " << config.dump() << '\n';
  mss::write_leaderboard_table(table, result);
  write_fit_outputs(ff.out, result.best_fit, cs, result.best, config);
  print_summary(ff.format, {{"elbo", result.best_fit.final_elbo()},
                            {"kappa", result.best.kappa},
                            {"b1", result.best.b1},
                            {"b0", result.best.b0},
                            {"eta1", result.best.eta_reliable},
                            {"theta1", result.best.theta_reliable},
                            {"eta0", result.best.eta_unreliable},
                            {"theta0", result.best.theta_unreliable},
                            {"out", ff.out}});
  return 0;
}

struct SynthFlags {
  std::size_t sources = 50;
  std::size_t objects = 100;
  std::size_t domain_size = 3;
  double density = 1.0;
  std::uint64_t seed = 20130101;
  std::string out;
  std::string format = "json";
};

int run_synth(const HyperFlags& hf, const SynthFlags& sf) {
  const auto h = hf.resolve();
  mss::Rng rng(sf.seed);
  const auto ds = mss::sample_dataset(h, sf.sources, std::vector<std::size_t>(sf.objects, sf.domain_size),
                                      sf.density, rng);
  ordered_json config{{"command", "synth"},
                      {"hyperparams", mss::to_json(h)},
                      {"sources", sf.sources},
                      {"objects", sf.objects},
                      {"domain_size", sf.domain_size},
                      {"density", sf.density},
                      {"seed", sf.seed}};
  const fs::path dir(sf.out);
  fs::create_directories(dir);
  const std::string header = "# config: " + config.dump() + "\n";
  auto claims = open_output(dir / "claims.csv");
  claims << header;
  mss::write_claims_csv(claims, ds.claims);

  auto truth = mss::to_json(ds.truth, ds.claims);
  truth["config"] = config;
  open_output(dir / "truth.json") << truth.dump(2) << '\n';

  auto truth_csv = open_output(dir / "truth.csv");
  truth_csv << header << "object_id,value_label\n";
  for (std::size_t m = 0; m < ds.claims.num_objects(); ++m) {
    const auto& obj = ds.claims.object(m);
    truth_csv << mss::detail::csv_escape(obj.id()) << ','
              << mss::detail::csv_escape(obj.label(ds.truth.true_values[m])) << '\n';
  }

  ordered_json domains = ordered_json::object();
  for (const auto& obj : ds.claims.objects()) {
    domains[obj.id()] = obj.labels();
  }
  open_output(dir / "domains.json") << domains.dump(2) << '\n';
  print_summary(sf.format, {{"sources", ds.claims.num_sources()},
                            {"objects", ds.claims.num_objects()},
                            {"claims", ds.claims.num_claims()},
                            {"out", sf.out}});
  return 0;
}

std::map<std::string, std::string> load_labels(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("cannot open " + path);
  }
  return mss::read_label_map(in);
}

int run_eval(const std::string& pred, const std::string& truth, const std::optional<std::string>& positive,
             const std::string& format) {
  const auto e = mss::evaluate(load_labels(pred), load_labels(truth), positive);
  ordered_json summary{{"accuracy", e.accuracy}, {"covered", e.covered}, {"correct", e.correct}};
  if (e.positive) {
    summary["precision"] = e.positive->precision;
    summary["recall"] = e.positive->recall;
  }
  print_summary(format, summary);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Truth discovery from conflicting claims of dependent sources"};
  app.require_subcommand(1);

  HyperFlags fit_hyper;
  FitFlags fit_flags;
  auto* fit_cmd = app.add_subcommand("fit", "fit one configuration and write a report");
  fit_hyper.attach(*fit_cmd);
  fit_flags.attach(*fit_cmd);

  HyperFlags grid_hyper;
  FitFlags grid_flags;
  std::string grid_path;
  std::optional<std::size_t> restarts;
  auto* grid_cmd = app.add_subcommand("grid", "select hyperparameters by ELBO over a grid");
  grid_hyper.attach(*grid_cmd);
  grid_flags.attach(*grid_cmd);
  grid_cmd->add_option("--grid", grid_path, "JSON grid specification")->check(CLI::ExistingFile);
  grid_cmd->add_option("--restarts", restarts, "restarts per configuration")->check(CLI::PositiveNumber);

  HyperFlags synth_hyper;
  SynthFlags synth_flags;
  auto* synth_cmd = app.add_subcommand("synth", "sample a synthetic claim set with ground truth");
  synth_hyper.attach(*synth_cmd);
  synth_cmd->add_option("--sources", synth_flags.sources, "number of sources")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--objects", synth_flags.objects, "number of objects")->check(CLI::PositiveNumber);
  synth_cmd->add_option("--domain-size", synth_flags.domain_size, "values per object")->check(CLI::Range(2, 1 << 20));
  synth_cmd->add_option("--density", synth_flags.density, "probability that a source claims an object")
      ->check(CLI::Range(0.0, 1.0));
  synth_cmd->add_option("--seed", synth_flags.seed, "sampler seed");
  synth_cmd->add_option("--out", synth_flags.out, "output directory")->required();
  synth_cmd->add_option("--format", synth_flags.format, "format of the stdout summary")->check(CLI::IsMember({"json", "csv"}));

  std::string pred_path;
  std::string truth_path;
  std::optional<std::string> positive;
  std::string eval_format = "json";
  auto* eval_cmd = app.add_subcommand("eval", "score predicted truths against ground truth");
  eval_cmd->add_option("--pred", pred_path, "object_id,value_label CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--truth", truth_path, "object_id,value_label CSV")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--positive", positive, "positive label for precision and recall");
  eval_cmd->add_option("--format", eval_format, "format of the stdout summary")->check(CLI::IsMember({"json", "csv"}));

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kUsageError;
  }

  try {
    if (*fit_cmd) return run_fit(fit_hyper, fit_flags);
    if (*grid_cmd) return run_grid(grid_hyper, grid_flags, grid_path, restarts);
    if (*synth_cmd) return run_synth(synth_hyper, synth_flags);
    if (*eval_cmd) return run_eval(pred_path, truth_path, positive, eval_format);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kUsageError;
  } catch (const mss::NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kNumericalError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kDataError;
  }
  return kUsageError;
}
