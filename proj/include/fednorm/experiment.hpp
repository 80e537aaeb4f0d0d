#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fednorm/federation.hpp"

namespace fednorm {

enum class Scenario { Feature, Label, Quantity, LabelFeature, LabelQuantity, Iid };

inline std::string to_string(Scenario s) {
  switch (s) {
    case Scenario::Feature: return "feature";
    case Scenario::Label: return "label";
    case Scenario::Quantity: return "quantity";
    case Scenario::LabelFeature: return "label+feature";
    case Scenario::LabelQuantity: return "label+quantity";
    case Scenario::Iid: return "iid";
  }
  return "label";
}

inline Scenario scenario_from_string(const std::string& s) {
  if (s == "feature") return Scenario::Feature;
  if (s == "label") return Scenario::Label;
  if (s == "quantity") return Scenario::Quantity;
  if (s == "label+feature") return Scenario::LabelFeature;
  if (s == "label+quantity") return Scenario::LabelQuantity;
  if (s == "iid") return Scenario::Iid;
  throw ConfigError(
      "scenario: expected feature|label|quantity|label+feature|label+quantity|iid, got `" +
      s + "`");
}

struct SyntheticSpec {
  int classes = 10;
  int dim = 32;
  int perClass = 500;
  // Default spread sits where unit-spaced clusters overlap enough that skewed
  // federations have to work for their accuracy.
  double spread = 2.0;
};

// One experiment matrix: a scenario, a dataset source, federation knobs, and
// the (seed x algorithm) grid to sweep.
struct ExperimentSpec {
  Scenario scenario = Scenario::Label;
  double alpha = 0.5;
  std::vector<double> sigmaList;  // explicit per-participant sigmas, optional
  double sigmaScalar = 0.1;
  double mu = 0.0;
  double maskFraction = 1.0;
  bool useCsv = false;
  std::string csvPath;
  SyntheticSpec synthetic;
  double publicFraction = 0.1;
  FederationConfig fed;
  std::vector<Algorithm> algorithms{Algorithm::Fnr};
  std::vector<std::uint64_t> seeds{0};
  std::string outDir = "out";
};

namespace detail {

inline void require_known_keys(const nlohmann::json& obj, const std::set<std::string>& known,
                               const std::string& path) {
  for (const auto& [key, value] : obj.items()) {
    (void)value;
    if (!known.contains(key))
      throw ConfigError("config: unknown key `" + path + key + "`");
  }
}

template <typename T>
T get_checked(const nlohmann::json& obj, const std::string& key, T fallback) {
  if (!obj.contains(key)) return fallback;
  try {
    return obj.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError("config: bad value for `" + key + "`");
  }
}

}  // namespace detail

// Parses a merged configuration object (file contents with flag overrides
// already applied) into a fully-resolved spec. Unknown keys, out-of-range
// values and scenario/parameter contradictions are reported with the key name.
inline ExperimentSpec parse_config(const nlohmann::json& cfg) {
  if (!cfg.is_object()) throw ConfigError("config: root must be a JSON object");
  detail::require_known_keys(
      cfg,
      {"scenario", "alpha", "sigma", "mu", "mask_fraction", "dataset", "public_fraction",
       "participants", "rounds", "epochs", "re_epochs", "eta", "lambda", "p",
       "train_batch", "test_batch", "hidden", "algorithms", "algo", "prox_mu", "penalty",
       "count_tables", "wire_bytes", "seeds", "seed", "out"},
      "");

  ExperimentSpec spec;
  spec.scenario = scenario_from_string(detail::get_checked<std::string>(cfg, "scenario", "label"));

  const bool hasAlpha = cfg.contains("alpha");
  const bool hasSigma = cfg.contains("sigma");
  const bool hasMu = cfg.contains("mu");
  const bool hasMask = cfg.contains("mask_fraction");
  const bool usesAlpha = spec.scenario == Scenario::Label || spec.scenario == Scenario::Quantity ||
                         spec.scenario == Scenario::LabelFeature ||
                         spec.scenario == Scenario::LabelQuantity;
  const bool usesNoise =
      spec.scenario == Scenario::Feature || spec.scenario == Scenario::LabelFeature;
  if (hasAlpha && !usesAlpha)
    throw ConfigError("config: `alpha` does not apply to scenario " + to_string(spec.scenario));
  if ((hasSigma || hasMu || hasMask) && !usesNoise)
    throw ConfigError("config: noise keys (`sigma`/`mu`/`mask_fraction`) do not apply to scenario " +
                      to_string(spec.scenario));

  spec.alpha = detail::get_checked<double>(cfg, "alpha", spec.alpha);
  if (!(spec.alpha > 0)) throw ConfigError("config: `alpha` must be positive");

  if (hasSigma) {
    const auto& sig = cfg.at("sigma");
    if (sig.is_array()) {
      spec.sigmaList = sig.get<std::vector<double>>();
      for (double s : spec.sigmaList)
        if (s < 0) throw ConfigError("config: `sigma` entries must be >= 0");
    } else if (sig.is_number()) {
      spec.sigmaScalar = sig.get<double>();
      if (spec.sigmaScalar < 0) throw ConfigError("config: `sigma` must be >= 0");
    } else {
      throw ConfigError("config: `sigma` must be a number or an array");
    }
  }
  spec.mu = detail::get_checked<double>(cfg, "mu", spec.mu);
  spec.maskFraction = detail::get_checked<double>(cfg, "mask_fraction", spec.maskFraction);
  if (spec.maskFraction < 0 || spec.maskFraction > 1)
    throw ConfigError("config: `mask_fraction` must be in [0, 1]");

  if (cfg.contains("dataset")) {
    const auto& ds = cfg.at("dataset");
    detail::require_known_keys(ds, {"synthetic", "csv"}, "dataset.");
    if (ds.contains("csv") == ds.contains("synthetic"))
      throw ConfigError("config: `dataset` needs exactly one of `synthetic` or `csv`");
    if (ds.contains("csv")) {
      spec.useCsv = true;
      spec.csvPath = ds.at("csv").get<std::string>();
    } else {
      const auto& syn = ds.at("synthetic");
      detail::require_known_keys(syn, {"classes", "dim", "per_class", "spread"},
                                 "dataset.synthetic.");
      spec.synthetic.classes = detail::get_checked<int>(syn, "classes", spec.synthetic.classes);
      spec.synthetic.dim = detail::get_checked<int>(syn, "dim", spec.synthetic.dim);
      spec.synthetic.perClass = detail::get_checked<int>(syn, "per_class", spec.synthetic.perClass);
      spec.synthetic.spread = detail::get_checked<double>(syn, "spread", spec.synthetic.spread);
      if (spec.synthetic.classes < 2) throw ConfigError("config: `dataset.synthetic.classes` must be >= 2");
      if (spec.synthetic.dim < 1) throw ConfigError("config: `dataset.synthetic.dim` must be >= 1");
      if (spec.synthetic.perClass < 1)
        throw ConfigError("config: `dataset.synthetic.per_class` must be >= 1");
      if (spec.synthetic.spread < 0)
        throw ConfigError("config: `dataset.synthetic.spread` must be >= 0");
    }
  }

  spec.publicFraction = detail::get_checked<double>(cfg, "public_fraction", spec.publicFraction);
  if (!(spec.publicFraction > 0) || !(spec.publicFraction < 1))
    throw ConfigError("config: `public_fraction` must be in (0, 1)");

  spec.fed.n = detail::get_checked<int>(cfg, "participants", spec.fed.n);
  spec.fed.rounds = detail::get_checked<int>(cfg, "rounds", spec.fed.rounds);
  spec.fed.trainEpochs = detail::get_checked<int>(cfg, "epochs", spec.fed.trainEpochs);
  spec.fed.reEpochs = detail::get_checked<int>(cfg, "re_epochs", spec.fed.reEpochs);
  spec.fed.eta = detail::get_checked<double>(cfg, "eta", spec.fed.eta);
  spec.fed.lambda = detail::get_checked<double>(cfg, "lambda", spec.fed.lambda);
  spec.fed.p = detail::get_checked<double>(cfg, "p", spec.fed.p);
  spec.fed.trainBatch = detail::get_checked<int>(cfg, "train_batch", spec.fed.trainBatch);
  spec.fed.testBatch = detail::get_checked<int>(cfg, "test_batch", spec.fed.testBatch);
  spec.fed.hidden = detail::get_checked<int>(cfg, "hidden", spec.fed.hidden);
  spec.fed.proxMu = detail::get_checked<double>(cfg, "prox_mu", spec.fed.proxMu);
  spec.fed.penalty =
      penalty_from_string(detail::get_checked<std::string>(cfg, "penalty", to_string(spec.fed.penalty)));
  spec.fed.countTables = detail::get_checked<bool>(cfg, "count_tables", spec.fed.countTables);
  spec.fed.wirePrecisionBytes = detail::get_checked<int>(cfg, "wire_bytes", spec.fed.wirePrecisionBytes);

  if (cfg.contains("algorithms") && cfg.contains("algo"))
    throw ConfigError("config: give `algorithms` or `algo`, not both");
  if (cfg.contains("algorithms")) {
    spec.algorithms.clear();
    for (const auto& name : cfg.at("algorithms"))
      spec.algorithms.push_back(algorithm_from_string(name.get<std::string>()));
    if (spec.algorithms.empty()) throw ConfigError("config: `algorithms` must be nonempty");
  } else if (cfg.contains("algo")) {
    spec.algorithms = {algorithm_from_string(cfg.at("algo").get<std::string>())};
  }

  if (cfg.contains("seeds") && cfg.contains("seed"))
    throw ConfigError("config: give `seeds` or `seed`, not both");
  if (cfg.contains("seeds")) {
    spec.seeds = cfg.at("seeds").get<std::vector<std::uint64_t>>();
    if (spec.seeds.empty()) throw ConfigError("config: `seeds` must be nonempty");
  } else if (cfg.contains("seed")) {
    spec.seeds = {cfg.at("seed").get<std::uint64_t>()};
  }

  spec.outDir = detail::get_checked<std::string>(cfg, "out", spec.outDir);
  if (!spec.sigmaList.empty() && static_cast<int>(spec.sigmaList.size()) != spec.fed.n)
    throw ConfigError("config: `sigma` list length must equal `participants`");
  if (!spec.sigmaList.empty() && spec.scenario == Scenario::LabelFeature)
    throw ConfigError("config: scenario label+feature takes a scalar `sigma`");
  spec.fed.validate();
  return spec;
}

// Fully-resolved echo of the spec; every default is materialized.
inline nlohmann::json spec_to_json(const ExperimentSpec& spec) {
  nlohmann::ordered_json j;
  j["scenario"] = to_string(spec.scenario);
  j["alpha"] = spec.alpha;
  if (!spec.sigmaList.empty())
    j["sigma"] = spec.sigmaList;
  else
    j["sigma"] = spec.sigmaScalar;
  j["mu"] = spec.mu;
  j["mask_fraction"] = spec.maskFraction;
  if (spec.useCsv)
    j["dataset"] = {{"csv", spec.csvPath}};
  else
    j["dataset"] = {{"synthetic",
                     {{"classes", spec.synthetic.classes},
                      {"dim", spec.synthetic.dim},
                      {"per_class", spec.synthetic.perClass},
                      {"spread", spec.synthetic.spread}}}};
  j["public_fraction"] = spec.publicFraction;
  j["participants"] = spec.fed.n;
  j["rounds"] = spec.fed.rounds;
  j["epochs"] = spec.fed.trainEpochs;
  j["re_epochs"] = spec.fed.reEpochs;
  j["eta"] = spec.fed.eta;
  j["lambda"] = spec.fed.lambda;
  j["p"] = spec.fed.p;
  j["train_batch"] = spec.fed.trainBatch;
  j["test_batch"] = spec.fed.testBatch;
  j["hidden"] = spec.fed.hidden;
  std::vector<std::string> algos;
  for (Algorithm a : spec.algorithms) algos.push_back(to_string(a));
  j["algorithms"] = algos;
  j["prox_mu"] = spec.fed.proxMu;
  j["penalty"] = to_string(spec.fed.penalty);
  j["count_tables"] = spec.fed.countTables;
  j["wire_bytes"] = spec.fed.wirePrecisionBytes;
  j["seeds"] = spec.seeds;
  j["out"] = spec.outDir;
  return j;
}

inline Dataset build_dataset(const ExperimentSpec& spec, std::uint64_t seed) {
  if (spec.useCsv) return load_csv_dataset(spec.csvPath);
  return make_synthetic_dataset(spec.synthetic.classes, spec.synthetic.dim,
                                spec.synthetic.perClass, spec.synthetic.spread, seed);
}

// Per-participant sigmas for the feature-skew scenario: an explicit list wins;
// a scalar s becomes the ramp sigma_i = s * i / (n - 1).
inline std::vector<double> resolve_sigmas(const ExperimentSpec& spec) {
  if (!spec.sigmaList.empty()) return spec.sigmaList;
  std::vector<double> sigmas(spec.fed.n, 0.0);
  for (int i = 0; i < spec.fed.n; ++i)
    sigmas[i] = spec.fed.n > 1
                    ? spec.sigmaScalar * static_cast<double>(i) / (spec.fed.n - 1)
                    : spec.sigmaScalar;
  return sigmas;
}

// Carves the stratified public holdout first, then partitions the remainder
// according to the scenario. Participant indices stay in full-dataset
// coordinates.
inline PartitionPlan build_partition(const ExperimentSpec& spec, const Dataset& dataset,
                                     std::uint64_t seed) {
  auto [publicIdx, pool] = split_public_indices(dataset, spec.publicFraction, seed);
  const int n = spec.fed.n;
  PartitionPlan plan;
  switch (spec.scenario) {
    case Scenario::Label:
      plan = partition_label_skew(dataset, pool, n, spec.alpha, seed);
      break;
    case Scenario::Quantity:
      plan = partition_quantity_skew(dataset, pool, n, spec.alpha, seed,
                                     2 * spec.fed.trainBatch);
      break;
    case Scenario::Feature:
      plan = partition_feature_skew(dataset, pool, n, resolve_sigmas(spec), spec.mu,
                                    spec.maskFraction, seed);
      break;
    case Scenario::LabelFeature:
      plan = partition_mixed(dataset, pool, n, MixedMode::LabelFeature, spec.alpha,
                             spec.sigmaScalar, seed);
      break;
    case Scenario::LabelQuantity:
      plan = partition_mixed(dataset, pool, n, MixedMode::LabelQuantity, spec.alpha,
                             0.0, seed);
      break;
    case Scenario::Iid:
      plan = partition_uniform(dataset, pool, n, seed);
      plan.participantNoise.assign(n, std::nullopt);
      break;
  }
  plan.publicIndices = publicIdx;
  return plan;
}

struct CellResult {
  FederationResult fed;
  CostReport cost;
};

inline CostReport make_cost_report(const std::vector<RoundReport>& rounds,
                                   const ModelParams& finalGlobal,
                                   const Dataset& publicData, int testBatch) {
  CostReport cost;
  for (const auto& r : rounds) {
    cost.trafficBytes += r.upBytes + r.downBytes;
    cost.wallSeconds += r.wallSeconds;
  }
  cost.wallSeconds = std::max(cost.wallSeconds, 1e-9);
  cost.accuracy = rounds.empty() ? 0.0 : rounds.back().globalAccuracy;
  cost.kappa = kappa(cost.accuracy, cost.wallSeconds);
  cost.rhoMetric = rho_metric(cost.accuracy, static_cast<double>(cost.trafficBytes) / 1e6);
  cost.perClass = per_class_accuracy(finalGlobal, publicData, testBatch);
  return cost;
}

// One (algorithm, seed) cell: dataset and plan are derived from the seed alone,
// so cells with the same seed are paired across algorithms.
inline CellResult run_cell(const ExperimentSpec& spec, Algorithm algorithm,
                           std::uint64_t seed) {
  Dataset dataset = build_dataset(spec, seed);
  PartitionPlan plan = build_partition(spec, dataset, seed);
  FederationConfig cfg = spec.fed;
  cfg.algorithm = algorithm;
  cfg.seed = seed;
  FederationResult fed = run_federation(cfg, plan, dataset);
  Dataset publicData = subset(dataset, plan.publicIndices);
  CostReport cost = make_cost_report(fed.rounds, fed.finalGlobal, publicData, cfg.testBatch);
  return CellResult{std::move(fed), std::move(cost)};
}

// Canonical JSON-lines serialization. Reports are deterministic in the spec;
// measured wall time goes to the metadata file, so the canonical line carries
// wall_s = 0.0.
inline std::string rounds_to_jsonl(const std::vector<RoundReport>& rounds) {
  std::string out;
  for (const auto& r : rounds) {
    nlohmann::ordered_json line;
    line["round"] = r.round;
    line["global_acc"] = r.globalAccuracy;
    line["acc"] = r.accuracies;
    line["loss"] = r.trainLoss;
    line["s_re"] = r.regularizedSet;
    line["up_bytes"] = r.upBytes;
    line["down_bytes"] = r.downBytes;
    line["wall_s"] = 0.0;
    out += line.dump();
    out += '\n';
  }
  return out;
}

// {"accuracy": f, "traffic_mb": f, "time_s": f, "kappa": f, "rho": f,
//  "per_class": {label: f}}
inline nlohmann::json summary_to_json(const CostReport& cost) {
  nlohmann::ordered_json perClass = nlohmann::ordered_json::object();
  for (const auto& [label, acc] : cost.perClass) perClass[std::to_string(label)] = acc;
  nlohmann::ordered_json j;
  j["accuracy"] = cost.accuracy;
  j["traffic_mb"] = static_cast<double>(cost.trafficBytes) / 1e6;
  j["time_s"] = cost.wallSeconds;
  j["kappa"] = cost.kappa;
  j["rho"] = cost.rhoMetric;
  j["per_class"] = perClass;
  return j;
}

namespace detail {

inline void write_file(const std::filesystem::path& path, const std::string& contents) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw UsageError("cannot write " + path.string());
  out << contents;
}

inline std::string format_double(double v) { return nlohmann::json(v).dump(); }

}  // namespace detail

// Runs every (seed x algorithm) cell and writes, per cell, the round JSON-lines
// and the summary JSON; per seed, the partition plan; plus a convergence CSV
// over all cells, the resolved spec, and a metadata file holding everything
// nondeterministic (timestamps and measured durations).
inline void run_experiment(const ExperimentSpec& spec) {
  namespace fs = std::filesystem;
  fs::path out(spec.outDir);
  fs::create_directories(out);

  detail::write_file(out / "spec.resolved.json", spec_to_json(spec).dump(2) + "\n");

  std::string csv = "round,algorithm,seed,global_acc\n";
  nlohmann::ordered_json metadata;
  metadata["cells"] = nlohmann::ordered_json::object();
  const auto started = std::chrono::system_clock::now();

  for (std::uint64_t seed : spec.seeds) {
    Dataset dataset = build_dataset(spec, seed);
    PartitionPlan plan = build_partition(spec, dataset, seed);
    Dataset publicData = subset(dataset, plan.publicIndices);
    detail::write_file(out / (to_string(spec.scenario) + "_seed" + std::to_string(seed) +
                              ".plan.json"),
                       plan_to_json(plan).dump() + "\n");

    for (Algorithm algorithm : spec.algorithms) {
      FederationConfig cfg = spec.fed;
      cfg.algorithm = algorithm;
      cfg.seed = seed;
      FederationResult fed = run_federation(cfg, plan, dataset);
      CostReport cost =
          make_cost_report(fed.rounds, fed.finalGlobal, publicData, cfg.testBatch);

      const std::string base = to_string(spec.scenario) + "_" + to_string(algorithm) +
                               "_seed" + std::to_string(seed);
      detail::write_file(out / (base + ".rounds.jsonl"), rounds_to_jsonl(fed.rounds));
      detail::write_file(out / (base + ".summary.json"),
                         summary_to_json(cost).dump(2) + "\n");

      for (const auto& r : fed.rounds)
        csv += std::to_string(r.round) + "," + to_string(algorithm) + "," +
               std::to_string(seed) + "," + detail::format_double(r.globalAccuracy) + "\n";

      nlohmann::ordered_json cellMeta;
      cellMeta["wall_s_total"] = cost.wallSeconds;
      std::vector<double> roundWall;
      for (const auto& r : fed.rounds) roundWall.push_back(r.wallSeconds);
      cellMeta["round_wall_s"] = roundWall;
      nlohmann::ordered_json postReg = nlohmann::ordered_json::array();
      for (const auto& r : fed.rounds) {
        nlohmann::ordered_json entry = nlohmann::ordered_json::object();
        for (const auto& [id, acc] : r.postRegularizationAccuracy)
          entry[std::to_string(id)] = acc;
        postReg.push_back(entry);
      }
      cellMeta["post_regularization_acc"] = postReg;
      metadata["cells"][base] = cellMeta;
    }
  }

  detail::write_file(out / "convergence.csv", csv);
  const auto finished = std::chrono::system_clock::now();
  metadata["started_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(started.time_since_epoch()).count();
  metadata["finished_unix_ms"] =
      std::chrono::duration_cast<std::chrono::milliseconds>(finished.time_since_epoch()).count();
  detail::write_file(out / "metadata.json", metadata.dump(2) + "\n");
}

}  // namespace fednorm
