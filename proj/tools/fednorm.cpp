// fednorm: federated-learning lab runner.
//   fednorm run               -- execute an experiment matrix
//   fednorm convergence-check -- verify the SGD recurrence on quadratics
//   fednorm metrics           -- compute kappa/rho from accuracy, time, traffic

#include <cstdint>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "fednorm/convergence.hpp"
#include "fednorm/experiment.hpp"
#include "fednorm/metrics.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

std::vector<std::uint64_t> parse_seed_list(const std::string& arg) {
  std::vector<std::uint64_t> seeds;
  std::stringstream ss(arg);
  std::string token;
  while (std::getline(ss, token, ',')) {
    if (token.empty()) continue;
    std::size_t pos = 0;
    seeds.push_back(std::stoull(token, &pos));
    if (pos != token.size())
      throw fednorm::ConfigError("config: bad seed `" + token + "`");
  }
  if (seeds.empty()) throw fednorm::ConfigError("config: empty seed list");
  return seeds;
}

nlohmann::json load_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw fednorm::ConfigError("config: cannot open " + path);
  nlohmann::json cfg;
  try {
    in >> cfg;
  } catch (const nlohmann::json::exception& e) {
    throw fednorm::ConfigError("config: invalid JSON in " + path + ": " + e.what());
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"feature-norm regularized federated learning lab"};
  app.require_subcommand(1);

  // --- run ---------------------------------------------------------------
  auto* run = app.add_subcommand("run", "run an experiment matrix");
  std::string configPath, scenario, algo, penalty, seedList, outDir, csvPath;
  double alpha = 0, sigma = 0, mu = 0, maskFraction = 0, eta = 0, lambda = 0, p = 0,
         proxMu = 0, publicFraction = 0, spread = 0;
  int participants = 0, rounds = 0, epochs = 0, reEpochs = 0, hidden = 0, trainBatch = 0,
      testBatch = 0, wireBytes = 0, classes = 0, dim = 0, perClass = 0;
  bool countTables = true;
  run->add_option("--config", configPath, "JSON config file");
  auto* oScenario = run->add_option("--scenario", scenario);
  auto* oAlpha = run->add_option("--alpha", alpha);
  auto* oSigma = run->add_option("--sigma", sigma);
  auto* oMu = run->add_option("--mu", mu);
  auto* oMask = run->add_option("--mask-fraction", maskFraction);
  auto* oN = run->add_option("--participants", participants);
  auto* oRounds = run->add_option("--rounds", rounds);
  auto* oEpochs = run->add_option("--epochs", epochs);
  auto* oReEpochs = run->add_option("--re-epochs", reEpochs);
  auto* oEta = run->add_option("--eta", eta);
  auto* oLambda = run->add_option("--lambda", lambda);
  auto* oP = run->add_option("--p", p);
  auto* oAlgo = run->add_option("--algo", algo, "fnr|fedavg|fedprox");
  auto* oProxMu = run->add_option("--prox-mu", proxMu);
  auto* oPenalty = run->add_option("--penalty", penalty, "signed|squared");
  auto* oCount = run->add_option("--count-tables", countTables);
  auto* oSeed = run->add_option("--seed", seedList, "seed or comma-separated list");
  auto* oOut = run->add_option("--out", outDir);
  auto* oHidden = run->add_option("--hidden", hidden);
  auto* oTrainBatch = run->add_option("--train-batch", trainBatch);
  auto* oTestBatch = run->add_option("--test-batch", testBatch);
  auto* oWire = run->add_option("--wire-bytes", wireBytes);
  auto* oPublic = run->add_option("--public-fraction", publicFraction);
  auto* oClasses = run->add_option("--classes", classes);
  auto* oDim = run->add_option("--dim", dim);
  auto* oPerClass = run->add_option("--per-class", perClass);
  auto* oSpread = run->add_option("--spread", spread);
  auto* oCsv = run->add_option("--csv", csvPath, "dataset CSV path");

  // --- convergence-check ---------------------------------------------------
  auto* conv = app.add_subcommand("convergence-check", "verify the delta recurrence");
  int cN = 5, cDim = 10, cReSteps = 5, cSteps = 2000, cReps = 100;
  double cHet = 1.0, cEta0 = 0.1, cDecay = 50, cSlack = 1.0, cNoise = 0.1;
  std::uint64_t cSeed = 0;
  conv->add_option("--n", cN);
  conv->add_option("--dim", cDim);
  conv->add_option("--heterogeneity", cHet);
  conv->add_option("--eta0", cEta0);
  conv->add_option("--decay", cDecay);
  conv->add_option("--re-steps", cReSteps);
  conv->add_option("--steps", cSteps);
  conv->add_option("--reps", cReps);
  conv->add_option("--slack", cSlack);
  conv->add_option("--noise", cNoise);
  conv->add_option("--seed", cSeed);

  // --- metrics ---------------------------------------------------------------
  auto* met = app.add_subcommand("metrics", "compute kappa and rho");
  double mAcc = 0, mTime = 0, mTraffic = 0;
  met->add_option("--accuracy", mAcc)->required();
  met->add_option("--time", mTime)->required();
  met->add_option("--traffic", mTraffic)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (run->parsed()) {
      nlohmann::json cfg = nlohmann::json::object();
      if (!configPath.empty()) cfg = load_config_file(configPath);
      if (oScenario->count()) cfg["scenario"] = scenario;
      if (oAlpha->count()) cfg["alpha"] = alpha;
      if (oSigma->count()) cfg["sigma"] = sigma;
      if (oMu->count()) cfg["mu"] = mu;
      if (oMask->count()) cfg["mask_fraction"] = maskFraction;
      if (oN->count()) cfg["participants"] = participants;
      if (oRounds->count()) cfg["rounds"] = rounds;
      if (oEpochs->count()) cfg["epochs"] = epochs;
      if (oReEpochs->count()) cfg["re_epochs"] = reEpochs;
      if (oEta->count()) cfg["eta"] = eta;
      if (oLambda->count()) cfg["lambda"] = lambda;
      if (oP->count()) cfg["p"] = p;
      if (oAlgo->count()) {
        cfg.erase("algorithms");
        cfg["algo"] = algo;
      }
      if (oProxMu->count()) cfg["prox_mu"] = proxMu;
      if (oPenalty->count()) cfg["penalty"] = penalty;
      if (oCount->count()) cfg["count_tables"] = countTables;
      if (oSeed->count()) {
        cfg.erase("seed");
        cfg["seeds"] = parse_seed_list(seedList);
      }
      if (oOut->count()) cfg["out"] = outDir;
      if (oHidden->count()) cfg["hidden"] = hidden;
      if (oTrainBatch->count()) cfg["train_batch"] = trainBatch;
      if (oTestBatch->count()) cfg["test_batch"] = testBatch;
      if (oWire->count()) cfg["wire_bytes"] = wireBytes;
      if (oPublic->count()) cfg["public_fraction"] = publicFraction;
      if (oCsv->count()) cfg["dataset"] = {{"csv", csvPath}};
      if (oClasses->count() || oDim->count() || oPerClass->count() || oSpread->count()) {
        if (oCsv->count())
          throw fednorm::ConfigError("config: synthetic flags clash with --csv");
        nlohmann::json syn = cfg.contains("dataset") && cfg["dataset"].contains("synthetic")
                                 ? cfg["dataset"]["synthetic"]
                                 : nlohmann::json::object();
        if (oClasses->count()) syn["classes"] = classes;
        if (oDim->count()) syn["dim"] = dim;
        if (oPerClass->count()) syn["per_class"] = perClass;
        if (oSpread->count()) syn["spread"] = spread;
        cfg["dataset"] = {{"synthetic", syn}};
      }
      fednorm::ExperimentSpec spec = fednorm::parse_config(cfg);
      fednorm::run_experiment(spec);
      return kExitOk;
    }

    if (conv->parsed()) {
      if (cSteps < 1 || cReSteps < 1 || cSteps % cReSteps != 0)
        throw fednorm::ConfigError("config: `steps` must be a positive multiple of `re-steps`");
      if (cDecay < cReSteps)
        throw fednorm::ConfigError("config: `decay` must be >= `re-steps`");
      auto problem = fednorm::make_quadratic_problem(cN, cDim, cHet, cSeed, cNoise);
      auto schedule = fednorm::make_eta_schedule(cEta0, cDecay, cSteps);
      auto series = fednorm::run_fed_sgd(problem, schedule, cReSteps, cSteps / cReSteps,
                                         cReps, cSeed);
      auto report = fednorm::check_recurrence(series, problem, cReSteps, cSlack);
      std::cout << report.to_json().dump() << "\n";
      return kExitOk;
    }

    if (met->parsed()) {
      nlohmann::json out{{"kappa", fednorm::kappa(mAcc, mTime)},
                         {"rho", fednorm::rho_metric(mAcc, mTraffic)}};
      std::cout << out.dump() << "\n";
      return kExitOk;
    }
  } catch (const fednorm::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
  return kExitOk;
}
