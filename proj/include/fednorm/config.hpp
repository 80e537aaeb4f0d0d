#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "fednorm/common.hpp"

namespace fednorm {

enum class Algorithm { Fnr, FedAvg, FedProx };
enum class Penalty { Signed, Squared };

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::Fnr: return "fnr";
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::FedProx: return "fedprox";
  }
  return "fnr";
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "fnr") return Algorithm::Fnr;
  if (s == "fedavg") return Algorithm::FedAvg;
  if (s == "fedprox") return Algorithm::FedProx;
  throw ConfigError("algorithm: expected fnr|fedavg|fedprox, got `" + s + "`");
}

inline std::string to_string(Penalty p) {
  return p == Penalty::Signed ? "signed" : "squared";
}

inline Penalty penalty_from_string(const std::string& s) {
  if (s == "signed") return Penalty::Signed;
  if (s == "squared") return Penalty::Squared;
  throw ConfigError("penalty: expected signed|squared, got `" + s + "`");
}

// Knobs of one federated run.
struct FederationConfig {
  int n = 10;
  int rounds = 10;       // communication rounds T
  int trainEpochs = 10;  // E_train
  int reEpochs = 5;      // E_re
  double eta = 0.1;
  double lambda = 0.1;   // regularization weight
  double p = 0.3;        // fraction of participants refined each round
  int trainBatch = 64;
  int testBatch = 32;
  int hidden = 32;       // feature-extractor width
  Algorithm algorithm = Algorithm::Fnr;
  double proxMu = 0.01;  // FedProx proximal weight
  Penalty penalty = Penalty::Signed;
  bool countTables = true;  // count norm-table uploads as traffic
  int wirePrecisionBytes = 4;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 2) throw ConfigError("federation: n must be >= 2");
    if (rounds < 1) throw ConfigError("federation: rounds must be >= 1");
    if (trainEpochs < 0) throw ConfigError("federation: epochs must be >= 0");
    if (reEpochs < 0) throw ConfigError("federation: re-epochs must be >= 0");
    if (!(eta > 0)) throw ConfigError("federation: eta must be positive");
    if (lambda < 0) throw ConfigError("federation: lambda must be >= 0");
    if (p < 0 || p >= 1) throw ConfigError("federation: p must be in [0, 1)");
    if (trainBatch < 1 || testBatch < 1)
      throw ConfigError("federation: batch sizes must be >= 1");
    if (hidden < 1) throw ConfigError("federation: hidden must be >= 1");
    if (proxMu < 0) throw ConfigError("federation: prox-mu must be >= 0");
    if (wirePrecisionBytes < 1)
      throw ConfigError("federation: wire bytes must be >= 1");
  }
};

// floor(n * p) with a guard against representation error in n * p.
inline int regularized_count(int n, double p) {
  return static_cast<int>(std::floor(n * p + 1e-9));
}

}  // namespace fednorm
