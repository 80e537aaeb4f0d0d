#pragma once

#include <map>
#include <utility>
#include <vector>

#include "fednorm/config.hpp"
#include "fednorm/model.hpp"

namespace fednorm {

// Cumulative cost summary of one run.
struct CostReport {
  long long trafficBytes = 0;  // uploads + downloads
  double wallSeconds = 0;
  double accuracy = 0;
  double kappa = 0;
  double rhoMetric = 0;
  std::map<int, double> perClass;
};

// Per-round transport bytes. Downlink broadcasts the model to every
// participant; FNR uplink adds the norm-table JSON payload and an 8-byte
// accuracy scalar per participant unless table accounting is disabled.
inline std::pair<long long, long long> traffic_for_round(const FederationConfig& cfg,
                                                         long long modelBytes,
                                                         long long tableBytes) {
  if (modelBytes <= 0) throw UsageError("traffic_for_round: modelBytes must be positive");
  const long long down = static_cast<long long>(cfg.n) * modelBytes;
  long long up;
  if (cfg.algorithm == Algorithm::Fnr && cfg.countTables) {
    if (tableBytes <= 0)
      throw UsageError("traffic_for_round: tableBytes must be positive");
    up = static_cast<long long>(cfg.n) * (modelBytes + tableBytes + 8);
  } else {
    up = static_cast<long long>(cfg.n) * modelBytes;
  }
  return {up, down};
}

// Accuracy * 10^4 per second.
inline double kappa(double accuracy, double wallSeconds) {
  if (!(wallSeconds > 0)) throw UsageError("kappa: time must be positive");
  return accuracy * 1e4 / wallSeconds;
}

// Accuracy * 10^4 per megabyte of traffic.
inline double rho_metric(double accuracy, double trafficMB) {
  if (!(trafficMB > 0)) throw UsageError("rho: traffic must be positive");
  return accuracy * 1e4 / trafficMB;
}

// Fraction correct per class; classes with no samples are absent.
inline std::map<int, double> per_class_accuracy(const ModelParams& p, const Dataset& d,
                                                int batchSize = 32) {
  if (d.size() == 0) throw UsageError("per_class_accuracy: empty dataset");
  const int N = d.size();
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  std::map<int, std::int64_t> correct, total;
  for (int start = 0; start < N; start += batchSize) {
    int len = std::min(batchSize, N - start);
    Batch batch = make_batch(d, std::span<const int>(idx).subspan(start, len));
    ForwardPass fwd = forward(p, batch);
    for (int b = 0; b < len; ++b) {
      int best = 0;
      for (int c = 1; c < fwd.logits.cols(); ++c)
        if (fwd.logits(b, c) > fwd.logits(b, best)) best = c;
      total[batch.labels[b]]++;
      if (best == batch.labels[b]) correct[batch.labels[b]]++;
    }
  }
  std::map<int, double> acc;
  for (const auto& [label, count] : total)
    acc[label] = static_cast<double>(correct[label]) / static_cast<double>(count);
  return acc;
}

}  // namespace fednorm
