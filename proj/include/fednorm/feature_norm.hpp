#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "fednorm/model.hpp"

namespace fednorm {

// Per-class means of feature-extractor activation norms, with sample counts.
// Classes appear only when at least one sample was observed.
struct ClassNormTable {
  std::map<int, double> avg;
  std::map<int, std::int64_t> count;
};

// L2 norm of the feature-extractor activation for one sample.
inline double sample_feature_norm(const ModelParams& p, const Tensor& x) {
  if (x.rank() != 1 || x.length() != p.input_dim())
    throw ConfigError("sample_feature_norm: input width does not match model");
  const int dIn = p.input_dim();
  const int h = p.hidden_dim();
  double sq = 0;
  for (int j = 0; j < h; ++j) {
    double z = p.featureBias[j];
    for (int i = 0; i < dIn; ++i) z += x[i] * p.featureWeights(i, j);
    if (z > 0.0) sq += z * z;
  }
  return std::sqrt(sq);
}

// Mean feature norm per class over the dataset, batched for evaluation only:
// the result is independent of batchSize.
inline ClassNormTable class_average_norms(const ModelParams& p, const Dataset& d,
                                          int batchSize) {
  if (d.size() == 0) throw UsageError("class_average_norms: empty dataset");
  if (batchSize < 1) throw UsageError("class_average_norms: batchSize must be >= 1");
  const int N = d.size();
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;

  std::map<int, double> sums;
  std::map<int, std::int64_t> counts;
  for (int start = 0; start < N; start += batchSize) {
    int len = std::min(batchSize, N - start);
    Batch batch = make_batch(d, std::span<const int>(idx).subspan(start, len));
    ForwardPass fwd = forward(p, batch);
    for (int b = 0; b < len; ++b) {
      double sq = 0;
      for (int j = 0; j < fwd.features.cols(); ++j)
        sq += fwd.features(b, j) * fwd.features(b, j);
      sums[batch.labels[b]] += std::sqrt(sq);
      counts[batch.labels[b]]++;
    }
  }
  ClassNormTable table;
  for (const auto& [label, count] : counts) {
    table.avg[label] = sums[label] / static_cast<double>(count);
    table.count[label] = count;
  }
  return table;
}

// Per-label sums of (reference minus own) class-average norms, plus the frozen
// reference aggregates needed to re-evaluate the gap under new parameters.
// A reference participant lacking a label contributes zero for that label.
struct NormDiffTable {
  std::map<int, double> delta;
  std::map<int, double> refSum;
  std::map<int, int> refCount;
};

inline NormDiffTable norm_differences(int j, const std::set<int>& allIds,
                                      const std::set<int>& regularizedIds,
                                      const std::map<int, ClassNormTable>& tables) {
  if (!regularizedIds.contains(j))
    throw ProtocolError("norm_differences: participant is not in the regularized set");
  for (int id : regularizedIds)
    if (!allIds.contains(id))
      throw ProtocolError("norm_differences: regularized set is not a subset of all ids");
  std::vector<int> references;
  for (int id : allIds)
    if (!regularizedIds.contains(id)) references.push_back(id);
  if (references.empty())
    throw ProtocolError("norm_differences: reference set is empty");
  for (int id : allIds)
    if (!tables.contains(id))
      throw ProtocolError("norm_differences: missing table for a participant");

  const ClassNormTable& own = tables.at(j);
  NormDiffTable diff;
  for (const auto& [label, ownAvg] : own.avg) {
    double delta = 0, refSum = 0;
    int refCount = 0;
    for (int m : references) {
      auto it = tables.at(m).avg.find(label);
      if (it == tables.at(m).avg.end()) continue;
      delta += it->second - ownAvg;
      refSum += it->second;
      refCount++;
    }
    diff.delta[label] = delta;
    diff.refSum[label] = refSum;
    diff.refCount[label] = refCount;
  }
  return diff;
}

// Wire format: {"avg": {label: float}, "count": {label: int}}. The dump of this
// object is exactly the payload counted as upload traffic.
inline nlohmann::json table_to_json(const ClassNormTable& t) {
  nlohmann::json avg = nlohmann::json::object();
  nlohmann::json count = nlohmann::json::object();
  for (const auto& [label, v] : t.avg) avg[std::to_string(label)] = v;
  for (const auto& [label, c] : t.count) count[std::to_string(label)] = c;
  return nlohmann::json{{"avg", avg}, {"count", count}};
}

inline ClassNormTable table_from_json(const nlohmann::json& j) {
  ClassNormTable t;
  for (const auto& [key, v] : j.at("avg").items())
    t.avg[std::stoi(key)] = v.get<double>();
  for (const auto& [key, c] : j.at("count").items())
    t.count[std::stoi(key)] = c.get<std::int64_t>();
  return t;
}

inline std::size_t table_wire_bytes(const ClassNormTable& t) {
  return table_to_json(t).dump().size();
}

}  // namespace fednorm
