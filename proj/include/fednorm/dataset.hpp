#pragma once

#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "fednorm/rng.hpp"
#include "fednorm/tensor.hpp"

namespace fednorm {

// Labeled samples: inputs [N x d], integer labels in [0, classCount).
struct Dataset {
  Tensor inputs;
  std::vector<int> labels;
  int classCount = 0;

  int size() const { return inputs.rank() == 2 ? inputs.rows() : 0; }
  int dim() const { return inputs.cols(); }

  std::vector<std::int64_t> class_counts() const {
    std::vector<std::int64_t> counts(classCount, 0);
    for (int y : labels) counts[y]++;
    return counts;
  }

  void validate() const {
    if (size() < 1) throw ConfigError("dataset: must contain at least one sample");
    if (static_cast<int>(labels.size()) != size())
      throw ConfigError("dataset: label count does not match sample count");
    if (classCount < 1) throw ConfigError("dataset: classCount must be >= 1");
    for (int y : labels)
      if (y < 0 || y >= classCount)
        throw ConfigError("dataset: label out of range");
    if (!inputs.all_finite())
      throw ConfigError("dataset: inputs contain non-finite values");
  }
};

inline Dataset subset(const Dataset& d, std::span<const int> indices) {
  if (indices.empty()) throw UsageError("subset: empty index list");
  Tensor rows({static_cast<int>(indices.size()), d.dim()});
  std::vector<int> labels(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    int src = indices[r];
    if (src < 0 || src >= d.size()) throw UsageError("subset: index out of range");
    for (int c = 0; c < d.dim(); ++c)
      rows(static_cast<int>(r), c) = d.inputs(src, c);
    labels[r] = d.labels[src];
  }
  return Dataset{std::move(rows), std::move(labels), d.classCount};
}

// k isotropic Gaussian clusters. Centers are drawn standard normal and rescaled
// so the closest pair of centers sits at unit distance; clusterSpread sets the
// radial scale of each cluster (typical distance of a sample from its center),
// i.e. per-coordinate deviation clusterSpread / sqrt(dIn). This keeps the
// overlap between unit-spaced clusters controlled by clusterSpread alone,
// independent of the input dimension.
inline Dataset make_synthetic_dataset(int k, int dIn, int perClass,
                                      double clusterSpread, std::uint64_t seed) {
  if (k < 2) throw ConfigError("make_synthetic_dataset: k must be >= 2");
  if (dIn < 1) throw ConfigError("make_synthetic_dataset: dIn must be >= 1");
  if (perClass < 1) throw ConfigError("make_synthetic_dataset: perClass must be >= 1");
  if (clusterSpread < 0)
    throw ConfigError("make_synthetic_dataset: clusterSpread must be >= 0");

  Rng rng(derive_seed(seed, {stream::kDataset}));
  std::vector<std::vector<double>> centers;
  for (int attempt = 0; attempt < 100; ++attempt) {
    centers.assign(k, std::vector<double>(dIn));
    for (auto& c : centers)
      for (auto& v : c) v = rng.normal();
    double minDist = std::numeric_limits<double>::infinity();
    for (int a = 0; a < k; ++a) {
      for (int b = a + 1; b < k; ++b) {
        double s = 0;
        for (int j = 0; j < dIn; ++j) {
          double diff = centers[a][j] - centers[b][j];
          s += diff * diff;
        }
        minDist = std::min(minDist, std::sqrt(s));
      }
    }
    if (minDist > 1e-9) {
      for (auto& c : centers)
        for (auto& v : c) v /= minDist;
      break;
    }
    centers.clear();
  }
  if (centers.empty())
    throw GenerationError("make_synthetic_dataset: could not separate centers");

  const double coordSpread = clusterSpread / std::sqrt(static_cast<double>(dIn));
  Tensor inputs({k * perClass, dIn});
  std::vector<int> labels(static_cast<std::size_t>(k) * perClass);
  int row = 0;
  for (int c = 0; c < k; ++c) {
    for (int s = 0; s < perClass; ++s, ++row) {
      for (int j = 0; j < dIn; ++j)
        inputs(row, j) = centers[c][j] + coordSpread * rng.normal();
      labels[row] = c;
    }
  }
  return Dataset{std::move(inputs), std::move(labels), k};
}

namespace detail {
inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> cells;
  std::string cell;
  std::stringstream ss(line);
  while (std::getline(ss, cell, ',')) {
    while (!cell.empty() && (cell.back() == '\r' || cell.back() == ' '))
      cell.pop_back();
    std::size_t start = 0;
    while (start < cell.size() && cell[start] == ' ') ++start;
    cells.push_back(cell.substr(start));
  }
  return cells;
}
}  // namespace detail

// CSV ingestion: header `label, f0, ..., f{d-1}`, one sample per row.
inline Dataset load_csv_dataset(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("load_csv_dataset: cannot open " + path);

  std::string line;
  if (!std::getline(in, line))
    throw ConfigError("load_csv_dataset: missing header row in " + path);
  auto header = detail::split_csv_line(line);
  if (header.size() < 2 || header[0] != "label")
    throw ConfigError("load_csv_dataset: header must be `label, f0, ...` in " + path);
  const int d = static_cast<int>(header.size()) - 1;

  std::vector<double> values;
  std::vector<int> labels;
  int lineNo = 1;
  while (std::getline(in, line)) {
    ++lineNo;
    if (line.empty()) continue;
    auto cells = detail::split_csv_line(line);
    if (static_cast<int>(cells.size()) != d + 1)
      throw ConfigError("load_csv_dataset: line " + std::to_string(lineNo) +
                        ": expected " + std::to_string(d + 1) + " columns");
    try {
      std::size_t pos = 0;
      int label = std::stoi(cells[0], &pos);
      if (pos != cells[0].size() || label < 0)
        throw std::invalid_argument("label");
      labels.push_back(label);
      for (int j = 0; j < d; ++j) values.push_back(std::stod(cells[j + 1]));
    } catch (const std::exception&) {
      throw ConfigError("load_csv_dataset: line " + std::to_string(lineNo) +
                        ": malformed value");
    }
  }
  if (labels.empty())
    throw ConfigError("load_csv_dataset: no samples in " + path);

  int classCount = 0;
  for (int y : labels) classCount = std::max(classCount, y + 1);
  Dataset ds{Tensor({static_cast<int>(labels.size()), d}, std::move(values)),
             std::move(labels), classCount};
  ds.validate();
  return ds;
}

}  // namespace fednorm
