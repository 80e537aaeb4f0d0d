#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fednorm/dataset.hpp"
#include "fednorm/rng.hpp"

namespace fednorm {

// Gaussian corruption: x' = x + (eps ⊙ mask) * sigma + mu with eps ~ N(0,1)
// drawn from `seed`. mu shifts every coordinate; the mask gates only the
// random part.
struct NoiseSpec {
  Tensor mask;  // [d], entries 0 or 1
  double sigma = 0;
  double mu = 0;
  std::uint64_t seed = 0;

  void validate() const {
    if (mask.rank() != 1) throw ConfigError("noise: mask must be rank 1");
    if (sigma < 0) throw ConfigError("noise: sigma must be >= 0");
    for (double v : mask.data())
      if (v != 0.0 && v != 1.0) throw ConfigError("noise: mask entries must be 0 or 1");
  }
};

struct PartitionPlan {
  std::vector<std::vector<int>> participantIndices;
  std::vector<std::optional<NoiseSpec>> participantNoise;  // size participants() or empty
  std::vector<int> publicIndices;

  int participants() const { return static_cast<int>(participantIndices.size()); }

  void validate(int datasetSize) const {
    if (participantIndices.empty())
      throw ConfigError("plan: no participants");
    if (!participantNoise.empty() &&
        participantNoise.size() != participantIndices.size())
      throw ConfigError("plan: noise spec count does not match participants");
    std::vector<char> seen(datasetSize, 0);
    auto claim = [&](int idx) {
      if (idx < 0 || idx >= datasetSize)
        throw ConfigError("plan: index out of dataset range");
      if (seen[idx]) throw ConfigError("plan: index assigned twice");
      seen[idx] = 1;
    };
    for (const auto& list : participantIndices) {
      if (list.empty()) throw ConfigError("plan: empty participant");
      for (int idx : list) claim(idx);
    }
    for (int idx : publicIndices) claim(idx);
    for (const auto& spec : participantNoise)
      if (spec) spec->validate();
  }
};

inline Tensor apply_feature_noise(const Tensor& x, const NoiseSpec& spec) {
  spec.validate();
  const int width = x.rank() == 1 ? x.length() : x.cols();
  if (width != spec.mask.length())
    throw ConfigError("apply_feature_noise: mask width does not match input");
  if (spec.sigma == 0.0 && spec.mu == 0.0) return x;  // bit-exact identity

  Tensor out = x;
  const int rows = x.rank() == 1 ? 1 : x.rows();
  if (spec.sigma > 0.0) {
    Rng rng(spec.seed);
    for (int r = 0; r < rows; ++r)
      for (int j = 0; j < width; ++j) {
        double eps = rng.normal();
        out[static_cast<std::size_t>(r) * width + j] +=
            eps * spec.mask[j] * spec.sigma;
      }
  }
  for (double& v : out.data()) v += spec.mu;
  return out;
}

namespace detail {

constexpr int kPartitionRetries = 100;
// The quantity-skew size rule rejects aggressively on small datasets, so its
// budget is wider than the label-skew one.
constexpr int kQuantityRetries = 1000;

// Gamma(alpha) draws normalized to sum 1; empty result signals the (measure
// zero, underflow only) all-zero draw so callers can retry.
inline std::vector<double> dirichlet_from(Rng& rng, double alpha, int n) {
  std::vector<double> p(n);
  double sum = 0;
  for (double& v : p) {
    v = rng.gamma(alpha);
    sum += v;
  }
  if (!(sum > 0)) return {};
  for (double& v : p) v /= sum;
  return p;
}

// Cumulative-sum rounding; boundaries are monotone and the last bucket absorbs
// the remainder, so counts are nonnegative and sum to `total` exactly.
inline std::vector<long long> proportional_counts(const std::vector<double>& props,
                                                  long long total) {
  const int n = static_cast<int>(props.size());
  std::vector<long long> bounds(n + 1, 0);
  double cum = 0;
  for (int i = 0; i < n; ++i) {
    cum += props[i];
    bounds[i + 1] = std::llround(cum * static_cast<double>(total));
    bounds[i + 1] = std::clamp(bounds[i + 1], bounds[i], total);
  }
  bounds[n] = total;
  std::vector<long long> counts(n);
  for (int i = 0; i < n; ++i) counts[i] = bounds[i + 1] - bounds[i];
  return counts;
}

inline std::vector<std::vector<int>> indices_by_class(const Dataset& d,
                                                      const std::vector<int>& pool) {
  std::vector<std::vector<int>> byClass(d.classCount);
  for (int idx : pool) byClass[d.labels[idx]].push_back(idx);
  return byClass;
}

inline std::vector<int> all_indices(const Dataset& d) {
  std::vector<int> pool(d.size());
  for (int i = 0; i < d.size(); ++i) pool[i] = i;
  return pool;
}

inline Tensor bernoulli_mask(Rng& rng, int width, double fraction) {
  Tensor mask({width});
  for (int j = 0; j < width; ++j) mask[j] = rng.uniform01() < fraction ? 1.0 : 0.0;
  return mask;
}

}  // namespace detail

inline std::vector<double> dirichlet_sample(double alpha, int n, std::uint64_t seed) {
  if (n < 1) throw ConfigError("dirichlet_sample: n must be >= 1");
  if (!(alpha > 0)) throw ConfigError("dirichlet_sample: alpha must be positive");
  Rng rng(seed);
  for (int attempt = 0; attempt < detail::kPartitionRetries; ++attempt) {
    auto p = detail::dirichlet_from(rng, alpha, n);
    if (!p.empty()) return p;
  }
  throw GenerationError("dirichlet_sample: degenerate draws exhausted retries");
}

// Per-class Dirichlet allocation. Every class is split independently across the
// n participants; the whole plan is re-drawn if any participant ends up empty.
inline PartitionPlan partition_label_skew(const Dataset& d, const std::vector<int>& pool,
                                          int n, double alpha, std::uint64_t seed) {
  if (n < 2) throw ConfigError("partition_label_skew: n must be >= 2");
  if (!(alpha > 0)) throw ConfigError("partition_label_skew: alpha must be positive");
  if (static_cast<int>(pool.size()) < n)
    throw ConfigError("partition_label_skew: fewer samples than participants");

  auto byClass = detail::indices_by_class(d, pool);
  for (int attempt = 0; attempt < detail::kPartitionRetries; ++attempt) {
    Rng rng(derive_seed(seed, {stream::kLabelSkew, static_cast<std::uint64_t>(attempt)}));
    std::vector<std::vector<int>> lists(n);
    bool ok = true;
    for (auto& classIdx : byClass) {
      if (classIdx.empty()) continue;
      std::vector<int> shuffled = classIdx;
      rng.shuffle(shuffled);
      auto props = detail::dirichlet_from(rng, alpha, n);
      if (props.empty()) {
        ok = false;
        break;
      }
      auto counts = detail::proportional_counts(props, static_cast<long long>(shuffled.size()));
      std::size_t pos = 0;
      for (int i = 0; i < n; ++i)
        for (long long c = 0; c < counts[i]; ++c) lists[i].push_back(shuffled[pos++]);
    }
    if (!ok) continue;
    for (const auto& list : lists)
      if (list.empty()) {
        ok = false;
        break;
      }
    if (!ok) continue;
    PartitionPlan plan;
    plan.participantIndices = std::move(lists);
    plan.participantNoise.assign(n, std::nullopt);
    return plan;
  }
  throw GenerationError("partition_label_skew: retry budget exhausted");
}

inline PartitionPlan partition_label_skew(const Dataset& d, int n, double alpha,
                                          std::uint64_t seed) {
  return partition_label_skew(d, detail::all_indices(d), n, alpha, seed);
}

// One Dirichlet draw fixes participant sizes; within the size grid each class
// is split by shared-boundary cumulative rounding, which keeps the per-class
// split within one sample of the participant's share and covers every sample.
inline PartitionPlan partition_quantity_skew(const Dataset& d, const std::vector<int>& pool,
                                             int n, double alpha, std::uint64_t seed,
                                             int minPerParticipant = 1,
                                             std::vector<long long>* targetSizesOut = nullptr) {
  if (n < 2) throw ConfigError("partition_quantity_skew: n must be >= 2");
  if (!(alpha > 0)) throw ConfigError("partition_quantity_skew: alpha must be positive");
  if (minPerParticipant < 1)
    throw ConfigError("partition_quantity_skew: minPerParticipant must be >= 1");
  const long long N = static_cast<long long>(pool.size());
  if (static_cast<long long>(minPerParticipant) * n > N)
    throw GenerationError("partition_quantity_skew: minimum participant size infeasible");

  auto byClass = detail::indices_by_class(d, pool);
  for (int attempt = 0; attempt < detail::kQuantityRetries; ++attempt) {
    Rng rng(derive_seed(seed, {stream::kQuantitySkew, static_cast<std::uint64_t>(attempt)}));
    auto q = detail::dirichlet_from(rng, alpha, n);
    if (q.empty()) continue;
    auto sizes = detail::proportional_counts(q, N);

    // Per-class counts against the cumulative size grid (cheap accept test
    // before any shuffling).
    std::vector<long long> cumSizes(n + 1, 0);
    for (int i = 0; i < n; ++i) cumSizes[i + 1] = cumSizes[i] + sizes[i];
    std::vector<std::vector<long long>> counts(n, std::vector<long long>(d.classCount, 0));
    std::vector<long long> totals(n, 0);
    for (int c = 0; c < d.classCount; ++c) {
      const long long Nc = static_cast<long long>(byClass[c].size());
      if (Nc == 0) continue;
      long long prev = 0;
      for (int i = 0; i < n; ++i) {
        long long bound =
            std::llround(static_cast<double>(cumSizes[i + 1]) * Nc / static_cast<double>(N));
        bound = std::clamp(bound, prev, Nc);
        if (i == n - 1) bound = Nc;
        counts[i][c] = bound - prev;
        totals[i] += counts[i][c];
        prev = bound;
      }
    }
    bool ok = true;
    for (int i = 0; i < n; ++i)
      if (totals[i] < minPerParticipant) {
        ok = false;
        break;
      }
    if (!ok) continue;

    std::vector<std::vector<int>> lists(n);
    for (int c = 0; c < d.classCount; ++c) {
      if (byClass[c].empty()) continue;
      std::vector<int> shuffled = byClass[c];
      rng.shuffle(shuffled);
      std::size_t pos = 0;
      for (int i = 0; i < n; ++i)
        for (long long s = 0; s < counts[i][c]; ++s) lists[i].push_back(shuffled[pos++]);
    }
    PartitionPlan plan;
    plan.participantIndices = std::move(lists);
    plan.participantNoise.assign(n, std::nullopt);
    if (targetSizesOut) *targetSizesOut = sizes;
    return plan;
  }
  throw GenerationError("partition_quantity_skew: retry budget exhausted");
}

inline PartitionPlan partition_quantity_skew(const Dataset& d, int n, double alpha,
                                             std::uint64_t seed, int minPerParticipant = 1) {
  return partition_quantity_skew(d, detail::all_indices(d), n, alpha, seed,
                                 minPerParticipant);
}

// Uniform equal-size split with no noise attached.
inline PartitionPlan partition_uniform(const Dataset& d, const std::vector<int>& pool,
                                       int n, std::uint64_t seed) {
  if (n < 2) throw ConfigError("partition_uniform: n must be >= 2");
  if (static_cast<int>(pool.size()) < n)
    throw ConfigError("partition_uniform: fewer samples than participants");
  std::vector<int> shuffled = pool;
  Rng rng(derive_seed(seed, {stream::kFeatureSkew}));
  rng.shuffle(shuffled);
  const int N = static_cast<int>(shuffled.size());
  const int base = N / n;
  const int extra = N % n;
  PartitionPlan plan;
  plan.participantIndices.resize(n);
  std::size_t pos = 0;
  for (int i = 0; i < n; ++i) {
    int take = base + (i < extra ? 1 : 0);
    for (int s = 0; s < take; ++s) plan.participantIndices[i].push_back(shuffled[pos++]);
  }
  plan.participantNoise.assign(n, std::nullopt);
  return plan;
}

// Equal-size split plus per-participant Gaussian noise specs; noise is applied
// lazily when participant data is materialized for training.
inline PartitionPlan partition_feature_skew(const Dataset& d, const std::vector<int>& pool,
                                            int n, const std::vector<double>& sigmaPerParticipant,
                                            double mu, double maskFraction,
                                            std::uint64_t seed) {
  if (static_cast<int>(sigmaPerParticipant.size()) != n)
    throw ConfigError("partition_feature_skew: sigma list size must equal n");
  for (double s : sigmaPerParticipant)
    if (s < 0) throw ConfigError("partition_feature_skew: sigma must be >= 0");
  if (maskFraction < 0 || maskFraction > 1)
    throw ConfigError("partition_feature_skew: maskFraction must be in [0, 1]");

  PartitionPlan plan = partition_uniform(d, pool, n, seed);
  for (int i = 0; i < n; ++i) {
    Rng maskRng(derive_seed(seed, {stream::kNoiseMask, static_cast<std::uint64_t>(i)}));
    NoiseSpec spec;
    spec.mask = detail::bernoulli_mask(maskRng, d.dim(), maskFraction);
    spec.sigma = sigmaPerParticipant[i];
    spec.mu = mu;
    spec.seed = derive_seed(seed, {stream::kNoiseApply, static_cast<std::uint64_t>(i)});
    plan.participantNoise[i] = std::move(spec);
  }
  return plan;
}

inline PartitionPlan partition_feature_skew(const Dataset& d, int n,
                                            const std::vector<double>& sigmaPerParticipant,
                                            double mu, double maskFraction,
                                            std::uint64_t seed) {
  return partition_feature_skew(d, detail::all_indices(d), n, sigmaPerParticipant, mu,
                                maskFraction, seed);
}

enum class MixedMode { LabelFeature, LabelQuantity };

// label+feature: label-skew indices (identical to partition_label_skew under the
// same seed) with one uniform full-mask NoiseSpec per participant.
// label+quantity: per-class Dirichlet splits rescaled by a quantity Dirichlet draw.
inline PartitionPlan partition_mixed(const Dataset& d, const std::vector<int>& pool, int n,
                                     MixedMode mode, double alpha, double sigma,
                                     std::uint64_t seed) {
  if (sigma < 0) throw ConfigError("partition_mixed: sigma must be >= 0");
  if (mode == MixedMode::LabelFeature) {
    PartitionPlan plan = partition_label_skew(d, pool, n, alpha, seed);
    for (int i = 0; i < n; ++i) {
      NoiseSpec spec;
      spec.mask = Tensor({d.dim()});
      for (double& v : spec.mask.data()) v = 1.0;
      spec.sigma = sigma;
      spec.mu = 0.0;
      spec.seed = derive_seed(seed, {stream::kNoiseApply, static_cast<std::uint64_t>(i)});
      plan.participantNoise[i] = std::move(spec);
    }
    return plan;
  }

  if (n < 2) throw ConfigError("partition_mixed: n must be >= 2");
  if (!(alpha > 0)) throw ConfigError("partition_mixed: alpha must be positive");
  auto byClass = detail::indices_by_class(d, pool);
  for (int attempt = 0; attempt < detail::kPartitionRetries; ++attempt) {
    Rng rng(derive_seed(seed, {stream::kMixedSkew, static_cast<std::uint64_t>(attempt)}));
    auto quantity = detail::dirichlet_from(rng, alpha, n);
    if (quantity.empty()) continue;
    std::vector<std::vector<int>> lists(n);
    bool ok = true;
    for (auto& classIdx : byClass) {
      if (classIdx.empty()) continue;
      std::vector<int> shuffled = classIdx;
      rng.shuffle(shuffled);
      auto props = detail::dirichlet_from(rng, alpha, n);
      if (props.empty()) {
        ok = false;
        break;
      }
      double sum = 0;
      for (int i = 0; i < n; ++i) {
        props[i] *= quantity[i];
        sum += props[i];
      }
      if (!(sum > 0)) {
        ok = false;
        break;
      }
      for (double& v : props) v /= sum;
      auto counts = detail::proportional_counts(props, static_cast<long long>(shuffled.size()));
      std::size_t pos = 0;
      for (int i = 0; i < n; ++i)
        for (long long c = 0; c < counts[i]; ++c) lists[i].push_back(shuffled[pos++]);
    }
    if (!ok) continue;
    for (const auto& list : lists)
      if (list.empty()) {
        ok = false;
        break;
      }
    if (!ok) continue;
    PartitionPlan plan;
    plan.participantIndices = std::move(lists);
    plan.participantNoise.assign(n, std::nullopt);
    return plan;
  }
  throw GenerationError("partition_mixed: retry budget exhausted");
}

inline PartitionPlan partition_mixed(const Dataset& d, int n, MixedMode mode, double alpha,
                                     double sigma, std::uint64_t seed) {
  return partition_mixed(d, detail::all_indices(d), n, mode, alpha, sigma, seed);
}

// Stratified holdout indices: ceil(fraction * N_class) of every class goes to
// the public side. Both sides must keep every present class nonempty.
inline std::pair<std::vector<int>, std::vector<int>> split_public_indices(
    const Dataset& d, double fraction, std::uint64_t seed) {
  if (!(fraction > 0) || !(fraction < 1))
    throw ConfigError("split_public: fraction must be in (0, 1)");
  auto byClass = detail::indices_by_class(d, detail::all_indices(d));
  Rng rng(derive_seed(seed, {stream::kPublicSplit}));
  std::vector<int> publicIdx, remainderIdx;
  for (int c = 0; c < d.classCount; ++c) {
    auto& classIdx = byClass[c];
    if (classIdx.empty())
      throw GenerationError("split_public: class " + std::to_string(c) +
                            " has no samples");
    std::vector<int> shuffled = classIdx;
    rng.shuffle(shuffled);
    auto take = static_cast<std::size_t>(
        std::ceil(fraction * static_cast<double>(shuffled.size())));
    if (take == 0 || take >= shuffled.size())
      throw GenerationError("split_public: fraction leaves class " +
                            std::to_string(c) + " empty on one side");
    publicIdx.insert(publicIdx.end(), shuffled.begin(), shuffled.begin() + take);
    remainderIdx.insert(remainderIdx.end(), shuffled.begin() + take, shuffled.end());
  }
  std::sort(publicIdx.begin(), publicIdx.end());
  std::sort(remainderIdx.begin(), remainderIdx.end());
  return {std::move(publicIdx), std::move(remainderIdx)};
}

inline std::pair<Dataset, Dataset> split_public(const Dataset& d, double fraction,
                                                std::uint64_t seed) {
  auto [publicIdx, remainderIdx] = split_public_indices(d, fraction, seed);
  return {subset(d, publicIdx), subset(d, remainderIdx)};
}

// Plan wire format:
// {"participants": [[int]], "public": [int],
//  "noise": [null | {"mask": [0/1], "sigma": f, "mu": f, "seed": uint}]}
inline nlohmann::json plan_to_json(const PartitionPlan& plan) {
  nlohmann::json participants = nlohmann::json::array();
  for (const auto& list : plan.participantIndices) participants.push_back(list);
  nlohmann::json noise = nlohmann::json::array();
  for (int i = 0; i < plan.participants(); ++i) {
    if (plan.participantNoise.empty() || !plan.participantNoise[i]) {
      noise.push_back(nullptr);
      continue;
    }
    const NoiseSpec& spec = *plan.participantNoise[i];
    std::vector<int> mask(spec.mask.length());
    for (int j = 0; j < spec.mask.length(); ++j)
      mask[j] = spec.mask[j] != 0.0 ? 1 : 0;
    noise.push_back(nlohmann::json{{"mask", mask},
                                   {"sigma", spec.sigma},
                                   {"mu", spec.mu},
                                   {"seed", spec.seed}});
  }
  return nlohmann::json{{"participants", participants},
                        {"public", plan.publicIndices},
                        {"noise", noise}};
}

inline PartitionPlan plan_from_json(const nlohmann::json& j) {
  PartitionPlan plan;
  for (const auto& list : j.at("participants"))
    plan.participantIndices.push_back(list.get<std::vector<int>>());
  plan.publicIndices = j.at("public").get<std::vector<int>>();
  for (const auto& entry : j.at("noise")) {
    if (entry.is_null()) {
      plan.participantNoise.push_back(std::nullopt);
      continue;
    }
    NoiseSpec spec;
    auto mask = entry.at("mask").get<std::vector<int>>();
    spec.mask = Tensor({static_cast<int>(mask.size())});
    for (std::size_t i = 0; i < mask.size(); ++i) spec.mask[i] = mask[i];
    spec.sigma = entry.at("sigma").get<double>();
    spec.mu = entry.at("mu").get<double>();
    spec.seed = entry.at("seed").get<std::uint64_t>();
    plan.participantNoise.push_back(std::move(spec));
  }
  return plan;
}

}  // namespace fednorm
