#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <map>
#include <numeric>
#include <set>
#include <utility>
#include <vector>

#include "fednorm/config.hpp"
#include "fednorm/feature_norm.hpp"
#include "fednorm/metrics.hpp"
#include "fednorm/model.hpp"
#include "fednorm/partition.hpp"

namespace fednorm {

struct RoundReport {
  int round = 0;
  double globalAccuracy = 0;
  std::vector<double> accuracies;  // pre-refinement A_i on the public set
  std::vector<double> trainLoss;   // mean optimized batch loss per participant
  std::vector<int> regularizedSet;
  // Public-set accuracy of refined models, keyed by participant; selection
  // always uses the pre-refinement values above.
  std::map<int, double> postRegularizationAccuracy;
  long long upBytes = 0;
  long long downBytes = 0;
  double wallSeconds = 0;  // measured; canonical report files carry 0.0
};

struct LocalTrainingResult {
  ModelParams params;
  ClassNormTable table;
  double accuracy = 0;
  double meanLoss = 0;
};

namespace detail {

// Mean cross-entropy of the model over a dataset without updating it; used as
// the reported train loss when no SGD step ran.
inline double dataset_mean_ce(const ModelParams& params, const Dataset& d) {
  std::vector<int> idx(d.size());
  std::iota(idx.begin(), idx.end(), 0);
  Batch whole = make_batch(d, idx);
  return cross_entropy(forward(params, whole).logits, whole.labels);
}

}  // namespace detail

// E_train epochs of mini-batch SGD from the broadcast model, then the class
// norm table and accuracy on the public set with the updated parameters.
inline LocalTrainingResult local_training(int participant, const ModelParams& globalParams,
                                          const Dataset& localData, const Dataset& publicData,
                                          const FederationConfig& cfg, int round) {
  if (localData.size() == 0) throw UsageError("local_training: empty local dataset");
  ModelParams params = globalParams;
  const int N = localData.size();
  double lossSum = 0;
  long steps = 0;
  for (int epoch = 0; epoch < cfg.trainEpochs; ++epoch) {
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {stream::kShuffle, static_cast<std::uint64_t>(participant),
                                   static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (int start = 0; start < N; start += cfg.trainBatch) {
      int len = std::min(cfg.trainBatch, N - start);
      Batch batch = make_batch(localData, std::span<const int>(order).subspan(start, len));
      auto lg = detail::backward_impl(params, batch, {});
      lossSum += lg.loss;
      ++steps;
      params = sgd_step(params, lg.grads, cfg.eta);
    }
  }
  LocalTrainingResult result;
  result.meanLoss = steps > 0 ? lossSum / static_cast<double>(steps)
                              : detail::dataset_mean_ce(params, localData);
  result.table = class_average_norms(params, publicData, cfg.testBatch);
  result.accuracy = evaluate(params, publicData, cfg.testBatch);
  result.params = std::move(params);
  return result;
}

// The floor(n*p) participants with the lowest accuracies; ties break toward
// the lower participant id.
inline std::set<int> select_regularized(const std::vector<double>& accuracies, double p) {
  if (p < 0 || p >= 1) throw ConfigError("select_regularized: p must be in [0, 1)");
  const int n = static_cast<int>(accuracies.size());
  const int take = regularized_count(n, p);
  std::vector<int> ids(n);
  std::iota(ids.begin(), ids.end(), 0);
  std::sort(ids.begin(), ids.end(), [&](int a, int b) {
    if (accuracies[a] != accuracies[b]) return accuracies[a] < accuracies[b];
    return a < b;
  });
  return std::set<int>(ids.begin(), ids.begin() + take);
}

struct RegularizedLoss {
  double loss = 0;
  Gradients grads;
};

// Phi = cross-entropy + lambda * J on a public-set batch.
//
// J sums rho_l * d_l over the batch's labels, rho_l = count(y==l)/|B|. In the
// default live mode d_l re-evaluates the gap against the frozen reference
// sums: d_l = refSum[l] - refCount[l] * avgBatchNorm_l(params), so the term is
// differentiable through the feature extractor. `squared` uses d_l = gap^2/2.
// frozenNorms reproduces the literal constant-J arithmetic (d_l = delta[l],
// gradient equal to plain cross-entropy). Labels missing from the diff table
// contribute zero.
inline RegularizedLoss regularized_loss(const ModelParams& params, const Batch& batch,
                                        const NormDiffTable& diff, double lambda,
                                        Penalty penalty, bool frozenNorms = false) {
  const int B = batch.size();
  if (B < 1) throw UsageError("regularized_loss: empty batch");

  std::map<int, int> counts;
  for (int y : batch.labels) counts[y]++;

  if (frozenNorms) {
    auto lg = detail::backward_impl(params, batch, {});
    double J = 0;
    for (const auto& [label, count] : counts) {
      auto it = diff.delta.find(label);
      if (it == diff.delta.end()) continue;
      J += (static_cast<double>(count) / B) * it->second;
    }
    return RegularizedLoss{lg.loss + lambda * J, std::move(lg.grads)};
  }

  ForwardPass fwd = forward(params, batch);
  std::map<int, double> normSum;
  for (int b = 0; b < B; ++b) {
    double sq = 0;
    for (int j = 0; j < fwd.features.cols(); ++j)
      sq += fwd.features(b, j) * fwd.features(b, j);
    normSum[batch.labels[b]] += std::sqrt(sq);
  }

  double J = 0;
  std::map<int, double> perSampleWeight;
  for (const auto& [label, count] : counts) {
    auto ref = diff.refSum.find(label);
    if (ref == diff.refSum.end()) continue;
    const double rho = static_cast<double>(count) / B;
    const double refCount = diff.refCount.at(label);
    const double avgNorm = normSum[label] / count;
    const double gap = ref->second - refCount * avgNorm;
    if (penalty == Penalty::Signed) {
      J += rho * gap;
      perSampleWeight[label] = -lambda * refCount / B;
    } else {
      J += rho * gap * gap / 2.0;
      perSampleWeight[label] = -lambda * gap * refCount / B;
    }
  }

  std::vector<double> weights(B, 0.0);
  for (int b = 0; b < B; ++b) {
    auto it = perSampleWeight.find(batch.labels[b]);
    if (it != perSampleWeight.end()) weights[b] = it->second;
  }
  auto lg = detail::backward_impl(params, batch, weights);
  return RegularizedLoss{lg.loss + lambda * J, std::move(lg.grads)};
}

// E_re epochs of mini-batch SGD over the public set minimizing the
// regularized objective.
inline ModelParams feature_norm_regularize(int participant, ModelParams params,
                                           const Dataset& publicData,
                                           const NormDiffTable& diff,
                                           const FederationConfig& cfg, int round) {
  const int N = publicData.size();
  if (N == 0) throw UsageError("feature_norm_regularize: empty public dataset");
  for (int epoch = 0; epoch < cfg.reEpochs; ++epoch) {
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {stream::kRegularize, static_cast<std::uint64_t>(participant),
                                   static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (int start = 0; start < N; start += cfg.trainBatch) {
      int len = std::min(cfg.trainBatch, N - start);
      Batch batch = make_batch(publicData, std::span<const int>(order).subspan(start, len));
      auto rl = regularized_loss(params, batch, diff, cfg.lambda, cfg.penalty);
      params = sgd_step(params, rl.grads, cfg.eta);
    }
  }
  return params;
}

// Elementwise sum of |D_i| / sum|D| weighted parameters.
inline ModelParams aggregate_weighted(const std::vector<ModelParams>& models,
                                      const std::vector<long long>& sizes) {
  if (models.empty()) throw ProtocolError("aggregate_weighted: no models");
  if (models.size() != sizes.size())
    throw ProtocolError("aggregate_weighted: sizes do not match models");
  long long total = 0;
  for (long long s : sizes) {
    if (s < 0) throw ProtocolError("aggregate_weighted: negative size");
    total += s;
  }
  if (total == 0) throw ProtocolError("aggregate_weighted: size sum is zero");

  ModelParams out = models[0];
  auto scale = [](Tensor& t, double w) {
    for (double& v : t.data()) v *= w;
  };
  auto axpy = [](Tensor& t, const Tensor& x, double w) {
    if (!t.same_shape(x)) throw ConfigError("aggregate_weighted: shape mismatch");
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] += w * x[i];
  };
  const double w0 = static_cast<double>(sizes[0]) / static_cast<double>(total);
  scale(out.featureWeights, w0);
  scale(out.featureBias, w0);
  scale(out.classifierWeights, w0);
  scale(out.classifierBias, w0);
  for (std::size_t i = 1; i < models.size(); ++i) {
    const double w = static_cast<double>(sizes[i]) / static_cast<double>(total);
    axpy(out.featureWeights, models[i].featureWeights, w);
    axpy(out.featureBias, models[i].featureBias, w);
    axpy(out.classifierWeights, models[i].classifierWeights, w);
    axpy(out.classifierBias, models[i].classifierBias, w);
  }
  return out;
}

namespace detail {

// Gradient of the batch objective CE + (proxMu/2) * ||w - wGlobal||^2.
inline LossGrad fedprox_batch(const ModelParams& params, const ModelParams& globalParams,
                              const Batch& batch, double proxMu) {
  LossGrad lg = backward_impl(params, batch, {});
  auto addProx = [&](Tensor& grad, const Tensor& w, const Tensor& wg) {
    for (std::size_t i = 0; i < grad.numel(); ++i) {
      double diff = w[i] - wg[i];
      grad[i] += proxMu * diff;
      lg.loss += 0.5 * proxMu * diff * diff;
    }
  };
  addProx(lg.grads.featureWeights, params.featureWeights, globalParams.featureWeights);
  addProx(lg.grads.featureBias, params.featureBias, globalParams.featureBias);
  addProx(lg.grads.classifierWeights, params.classifierWeights,
          globalParams.classifierWeights);
  addProx(lg.grads.classifierBias, params.classifierBias, globalParams.classifierBias);
  return lg;
}

}  // namespace detail

struct FedProxResult {
  ModelParams params;
  double accuracy = 0;
  double meanLoss = 0;
};

// As local_training, but every batch loss adds the proximal pull toward the
// round's broadcast model.
inline FedProxResult fedprox_local_training(int participant, const ModelParams& globalParams,
                                            const Dataset& localData,
                                            const Dataset& publicData,
                                            const FederationConfig& cfg, int round) {
  if (localData.size() == 0) throw UsageError("fedprox_local_training: empty local dataset");
  ModelParams params = globalParams;
  const int N = localData.size();
  double lossSum = 0;
  long steps = 0;
  for (int epoch = 0; epoch < cfg.trainEpochs; ++epoch) {
    std::vector<int> order(N);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(cfg.seed, {stream::kShuffle, static_cast<std::uint64_t>(participant),
                                   static_cast<std::uint64_t>(round),
                                   static_cast<std::uint64_t>(epoch)}));
    rng.shuffle(order);
    for (int start = 0; start < N; start += cfg.trainBatch) {
      int len = std::min(cfg.trainBatch, N - start);
      Batch batch = make_batch(localData, std::span<const int>(order).subspan(start, len));
      auto lg = detail::fedprox_batch(params, globalParams, batch, cfg.proxMu);
      lossSum += lg.loss;
      ++steps;
      params = sgd_step(params, lg.grads, cfg.eta);
    }
  }
  FedProxResult result;
  result.meanLoss = steps > 0 ? lossSum / static_cast<double>(steps)
                              : detail::dataset_mean_ce(params, localData);
  result.accuracy = evaluate(params, publicData, cfg.testBatch);
  result.params = std::move(params);
  return result;
}

struct FederationResult {
  std::vector<RoundReport> rounds;
  ModelParams finalGlobal;
};

// The round protocol: broadcast, local training on every participant, then for
// FNR the accuracy-based selection, norm-difference computation and
// regularization of the selected models, and finally size-weighted
// aggregation and evaluation on the public set. All randomness is derived
// from cfg.seed, so reports are a pure function of (cfg, plan, dataset).
inline FederationResult run_federation(const FederationConfig& cfg, const PartitionPlan& plan,
                                       const Dataset& dataset) {
  cfg.validate();
  if (plan.participants() != cfg.n)
    throw ConfigError("run_federation: plan participant count does not match cfg.n");
  plan.validate(dataset.size());
  if (plan.publicIndices.empty())
    throw UsageError("run_federation: plan has no public holdout");

  Dataset publicData = subset(dataset, plan.publicIndices);
  std::vector<Dataset> locals;
  std::vector<long long> sizes;
  locals.reserve(cfg.n);
  for (int i = 0; i < cfg.n; ++i) {
    Dataset local = subset(dataset, plan.participantIndices[i]);
    if (!plan.participantNoise.empty() && plan.participantNoise[i]) {
      local.inputs = apply_feature_noise(local.inputs, *plan.participantNoise[i]);
      if (!local.inputs.all_finite())
        throw GenerationError("run_federation: noise produced non-finite inputs");
    }
    sizes.push_back(static_cast<long long>(plan.participantIndices[i].size()));
    locals.push_back(std::move(local));
  }

  ModelParams global = init_params(dataset.dim(), cfg.hidden, dataset.classCount,
                                   derive_seed(cfg.seed, {stream::kInit}));
  const long long modelBytes =
      static_cast<long long>(global.parameter_count()) * cfg.wirePrecisionBytes;

  FederationResult result;
  for (int round = 0; round < cfg.rounds; ++round) {
    auto t0 = std::chrono::steady_clock::now();

    std::vector<ModelParams> models(cfg.n);
    std::map<int, ClassNormTable> tables;
    std::vector<double> accuracies(cfg.n, 0), losses(cfg.n, 0);
    if (cfg.algorithm == Algorithm::FedProx) {
      for (int i = 0; i < cfg.n; ++i) {
        auto res = fedprox_local_training(i, global, locals[i], publicData, cfg, round);
        models[i] = std::move(res.params);
        accuracies[i] = res.accuracy;
        losses[i] = res.meanLoss;
      }
    } else {
      for (int i = 0; i < cfg.n; ++i) {
        auto res = local_training(i, global, locals[i], publicData, cfg, round);
        models[i] = std::move(res.params);
        tables[i] = std::move(res.table);
        accuracies[i] = res.accuracy;
        losses[i] = res.meanLoss;
      }
    }

    std::set<int> selected;
    std::map<int, double> postRegAcc;
    if (cfg.algorithm == Algorithm::Fnr) {
      selected = select_regularized(accuracies, cfg.p);
      if (!selected.empty()) {
        std::set<int> allIds;
        for (int i = 0; i < cfg.n; ++i) allIds.insert(i);
        for (int j : selected) {
          NormDiffTable diff = norm_differences(j, allIds, selected, tables);
          models[j] = feature_norm_regularize(j, std::move(models[j]), publicData,
                                              diff, cfg, round);
          postRegAcc[j] = evaluate(models[j], publicData, cfg.testBatch);
        }
      }
    }

    global = aggregate_weighted(models, sizes);
    double globalAcc = evaluate(global, publicData, cfg.testBatch);

    long long up, down = static_cast<long long>(cfg.n) * modelBytes;
    if (cfg.algorithm == Algorithm::Fnr && cfg.countTables) {
      up = 0;
      for (int i = 0; i < cfg.n; ++i)
        up += modelBytes + static_cast<long long>(table_wire_bytes(tables.at(i))) + 8;
    } else {
      up = static_cast<long long>(cfg.n) * modelBytes;
    }

    RoundReport report;
    report.round = round;
    report.globalAccuracy = globalAcc;
    report.accuracies = accuracies;
    report.trainLoss = losses;
    report.regularizedSet.assign(selected.begin(), selected.end());
    report.postRegularizationAccuracy = std::move(postRegAcc);
    report.upBytes = up;
    report.downBytes = down;
    report.wallSeconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    result.rounds.push_back(std::move(report));
  }
  result.finalGlobal = std::move(global);
  return result;
}

}  // namespace fednorm
