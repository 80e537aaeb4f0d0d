#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "fednorm/dataset.hpp"
#include "fednorm/rng.hpp"
#include "fednorm/tensor.hpp"

namespace fednorm {

// Two-stage network: feature extractor (affine + ReLU) followed by a linear
// classifier. The hidden activation vector is the "extracted features" that
// feature-norm computations operate on.
struct ModelParams {
  Tensor featureWeights;     // [dIn x dHidden]
  Tensor featureBias;        // [dHidden]
  Tensor classifierWeights;  // [dHidden x k]
  Tensor classifierBias;     // [k]

  int input_dim() const { return featureWeights.rows(); }
  int hidden_dim() const { return featureWeights.cols(); }
  int num_classes() const { return classifierWeights.cols(); }

  std::size_t parameter_count() const {
    return featureWeights.numel() + featureBias.numel() +
           classifierWeights.numel() + classifierBias.numel();
  }

  void require_consistent() const {
    if (featureBias.length() != hidden_dim() ||
        classifierWeights.rows() != hidden_dim() ||
        classifierBias.length() != num_classes())
      throw ConfigError("model: parameter shapes are inconsistent");
  }
};

struct Gradients {
  Tensor featureWeights;
  Tensor featureBias;
  Tensor classifierWeights;
  Tensor classifierBias;
};

struct Batch {
  Tensor inputs;  // [B x dIn]
  std::vector<int> labels;

  int size() const { return inputs.rows(); }
};

inline Batch make_batch(const Dataset& d, std::span<const int> indices) {
  if (indices.empty()) throw UsageError("make_batch: empty index list");
  Tensor rows({static_cast<int>(indices.size()), d.dim()});
  std::vector<int> labels(indices.size());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    for (int c = 0; c < d.dim(); ++c)
      rows(static_cast<int>(r), c) = d.inputs(indices[r], c);
    labels[r] = d.labels[indices[r]];
  }
  return Batch{std::move(rows), std::move(labels)};
}

// Uniform fan-based initialization: weights in [-s, s] with
// s = sqrt(6 / (fan_in + fan_out)) per layer, biases zero.
inline ModelParams init_params(int dIn, int dHidden, int k, std::uint64_t seed) {
  if (dIn < 1 || dHidden < 1 || k < 1)
    throw ConfigError("init_params: dimensions must be >= 1");
  Rng rng(seed);
  ModelParams p{Tensor({dIn, dHidden}), Tensor({dHidden}), Tensor({dHidden, k}),
                Tensor({k})};
  const double s1 = std::sqrt(6.0 / (dIn + dHidden));
  for (double& w : p.featureWeights.data()) w = rng.uniform(-s1, s1);
  const double s2 = std::sqrt(6.0 / (dHidden + k));
  for (double& w : p.classifierWeights.data()) w = rng.uniform(-s2, s2);
  return p;
}

struct ForwardPass {
  Tensor features;  // [B x dHidden]
  Tensor logits;    // [B x k]
};

inline ForwardPass forward(const ModelParams& p, const Batch& batch) {
  p.require_consistent();
  if (batch.inputs.cols() != p.input_dim())
    throw ConfigError("forward: batch width does not match input dim");
  if (static_cast<int>(batch.labels.size()) != batch.size())
    throw ConfigError("forward: label count does not match batch size");

  const int B = batch.size();
  const int dIn = p.input_dim();
  const int h = p.hidden_dim();
  const int k = p.num_classes();

  Tensor features({B, h});
  for (int b = 0; b < B; ++b) {
    for (int j = 0; j < h; ++j) {
      double z = p.featureBias[j];
      for (int i = 0; i < dIn; ++i) z += batch.inputs(b, i) * p.featureWeights(i, j);
      features(b, j) = z > 0.0 ? z : 0.0;
    }
  }
  Tensor logits({B, k});
  for (int b = 0; b < B; ++b) {
    for (int c = 0; c < k; ++c) {
      double z = p.classifierBias[c];
      for (int j = 0; j < h; ++j) z += features(b, j) * p.classifierWeights(j, c);
      logits(b, c) = z;
    }
  }
  return ForwardPass{std::move(features), std::move(logits)};
}

// Mean over the batch of -log softmax(logits)[label], with max-subtraction.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const int B = logits.rows();
  const int k = logits.cols();
  if (B < 1) throw UsageError("cross_entropy: empty batch");
  if (static_cast<int>(labels.size()) != B)
    throw ConfigError("cross_entropy: label count does not match batch size");
  double total = 0;
  for (int b = 0; b < B; ++b) {
    int y = labels[b];
    if (y < 0 || y >= k) throw ConfigError("cross_entropy: label out of range");
    double mx = logits(b, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, logits(b, c));
    double sum = 0;
    for (int c = 0; c < k; ++c) sum += std::exp(logits(b, c) - mx);
    total += std::log(sum) - (logits(b, y) - mx);
  }
  return total / B;
}

namespace detail {

struct LossGrad {
  Gradients grads;
  double loss = 0;  // mean cross-entropy only
};

// Exact gradient of mean cross-entropy plus, when normWeights is nonempty, the
// per-sample feature-norm terms sum_b normWeights[b] * ||features_b||. Samples
// whose feature vector is exactly zero contribute a zero norm (sub)gradient.
inline LossGrad backward_impl(const ModelParams& p, const Batch& batch,
                              std::span<const double> normWeights) {
  ForwardPass fwd = forward(p, batch);
  const int B = batch.size();
  const int dIn = p.input_dim();
  const int h = p.hidden_dim();
  const int k = p.num_classes();
  if (!normWeights.empty() && static_cast<int>(normWeights.size()) != B)
    throw ConfigError("backward: norm weight count does not match batch size");

  LossGrad out{Gradients{Tensor({dIn, h}), Tensor({h}), Tensor({h, k}), Tensor({k})},
               0.0};

  // dLogits = (softmax - onehot) / B; loss accumulated alongside.
  Tensor dLogits({B, k});
  double lossSum = 0;
  for (int b = 0; b < B; ++b) {
    int y = batch.labels[b];
    if (y < 0 || y >= k) throw ConfigError("backward: label out of range");
    double mx = fwd.logits(b, 0);
    for (int c = 1; c < k; ++c) mx = std::max(mx, fwd.logits(b, c));
    double sum = 0;
    for (int c = 0; c < k; ++c) sum += std::exp(fwd.logits(b, c) - mx);
    lossSum += std::log(sum) - (fwd.logits(b, y) - mx);
    for (int c = 0; c < k; ++c) {
      double soft = std::exp(fwd.logits(b, c) - mx) / sum;
      dLogits(b, c) = (soft - (c == y ? 1.0 : 0.0)) / B;
    }
  }
  out.loss = lossSum / B;

  for (int j = 0; j < h; ++j)
    for (int c = 0; c < k; ++c) {
      double g = 0;
      for (int b = 0; b < B; ++b) g += fwd.features(b, j) * dLogits(b, c);
      out.grads.classifierWeights(j, c) = g;
    }
  for (int c = 0; c < k; ++c) {
    double g = 0;
    for (int b = 0; b < B; ++b) g += dLogits(b, c);
    out.grads.classifierBias[c] = g;
  }

  Tensor dFeatures({B, h});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < h; ++j) {
      double g = 0;
      for (int c = 0; c < k; ++c) g += dLogits(b, c) * p.classifierWeights(j, c);
      dFeatures(b, j) = g;
    }

  if (!normWeights.empty()) {
    for (int b = 0; b < B; ++b) {
      if (normWeights[b] == 0.0) continue;
      double sq = 0;
      for (int j = 0; j < h; ++j) sq += fwd.features(b, j) * fwd.features(b, j);
      double norm = std::sqrt(sq);
      if (norm <= 0.0) continue;
      double scale = normWeights[b] / norm;
      for (int j = 0; j < h; ++j) dFeatures(b, j) += scale * fwd.features(b, j);
    }
  }

  // ReLU gate: features > 0 identifies active units.
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < h; ++j)
      if (fwd.features(b, j) <= 0.0) dFeatures(b, j) = 0.0;

  for (int i = 0; i < dIn; ++i)
    for (int j = 0; j < h; ++j) {
      double g = 0;
      for (int b = 0; b < B; ++b) g += batch.inputs(b, i) * dFeatures(b, j);
      out.grads.featureWeights(i, j) = g;
    }
  for (int j = 0; j < h; ++j) {
    double g = 0;
    for (int b = 0; b < B; ++b) g += dFeatures(b, j);
    out.grads.featureBias[j] = g;
  }
  return out;
}

}  // namespace detail

inline Gradients backward(const ModelParams& p, const Batch& batch) {
  return detail::backward_impl(p, batch, {}).grads;
}

// extraNormWeights adds the regularization gradient path: the loss being
// differentiated becomes mean-CE + sum_b extraNormWeights[b] * ||features_b||.
inline Gradients backward(const ModelParams& p, const Batch& batch,
                          std::span<const double> extraNormWeights) {
  return detail::backward_impl(p, batch, extraNormWeights).grads;
}

inline ModelParams sgd_step(const ModelParams& p, const Gradients& g, double eta) {
  if (eta < 0) throw UsageError("sgd_step: eta must be >= 0");
  if (!p.featureWeights.same_shape(g.featureWeights) ||
      !p.featureBias.same_shape(g.featureBias) ||
      !p.classifierWeights.same_shape(g.classifierWeights) ||
      !p.classifierBias.same_shape(g.classifierBias))
    throw ConfigError("sgd_step: gradient shapes do not match parameters");

  ModelParams out = p;
  auto apply = [eta](Tensor& t, const Tensor& grad) {
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] -= eta * grad[i];
  };
  apply(out.featureWeights, g.featureWeights);
  apply(out.featureBias, g.featureBias);
  apply(out.classifierWeights, g.classifierWeights);
  apply(out.classifierBias, g.classifierBias);
  if (!out.featureWeights.all_finite() || !out.featureBias.all_finite() ||
      !out.classifierWeights.all_finite() || !out.classifierBias.all_finite())
    throw UsageError("sgd_step: parameters diverged to non-finite values");
  return out;
}

// Fraction of samples whose argmax logit matches the label; argmax ties break
// toward the lower class index.
inline double evaluate(const ModelParams& p, const Dataset& d, int batchSize = 32) {
  if (d.size() == 0) throw UsageError("evaluate: empty dataset");
  if (batchSize < 1) throw UsageError("evaluate: batchSize must be >= 1");
  const int N = d.size();
  std::vector<int> idx(N);
  for (int i = 0; i < N; ++i) idx[i] = i;
  std::int64_t correct = 0;
  for (int start = 0; start < N; start += batchSize) {
    int len = std::min(batchSize, N - start);
    Batch batch = make_batch(d, std::span<const int>(idx).subspan(start, len));
    ForwardPass fwd = forward(p, batch);
    for (int b = 0; b < len; ++b) {
      int best = 0;
      for (int c = 1; c < fwd.logits.cols(); ++c)
        if (fwd.logits(b, c) > fwd.logits(b, best)) best = c;
      if (best == batch.labels[b]) ++correct;
    }
  }
  return static_cast<double>(correct) / N;
}

}  // namespace fednorm
