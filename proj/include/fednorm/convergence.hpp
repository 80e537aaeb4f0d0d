#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <utility>
#include <vector>

#include <json.hpp>

#include "fednorm/rng.hpp"

namespace fednorm {

// Federated quadratics Phi_i(w) = (lambda_i / 2) * ||w - c_i||^2 with known
// weighted optimum. Stochastic gradients add zero-mean Gaussian noise with
// per-participant per-coordinate SD noiseSd[i].
struct QuadraticFederation {
  int n = 0;
  int dim = 0;
  std::vector<double> curvatures;             // lambda_i
  std::vector<std::vector<double>> centers;   // c_i
  std::vector<double> weights;                // p_i, sums to 1
  std::vector<double> noiseSd;                // per-coordinate noise SD

  double mu = 0;       // min curvature (strong convexity)
  double lSmooth = 0;  // max curvature (smoothness)
  std::vector<double> wStar;
  double gammaGap = 0;              // Phi(w*) - sum_i p_i Phi_i*
  double gradBound = 0;             // constructed a-priori G estimate
  std::vector<double> varBounds;    // DeltaG_i = sqrt(dim) * noiseSd_i

  double phi_i(int i, const std::vector<double>& w) const {
    double sq = 0;
    for (int j = 0; j < dim; ++j) {
      double diff = w[j] - centers[i][j];
      sq += diff * diff;
    }
    return 0.5 * curvatures[i] * sq;
  }

  double phi(const std::vector<double>& w) const {
    double total = 0;
    for (int i = 0; i < n; ++i) total += weights[i] * phi_i(i, w);
    return total;
  }

  std::vector<double> grad_i(int i, const std::vector<double>& w) const {
    std::vector<double> g(dim);
    for (int j = 0; j < dim; ++j) g[j] = curvatures[i] * (w[j] - centers[i][j]);
    return g;
  }
};

// Fills the derived fields (optimum, gap, bounds) from curvatures, centers,
// weights and noise SDs.
inline QuadraticFederation finalize_quadratic(std::vector<double> curvatures,
                                              std::vector<std::vector<double>> centers,
                                              std::vector<double> weights,
                                              std::vector<double> noiseSd) {
  QuadraticFederation q;
  q.n = static_cast<int>(curvatures.size());
  if (q.n < 1) throw ConfigError("quadratic: need at least one participant");
  if (centers.size() != curvatures.size() || weights.size() != curvatures.size() ||
      noiseSd.size() != curvatures.size())
    throw ConfigError("quadratic: field sizes do not match");
  q.dim = static_cast<int>(centers[0].size());
  for (const auto& c : centers)
    if (static_cast<int>(c.size()) != q.dim)
      throw ConfigError("quadratic: center dimensions do not match");
  double wsum = 0;
  for (double w : weights) wsum += w;
  if (std::abs(wsum - 1.0) > 1e-9) throw ConfigError("quadratic: weights must sum to 1");
  for (double l : curvatures)
    if (!(l > 0)) throw ConfigError("quadratic: curvatures must be positive");

  q.curvatures = std::move(curvatures);
  q.centers = std::move(centers);
  q.weights = std::move(weights);
  q.noiseSd = std::move(noiseSd);

  q.mu = *std::min_element(q.curvatures.begin(), q.curvatures.end());
  q.lSmooth = *std::max_element(q.curvatures.begin(), q.curvatures.end());

  // w* = (sum p_i lambda_i c_i) / (sum p_i lambda_i), per coordinate.
  double denom = 0;
  for (int i = 0; i < q.n; ++i) denom += q.weights[i] * q.curvatures[i];
  q.wStar.assign(q.dim, 0.0);
  for (int i = 0; i < q.n; ++i)
    for (int j = 0; j < q.dim; ++j)
      q.wStar[j] += q.weights[i] * q.curvatures[i] * q.centers[i][j] / denom;

  // Every Phi_i* is zero, so Gamma reduces to Phi(w*).
  q.gammaGap = q.phi(q.wStar);

  q.varBounds.resize(q.n);
  for (int i = 0; i < q.n; ++i)
    q.varBounds[i] = std::sqrt(static_cast<double>(q.dim)) * q.noiseSd[i];

  double bound = 0;
  for (int i = 0; i < q.n; ++i) {
    double centerNorm = 0;
    for (double v : q.centers[i]) centerNorm += v * v;
    centerNorm = std::sqrt(centerNorm);
    bound = std::max(bound, q.curvatures[i] *
                                (centerNorm + 2.0 * std::sqrt(static_cast<double>(q.dim))) +
                                3.0 * q.varBounds[i]);
  }
  q.gradBound = bound;
  return q;
}

// Random problem: lambda_i ~ U[1, 1+h], c_i ~ N(0, h^2 I), uniform weights,
// per-participant noise SD around noiseScale.
inline QuadraticFederation make_quadratic_problem(int n, int dim, double heterogeneity,
                                                  std::uint64_t seed,
                                                  double noiseScale = 0.1) {
  if (n < 2) throw ConfigError("make_quadratic_problem: n must be >= 2");
  if (dim < 1) throw ConfigError("make_quadratic_problem: dim must be >= 1");
  if (heterogeneity < 0)
    throw ConfigError("make_quadratic_problem: heterogeneity must be >= 0");
  if (noiseScale < 0) throw ConfigError("make_quadratic_problem: noise must be >= 0");

  Rng rng(derive_seed(seed, {stream::kProblem}));
  std::vector<double> curvatures(n);
  for (double& l : curvatures) l = rng.uniform(1.0, 1.0 + heterogeneity);
  std::vector<std::vector<double>> centers(n, std::vector<double>(dim));
  for (auto& c : centers)
    for (double& v : c) v = heterogeneity * rng.normal();
  std::vector<double> weights(n, 1.0 / n);
  std::vector<double> noiseSd(n);
  for (double& s : noiseSd) s = noiseScale * rng.uniform(0.5, 1.5);
  return finalize_quadratic(std::move(curvatures), std::move(centers), std::move(weights),
                            std::move(noiseSd));
}

// eta_m = eta0 / (1 + m / decay); decay >= reSteps keeps eta_{m_x} <= 2 eta_m
// within every local phase.
inline std::vector<double> make_eta_schedule(double eta0, double decay, int steps) {
  if (!(eta0 >= 0)) throw ConfigError("eta schedule: eta0 must be >= 0");
  if (!(decay > 0)) throw ConfigError("eta schedule: decay must be positive");
  std::vector<double> sched(steps);
  for (int m = 0; m < steps; ++m) sched[m] = eta0 / (1.0 + m / decay);
  return sched;
}

struct DeltaSeries {
  std::vector<double> deltas;       // delta_m averaged over repetitions, m = 0..M
  std::vector<double> etaSchedule;  // eta_m, m = 0..M-1
  double maxGradNorm = 0;           // max observed stochastic-gradient norm
};

// Federated mini-batch SGD with reSteps-long local phases: every participant
// takes noisy gradient steps locally and the weighted average replaces all
// iterates at phase boundaries. delta_m tracks the squared distance of the
// virtual weighted average from the optimum at every mini-batch index,
// averaged over repetitions. The start point is shared across repetitions.
inline DeltaSeries run_fed_sgd(const QuadraticFederation& q,
                               const std::vector<double>& etaSchedule, int reSteps,
                               int rounds, int reps, std::uint64_t seed) {
  if (reSteps < 1) throw ConfigError("run_fed_sgd: reSteps must be >= 1");
  if (rounds < 1) throw ConfigError("run_fed_sgd: rounds must be >= 1");
  if (reps < 1) throw ConfigError("run_fed_sgd: reps must be >= 1");
  const int M = rounds * reSteps;
  if (static_cast<int>(etaSchedule.size()) < M)
    throw ConfigError("run_fed_sgd: schedule shorter than the run");
  for (double eta : etaSchedule)
    if (!(eta >= 0)) throw ConfigError("run_fed_sgd: schedule must be nonnegative");

  std::vector<double> w0(q.dim);
  {
    Rng rng(derive_seed(seed, {stream::kW0}));
    for (double& v : w0) v = rng.normal();
  }

  DeltaSeries series;
  series.etaSchedule.assign(etaSchedule.begin(), etaSchedule.begin() + M);
  series.deltas.assign(M + 1, 0.0);
  double maxGrad = 0;

  std::vector<std::vector<double>> w(q.n);
  std::vector<double> avg(q.dim), g(q.dim);
  for (int rep = 0; rep < reps; ++rep) {
    Rng rng(derive_seed(seed, {stream::kRep, static_cast<std::uint64_t>(rep)}));
    for (int i = 0; i < q.n; ++i) w[i] = w0;

    auto record = [&](int m) {
      std::fill(avg.begin(), avg.end(), 0.0);
      for (int i = 0; i < q.n; ++i)
        for (int j = 0; j < q.dim; ++j) avg[j] += q.weights[i] * w[i][j];
      double sq = 0;
      for (int j = 0; j < q.dim; ++j) {
        double diff = avg[j] - q.wStar[j];
        sq += diff * diff;
      }
      series.deltas[m] += sq;
    };

    record(0);
    for (int m = 0; m < M; ++m) {
      const double eta = etaSchedule[m];
      for (int i = 0; i < q.n; ++i) {
        double sq = 0;
        for (int j = 0; j < q.dim; ++j) {
          double gj = q.curvatures[i] * (w[i][j] - q.centers[i][j]);
          if (q.noiseSd[i] > 0) gj += q.noiseSd[i] * rng.normal();
          g[j] = gj;
          sq += gj * gj;
        }
        maxGrad = std::max(maxGrad, std::sqrt(sq));
        for (int j = 0; j < q.dim; ++j) w[i][j] -= eta * g[j];
      }
      if ((m + 1) % reSteps == 0) {
        std::fill(avg.begin(), avg.end(), 0.0);
        for (int i = 0; i < q.n; ++i)
          for (int j = 0; j < q.dim; ++j) avg[j] += q.weights[i] * w[i][j];
        for (int i = 0; i < q.n; ++i) w[i] = avg;
      }
      record(m + 1);
    }
  }
  for (double& d : series.deltas) d /= reps;
  series.maxGradNorm = maxGrad;
  return series;
}

struct RecurrenceReport {
  int violations = 0;
  int total = 0;
  double deltaFinal = 0;
  double delta0 = 0;
  bool etaDecays = false;
  bool contraction = false;
  bool boundedTerms = false;

  nlohmann::json to_json() const {
    return nlohmann::json{{"violations", violations},
                          {"total", total},
                          {"delta_final", deltaFinal},
                          {"delta_0", delta0},
                          {"conditions",
                           nlohmann::json{{"eta_decays", etaDecays},
                                          {"contraction", contraction},
                                          {"bounded_terms", boundedTerms}}}};
  }
};

// Checks delta_{m+1} <= slack * [(1 - mu eta_m) delta_m
//   + 8 eta_m^2 (E_re - 1)^2 G^2 + eta_m^2 sum_i p_i^2 DeltaG_i^2 + 3 Gamma / (8 L)]
// with G taken as the max observed stochastic-gradient norm, plus the three
// convergence conditions on the schedule and the constant terms.
inline RecurrenceReport check_recurrence(const DeltaSeries& series,
                                         const QuadraticFederation& q, int reSteps,
                                         double slack) {
  if (slack < 1.0) throw UsageError("check_recurrence: slack must be >= 1");
  if (series.deltas.size() < 2 ||
      series.etaSchedule.size() + 1 != series.deltas.size())
    throw UsageError("check_recurrence: series and schedule sizes do not match");
  if (q.n < 1 || !(q.lSmooth > 0) || !(q.mu > 0))
    throw UsageError("check_recurrence: problem constants are not populated");

  const double G = series.maxGradNorm;
  double varTerm = 0;
  for (int i = 0; i < q.n; ++i)
    varTerm += q.weights[i] * q.weights[i] * q.varBounds[i] * q.varBounds[i];
  const double driftCoef = 8.0 * (reSteps - 1.0) * (reSteps - 1.0) * G * G;
  const double gammaTerm = 3.0 * q.gammaGap / (8.0 * q.lSmooth);

  RecurrenceReport report;
  report.total = static_cast<int>(series.etaSchedule.size());
  report.delta0 = series.deltas.front();
  report.deltaFinal = series.deltas.back();

  for (int m = 0; m < report.total; ++m) {
    const double eta = series.etaSchedule[m];
    const double bound = (1.0 - q.mu * eta) * series.deltas[m] +
                         eta * eta * (driftCoef + varTerm) + gammaTerm;
    if (series.deltas[m + 1] > slack * bound) report.violations++;
  }

  bool decays = true;
  for (std::size_t m = 1; m < series.etaSchedule.size(); ++m)
    if (series.etaSchedule[m] > series.etaSchedule[m - 1]) decays = false;
  if (!(series.etaSchedule.back() < series.etaSchedule.front())) decays = false;
  report.etaDecays = decays;

  bool contraction = true;
  for (double eta : series.etaSchedule) {
    double factor = 1.0 - q.mu * eta;
    if (!(factor > 0.0) || !(factor < 1.0)) contraction = false;
  }
  report.contraction = contraction;

  report.boundedTerms = std::isfinite(driftCoef) && std::isfinite(varTerm) &&
                        std::isfinite(gammaTerm) && driftCoef >= 0 && varTerm >= 0 &&
                        gammaTerm >= 0;
  return report;
}

}  // namespace fednorm
