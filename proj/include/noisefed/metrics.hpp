#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "noisefed/rng.hpp"
#include "noisefed/tensor.hpp"

namespace noisefed {

/// Per-epoch validation accuracies of one run.
struct MetricSeries {
  std::vector<double> values;
  double sigma = 0.0;
  std::string label;
};

/// SNR in decibels. `infinite` marks a noise series with zero variance: the
/// perturbation had no measurable effect.
struct Snr {
  double db = 0.0;
  bool infinite = false;

  static Snr Infinite() { return {0.0, true}; }
  std::string to_string() const;
};

/// Sample variance, N - 1 divisor.
double sample_variance(std::span<const double> values);

/// 10 log10(Var(signal) / Var(signal - noisy)), sample variances.
/// Throws on length mismatch, fewer than two points, or a constant signal.
Snr snr_db(const MetricSeries& signal, const MetricSeries& noisy);

/// Test accuracy ratio of a noisy model to the base model.
double price_of_stability(double test_acc_sigma, double test_acc_base);
/// Test loss ratio of a noisy model to the base model.
double price_of_anarchy(double test_loss_sigma, double test_loss_base);

struct SweepRow {
  double sigma = 0.0;
  double train_acc = 0.0;
  MetricSeries val_series;
  double test_acc = 0.0;
  double test_loss = 0.0;
  Snr snr;
  double pos = 1.0;
  double poa = 1.0;
};

struct SweepResult {
  std::vector<SweepRow> rows;

  /// Exactly one sigma = 0 row, rows sorted by sigma.
  void validate() const;
};

/// Fills snr/pos/poa of every row against the sigma = 0 row.
void score_sweep(SweepResult& sweep);

/// sigma > 0 row with the largest finite SNR; ties go to the larger sigma.
double optimal_sigma_by_snr(const SweepResult& sweep);

/// sigma,train_acc,test_acc,test_loss,snr_db,pos,poa
std::string sweep_to_csv(const SweepResult& sweep);

/// Rows are hypotheses, columns are sample points, entries are +1 or -1.
using HypothesisTable = std::vector<std::vector<int>>;

/// Monte-Carlo estimate of E_sigma[max_h (1/N) sum_i sigma_i h(x_i)] over
/// `trials` Rademacher vectors drawn from `rng`.
double rademacher_estimate(const HypothesisTable& hypotheses, std::size_t trials,
                           RngStream& rng);

template <typename Input>
HypothesisTable tabulate(std::span<const std::function<int(const Input&)>> hypotheses,
                         std::span<const Input> inputs) {
  HypothesisTable table;
  for (const auto& h : hypotheses) {
    std::vector<int> row;
    for (const auto& x : inputs) row.push_back(h(x));
    table.push_back(std::move(row));
  }
  return table;
}

/// Empirical lower bound on uniform stability: trains on S and on S with
/// S[replace_index] swapped for `z_prime` (the learner must be deterministic),
/// and returns max over `eval_points` of |loss_S(z) - loss_S'(z)|.
/// `train_fn(samples)` returns a loss function z -> double.
template <typename Sample, typename TrainFn>
double stability_probe(TrainFn&& train_fn, std::span<const Sample> samples,
                       std::size_t replace_index, const Sample& z_prime,
                       std::span<const Sample> eval_points) {
  if (replace_index >= samples.size()) {
    throw Error("stability_probe: replace index " + std::to_string(replace_index) +
                " out of range");
  }
  std::vector<Sample> original(samples.begin(), samples.end());
  std::vector<Sample> replaced = original;
  replaced[replace_index] = z_prime;
  const auto loss_s = train_fn(std::span<const Sample>(original));
  const auto loss_r = train_fn(std::span<const Sample>(replaced));
  double beta = 0.0;
  for (const auto& z : eval_points) {
    beta = std::max(beta, std::abs(loss_s(z) - loss_r(z)));
  }
  return beta;
}

using NeighborPairs = std::vector<std::pair<std::string, std::string>>;

/// max over neighbor pairs of ||M(x) - M(y)||_1.
double l1_sensitivity(const std::map<std::string, std::vector<double>>& outputs,
                      const NeighborPairs& neighbor_pairs);

/// Output distribution of a randomized mechanism with finitely many outcomes,
/// per input dataset.
struct FiniteMechanism {
  std::map<std::string, std::vector<double>> outcome_distribution;

  /// Each vector non-negative, summing to 1 within 1e-12, equal lengths.
  void validate() const;
};

struct DpCheck {
  bool holds = false;
  /// Largest sum over the binding outcome set of P_x(o) - e^eps P_y(o),
  /// over ordered neighbor pairs.
  double worst_set_mass = 0.0;
};

/// Slack allowed on the delta comparison for rounding in e^eps.
inline constexpr double kDpTolerance = 1e-12;

/// Exact (eps, delta)-DP check on both orders of every neighbor pair. The
/// binding set for a pair is {o : P_x(o) > e^eps P_y(o)}.
DpCheck dp_check(const FiniteMechanism& mechanism,
                 const NeighborPairs& neighbor_pairs, double epsilon, double delta);

}  // namespace noisefed
