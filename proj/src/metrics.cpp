#include "noisefed/metrics.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <limits>
#include <numeric>

namespace noisefed {

std::string Snr::to_string() const {
  return infinite ? "inf" : fmt::format("{:.6f}", db);
}

double sample_variance(std::span<const double> values) {
  if (values.size() < 2) throw Error("sample variance needs at least two values");
  const double mean = std::accumulate(values.begin(), values.end(), 0.0) /
                      static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - mean) * (v - mean);
  return ss / static_cast<double>(values.size() - 1);
}

Snr snr_db(const MetricSeries& signal, const MetricSeries& noisy) {
  if (signal.values.size() != noisy.values.size()) {
    throw Error("snr_db: series lengths differ");
  }
  if (signal.values.size() < 2) throw Error("snr_db: need at least two points");
  std::vector<double> noise(signal.values.size());
  for (std::size_t i = 0; i < noise.size(); ++i) {
    noise[i] = signal.values[i] - noisy.values[i];
  }
  const double var_signal = sample_variance(signal.values);
  if (var_signal == 0.0) throw Error("snr_db: base series is constant");
  const double var_noise = sample_variance(noise);
  if (var_noise == 0.0) return Snr::Infinite();
  return {10.0 * std::log10(var_signal / var_noise), false};
}

double price_of_stability(double test_acc_sigma, double test_acc_base) {
  if (!(test_acc_base > 0.0)) throw Error("price_of_stability: base accuracy is 0");
  return test_acc_sigma / test_acc_base;
}

double price_of_anarchy(double test_loss_sigma, double test_loss_base) {
  if (!(test_loss_base > 0.0)) throw Error("price_of_anarchy: base loss is 0");
  return test_loss_sigma / test_loss_base;
}

void SweepResult::validate() const {
  const auto base = std::count_if(rows.begin(), rows.end(),
                                  [](const SweepRow& r) { return r.sigma == 0.0; });
  if (base != 1) throw Error("sweep needs exactly one sigma = 0 row");
  if (!std::is_sorted(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return a.sigma < b.sigma;
      })) {
    throw Error("sweep rows must be sorted by sigma");
  }
}

void score_sweep(SweepResult& sweep) {
  sweep.validate();
  const SweepRow base = *std::find_if(sweep.rows.begin(), sweep.rows.end(),
                                      [](const SweepRow& r) { return r.sigma == 0.0; });
  for (SweepRow& row : sweep.rows) {
    row.snr = snr_db(base.val_series, row.val_series);
    row.pos = price_of_stability(row.test_acc, base.test_acc);
    row.poa = price_of_anarchy(row.test_loss, base.test_loss);
  }
}

double optimal_sigma_by_snr(const SweepResult& sweep) {
  const SweepRow* best = nullptr;
  for (const SweepRow& row : sweep.rows) {
    if (row.sigma <= 0.0 || row.snr.infinite || !std::isfinite(row.snr.db)) continue;
    if (best == nullptr || row.snr.db > best->snr.db ||
        (row.snr.db == best->snr.db && row.sigma > best->sigma)) {
      best = &row;
    }
  }
  if (best == nullptr) throw Error("optimal_sigma_by_snr: no sigma > 0 row with finite SNR");
  return best->sigma;
}

std::string sweep_to_csv(const SweepResult& sweep) {
  std::string out = "sigma,train_acc,test_acc,test_loss,snr_db,pos,poa\n";
  for (const SweepRow& r : sweep.rows) {
    out += fmt::format("{:.2f},{:.6f},{:.6f},{:.6f},{},{:.6f},{:.6f}\n", r.sigma,
                       r.train_acc, r.test_acc, r.test_loss, r.snr.to_string(),
                       r.pos, r.poa);
  }
  return out;
}

double rademacher_estimate(const HypothesisTable& hypotheses, std::size_t trials,
                           RngStream& rng) {
  if (hypotheses.empty()) throw Error("rademacher_estimate: empty hypothesis set");
  if (trials == 0) throw Error("rademacher_estimate: trials must be >= 1");
  const std::size_t n = hypotheses.front().size();
  if (n == 0) throw Error("rademacher_estimate: no sample points");
  for (const auto& h : hypotheses) {
    if (h.size() != n) throw Error("rademacher_estimate: ragged hypothesis table");
    for (int v : h) {
      if (v != 1 && v != -1) throw Error("rademacher_estimate: values must be +-1");
    }
  }
  std::vector<int> signs(n);
  double total = 0.0;
  for (std::size_t t = 0; t < trials; ++t) {
    for (int& s : signs) s = rng.sign();
    long best = std::numeric_limits<long>::min();
    for (const auto& h : hypotheses) {
      long corr = 0;
      for (std::size_t i = 0; i < n; ++i) corr += signs[i] * h[i];
      best = std::max(best, corr);
    }
    total += static_cast<double>(best) / static_cast<double>(n);
  }
  return total / static_cast<double>(trials);
}

double l1_sensitivity(const std::map<std::string, std::vector<double>>& outputs,
                      const NeighborPairs& neighbor_pairs) {
  if (neighbor_pairs.empty()) throw Error("l1_sensitivity: empty neighbor list");
  double worst = 0.0;
  for (const auto& [x, y] : neighbor_pairs) {
    const auto ix = outputs.find(x), iy = outputs.find(y);
    if (ix == outputs.end() || iy == outputs.end()) {
      throw Error("l1_sensitivity: no output for pair (" + x + ", " + y + ")");
    }
    if (ix->second.size() != iy->second.size()) {
      throw Error("l1_sensitivity: output dimensions differ");
    }
    double dist = 0.0;
    for (std::size_t i = 0; i < ix->second.size(); ++i) {
      dist += std::abs(ix->second[i] - iy->second[i]);
    }
    worst = std::max(worst, dist);
  }
  return worst;
}

void FiniteMechanism::validate() const {
  if (outcome_distribution.empty()) throw Error("mechanism has no inputs");
  const std::size_t outcomes = outcome_distribution.begin()->second.size();
  for (const auto& [name, p] : outcome_distribution) {
    if (p.size() != outcomes) throw Error("mechanism '" + name + "': outcome count differs");
    double sum = 0.0;
    for (double v : p) {
      if (!(v >= 0.0)) throw Error("mechanism '" + name + "': negative probability");
      sum += v;
    }
    if (std::abs(sum - 1.0) > 1e-12) {
      throw Error("mechanism '" + name + "': probabilities sum to " + std::to_string(sum));
    }
  }
}

DpCheck dp_check(const FiniteMechanism& mechanism,
                 const NeighborPairs& neighbor_pairs, double epsilon, double delta) {
  if (!(epsilon >= 0.0)) throw Error("dp_check: epsilon must be >= 0");
  if (!(delta >= 0.0 && delta <= 1.0)) throw Error("dp_check: delta must be in [0, 1]");
  mechanism.validate();
  const double ratio = std::exp(epsilon);
  const auto& dist = mechanism.outcome_distribution;
  DpCheck result;
  for (const auto& [a, b] : neighbor_pairs) {
    const auto ia = dist.find(a), ib = dist.find(b);
    if (ia == dist.end() || ib == dist.end()) {
      throw Error("dp_check: unknown dataset in pair (" + a + ", " + b + ")");
    }
    for (const auto& [px, py] : {std::pair{&ia->second, &ib->second},
                                 std::pair{&ib->second, &ia->second}}) {
      double mass = 0.0;
      for (std::size_t o = 0; o < px->size(); ++o) {
        const double excess = (*px)[o] - ratio * (*py)[o];
        if (excess > 0.0) mass += excess;
      }
      result.worst_set_mass = std::max(result.worst_set_mass, mass);
    }
  }
  result.holds = result.worst_set_mass <= delta + kDpTolerance;
  return result;
}

}  // namespace noisefed
