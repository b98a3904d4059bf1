#include "noisefed/train.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <nlohmann/json.hpp>

namespace noisefed {

namespace {

/// Training targets for every dataset row: one-hot, or the fixed noisy
/// labels when the plan perturbs labels. Each row draws from its own stream,
/// so a row's noisy label does not depend on which subset is trained.
Tensor training_targets(const Dataset& data, const NoisePlan& plan) {
  const std::vector<int> all(data.labels.begin(), data.labels.end());
  Tensor targets = one_hot(all, data.num_classes);
  if (!plan.is(Mechanism::kLabels) || plan.sigma == 0.0) return targets;
  const std::size_t k = data.num_classes;
  for (std::size_t r = 0; r < data.size(); ++r) {
    Tensor row({1, k}, std::vector<double>(targets.data() + r * k,
                                           targets.data() + (r + 1) * k));
    RngStream rng = RngStream::child(plan.base_seed, site::kLabels, r);
    row = perturb_labels(row, plan.sigma, rng, plan.label_clip);
    std::copy(row.data(), row.data() + k, targets.data() + r * k);
  }
  return targets;
}

Tensor gather_targets(const Tensor& targets, std::span<const std::size_t> rows) {
  const std::size_t k = targets.dim(1);
  Tensor out({rows.size(), k});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy(targets.data() + rows[i] * k, targets.data() + (rows[i] + 1) * k,
              out.data() + i * k);
  }
  return out;
}

std::size_t count_correct(const Tensor& logits, std::span<const int> labels) {
  const std::size_t k = logits.dim(1);
  std::size_t correct = 0;
  for (std::size_t n = 0; n < labels.size(); ++n) {
    const double* z = logits.data() + n * k;
    const auto best = static_cast<int>(std::max_element(z, z + k) - z);
    if (best == labels[n]) ++correct;
  }
  return correct;
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size == 0) throw Error("training: batch_size must be positive");
  if (!(learning_rate > 0.0)) throw Error("training: learning_rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) {
    throw Error("training: momentum must be in [0, 1)");
  }
}

std::vector<double> TrainReport::val_accuracies() const {
  std::vector<double> out;
  for (const auto& e : per_epoch) out.push_back(e.val_acc);
  return out;
}

EvalResult score_logits(const Tensor& logits, std::span<const int> labels) {
  if (labels.empty()) throw Error("evaluate: empty split");
  const Tensor targets = one_hot(labels, logits.dim(1));
  EvalResult r;
  r.loss = softmax_cross_entropy(logits, targets);
  r.accuracy = static_cast<double>(count_correct(logits, labels)) /
               static_cast<double>(labels.size());
  return r;
}

EvalResult evaluate(Model& model, const Dataset& data,
                    std::span<const std::size_t> rows, std::size_t batch_size) {
  if (rows.empty()) throw Error("evaluate: empty split");
  double loss_sum = 0.0;
  std::size_t correct = 0;
  const ForwardOptions opts{.mode = Mode::kEval};
  for (std::size_t start = 0; start < rows.size(); start += batch_size) {
    const auto chunk = rows.subspan(start, std::min(batch_size, rows.size() - start));
    const auto logits = model.forward(data.images(chunk), opts).logits;
    const auto labels = data.labels_of(chunk);
    loss_sum += softmax_cross_entropy(logits, one_hot(labels, data.num_classes)) *
                static_cast<double>(chunk.size());
    correct += count_correct(logits, labels);
  }
  const auto n = static_cast<double>(rows.size());
  return {static_cast<double>(correct) / n, loss_sum / n};
}

void sgd_step(Model& model, const Gradients& grads, const TrainConfig& config) {
  auto params = model.parameters();
  auto& velocity = model.momentum();
  if (grads.size() != params.size() || velocity.size() != params.size()) {
    throw Error("sgd_step: gradient list does not match model parameters");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& w = *params[i];
    Tensor& v = velocity[i];
    const Tensor& g = grads[i];
    if (g.shape() != w.shape()) {
      throw Error("sgd_step: gradient " + std::to_string(i) + " has shape " +
                  shape_to_string(g.shape()) + ", expected " +
                  shape_to_string(w.shape()));
    }
    for (std::size_t j = 0; j < w.size(); ++j) {
      v[j] = config.momentum * v[j] + g[j];
      w[j] -= config.learning_rate * v[j];
    }
  }
}

std::vector<EvalResult> fit(Model& model, const Dataset& data,
                            std::span<const std::size_t> rows,
                            const TrainConfig& config, const NoisePlan& plan,
                            const EpochHook& hook) {
  config.validate();
  plan.validate();
  if (rows.empty() && config.epochs > 0) throw Error("training: empty training set");
  const Tensor targets = training_targets(data, plan);
  const std::size_t batches = (rows.size() + config.batch_size - 1) / config.batch_size;

  ForwardOptions opts{.mode = Mode::kTrain,
                      .dropout_seed = config.seed,
                      .noise_seed = plan.base_seed};
  if (plan.is(Mechanism::kHiddenLayers)) opts.hidden_sigma = plan.sigma;

  std::vector<EvalResult> history;
  std::vector<std::size_t> order(rows.begin(), rows.end());
  for (std::size_t e = 0; e < config.epochs; ++e) {
    const std::size_t epoch = config.epoch_offset + e;
    std::copy(rows.begin(), rows.end(), order.begin());
    RngStream shuffle = RngStream::child(config.seed, site::kShuffle, epoch);
    std::shuffle(order.begin(), order.end(), shuffle.engine());

    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t b = 0; b < batches; ++b) {
      const std::uint64_t step = epoch * batches + b;
      const auto chunk = std::span<const std::size_t>(order).subspan(
          b * config.batch_size,
          std::min(config.batch_size, order.size() - b * config.batch_size));
      try {
        Tensor x = data.images(chunk);
        const Tensor y = gather_targets(targets, chunk);
        if (plan.is(Mechanism::kInput)) {
          RngStream rng = RngStream::child(plan.base_seed, site::kInput, step);
          x = apply_input_noise(x, plan.sigma, rng);
        }
        if (plan.is(Mechanism::kWeights)) {
          RngStream rng = RngStream::child(plan.base_seed, site::kWeights, step);
          perturb_weights(model, plan.sigma, rng);
        }
        opts.step = step;
        const ForwardResult fwd = model.forward(x, opts);
        const double loss = softmax_cross_entropy(fwd.logits, y);
        if (!std::isfinite(loss)) throw Error("non-finite loss");
        Gradients grads = model.backward(fwd, y);
        if (plan.is(Mechanism::kGradients)) {
          RngStream rng = RngStream::child(plan.base_seed, site::kGradients, step);
          grads = perturb_gradients(std::move(grads), plan.sigma, rng);
        }
        sgd_step(model, grads, config);
        loss_sum += loss * static_cast<double>(chunk.size());
        correct += count_correct(fwd.logits, data.labels_of(chunk));
      } catch (const Error& err) {
        throw Error(fmt::format("training aborted at epoch {} batch {}: {}", epoch,
                                b, err.what()));
      }
    }
    const auto n = static_cast<double>(rows.size());
    history.push_back({static_cast<double>(correct) / n, loss_sum / n});
    if (hook) hook(epoch, history.back());
  }
  return history;
}

TrainReport train(Model& model, const Dataset& data, const TrainConfig& config,
                  const NoisePlan& plan) {
  if (data.train.empty() || data.test.empty()) {
    throw Error("training: dataset needs non-empty train and test splits");
  }
  if (data.val.empty() && config.epochs > 0) {
    throw Error("training: dataset needs a validation split");
  }
  TrainReport report;
  report.mechanism = plan.mechanism;
  report.sigma = plan.sigma;
  report.noise_seed = plan.base_seed;
  report.train_seed = config.seed;
  fit(model, data, data.train, config, plan,
      [&](std::size_t, const EvalResult& tr) {
        const EvalResult val = evaluate(model, data, data.val);
        report.per_epoch.push_back({tr.accuracy, tr.loss, val.accuracy, val.loss});
      });
  report.test = evaluate(model, data, data.test);
  return report;
}

std::string report_to_json(const TrainReport& report) {
  nlohmann::ordered_json j;
  j["mechanism"] = to_string(report.mechanism);
  j["sigma"] = report.sigma;
  j["noise_seed"] = report.noise_seed;
  j["train_seed"] = report.train_seed;
  j["per_epoch"] = nlohmann::ordered_json::array();
  for (const auto& e : report.per_epoch) {
    j["per_epoch"].push_back({{"train_acc", e.train_acc},
                              {"train_loss", e.train_loss},
                              {"val_acc", e.val_acc},
                              {"val_loss", e.val_loss}});
  }
  j["final"] = {{"test_acc", report.test.accuracy},
                {"test_loss", report.test.loss}};
  return j.dump(2) + "\n";
}

std::string report_to_csv(const TrainReport& report) {
  std::string out = "epoch,train_acc,train_loss,val_acc,val_loss\n";
  for (std::size_t i = 0; i < report.per_epoch.size(); ++i) {
    const auto& e = report.per_epoch[i];
    out += fmt::format("{},{:.6f},{:.6f},{:.6f},{:.6f}\n", i + 1, e.train_acc,
                       e.train_loss, e.val_acc, e.val_loss);
  }
  return out;
}

}  // namespace noisefed
