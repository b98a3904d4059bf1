#include <gtest/gtest.h>

#include <cmath>

#include "noisefed/dataset.hpp"
#include "noisefed/train.hpp"

using namespace noisefed;

namespace {

Dataset small_synth(std::size_t classes = 4, double separation = 2.0) {
  SynthOptions o;
  o.classes = classes;
  o.per_class = 30;
  o.separation = separation;
  o.seed = 3;
  return synth_dataset(o);
}

TrainConfig quick(std::size_t epochs = 2) {
  TrainConfig c;
  c.epochs = epochs;
  c.batch_size = 16;
  c.seed = 11;
  return c;
}

void expect_same_params(Model& a, Model& b) {
  ASSERT_EQ(a.parameters().size(), b.parameters().size());
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(*a.parameters()[i], *b.parameters()[i]) << "parameter " << i;
  }
  for (std::size_t i = 0; i < a.buffers().size(); ++i) {
    EXPECT_EQ(*a.buffers()[i], *b.buffers()[i]) << "buffer " << i;
  }
}

}  // namespace

TEST(Score, OneHotLogitsAreExact) {
  const std::vector<int> labels{2, 0, 1};
  const Tensor logits = one_hot(labels, 3);
  EXPECT_EQ(score_logits(logits, labels).accuracy, 1.0);
}

TEST(Score, UniformLogits) {
  std::vector<int> labels;
  for (int i = 0; i < 100; ++i) labels.push_back(i % 10);
  const EvalResult r = score_logits(Tensor({100, 10}, 0.0), labels);
  EXPECT_NEAR(r.accuracy, 0.1, 1e-12);
  EXPECT_NEAR(r.loss, std::log(10.0), 1e-6);
}

TEST(Evaluate, SingleSampleAndEmpty) {
  const Dataset d = small_synth();
  Model m = Model::build(model_s_spec(8, 3, 4), 1);
  const std::vector<std::size_t> one = {d.test.front()};
  const double acc = evaluate(m, d, one).accuracy;
  EXPECT_TRUE(acc == 0.0 || acc == 1.0);
  EXPECT_THROW(evaluate(m, d, std::vector<std::size_t>{}), Error);
}

TEST(Sgd, MomentumUpdate) {
  ModelSpec spec{.name = "lin", .input_shape = {1, 1, 1}, .num_classes = 2};
  spec.layers = {LayerSpec::flatten(), LayerSpec::dense(2, Activation::kSoftmax)};
  Model m = Model::build(spec, 1);
  Tensor& w = *m.parameters()[0];
  w.fill(1.0);
  TrainConfig c;
  c.learning_rate = 0.1;
  c.momentum = 0.5;
  Gradients g = {Tensor({1, 2}, 2.0), Tensor({2}, 0.0)};
  sgd_step(m, g, c);  // v = 2, w = 1 - 0.2
  EXPECT_DOUBLE_EQ(w[0], 0.8);
  sgd_step(m, g, c);  // v = 0.5 * 2 + 2 = 3, w = 0.8 - 0.3
  EXPECT_DOUBLE_EQ(w[0], 0.5);
}

TEST(Train, SeparableTaskFitsTrainSet) {
  SynthOptions o;
  o.classes = 2;
  o.per_class = 120;
  o.separation = 50.0;
  o.seed = 1;
  const Dataset d = synth_dataset(o);
  Model m = Model::build(model_s_spec(8, 3, 2), 4);
  TrainConfig c = quick(10);
  c.batch_size = 32;
  const TrainReport r = train(m, d, c, {});
  ASSERT_EQ(r.per_epoch.size(), 10u);
  EXPECT_GE(r.per_epoch.back().train_acc, 0.95);
}

TEST(Train, Deterministic) {
  const Dataset d = small_synth();
  for (auto mech : {Mechanism::kNone, Mechanism::kInput, Mechanism::kHiddenLayers,
                    Mechanism::kWeights, Mechanism::kGradients, Mechanism::kLabels}) {
    NoisePlan plan{.mechanism = mech, .sigma = 0.1, .base_seed = 5};
    Model a = Model::build(model_s_spec(8, 3, 4), 2), b = a;
    const TrainReport ra = train(a, d, quick(), plan), rb = train(b, d, quick(), plan);
    EXPECT_EQ(ra, rb) << to_string(mech);
    expect_same_params(a, b);
  }
}

TEST(Train, NoneMatchesUnplannedRun) {
  const Dataset d = small_synth();
  Model a = Model::build(model_s_spec(8, 3, 4), 2), b = a;
  const TrainReport ra = train(a, d, quick(), NoisePlan{});
  const TrainReport rb =
      train(b, d, quick(), NoisePlan{.mechanism = Mechanism::kNone, .sigma = 0.7, .base_seed = 99});
  EXPECT_EQ(ra.per_epoch, rb.per_epoch);
  EXPECT_EQ(ra.test, rb.test);
  expect_same_params(a, b);
}

TEST(Train, ZeroSigmaMatchesBase) {
  const Dataset d = small_synth();
  Model base = Model::build(model_s_spec(8, 3, 4), 2);
  const TrainReport rb = train(base, d, quick(), {});
  for (auto mech : {Mechanism::kInput, Mechanism::kHiddenLayers, Mechanism::kWeights,
                    Mechanism::kGradients, Mechanism::kLabels}) {
    Model m = Model::build(model_s_spec(8, 3, 4), 2);
    const TrainReport r = train(m, d, quick(), {.mechanism = mech, .sigma = 0.0, .base_seed = 8});
    EXPECT_EQ(r.per_epoch, rb.per_epoch) << to_string(mech);
  }
}

TEST(Train, NoiseSeedMatters) {
  const Dataset d = small_synth();
  Model a = Model::build(model_s_spec(8, 3, 4), 2), b = a;
  const auto ra = train(a, d, quick(), {.mechanism = Mechanism::kHiddenLayers, .sigma = 0.5, .base_seed = 1});
  const auto rb = train(b, d, quick(), {.mechanism = Mechanism::kHiddenLayers, .sigma = 0.5, .base_seed = 2});
  EXPECT_NE(ra.per_epoch, rb.per_epoch);
}

TEST(Train, ZeroEpochsLeavesModel) {
  const Dataset d = small_synth();
  Model a = Model::build(model_s_spec(8, 3, 4), 2), b = a;
  const TrainReport r = train(a, d, quick(0), {});
  EXPECT_TRUE(r.per_epoch.empty());
  expect_same_params(a, b);
}

TEST(Train, SegmentsReplayOneRun) {
  const Dataset d = small_synth();
  Model whole = Model::build(model_s_spec(8, 3, 4), 2), parts = whole;
  const NoisePlan plan{.mechanism = Mechanism::kHiddenLayers, .sigma = 0.2, .base_seed = 4};
  fit(whole, d, d.train, quick(4), plan);
  for (std::size_t s = 0; s < 2; ++s) {
    TrainConfig c = quick(2);
    c.epoch_offset = 2 * s;
    fit(parts, d, d.train, c, plan);
  }
  expect_same_params(whole, parts);
}

TEST(Train, DivergenceReportsCoordinates) {
  const Dataset d = small_synth();
  Model m = Model::build(model_s_spec(8, 3, 4), 2);
  TrainConfig c = quick(3);
  c.learning_rate = 1e250;
  c.momentum = 0.0;
  try {
    train(m, d, c, {});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("training aborted at epoch 0 batch"),
              std::string::npos)
        << e.what();
  }
}

TEST(Train, ReportSerialization) {
  const Dataset d = small_synth();
  Model m = Model::build(model_s_spec(8, 3, 4), 2);
  const TrainReport r = train(m, d, quick(2), {});
  const std::string csv = report_to_csv(r);
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "epoch,train_acc,train_loss,val_acc,val_loss");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 3);
  EXPECT_NE(report_to_json(r).find("\"mechanism\""), std::string::npos);
}
