#include "support.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <fstream>
#include <sstream>

#include <unistd.h>

namespace noisefed::testkit {

ModelSpec random_small_spec(RngStream& rng) {
  auto pick = [&](std::size_t n) { return static_cast<std::size_t>(rng.next_u64() % n); };
  ModelSpec spec;
  spec.name = "random";
  const std::size_t hw = 4 + 2 * pick(2);
  spec.input_shape = {hw, hw, 1 + pick(3)};
  spec.num_classes = 3;
  const std::size_t blocks = 1 + pick(2);
  std::size_t side = hw;
  for (std::size_t b = 0; b < blocks; ++b) {
    if (b > 0 || pick(2) == 0) spec.layers.push_back(LayerSpec::gaussian_noise());
    const auto act = pick(4) == 0 ? Activation::kLinear : Activation::kRelu;
    spec.layers.push_back(LayerSpec::conv2d(2 + pick(3), act));
    if (pick(2) == 0) spec.layers.push_back(LayerSpec::batch_norm());
    if (side >= 4 && pick(2) == 0) {
      spec.layers.push_back(LayerSpec::max_pool());
      side /= 2;
    }
  }
  spec.layers.push_back(LayerSpec::flatten());
  if (pick(2) == 0) {
    spec.layers.push_back(LayerSpec::dense(4 + pick(4)));
    if (pick(2) == 0) spec.layers.push_back(LayerSpec::dropout(0.25));
  }
  spec.layers.push_back(LayerSpec::dense(3, Activation::kSoftmax));
  return spec;
}

GradCheck gradient_check(const ModelSpec& spec, std::uint64_t seed,
                         std::size_t batch, double h) {
  Model model = Model::build(spec, seed);
  RngStream rng(derive_seed(seed, 77));
  Shape in_shape = {batch};
  in_shape.insert(in_shape.end(), spec.input_shape.begin(), spec.input_shape.end());
  Tensor x(in_shape);
  for (double& v : x.values()) v = rng.normal();
  std::vector<int> labels(batch);
  for (auto& l : labels) l = static_cast<int>(rng.next_u64() % spec.num_classes);
  const Tensor targets = one_hot(labels, spec.num_classes);

  ForwardOptions opts;
  opts.mode = Mode::kTrain;
  opts.step = 3;
  opts.dropout_seed = derive_seed(seed, 78);
  opts.hidden_sigma = 0.2;
  opts.noise_seed = derive_seed(seed, 79);

  // Batch-norm moving statistics drift on every train-mode pass; restore
  // them so each evaluation sees the same model.
  auto loss_at = [&]() {
    std::vector<Tensor> saved;
    for (Tensor* b : model.buffers()) saved.push_back(*b);
    const double loss = softmax_cross_entropy(model.forward(x, opts).logits, targets);
    auto bufs = model.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i] = saved[i];
    return loss;
  };

  std::vector<Tensor> saved;
  for (Tensor* b : model.buffers()) saved.push_back(*b);
  const ForwardResult result = model.forward(x, opts);
  const Gradients grads = model.backward(result, targets);
  {
    auto bufs = model.buffers();
    for (std::size_t i = 0; i < bufs.size(); ++i) *bufs[i] = saved[i];
  }

  GradCheck check;
  auto params = model.parameters();
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t e = 0; e < params[p]->size(); ++e) {
      double& w = (*params[p])[e];
      const double w0 = w;
      w = w0 + h;
      const double up = loss_at();
      w = w0 - h;
      const double down = loss_at();
      w = w0;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[p][e];
      const double rel = std::abs(analytic - numeric) /
                         std::max(std::abs(analytic) + std::abs(numeric), 1e-6);
      check.max_rel_error = std::max(check.max_rel_error, rel);
      ++check.checked;
    }
  }
  return check;
}

std::filesystem::path temp_dir(const std::string& tag) {
  static std::atomic<int> counter{0};
  const auto dir = std::filesystem::temp_directory_path() /
                   ("noisefed_" + tag + "_" + std::to_string(::getpid()) + "_" +
                    std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream buffer;
  buffer << in.rdbuf();
  return buffer.str();
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path) {
  std::vector<std::vector<std::string>> rows;
  std::istringstream in(read_file(path));
  std::string line;
  while (std::getline(in, line)) {
    std::vector<std::string> row;
    std::stringstream fields(line);
    std::string f;
    while (std::getline(fields, f, ',')) row.push_back(f);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace noisefed::testkit
