#pragma once

#include <Eigen/Core>
#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <vector>

namespace gazekit {

// Buffers handed to Eigen kernels. A fixed alignment keeps the vectorised
// summation order, and so the rounding, identical from run to run.
using AlignedDoubles = std::vector<double, Eigen::aligned_allocator<double>>;

// Dense row-major float64 tensor with up to four axes.
struct Tensor {
  std::vector<int> shape;
  AlignedDoubles data;

  Tensor() = default;
  explicit Tensor(std::vector<int> dims, double fill = 0.0);

  std::size_t size() const { return data.size(); }
  double& operator[](std::size_t i) { return data[i]; }
  double operator[](std::size_t i) const { return data[i]; }

  friend bool operator==(const Tensor&, const Tensor&) = default;
};

// Layer sizes of the two-stage LeNet regressor. The defaults are the
// production network; tests shrink them.
struct NetConfig {
  int input_height = 36;
  int input_width = 60;
  int kernel = 5;
  int conv1_filters = 20;
  int conv2_filters = 50;
  int hidden = 500;
  int aux_inputs = 2;  // head angle, concatenated after the hidden layer
  int outputs = 2;
  bool conv_relu = false;  // rectify after each convolution

  int conv1_height() const { return input_height - kernel + 1; }
  int conv1_width() const { return input_width - kernel + 1; }
  int pool1_height() const { return conv1_height() / 2; }
  int pool1_width() const { return conv1_width() / 2; }
  int conv2_height() const { return pool1_height() - kernel + 1; }
  int conv2_width() const { return pool1_width() - kernel + 1; }
  int pool2_height() const { return conv2_height() / 2; }
  int pool2_width() const { return conv2_width() / 2; }
  int flat_features() const { return conv2_filters * pool2_height() * pool2_width(); }

  void validate() const;
  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

struct CnnParams {
  NetConfig config;
  Tensor conv1_w, conv1_b;  // (c1, 1, k, k), (c1)
  Tensor conv2_w, conv2_b;  // (c2, c1, k, k), (c2)
  Tensor fc1_w, fc1_b;      // (hidden, flat), (hidden)
  Tensor out_w, out_b;      // (outputs, hidden + aux), (outputs)

  static CnnParams zeros(const NetConfig& config);

  // Blocks in declaration order; used for serialisation and optimiser loops.
  std::array<Tensor*, 8> blocks();
  std::array<const Tensor*, 8> blocks() const;
  std::size_t parameter_count() const;
  bool all_finite() const;

  friend bool operator==(const CnnParams&, const CnnParams&) = default;
};

using Gradients = CnnParams;

// Glorot-uniform weights, zero biases.
CnnParams init_params(std::uint64_t seed, const NetConfig& config = {});

// Activations of one forward pass over a batch, kept for backward().
struct ForwardCache {
  const CnnParams* params = nullptr;
  int batch = 0;
  AlignedDoubles input;      // (B, H, W)
  AlignedDoubles pool1;      // (B, c1, p1h, p1w)
  std::vector<std::int32_t> pool1_arg;
  AlignedDoubles pool2;      // (B, flat)
  std::vector<std::int32_t> pool2_arg;
  AlignedDoubles concat;     // (B, hidden + aux), post-rectification
  AlignedDoubles output;     // (B, outputs)
};

// images: (B, H, W) intensities scaled to [0, 1]; aux: (B, aux_inputs).
ForwardCache forward_batch(const CnnParams& params, std::span<const double> images, std::span<const double> aux);

// Single-sample convenience wrapper.
std::array<double, 2> forward(const CnnParams& params, std::span<const double> image,
                              std::span<const double, 2> head, ForwardCache* cache = nullptr);

// Sum over the batch of per-sample Euclidean distances.
double loss(std::span<const double> predicted, std::span<const double> target);

// Analytic gradient of loss() w.r.t. every parameter. Samples whose
// prediction equals the target contribute zero; max-pool ties go to the
// first index in scan order.
Gradients backward(const ForwardCache& cache, std::span<const double> target);

void add_in_place(Gradients& acc, const Gradients& g);
void scale_in_place(Gradients& g, double factor);

// velocity <- momentum * velocity - lr * grads; params <- params + velocity.
void sgd_step(CnnParams& params, const Gradients& grads, double lr, double momentum, CnnParams& velocity);

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  int batch_size = 128;
  int epochs = 30;
  int lr_step_epoch = 20;  // multiply lr by lr_gamma every this many epochs
  double lr_gamma = 0.1;
  int chunk_size = 16;     // gradient accumulation unit; fixes summation order
  int threads = 1;
  std::uint64_t seed = 1;
};

// Training set view: n images of H*W bytes, n aux vectors, n targets.
struct TrainingView {
  std::size_t count = 0;
  std::function<void(std::size_t index, double* image, double* aux, double* target)> fetch;
};

struct EpochReport {
  int epoch = 0;
  double mean_loss = 0.0;  // per-sample distance averaged over the epoch
};

// Mini-batch SGD over shuffled epochs. The SGD step uses the batch-mean
// gradient. Output is bit-identical for a fixed config regardless of threads.
void train_network(CnnParams& params, const TrainingView& data, const TrainConfig& config,
                   const std::function<void(const EpochReport&)>& on_epoch = {});

void save_params(const std::filesystem::path& path, const CnnParams& params);
void write_params(std::ostream& out, const CnnParams& params);
CnnParams load_params(const std::filesystem::path& path);
CnnParams read_params(std::istream& in);

}  // namespace gazekit
