#include "gazekit/cnn.hpp"

#include <Eigen/Core>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>
#include <thread>

#include "gazekit/binio.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

namespace gazekit {

namespace {

using RMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<RMat>;
using CMapR = Eigen::Map<const RMat>;

constexpr std::string_view kMagic = "GZCNN1";

std::size_t product(const std::vector<int>& dims) {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{1},
                         [](std::size_t a, int d) { return a * static_cast<std::size_t>(d); });
}

// col(c*k*k + ky*k + kx, oy*ow + ox) = in(c, oy + ky, ox + kx)
void im2col(const double* in, int channels, int h, int w, int k, double* col) {
  const int oh = h - k + 1, ow = w - k + 1;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          const double* src = in + (static_cast<std::size_t>(c) * h + oy + ky) * w + kx;
          std::copy(src, src + ow, row + static_cast<std::size_t>(oy) * ow);
        }
      }
}

void col2im_add(const double* col, int channels, int h, int w, int k, double* in) {
  const int oh = h - k + 1, ow = w - k + 1;
  for (int c = 0; c < channels; ++c)
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx) {
        const double* row = col + static_cast<std::size_t>((c * k + ky) * k + kx) * oh * ow;
        for (int oy = 0; oy < oh; ++oy) {
          double* dst = in + (static_cast<std::size_t>(c) * h + oy + ky) * w + kx;
          const double* src = row + static_cast<std::size_t>(oy) * ow;
          for (int ox = 0; ox < ow; ++ox) dst[ox] += src[ox];
        }
      }
}

// 2x2 / stride 2 max pooling of (C, H, W); arg holds the winning offset into
// the input map. Ties keep the first element in scan order.
void maxpool(const double* in, int channels, int h, int w, double* out, std::int32_t* arg) {
  const int ph = h / 2, pw = w / 2;
  for (int c = 0; c < channels; ++c)
    for (int py = 0; py < ph; ++py)
      for (int px = 0; px < pw; ++px) {
        const int base = (c * h + 2 * py) * w + 2 * px;
        const int cand[4] = {base, base + 1, base + w, base + w + 1};
        int best = cand[0];
        for (int i = 1; i < 4; ++i)
          if (in[cand[i]] > in[best]) best = cand[i];
        const int o = (c * ph + py) * pw + px;
        out[o] = in[best];
        arg[o] = best;
      }
}

void check_fetch_sizes(const NetConfig& cfg, std::size_t images, std::size_t aux, int batch) {
  if (images != static_cast<std::size_t>(batch) * cfg.input_height * cfg.input_width ||
      aux != static_cast<std::size_t>(batch) * cfg.aux_inputs) {
    fail(ErrorKind::ShapeMismatch, "network input does not match the configured image/aux size");
  }
}

}  // namespace

Tensor::Tensor(std::vector<int> dims, double fill) : shape(std::move(dims)), data(product(shape), fill) {}

void NetConfig::validate() const {
  if (kernel <= 0 || conv1_filters <= 0 || conv2_filters <= 0 || hidden <= 0 || aux_inputs < 0 ||
      outputs <= 0 || pool2_height() <= 0 || pool2_width() <= 0) {
    fail(ErrorKind::ShapeMismatch, "network configuration yields empty feature maps");
  }
}

CnnParams CnnParams::zeros(const NetConfig& cfg) {
  cfg.validate();
  CnnParams p;
  p.config = cfg;
  p.conv1_w = Tensor({cfg.conv1_filters, 1, cfg.kernel, cfg.kernel});
  p.conv1_b = Tensor({cfg.conv1_filters});
  p.conv2_w = Tensor({cfg.conv2_filters, cfg.conv1_filters, cfg.kernel, cfg.kernel});
  p.conv2_b = Tensor({cfg.conv2_filters});
  p.fc1_w = Tensor({cfg.hidden, cfg.flat_features()});
  p.fc1_b = Tensor({cfg.hidden});
  p.out_w = Tensor({cfg.outputs, cfg.hidden + cfg.aux_inputs});
  p.out_b = Tensor({cfg.outputs});
  return p;
}

std::array<Tensor*, 8> CnnParams::blocks() {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &out_w, &out_b};
}

std::array<const Tensor*, 8> CnnParams::blocks() const {
  return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &out_w, &out_b};
}

std::size_t CnnParams::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor* t : blocks()) n += t->size();
  return n;
}

bool CnnParams::all_finite() const {
  for (const Tensor* t : blocks())
    for (double v : t->data)
      if (!std::isfinite(v)) return false;
  return true;
}

CnnParams init_params(std::uint64_t seed, const NetConfig& cfg) {
  CnnParams p = CnnParams::zeros(cfg);
  Rng rng(seed);
  const int kk = cfg.kernel * cfg.kernel;
  auto fill = [&](Tensor& t, int fan_in, int fan_out) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (double& v : t.data) v = rng.uniform(-a, a);
  };
  fill(p.conv1_w, kk, cfg.conv1_filters * kk);
  fill(p.conv2_w, cfg.conv1_filters * kk, cfg.conv2_filters * kk);
  fill(p.fc1_w, cfg.flat_features(), cfg.hidden);
  fill(p.out_w, cfg.hidden + cfg.aux_inputs, cfg.outputs);
  return p;
}

ForwardCache forward_batch(const CnnParams& params, std::span<const double> images, std::span<const double> aux) {
  const NetConfig& cfg = params.config;
  const int hw_in = cfg.input_height * cfg.input_width;
  if (hw_in == 0 || images.size() % hw_in != 0) fail(ErrorKind::ShapeMismatch, "image buffer size");
  const int batch = static_cast<int>(images.size() / hw_in);
  check_fetch_sizes(cfg, images.size(), aux.size(), batch);

  const int k = cfg.kernel, kk = k * k;
  const int c1 = cfg.conv1_filters, c2 = cfg.conv2_filters;
  const int hw1 = cfg.conv1_height() * cfg.conv1_width();
  const int hwp1 = cfg.pool1_height() * cfg.pool1_width();
  const int hw2 = cfg.conv2_height() * cfg.conv2_width();
  const int flat = cfg.flat_features();
  const int width_cat = cfg.hidden + cfg.aux_inputs;

  ForwardCache cache;
  cache.params = &params;
  cache.batch = batch;
  cache.input.assign(images.begin(), images.end());
  cache.pool1.resize(static_cast<std::size_t>(batch) * c1 * hwp1);
  cache.pool1_arg.resize(cache.pool1.size());
  cache.pool2.resize(static_cast<std::size_t>(batch) * flat);
  cache.pool2_arg.resize(cache.pool2.size());
  cache.concat.resize(static_cast<std::size_t>(batch) * width_cat);
  cache.output.resize(static_cast<std::size_t>(batch) * cfg.outputs);

  AlignedDoubles col1(static_cast<std::size_t>(kk) * hw1);
  AlignedDoubles col2(static_cast<std::size_t>(c1) * kk * hw2);
  RMat conv1(c1, hw1), conv2(c2, hw2);
  const CMapR w1(params.conv1_w.data.data(), c1, kk);
  const CMapR w2(params.conv2_w.data.data(), c2, c1 * kk);
  const Eigen::Map<const Eigen::VectorXd> b1(params.conv1_b.data.data(), c1);
  const Eigen::Map<const Eigen::VectorXd> b2(params.conv2_b.data.data(), c2);

  for (int s = 0; s < batch; ++s) {
    im2col(images.data() + static_cast<std::size_t>(s) * hw_in, 1, cfg.input_height, cfg.input_width, k,
           col1.data());
    conv1.noalias() = w1 * CMapR(col1.data(), kk, hw1);
    conv1.colwise() += b1;
    double* p1 = cache.pool1.data() + static_cast<std::size_t>(s) * c1 * hwp1;
    maxpool(conv1.data(), c1, cfg.conv1_height(), cfg.conv1_width(), p1,
            cache.pool1_arg.data() + static_cast<std::size_t>(s) * c1 * hwp1);
    if (cfg.conv_relu)
      for (int i = 0; i < c1 * hwp1; ++i) p1[i] = std::max(p1[i], 0.0);

    im2col(p1, c1, cfg.pool1_height(), cfg.pool1_width(), k, col2.data());
    conv2.noalias() = w2 * CMapR(col2.data(), c1 * kk, hw2);
    conv2.colwise() += b2;
    double* p2 = cache.pool2.data() + static_cast<std::size_t>(s) * flat;
    maxpool(conv2.data(), c2, cfg.conv2_height(), cfg.conv2_width(), p2,
            cache.pool2_arg.data() + static_cast<std::size_t>(s) * flat);
    if (cfg.conv_relu)
      for (int i = 0; i < flat; ++i) p2[i] = std::max(p2[i], 0.0);
  }

  MapR cat(cache.concat.data(), batch, width_cat);
  const CMapR pooled(cache.pool2.data(), batch, flat);
  const CMapR fw(params.fc1_w.data.data(), cfg.hidden, flat);
  const Eigen::Map<const Eigen::RowVectorXd> fb(params.fc1_b.data.data(), cfg.hidden);
  cat.leftCols(cfg.hidden).noalias() = pooled * fw.transpose();
  cat.leftCols(cfg.hidden).rowwise() += fb;
  cat.leftCols(cfg.hidden) = cat.leftCols(cfg.hidden).cwiseMax(0.0);
  if (cfg.aux_inputs > 0) cat.rightCols(cfg.aux_inputs) = CMapR(aux.data(), batch, cfg.aux_inputs);

  MapR out(cache.output.data(), batch, cfg.outputs);
  const CMapR ow(params.out_w.data.data(), cfg.outputs, width_cat);
  const Eigen::Map<const Eigen::RowVectorXd> ob(params.out_b.data.data(), cfg.outputs);
  out.noalias() = cat * ow.transpose();
  out.rowwise() += ob;
  return cache;
}

std::array<double, 2> forward(const CnnParams& params, std::span<const double> image,
                              std::span<const double, 2> head, ForwardCache* cache) {
  if (params.config.outputs != 2) fail(ErrorKind::ShapeMismatch, "single-sample forward expects two outputs");
  ForwardCache c = forward_batch(params, image, head);
  const std::array<double, 2> out{c.output[0], c.output[1]};
  if (cache) *cache = std::move(c);
  return out;
}

double loss(std::span<const double> predicted, std::span<const double> target) {
  if (predicted.size() != target.size() || predicted.size() % 2 != 0) {
    fail(ErrorKind::ShapeMismatch, "prediction/target size mismatch");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < predicted.size(); i += 2) {
    total += std::hypot(predicted[i] - target[i], predicted[i + 1] - target[i + 1]);
  }
  return total;
}

Gradients backward(const ForwardCache& cache, std::span<const double> target) {
  if (!cache.params) fail(ErrorKind::InvalidArgument, "backward() needs a cache from forward_batch()");
  const CnnParams& params = *cache.params;
  const NetConfig& cfg = params.config;
  const int batch = cache.batch;
  const int outputs = cfg.outputs;
  if (target.size() != static_cast<std::size_t>(batch) * outputs) {
    fail(ErrorKind::ShapeMismatch, "target size does not match the batch");
  }
  const int k = cfg.kernel, kk = k * k;
  const int c1 = cfg.conv1_filters, c2 = cfg.conv2_filters;
  const int hw_in = cfg.input_height * cfg.input_width;
  const int hw1 = cfg.conv1_height() * cfg.conv1_width();
  const int hwp1 = cfg.pool1_height() * cfg.pool1_width();
  const int hw2 = cfg.conv2_height() * cfg.conv2_width();
  const int flat = cfg.flat_features();
  const int width_cat = cfg.hidden + cfg.aux_inputs;

  Gradients grads = CnnParams::zeros(cfg);

  // d loss / d output: unit residual direction per sample.
  RMat d_out = RMat::Zero(batch, outputs);
  for (int s = 0; s < batch; ++s) {
    double norm2 = 0.0;
    for (int o = 0; o < outputs; ++o) {
      const double r = cache.output[s * outputs + o] - target[s * outputs + o];
      norm2 += r * r;
    }
    const double norm = std::sqrt(norm2);
    if (norm == 0.0) continue;
    for (int o = 0; o < outputs; ++o) d_out(s, o) = (cache.output[s * outputs + o] - target[s * outputs + o]) / norm;
  }

  const CMapR cat(cache.concat.data(), batch, width_cat);
  MapR(grads.out_w.data.data(), outputs, width_cat).noalias() = d_out.transpose() * cat;
  Eigen::Map<Eigen::RowVectorXd>(grads.out_b.data.data(), outputs) = d_out.colwise().sum();

  const CMapR ow(params.out_w.data.data(), outputs, width_cat);
  RMat d_hidden = d_out * ow.leftCols(cfg.hidden);
  d_hidden = (cat.leftCols(cfg.hidden).array() > 0.0).select(d_hidden, 0.0);

  const CMapR pooled(cache.pool2.data(), batch, flat);
  MapR(grads.fc1_w.data.data(), cfg.hidden, flat).noalias() = d_hidden.transpose() * pooled;
  Eigen::Map<Eigen::RowVectorXd>(grads.fc1_b.data.data(), cfg.hidden) = d_hidden.colwise().sum();
  const CMapR fw(params.fc1_w.data.data(), cfg.hidden, flat);
  RMat d_pool2 = d_hidden * fw;

  const CMapR w2(params.conv2_w.data.data(), c2, c1 * kk);
  MapR gw1(grads.conv1_w.data.data(), c1, kk);
  MapR gw2(grads.conv2_w.data.data(), c2, c1 * kk);
  Eigen::Map<Eigen::VectorXd> gb1(grads.conv1_b.data.data(), c1);
  Eigen::Map<Eigen::VectorXd> gb2(grads.conv2_b.data.data(), c2);

  AlignedDoubles col1(static_cast<std::size_t>(kk) * hw1);
  AlignedDoubles col2(static_cast<std::size_t>(c1) * kk * hw2);
  RMat d_conv2(c2, hw2), d_conv1(c1, hw1), d_col2(c1 * kk, hw2);
  AlignedDoubles d_pool1(static_cast<std::size_t>(c1) * hwp1);

  for (int s = 0; s < batch; ++s) {
    const double* p1 = cache.pool1.data() + static_cast<std::size_t>(s) * c1 * hwp1;
    const double* p2 = cache.pool2.data() + static_cast<std::size_t>(s) * flat;
    const std::int32_t* a1 = cache.pool1_arg.data() + static_cast<std::size_t>(s) * c1 * hwp1;
    const std::int32_t* a2 = cache.pool2_arg.data() + static_cast<std::size_t>(s) * flat;

    d_conv2.setZero();
    for (int i = 0; i < flat; ++i) {
      if (cfg.conv_relu && !(p2[i] > 0.0)) continue;
      d_conv2.data()[a2[i]] += d_pool2(s, i);
    }
    im2col(p1, c1, cfg.pool1_height(), cfg.pool1_width(), k, col2.data());
    const CMapR col2m(col2.data(), c1 * kk, hw2);
    gw2.noalias() += d_conv2 * col2m.transpose();
    gb2 += d_conv2.rowwise().sum();
    d_col2.noalias() = w2.transpose() * d_conv2;
    std::fill(d_pool1.begin(), d_pool1.end(), 0.0);
    col2im_add(d_col2.data(), c1, cfg.pool1_height(), cfg.pool1_width(), k, d_pool1.data());

    d_conv1.setZero();
    for (int i = 0; i < c1 * hwp1; ++i) {
      if (cfg.conv_relu && !(p1[i] > 0.0)) continue;
      d_conv1.data()[a1[i]] += d_pool1[i];
    }
    im2col(cache.input.data() + static_cast<std::size_t>(s) * hw_in, 1, cfg.input_height, cfg.input_width, k,
           col1.data());
    gw1.noalias() += d_conv1 * CMapR(col1.data(), kk, hw1).transpose();
    gb1 += d_conv1.rowwise().sum();
  }
  return grads;
}

void add_in_place(Gradients& acc, const Gradients& g) {
  auto dst = acc.blocks();
  auto src = g.blocks();
  for (std::size_t b = 0; b < dst.size(); ++b) {
    if (dst[b]->size() != src[b]->size()) fail(ErrorKind::ShapeMismatch, "gradient block size mismatch");
    for (std::size_t i = 0; i < dst[b]->size(); ++i) dst[b]->data[i] += src[b]->data[i];
  }
}

void scale_in_place(Gradients& g, double factor) {
  for (Tensor* t : g.blocks())
    for (double& v : t->data) v *= factor;
}

void sgd_step(CnnParams& params, const Gradients& grads, double lr, double momentum, CnnParams& velocity) {
  if (!(lr > 0.0) || momentum < 0.0 || momentum >= 1.0) {
    fail(ErrorKind::InvalidArgument, "sgd_step needs lr > 0 and momentum in [0, 1)");
  }
  auto p = params.blocks();
  auto g = grads.blocks();
  auto v = velocity.blocks();
  for (std::size_t b = 0; b < p.size(); ++b) {
    if (p[b]->size() != g[b]->size() || p[b]->size() != v[b]->size()) {
      fail(ErrorKind::ShapeMismatch, "parameter/gradient/velocity block size mismatch");
    }
    for (std::size_t i = 0; i < p[b]->size(); ++i) {
      v[b]->data[i] = momentum * v[b]->data[i] - lr * g[b]->data[i];
      p[b]->data[i] += v[b]->data[i];
    }
  }
}

void train_network(CnnParams& params, const TrainingView& data, const TrainConfig& config,
                   const std::function<void(const EpochReport&)>& on_epoch) {
  const NetConfig& cfg = params.config;
  if (data.count == 0) fail(ErrorKind::EmptyTrainingSet, "no training samples");
  if (config.batch_size <= 0 || config.chunk_size <= 0 || config.epochs < 0) {
    fail(ErrorKind::InvalidArgument, "batch_size, chunk_size must be positive");
  }
  const int hw = cfg.input_height * cfg.input_width;
  const int aux_n = cfg.aux_inputs;
  const int out_n = cfg.outputs;

  CnnParams velocity = CnnParams::zeros(cfg);
  std::vector<std::size_t> order(data.count);
  std::iota(order.begin(), order.end(), std::size_t{0});

  struct ChunkBuffers {
    AlignedDoubles images, aux, target;
  };

  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle_rng(derive_seed(config.seed, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[shuffle_rng.index(i)]);
    const int drops = config.lr_step_epoch > 0 ? epoch / config.lr_step_epoch : 0;
    const double lr = config.learning_rate * std::pow(config.lr_gamma, drops);

    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      const std::size_t n = end - start;
      const std::size_t chunks = (n + config.chunk_size - 1) / config.chunk_size;
      std::vector<Gradients> chunk_grads(chunks);
      std::vector<double> chunk_loss(chunks, 0.0);

      auto run_chunk = [&](std::size_t c) {
        const std::size_t c0 = start + c * config.chunk_size;
        const std::size_t c1 = std::min(end, c0 + config.chunk_size);
        const std::size_t m = c1 - c0;
        ChunkBuffers buf;
        buf.images.resize(m * hw);
        buf.aux.resize(m * aux_n);
        buf.target.resize(m * out_n);
        for (std::size_t i = 0; i < m; ++i) {
          data.fetch(order[c0 + i], buf.images.data() + i * hw, buf.aux.data() + i * aux_n,
                     buf.target.data() + i * out_n);
        }
        const ForwardCache cache = forward_batch(params, buf.images, buf.aux);
        chunk_loss[c] = loss(cache.output, buf.target);
        chunk_grads[c] = backward(cache, buf.target);
      };

      const int threads = std::max(1, std::min<int>(config.threads, static_cast<int>(chunks)));
      if (threads == 1) {
        for (std::size_t c = 0; c < chunks; ++c) run_chunk(c);
      } else {
        std::vector<std::thread> pool;
        for (int t = 0; t < threads; ++t) {
          pool.emplace_back([&, t] {
            for (std::size_t c = t; c < chunks; c += threads) run_chunk(c);
          });
        }
        for (auto& th : pool) th.join();
      }

      Gradients total = std::move(chunk_grads[0]);
      for (std::size_t c = 1; c < chunks; ++c) add_in_place(total, chunk_grads[c]);
      for (double l : chunk_loss) epoch_loss += l;
      scale_in_place(total, 1.0 / static_cast<double>(n));
      sgd_step(params, total, lr, config.momentum, velocity);
    }
    if (!params.all_finite()) fail(ErrorKind::NonFiniteSample, "training diverged to non-finite parameters");
    if (on_epoch) on_epoch({epoch, epoch_loss / static_cast<double>(order.size())});
  }
}

void write_params(std::ostream& out, const CnnParams& params) {
  const NetConfig& c = params.config;
  binio::write_magic(out, kMagic);
  for (int v : {c.input_height, c.input_width, c.kernel, c.conv1_filters, c.conv2_filters, c.hidden,
                c.aux_inputs, c.outputs, c.conv_relu ? 1 : 0}) {
    binio::write<std::uint32_t>(out, static_cast<std::uint32_t>(v));
  }
  for (const Tensor* t : params.blocks()) binio::write_doubles(out, t->data.data(), t->size());
}

CnnParams read_params(std::istream& in) {
  if (!binio::read_magic(in, kMagic)) fail(ErrorKind::BadMagic, "not a GZCNN1 model");
  std::array<std::uint32_t, 9> h{};
  for (auto& v : h)
    if (!binio::read(in, v)) fail(ErrorKind::TruncatedRecord, "truncated GZCNN1 header");
  NetConfig c;
  c.input_height = static_cast<int>(h[0]);
  c.input_width = static_cast<int>(h[1]);
  c.kernel = static_cast<int>(h[2]);
  c.conv1_filters = static_cast<int>(h[3]);
  c.conv2_filters = static_cast<int>(h[4]);
  c.hidden = static_cast<int>(h[5]);
  c.aux_inputs = static_cast<int>(h[6]);
  c.outputs = static_cast<int>(h[7]);
  c.conv_relu = h[8] != 0;
  CnnParams p = CnnParams::zeros(c);
  int index = 0;
  for (Tensor* t : p.blocks()) {
    if (!binio::read_doubles(in, t->data.data(), t->size())) {
      fail(ErrorKind::TruncatedRecord, "truncated GZCNN1 parameter block " + std::to_string(index));
    }
    ++index;
  }
  return p;
}

void save_params(const std::filesystem::path& path, const CnnParams& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::Io, "cannot write " + path.string());
  write_params(out, params);
  if (!out) fail(ErrorKind::Io, "write failed for " + path.string());
}

CnnParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::Io, "cannot open " + path.string());
  return read_params(in);
}

}  // namespace gazekit
