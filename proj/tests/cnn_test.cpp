#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "gazekit/cnn.hpp"
#include "gazekit/error.hpp"
#include "gazekit/random.hpp"

using namespace gazekit;

namespace {

NetConfig tiny_config() {
  NetConfig c;
  c.input_height = 14;
  c.input_width = 16;
  c.kernel = 3;
  c.conv1_filters = 3;
  c.conv2_filters = 4;
  c.hidden = 6;
  return c;
}

// Straightforward nested-loop evaluation used as a reference.
std::array<double, 2> naive_forward(const CnnParams& p, const std::vector<double>& img, const double head[2]) {
  const NetConfig& c = p.config;
  const int k = c.kernel;
  auto conv = [&](const std::vector<double>& in, int cin, int h, int w, const Tensor& wt, const Tensor& b,
                  int cout) {
    const int oh = h - k + 1, ow = w - k + 1;
    std::vector<double> out(static_cast<std::size_t>(cout) * oh * ow);
    for (int o = 0; o < cout; ++o)
      for (int y = 0; y < oh; ++y)
        for (int x = 0; x < ow; ++x) {
          double s = b[o];
          for (int ci = 0; ci < cin; ++ci)
            for (int dy = 0; dy < k; ++dy)
              for (int dx = 0; dx < k; ++dx)
                s += wt[((o * cin + ci) * k + dy) * k + dx] * in[(ci * h + y + dy) * w + x + dx];
          out[(o * oh + y) * ow + x] = s;
        }
    return out;
  };
  auto pool = [&](const std::vector<double>& in, int ch, int h, int w) {
    std::vector<double> out(static_cast<std::size_t>(ch) * (h / 2) * (w / 2));
    for (int o = 0; o < ch; ++o)
      for (int y = 0; y < h / 2; ++y)
        for (int x = 0; x < w / 2; ++x) {
          double m = -INFINITY;
          for (int dy = 0; dy < 2; ++dy)
            for (int dx = 0; dx < 2; ++dx) m = std::max(m, in[(o * h + 2 * y + dy) * w + 2 * x + dx]);
          out[(o * (h / 2) + y) * (w / 2) + x] = c.conv_relu ? std::max(m, 0.0) : m;
        }
    return out;
  };
  auto a = pool(conv(img, 1, c.input_height, c.input_width, p.conv1_w, p.conv1_b, c.conv1_filters),
                c.conv1_filters, c.conv1_height(), c.conv1_width());
  auto b = pool(conv(a, c.conv1_filters, c.pool1_height(), c.pool1_width(), p.conv2_w, p.conv2_b, c.conv2_filters),
                c.conv2_filters, c.conv2_height(), c.conv2_width());
  std::vector<double> cat(c.hidden + 2);
  for (int h = 0; h < c.hidden; ++h) {
    double s = p.fc1_b[h];
    for (int i = 0; i < c.flat_features(); ++i) s += p.fc1_w[h * c.flat_features() + i] * b[i];
    cat[h] = std::max(s, 0.0);
  }
  cat[c.hidden] = head[0];
  cat[c.hidden + 1] = head[1];
  std::array<double, 2> out{};
  for (int o = 0; o < 2; ++o) {
    double s = p.out_b[o];
    for (int i = 0; i < c.hidden + 2; ++i) s += p.out_w[o * (c.hidden + 2) + i] * cat[i];
    out[o] = s;
  }
  return out;
}

std::vector<double> random_images(Rng& rng, const NetConfig& c, int n) {
  std::vector<double> v(static_cast<std::size_t>(n) * c.input_height * c.input_width);
  for (double& x : v) x = rng.uniform();
  return v;
}

// Biases nudged away from zero so the tiny net has live hidden units.
CnnParams live_params(std::uint64_t seed, const NetConfig& c) {
  CnnParams p = init_params(seed, c);
  Rng rng(seed + 100);
  for (Tensor* t : {&p.conv1_b, &p.conv2_b, &p.fc1_b, &p.out_b})
    for (double& v : t->data) v = rng.uniform(-0.2, 0.4);
  return p;
}

double batch_loss(const CnnParams& p, const std::vector<double>& imgs, const std::vector<double>& aux,
                  const std::vector<double>& target) {
  return loss(forward_batch(p, imgs, aux).output, target);
}

}  // namespace

TEST(Cnn, ProductionShapes) {
  NetConfig c;
  EXPECT_EQ(c.conv1_height(), 32);
  EXPECT_EQ(c.conv1_width(), 56);
  EXPECT_EQ(c.pool1_height(), 16);
  EXPECT_EQ(c.pool1_width(), 28);
  EXPECT_EQ(c.conv2_height(), 12);
  EXPECT_EQ(c.conv2_width(), 24);
  EXPECT_EQ(c.pool2_height(), 6);
  EXPECT_EQ(c.pool2_width(), 12);
  EXPECT_EQ(c.flat_features(), 3600);
  const CnnParams p = CnnParams::zeros(c);
  EXPECT_EQ(p.fc1_w.size(), 500u * 3600u);
  EXPECT_EQ(p.out_w.size(), 2u * 502u);
  EXPECT_EQ(p.parameter_count(), 20u * 25 + 20 + 50 * 20 * 25 + 50 + 500 * 3600 + 500 + 2 * 502 + 2);
}

TEST(Cnn, ZeroWeightsGiveZeroOutput) {
  const CnnParams p = CnnParams::zeros(NetConfig{});
  std::vector<double> img(36 * 60, 0.7);
  const double head[2] = {0.1, -0.2};
  const auto out = forward(p, img, std::span<const double, 2>(head, 2));
  EXPECT_EQ(out[0], 0.0);
  EXPECT_EQ(out[1], 0.0);
}

TEST(Cnn, MatchesNaiveReference) {
  for (bool relu : {false, true}) {
    NetConfig c = tiny_config();
    c.conv_relu = relu;
    const CnnParams p = live_params(3, c);
    Rng rng(9);
    const auto imgs = random_images(rng, c, 5);
    std::vector<double> aux(10);
    for (double& v : aux) v = rng.uniform(-0.5, 0.5);
    const auto cache = forward_batch(p, imgs, aux);
    const int hw = c.input_height * c.input_width;
    for (int s = 0; s < 5; ++s) {
      std::vector<double> one(imgs.begin() + s * hw, imgs.begin() + (s + 1) * hw);
      const auto ref = naive_forward(p, one, &aux[2 * s]);
      EXPECT_NEAR(cache.output[2 * s], ref[0], 1e-12);
      EXPECT_NEAR(cache.output[2 * s + 1], ref[1], 1e-12);
    }
  }
}

TEST(Cnn, DoublingOutputLayerDoublesOutput) {
  const NetConfig c = tiny_config();
  CnnParams p = live_params(4, c);
  Rng rng(1);
  const auto img = random_images(rng, c, 1);
  const double head[2] = {0.3, 0.1};
  const auto a = forward(p, img, std::span<const double, 2>(head, 2));
  for (double& v : p.out_w.data) v *= 2.0;
  for (double& v : p.out_b.data) v *= 2.0;
  const auto b = forward(p, img, std::span<const double, 2>(head, 2));
  EXPECT_NEAR(b[0], 2 * a[0], 1e-12);
  EXPECT_NEAR(b[1], 2 * a[1], 1e-12);
}

TEST(Cnn, LossExamples) {
  EXPECT_EQ(loss(std::vector<double>{0.1, 0.2}, std::vector<double>{0.1, 0.2}), 0.0);
  EXPECT_DOUBLE_EQ(loss(std::vector<double>{3.0, 4.0}, std::vector<double>{0.0, 0.0}), 5.0);
  EXPECT_DOUBLE_EQ(loss(std::vector<double>{3.0, 0.0, 0.0, 1.0}, std::vector<double>{0.0, 4.0, 0.0, 3.0}), 7.0);
  EXPECT_THROW(loss(std::vector<double>{1.0, 2.0}, std::vector<double>{1.0}), Error);
}

TEST(Cnn, BackwardZeroAtTarget) {
  const NetConfig c = tiny_config();
  const CnnParams p = live_params(5, c);
  Rng rng(2);
  const auto img = random_images(rng, c, 1);
  const std::vector<double> aux{0.1, 0.2};
  const auto cache = forward_batch(p, img, aux);
  const auto g = backward(cache, cache.output);
  for (const Tensor* t : g.blocks())
    for (double v : t->data) EXPECT_EQ(v, 0.0);
}

TEST(Cnn, OutputBiasGradientIsUnitResidual) {
  const NetConfig c = tiny_config();
  const CnnParams p = live_params(6, c);
  Rng rng(3);
  const auto img = random_images(rng, c, 1);
  const std::vector<double> aux{0.0, 0.0};
  const auto cache = forward_batch(p, img, aux);
  const std::vector<double> target{cache.output[0] + 3.0, cache.output[1] - 4.0};
  const auto g = backward(cache, target);
  EXPECT_NEAR(g.out_b[0], -0.6, 1e-12);
  EXPECT_NEAR(g.out_b[1], 0.8, 1e-12);
}

TEST(Cnn, GradientMatchesFiniteDifferences) {
  for (bool relu : {false, true}) {
    NetConfig c = tiny_config();
    c.conv_relu = relu;
    CnnParams p = live_params(7, c);
    Rng rng(11);
    const int n = 3;
    const auto imgs = random_images(rng, c, n);
    std::vector<double> aux(2 * n), target(2 * n);
    for (double& v : aux) v = rng.uniform(-0.5, 0.5);
    for (double& v : target) v = rng.uniform(-1.0, 1.0);
    const auto g = backward(forward_batch(p, imgs, aux), target);

    const double h = 1e-6;
    int checked = 0, bad = 0;
    auto pb = p.blocks();
    auto gb = g.blocks();
    for (std::size_t b = 0; b < pb.size(); ++b) {
      for (std::size_t i = 0; i < pb[b]->size(); ++i) {
        const double orig = pb[b]->data[i];
        pb[b]->data[i] = orig + h;
        const double up = batch_loss(p, imgs, aux, target);
        pb[b]->data[i] = orig - h;
        const double down = batch_loss(p, imgs, aux, target);
        pb[b]->data[i] = orig;
        const double fd = (up - down) / (2 * h);
        const double a = gb[b]->data[i];
        ++checked;
        if (std::abs(a - fd) / std::max(1.0, std::abs(a)) > 1e-6) ++bad;
      }
    }
    EXPECT_EQ(bad, 0) << "of " << checked << " parameters, relu=" << relu;
  }
}

TEST(Cnn, SgdStepExamples) {
  NetConfig c = tiny_config();
  CnnParams p = CnnParams::zeros(c);
  CnnParams g = CnnParams::zeros(c);
  CnnParams v = CnnParams::zeros(c);
  p.out_b[0] = 1.0;
  g.out_b[0] = 2.0;
  sgd_step(p, g, 0.1, 0.9, v);
  EXPECT_DOUBLE_EQ(v.out_b[0], -0.2);
  EXPECT_DOUBLE_EQ(p.out_b[0], 0.8);
  sgd_step(p, g, 0.1, 0.9, v);
  // v2 = 0.9 * -0.2 - 0.2 = -0.38
  EXPECT_DOUBLE_EQ(v.out_b[0], 0.9 * -0.2 - 0.1 * 2.0);
  EXPECT_DOUBLE_EQ(p.out_b[0], 0.8 + (0.9 * -0.2 - 0.1 * 2.0));
  EXPECT_THROW(sgd_step(p, g, 0.0, 0.9, v), Error);
  EXPECT_THROW(sgd_step(p, g, 0.1, 1.0, v), Error);
}

TEST(Cnn, InitIsReproducibleWithGlorotVariance) {
  const CnnParams a = init_params(42);
  const CnnParams b = init_params(42);
  EXPECT_TRUE(a == b);
  EXPECT_FALSE(a == init_params(43));
  auto check = [](const Tensor& t, double fan_in, double fan_out) {
    double s = 0.0, s2 = 0.0;
    for (double v : t.data) {
      s += v;
      s2 += v * v;
    }
    const double n = static_cast<double>(t.size());
    const double var = s2 / n - (s / n) * (s / n);
    const double expected = 2.0 / (fan_in + fan_out);
    EXPECT_NEAR(var / expected, 1.0, 0.2);
  };
  check(a.conv1_w, 25, 20 * 25);
  check(a.conv2_w, 20 * 25, 50 * 25);
  check(a.fc1_w, 3600, 500);
  check(a.out_w, 502, 2);
  for (double v : a.fc1_b.data) EXPECT_EQ(v, 0.0);
}

TEST(Cnn, ShapeMismatchThrows) {
  const CnnParams p = CnnParams::zeros(tiny_config());
  std::vector<double> img(10);
  std::vector<double> aux{0.0, 0.0};
  try {
    forward_batch(p, img, aux);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::ShapeMismatch);
  }
  NetConfig bad;
  bad.input_height = 8;
  EXPECT_THROW(CnnParams::zeros(bad), Error);
}

namespace {

struct Toy {
  NetConfig config = tiny_config();
  std::vector<double> images, aux, target;
  std::size_t n = 40;

  Toy() {
    Rng rng(77);
    images = random_images(rng, config, static_cast<int>(n));
    aux.resize(2 * n);
    target.resize(2 * n);
    const int hw = config.input_height * config.input_width;
    for (std::size_t i = 0; i < n; ++i) {
      aux[2 * i] = rng.uniform(-0.3, 0.3);
      aux[2 * i + 1] = rng.uniform(-0.3, 0.3);
      double left = 0.0;
      for (int j = 0; j < hw; ++j) left += (j % config.input_width < config.input_width / 2) ? images[i * hw + j] : 0;
      target[2 * i] = left / hw - 0.25 + aux[2 * i];
      target[2 * i + 1] = -aux[2 * i + 1];
    }
  }

  TrainingView view() const {
    const int hw = config.input_height * config.input_width;
    return {n, [this, hw](std::size_t i, double* img, double* a, double* t) {
              std::copy_n(images.data() + i * hw, hw, img);
              std::copy_n(aux.data() + 2 * i, 2, a);
              std::copy_n(target.data() + 2 * i, 2, t);
            }};
  }
};

}  // namespace

TEST(Cnn, TrainingIsDeterministicAcrossThreadCounts) {
  const Toy toy;
  TrainConfig tc;
  tc.epochs = 3;
  tc.batch_size = 16;
  tc.chunk_size = 4;
  tc.seed = 5;
  CnnParams a = init_params(1, toy.config);
  CnnParams b = a;
  CnnParams c = a;
  train_network(a, toy.view(), tc);
  train_network(b, toy.view(), tc);
  tc.threads = 3;
  train_network(c, toy.view(), tc);
  EXPECT_TRUE(a == b);
  EXPECT_TRUE(a == c);
}

TEST(Cnn, TrainingReducesLoss) {
  const Toy toy;
  TrainConfig tc;
  tc.epochs = 40;
  tc.batch_size = 8;
  tc.lr_step_epoch = 30;
  std::vector<double> losses;
  CnnParams p = init_params(2, toy.config);
  train_network(p, toy.view(), tc, [&](const EpochReport& r) { losses.push_back(r.mean_loss); });
  ASSERT_EQ(losses.size(), 40u);
  EXPECT_LT(losses.back(), 0.5 * losses.front());
}

TEST(Cnn, EmptyTrainingSetThrows) {
  CnnParams p = init_params(1, tiny_config());
  try {
    train_network(p, TrainingView{}, TrainConfig{});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::EmptyTrainingSet);
  }
}

TEST(Cnn, ModelRoundTrip) {
  NetConfig c = tiny_config();
  c.conv_relu = true;
  const CnnParams p = live_params(8, c);
  std::stringstream ss;
  write_params(ss, p);
  const CnnParams q = read_params(ss);
  EXPECT_TRUE(p == q);

  std::string bytes = ss.str();
  std::stringstream truncated(bytes.substr(0, bytes.size() - 3));
  try {
    read_params(truncated);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::TruncatedRecord);
  }
  bytes[0] = 'X';
  std::stringstream bad(bytes);
  try {
    read_params(bad);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::BadMagic);
  }
}
