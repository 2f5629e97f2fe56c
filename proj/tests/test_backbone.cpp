#include <doctest.h>

#include <cstring>
#include <random>

#include "gradeloss/backbone.hpp"
#include "gradeloss/checkpoint.hpp"
#include "gradeloss/optimizer.hpp"

using namespace gradeloss;

namespace {

template <typename Scalar>
Tensor2<Scalar> random_batch(int channels, int n, int size, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> d(0.0, 1.0);
  Tensor2<Scalar> x(channels, static_cast<Eigen::Index>(n) * size * size);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = static_cast<Scalar>(d(rng));
  return x;
}

NetworkConfig tiny_config() {
  NetworkConfig c;
  c.input_size = 8;
  c.conv_channels = {3, 4};
  c.linear_dims = {6, 4};
  return c;
}

// ||a - n|| / max(||a||, ||n||) over a whole tensor.
double tensor_rel_err(const Tensor2<double>& a, const Tensor2<double>& n) {
  const double scale = std::max(a.norm(), n.norm());
  return scale < 1e-7 ? 0.0 : (a - n).norm() / scale;
}

bool bytes_equal(const Tensor2<float>& a, const Tensor2<float>& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() &&
         std::memcmp(a.data(), b.data(), sizeof(float) * static_cast<std::size_t>(a.size())) == 0;
}

}  // namespace

TEST_CASE("default parameter count matches layer arithmetic") {
  // conv: k*k*in*out weights + out bias + 2*out batch-norm affine
  auto conv = [](long in, long out) { return 25 * in * out + out + 2 * out; };
  auto dense = [](long in, long out, bool bn) { return in * out + out + (bn ? 2 * out : 0); };
  const long expected = conv(2, 32) + conv(32, 64) + conv(64, 128) + conv(128, 256) +
                        dense(256 * 7 * 7, 256, true) + dense(256, 128, true) + dense(128, 64, true) +
                        dense(64, 8, false);
  CHECK(expected == 4332328);
  Model m(NetworkConfig::paper(), 0);
  CHECK(m.parameter_count() == 4332328);
  CHECK(NetworkConfig::paper().final_map_size() == 7);
}

TEST_CASE("network config validation") {
  NetworkConfig c;
  c.input_size = 100;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(Model(c, 0), std::invalid_argument);
  c = NetworkConfig{};
  c.kernel = 4;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = NetworkConfig{};
  c.linear_dims = {};
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
}

TEST_CASE("same seed gives identical parameters") {
  Model a(tiny_config(), 5), b(tiny_config(), 5), c(tiny_config(), 6);
  auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  bool any_diff = false;
  for (std::size_t i = 0; i < pa.size(); ++i) {
    CHECK(bytes_equal(*pa[i].value, *pb[i].value));
    any_diff |= !bytes_equal(*pa[i].value, *pc[i].value);
  }
  CHECK(any_diff);
}

TEST_CASE("kaiming bound") {
  Model m(NetworkConfig::paper(), 3);
  for (auto& p : m.parameters()) {
    if (p.name == "conv1.weight") CHECK(p.value->cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 50.0));
    if (p.name == "linear1.weight") CHECK(p.value->cwiseAbs().maxCoeff() <= std::sqrt(6.0 / 12544.0));
  }
}

TEST_CASE("forward shapes and eval-mode symmetries") {
  NetworkConfig c = tiny_config();
  Model m(c, 1);
  m.set_mode(Mode::Eval);
  const Tensor2<float> zeros = Tensor2<float>::Zero(2, 5 * 64);
  const auto y = m.infer(zeros);
  REQUIRE(y.rows() == 4);
  REQUIRE(y.cols() == 5);
  CHECK(y.allFinite());
  for (int j = 1; j < 5; ++j) CHECK(y.col(j) == y.col(0));

  CHECK_THROWS_AS(m.infer(Tensor2<float>::Zero(3, 64)), std::invalid_argument);
  CHECK_THROWS_AS(m.infer(Tensor2<float>::Zero(2, 65)), std::invalid_argument);
  Tensor2<float> bad = Tensor2<float>::Zero(2, 64);
  bad(0, 3) = NAN;
  CHECK_THROWS_AS(m.infer(bad), std::invalid_argument);
}

TEST_CASE("identical patches give identical outputs") {
  // Train mode on N copies leaves zero batch variance after the first dense
  // layer, which scales rounding by 1/sqrt(epsilon); double keeps it small.
  Backbone<double> m(tiny_config(), 2);
  const auto one = random_batch<double>(2, 1, 8, 9);
  Tensor2<double> batch(2, 4 * 64);
  for (int k = 0; k < 4; ++k) batch.middleCols(k * 64, 64) = one;
  const auto y = m.forward(batch);
  for (int j = 1; j < 4; ++j) CHECK((y.col(j) - y.col(0)).cwiseAbs().maxCoeff() <= 1e-6);

  Model f(tiny_config(), 2);
  f.set_mode(Mode::Eval);
  Tensor2<float> fb(2, 4 * 64);
  for (int k = 0; k < 4; ++k) fb.middleCols(k * 64, 64) = one.cast<float>();
  const auto fy = f.infer(fb);
  for (int j = 1; j < 4; ++j) CHECK((fy.col(j) - fy.col(0)).cwiseAbs().maxCoeff() <= 1e-6f);
}

TEST_CASE("infer leaves the model untouched") {
  Model m(tiny_config(), 2);
  m.set_mode(Mode::Eval);
  const auto before = serialize_checkpoint(m);
  const auto x = random_batch<float>(2, 3, 8, 1);
  const auto y1 = m.infer(x);
  const auto y2 = m.infer(x);
  CHECK(bytes_equal(y1, y2));
  CHECK(serialize_checkpoint(m) == before);
}

TEST_CASE("train-mode forward updates running statistics") {
  Model m(tiny_config(), 2);
  const auto before = m.buffers();
  const Tensor2<float> mean_before = *before[0].value;
  m.forward(random_batch<float>(2, 3, 8, 1));
  CHECK_FALSE(bytes_equal(*m.buffers()[0].value, mean_before));
}

TEST_CASE("golden eval forward on a fixed patch") {
  Model m(NetworkConfig::paper(), 0);
  m.set_mode(Mode::Eval);
  Tensor2<float> x(2, 112 * 112);
  for (int r = 0; r < 112; ++r)
    for (int c = 0; c < 112; ++c) {
      x(0, r * 112 + c) = static_cast<float>(std::sin(0.1 * r) * std::cos(0.07 * c));
      x(1, r * 112 + c) = static_cast<float>(std::exp(-((r - 56) * (r - 56) + (c - 56) * (c - 56)) / 128.0));
    }
  const auto y = m.infer(x);
  REQUIRE(y.rows() == 8);
  const float golden[8] = {-0.41958f, 0.0173465f, -0.443097f, 0.154218f, 0.72796f, -0.528703f, -0.632865f, 0.99773f};
  for (int i = 0; i < 8; ++i) CHECK(y(i, 0) == doctest::Approx(golden[i]).epsilon(1e-4));
}

TEST_CASE("backbone gradients match finite differences per layer") {
  for (auto mode : {Mode::Train, Mode::Eval}) {
    Backbone<double> m(tiny_config(), 4);
    m.set_mode(mode);
    if (mode == Mode::Eval) {
      // Non-trivial running statistics.
      m.set_mode(Mode::Train);
      m.forward(random_batch<double>(2, 6, 8, 77));
      m.set_mode(Mode::Eval);
    }
    const auto x = random_batch<double>(2, 3, 8, 8);
    const Tensor2<double> r = random_batch<double>(1, 3 * 4, 1, 9).reshaped<Eigen::RowMajor>(4, 3);
    auto loss = [&]() { return (m.forward(x).array() * r.array()).sum(); };
    loss();
    m.backward(r);
    const Tensor2<double> input_grad = m.input_gradient();
    for (auto& p : m.parameters()) {
      const Tensor2<double> analytic = *p.grad;
      Tensor2<double> numeric(analytic.rows(), analytic.cols());
      for (Eigen::Index i = 0; i < p.value->size(); ++i) {
        double& w = p.value->data()[i];
        const double keep = w;
        w = keep + 1e-5;
        const double up = loss();
        w = keep - 1e-5;
        const double down = loss();
        w = keep;
        numeric.data()[i] = (up - down) / 2e-5;
      }
      INFO(p.name);
      CHECK(tensor_rel_err(analytic, numeric) < 1e-3);
    }
    Tensor2<double> xin = x;
    Tensor2<double> numeric(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < xin.size(); ++i) {
      const double keep = xin.data()[i];
      xin.data()[i] = keep + 1e-5;
      const double up = (m.forward(xin).array() * r.array()).sum();
      xin.data()[i] = keep - 1e-5;
      const double down = (m.forward(xin).array() * r.array()).sum();
      xin.data()[i] = keep;
      numeric.data()[i] = (up - down) / 2e-5;
    }
    CHECK(tensor_rel_err(input_grad, numeric) < 1e-3);
  }
}

TEST_CASE("zero upstream gradient gives zero parameter gradients") {
  Model m(tiny_config(), 4);
  m.forward(random_batch<float>(2, 3, 8, 8));
  m.backward(Tensor2<float>::Zero(4, 3));
  for (const auto& g : m.gradients()) CHECK(g.value.isZero(0.0f));
}

TEST_CASE("duplicated batch doubles the gradients of a sum loss") {
  Backbone<double> m(tiny_config(), 4);
  const auto x = random_batch<double>(2, 3, 8, 8);
  Tensor2<double> r = random_batch<double>(1, 12, 1, 5).reshaped<Eigen::RowMajor>(4, 3);
  m.forward(x);
  m.backward(r);
  const auto single = m.gradients();
  Tensor2<double> x2(2, 2 * x.cols());
  x2 << x, x;
  Tensor2<double> r2(4, 6);
  r2 << r, r;
  m.forward(x2);
  m.backward(r2);
  const auto doubled = m.gradients();
  for (std::size_t i = 0; i < single.size(); ++i) {
    INFO(single[i].name);
    CHECK((doubled[i].value - 2.0 * single[i].value).cwiseAbs().maxCoeff() <=
          1e-9 * std::max(1.0, single[i].value.cwiseAbs().maxCoeff()));
  }
}

TEST_CASE("backward without forward is an error") {
  Model m(tiny_config(), 4);
  CHECK_THROWS_AS(m.backward(Tensor2<float>::Zero(4, 1)), std::logic_error);
  m.forward(random_batch<float>(2, 2, 8, 1));
  CHECK_THROWS_AS(m.backward(Tensor2<float>::Zero(4, 3)), std::invalid_argument);
}

TEST_CASE("head swap") {
  Model m(tiny_config(), 4);
  const Tensor2<float> conv1 = *m.parameters()[0].value;
  m.swap_head(Head::Classifier, 11);
  CHECK(m.output_dim() == 2);
  CHECK(m.head() == Head::Classifier);
  CHECK(bytes_equal(*m.parameters()[0].value, conv1));
  CHECK(m.infer(Tensor2<float>::Zero(2, 64)).rows() == 2);

  // Same-head swap re-initialises only the final layer.
  auto params = m.parameters();
  const Tensor2<float> head_before = *params[params.size() - 2].value;
  m.swap_head(Head::Classifier, 12);
  params = m.parameters();
  CHECK_FALSE(bytes_equal(*params[params.size() - 2].value, head_before));
  CHECK(bytes_equal(*params[0].value, conv1));

  // Round trip with the same seeds equals a direct layer init.
  m.swap_head(Head::Embedding, 13);
  params = m.parameters();
  const NetworkConfig c = tiny_config();
  const std::uint64_t head_layer = c.conv_channels.size() + c.linear_dims.size() - 1;
  Linear<float> fresh(c.linear_dims[c.linear_dims.size() - 2], c.embedding_dim(), mix_seed(13, head_layer));
  CHECK(bytes_equal(*params[params.size() - 2].value, fresh.weight));
  CHECK(bytes_equal(*params[params.size() - 1].value, fresh.bias));
}

TEST_CASE("adam first step") {
  Tensor2<float> w = Tensor2<float>::Zero(1, 1), g = Tensor2<float>::Ones(1, 1);
  std::vector<ParamRef<float>> p{{"w", &w, &g}};
  Adam<float> opt;
  opt.step(std::span<const ParamRef<float>>(p));
  CHECK(w(0, 0) == doctest::Approx(-1e-4 / (1 + 1e-8)).epsilon(1e-6));
  CHECK(opt.step_count() == 1);

  g.setZero();
  Tensor2<float> keep = w;
  Adam<float> fresh;
  fresh.step(std::span<const ParamRef<float>>(p));
  CHECK(w == keep);
  CHECK(fresh.step_count() == 1);

  g(0, 0) = NAN;
  CHECK_THROWS_AS(opt.step(std::span<const ParamRef<float>>(p)), std::runtime_error);
}

TEST_CASE("adam matches hand-evaluated recurrences over several steps") {
  Tensor2<double> w = Tensor2<double>::Constant(1, 1, 0.5), g(1, 1);
  std::vector<ParamRef<double>> p{{"w", &w, &g}};
  Adam<double> opt(AdamConfig{0.01, 0.9, 0.999, 1e-8});
  double m = 0, v = 0, ref = 0.5;
  const double grads[4] = {1.0, -2.0, 0.5, 3.0};
  for (int t = 1; t <= 4; ++t) {
    g(0, 0) = grads[t - 1];
    opt.step(std::span<const ParamRef<double>>(p));
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    ref -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
    CHECK(w(0, 0) == doctest::Approx(ref).epsilon(1e-12));
  }
}

TEST_CASE("training is bit-reproducible") {
  auto run = [] {
    Model m(tiny_config(), 4);
    Adam<float> opt;
    for (int s = 0; s < 3; ++s) {
      const auto y = m.forward(random_batch<float>(2, 4, 8, s));
      m.backward(y);
      opt.step(m);
    }
    return serialize_checkpoint(m);
  };
  CHECK(run() == run());
}

TEST_CASE("checkpoint round trip") {
  Model m(tiny_config(), 4);
  m.forward(random_batch<float>(2, 4, 8, 1));
  m.swap_head(Head::Classifier, 3);
  m.set_mode(Mode::Eval);
  const auto bytes = serialize_checkpoint(m);
  CHECK(bytes.compare(0, 4, "GMCK") == 0);
  Model back = deserialize_checkpoint(bytes);
  CHECK(back.config() == m.config());
  CHECK(back.head() == Head::Classifier);
  CHECK(back.mode() == Mode::Eval);
  CHECK(serialize_checkpoint(back) == bytes);
  const auto x = random_batch<float>(2, 2, 8, 3);
  CHECK(bytes_equal(back.infer(x), m.infer(x)));

  CHECK_THROWS_AS(deserialize_checkpoint("nope"), std::runtime_error);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes.substr(0, bytes.size() - 4)), std::runtime_error);
  CHECK_THROWS_AS(deserialize_checkpoint(bytes + "x"), std::runtime_error);
}
