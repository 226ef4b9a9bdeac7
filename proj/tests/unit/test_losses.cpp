#include <Eigen/Dense>
#include <limits>

#include "doctest.h"
#include "test_util.hpp"

#include "aot/archive.hpp"
#include "aot/error.hpp"
#include "aot/losses.hpp"

using namespace aot;
using testutil::random_tensor;
using testutil::rel_err;

namespace {

// Independent VGG-style forward: direct 3x3 convolutions, rectifiers and 2x2
// pooling driven only by the extractor's exported parameters.
std::vector<Tensor> oracle_taps(FeatureExtractor& fx, const Tensor& image, int convs_needed) {
  const double mean[3] = {0.485, 0.456, 0.406};
  const double stdev[3] = {0.229, 0.224, 0.225};
  Tensor h(image.shape());
  for (int n = 0; n < image.n(); ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < image.h(); ++y)
        for (int x = 0; x < image.w(); ++x)
          h.at(n, c, y, x) = ((image.at(n, c, y, x) + 1) / 2 - mean[c]) / stdev[c];

  const auto params = fx.parameters();
  // Convolutions per stage before each pool in VGG19.
  const int per_stage[] = {2, 2, 4, 4, 4};
  std::vector<Tensor> taps;
  std::size_t p = 0;
  int done = 0;
  for (int stage = 0; stage < 5 && done < convs_needed; ++stage) {
    if (stage > 0) {
      Tensor pooled({h.n(), h.c(), h.h() / 2, h.w() / 2});
      for (int n = 0; n < h.n(); ++n)
        for (int c = 0; c < h.c(); ++c)
          for (int y = 0; y < pooled.h(); ++y)
            for (int x = 0; x < pooled.w(); ++x)
              pooled.at(n, c, y, x) =
                  std::max({h.at(n, c, 2 * y, 2 * x), h.at(n, c, 2 * y + 1, 2 * x),
                            h.at(n, c, 2 * y, 2 * x + 1), h.at(n, c, 2 * y + 1, 2 * x + 1)});
      h = pooled;
    }
    for (int k = 0; k < per_stage[stage] && done < convs_needed; ++k, ++done) {
      const Tensor& w = params[p++].param->value;
      const Tensor& b = params[p++].param->value;
      Tensor out({h.n(), w.n(), h.h(), h.w()});
      for (int n = 0; n < h.n(); ++n)
        for (int o = 0; o < w.n(); ++o)
          for (int y = 0; y < h.h(); ++y)
            for (int x = 0; x < h.w(); ++x) {
              double acc = b[o];
              for (int c = 0; c < h.c(); ++c)
                for (int i = 0; i < 3; ++i)
                  for (int j = 0; j < 3; ++j) {
                    const int yy = y + i - 1;
                    const int xx = x + j - 1;
                    if (yy >= 0 && xx >= 0 && yy < h.h() && xx < h.w()) {
                      acc += w.at(o, c, i, j) * h.at(n, c, yy, xx);
                    }
                  }
              out.at(n, o, y, x) = std::max(acc, 0.0);
            }
      h = out;
      if (k == 0) taps.push_back(h);
    }
  }
  return taps;
}

double oracle_perceptual(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a[t].size(); ++i) acc += std::abs(a[t][i] - b[t][i]);
    total += acc / static_cast<double>(a[t].size());
  }
  return total;
}

// Gram via explicit triple loop.
Eigen::MatrixXd oracle_gram(const Tensor& f, int n) {
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(f.c(), f.c());
  for (int a = 0; a < f.c(); ++a)
    for (int b = 0; b < f.c(); ++b)
      for (int y = 0; y < f.h(); ++y)
        for (int x = 0; x < f.w(); ++x) g(a, b) += f.at(n, a, y, x) * f.at(n, b, y, x);
  return g / (static_cast<double>(f.c()) * f.h() * f.w());
}

double oracle_style(const std::vector<Tensor>& a, const std::vector<Tensor>& b) {
  double total = 0.0;
  for (std::size_t t = 0; t < a.size(); ++t) {
    double acc = 0.0;
    for (int n = 0; n < a[t].n(); ++n) acc += (oracle_gram(a[t], n) - oracle_gram(b[t], n)).cwiseAbs().sum();
    total += acc / (static_cast<double>(a[t].n()) * a[t].c() * a[t].c());
  }
  return total / static_cast<double>(a.size());
}

}  // namespace

TEST_CASE("l1_rec worked examples") {
  const Tensor x = random_tensor({2, 3, 4, 4}, 1);
  CHECK(l1_rec(x, x) == 0.0);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 0.5;
  CHECK(l1_rec(x, shifted) == doctest::Approx(0.5).epsilon(1e-15));
  Tensor a({1, 1, 1, 2});
  a[0] = -1;
  a[1] = 1;
  CHECK(l1_rec(a, Tensor({1, 1, 1, 2})) == 1.0);
  CHECK_THROWS_AS(l1_rec(x, Tensor({2, 3, 4, 5})), ShapeError);

  Tensor g = random_tensor({1, 3, 5, 5}, 2);
  const Tensor target = random_tensor({1, 3, 5, 5}, 3);
  const Tensor grad = l1_rec_grad(target, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    CHECK(rel_err(grad[i], testutil::numeric_grad([&] { return l1_rec(target, g); }, g[i])) < 1e-6);
  }
}

TEST_CASE("gram worked examples") {
  CHECK(max_abs_diff(gram(Tensor({1, 3, 2, 2})), Tensor({1, 1, 3, 3})) == 0.0);
  CHECK(gram(Tensor({1, 1, 2, 2}, 1.0))[0] == 1.0);
  Tensor onehot({1, 2, 1, 2});
  onehot.at(0, 0, 0, 0) = 1.0;
  onehot.at(0, 1, 0, 1) = 1.0;
  const Tensor g = gram(onehot);
  CHECK(g.at(0, 0, 0, 1) == 0.0);
  CHECK(g.at(0, 0, 1, 0) == 0.0);
  CHECK(g.at(0, 0, 0, 0) == 0.25);
}

TEST_CASE("gram is symmetric positive semidefinite and matches the triple loop") {
  for (std::uint64_t s = 0; s < 30; ++s) {
    Rng rng(s);
    const int c = std::uniform_int_distribution<int>(1, 9)(rng);
    const int h = std::uniform_int_distribution<int>(1, 6)(rng);
    const int w = std::uniform_int_distribution<int>(1, 6)(rng);
    const Tensor f = random_tensor({2, c, h, w}, s + 100);
    const Tensor g = gram(f);
    for (int n = 0; n < 2; ++n) {
      Eigen::MatrixXd m(c, c);
      for (int a = 0; a < c; ++a)
        for (int b = 0; b < c; ++b) m(a, b) = g.at(n, 0, a, b);
      CHECK((m - m.transpose()).cwiseAbs().maxCoeff() < 1e-15);
      CHECK((m - oracle_gram(f, n)).cwiseAbs().maxCoeff() < 1e-12);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m);
      CHECK(eig.eigenvalues().minCoeff() >= -1e-8);
    }
  }
}

TEST_CASE("gram backward matches finite differences") {
  Tensor f = random_tensor({2, 3, 2, 3}, 1);
  const Tensor r = random_tensor({2, 1, 3, 3}, 2);
  const Tensor grad = gram_backward(f, r);
  for (std::size_t i = 0; i < f.size(); ++i) {
    const double fd = testutil::numeric_grad([&] { return testutil::dot(r, gram(f)); }, f[i]);
    CHECK(rel_err(grad[i], fd) < 1e-6);
  }
}

TEST_CASE("identity tap reduces perceptual loss to reconstruction loss") {
  const FeatureExtractor fx = FeatureExtractor::identity();
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Tensor x = random_tensor({2, 3, 6, 7}, s);
    const Tensor z = random_tensor({2, 3, 6, 7}, s + 50);
    CHECK(perceptual(x, z, fx) == doctest::Approx(l1_rec(x, z)).epsilon(1e-14));
  }
}

TEST_CASE("style with identity tap on 2x2 features by hand") {
  // x channels: [1,0,0,1] and [0,1,1,0]; z channels: [1,1,1,1] and [0,0,0,0].
  Tensor x({1, 3, 2, 2});
  Tensor z({1, 3, 2, 2});
  const double xa[] = {1, 0, 0, 1, 0, 1, 1, 0, 0, 0, 0, 0};
  const double za[] = {1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0, 0};
  for (int i = 0; i < 12; ++i) {
    x[i] = xa[i];
    z[i] = za[i];
  }
  // gram(x) = [[2,0,0],[0,2,0],[0,0,0]]/12, gram(z) = [[4,0,0],[0,0,0],[0,0,0]]/12.
  // Absolute differences sum to 4/12 over 9 entries.
  CHECK(style(x, z, FeatureExtractor::identity()) == doctest::Approx(4.0 / 12.0 / 9.0).epsilon(1e-15));
}

TEST_CASE("losses vanish at their fixed points and are nonnegative") {
  FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  for (std::uint64_t s = 0; s < 5; ++s) {
    const Tensor x = random_tensor({1, 3, 16, 16}, s);
    const Tensor z = random_tensor({1, 3, 16, 16}, s + 7);
    CHECK(perceptual(x, x, fx) == 0.0);
    CHECK(style(x, x, fx) == 0.0);
    CHECK(perceptual(x, z, fx) > 0.0);
    CHECK(style(x, z, fx) > 0.0);
  }
}

TEST_CASE("fixed random extractor matches the direct oracle") {
  FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  CHECK(fx.taps().size() == 5);
  CHECK(fx.min_resolution() == 16);
  const Tensor x = random_tensor({2, 3, 16, 16}, 1);
  const Tensor z = random_tensor({2, 3, 16, 16}, 2);
  const auto ox = oracle_taps(fx, x, 13);
  const auto oz = oracle_taps(fx, z, 13);
  const auto tx = fx.infer(x);
  REQUIRE(ox.size() == tx.size());
  for (std::size_t t = 0; t < tx.size(); ++t) {
    CHECK(tx[t].shape() == ox[t].shape());
    CHECK(max_abs_diff(tx[t], ox[t]) < 1e-10);
  }
  CHECK(perceptual(x, z, fx) == doctest::Approx(oracle_perceptual(ox, oz)).epsilon(1e-10));
  CHECK(style(x, z, fx) == doctest::Approx(oracle_style(ox, oz)).epsilon(1e-10));
}

TEST_CASE("extractor rejects small or non-RGB inputs and bad taps") {
  const FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  CHECK_THROWS_AS(fx.infer(Tensor({1, 3, 8, 16})), ShapeError);
  CHECK_THROWS_AS(fx.infer(Tensor({1, 1, 16, 16})), ShapeError);
  CHECK_THROWS_AS(FeatureExtractor::fixed_random(1, 16, {"relu9_1"}), ConfigError);
  CHECK_THROWS_AS(FeatureExtractor::fixed_random(1, 16, {"conv1_1"}), ConfigError);
  CHECK_THROWS_AS(FeatureExtractor::fixed_random(1, 16, {"relu2_1", "relu1_1"}), ConfigError);
  const FeatureExtractor shallow = FeatureExtractor::fixed_random(1, 16, {"relu1_1", "relu2_1"});
  CHECK(shallow.min_resolution() == 2);
}

TEST_CASE("perceptual and style gradients match finite differences") {
  FeatureExtractor fx = FeatureExtractor::fixed_random(3, 16);
  const Tensor x = random_tensor({1, 3, 16, 16}, 1);
  Tensor z = random_tensor({1, 3, 16, 16}, 2);
  const auto ax = fx.infer(x);

  fx.forward(z);
  const Tensor gp = fx.backward(perceptual_from_features(ax, fx.forward(z)).tap_grads);
  fx.forward(z);
  const Tensor gs = fx.backward(style_from_features(ax, fx.forward(z)).tap_grads);

  Rng rng(4);
  for (int s = 0; s < 40; ++s) {
    const auto i = std::uniform_int_distribution<std::size_t>(0, z.size() - 1)(rng);
    const double fp = testutil::numeric_grad([&] { return perceptual(x, z, fx); }, z[i], 1e-6);
    const double fs = testutil::numeric_grad([&] { return style(x, z, fx); }, z[i], 1e-6);
    INFO("index " << i);
    CHECK(rel_err(gp[i], fp, 1e-8) < 1e-4);
    CHECK(rel_err(gs[i], fs, 1e-10) < 1e-4);
  }
}

TEST_CASE("extractor is frozen") {
  FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  const std::string before = fx.fingerprint();
  for (int i = 0; i < 3; ++i) {
    const auto taps = fx.forward(random_tensor({1, 3, 16, 16}, i));
    std::vector<Tensor> grads;
    for (const auto& t : taps) grads.push_back(Tensor(t.shape(), 1.0));
    fx.backward(grads);
  }
  CHECK(fx.fingerprint() == before);
  for (const auto& p : fx.parameters()) {
    CHECK(max_abs_diff(p.param->grad, Tensor(p.param->grad.shape())) == 0.0);
  }
  CHECK(FeatureExtractor::fixed_random(1, 16).fingerprint() == before);
  CHECK(FeatureExtractor::fixed_random(2, 16).fingerprint() != before);
}

TEST_CASE("extractor archive round trip") {
  FeatureExtractor fx = FeatureExtractor::fixed_random(5, 16);
  const Archive a = fx.export_weights();
  CHECK(a.metadata["format"] == "aot-extractor");
  const auto* w0 = a.find("features.0.weight");
  REQUIRE(w0 != nullptr);
  CHECK(w0->dims == std::vector<std::uint64_t>{4, 3, 3, 3});
  CHECK(w0->dtype == DType::kFloat32);
  REQUIRE(a.find("features.0.bias") != nullptr);
  CHECK(a.find("features.0.bias")->dims == std::vector<std::uint64_t>{4});
  // relu5_1 follows conv5_1 at torchvision index 28.
  CHECK(a.find("features.28.weight") != nullptr);
  CHECK(a.find("features.30.weight") == nullptr);

  const FeatureExtractor back = FeatureExtractor::from_archive(parse_archive(serialize_archive(a)));
  CHECK(back.source() == ExtractorSource::kPretrainedFile);
  const Tensor x = random_tensor({1, 3, 16, 16}, 9);
  const auto t1 = fx.infer(x);
  const auto t2 = back.infer(x);
  for (std::size_t t = 0; t < t1.size(); ++t) {
    // Weights pass through float32.
    CHECK(max_abs_diff(t1[t], t2[t]) < 1e-4);
  }

  Archive broken = a;
  broken.tensors[0].values.pop_back();
  broken.tensors[0].dims = {4, 3, 3, 2};
  CHECK_THROWS_AS(FeatureExtractor::from_archive(broken), Error);
}

TEST_CASE("total loss weighting") {
  const LossWeights w;
  CHECK(w.lambda_adv == 0.01);
  CHECK(w.lambda_rec == 1.0);
  CHECK(w.lambda_per == 0.1);
  CHECK(w.lambda_sty == 250.0);
  CHECK(total_loss({1, 1, 1, 1}, w) == 251.11);
  CHECK(total_loss({0, 0, 0, 0}, w) == 0.0);
  CHECK(total_loss({3, 4, 5, 6}, LossWeights{0, 0, 0, 0}) == 0.0);
  CHECK(total_loss({0, 2, 0, 0}, w) == 2.0);
  CHECK_THROWS_AS((LossWeights{-1, 1, 1, 1}.validate()), ConfigError);
}

TEST_CASE("non-finite components raise a divergence error") {
  const double nan = std::numeric_limits<double>::quiet_NaN();
  const double inf = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(total_loss({nan, 0, 0, 0}, LossWeights{}), DivergenceError);
  CHECK_THROWS_AS(total_loss({0, 0, 0, inf}, LossWeights{0, 0, 0, 0}), DivergenceError);
  try {
    total_loss({0, nan, 0, 0}, LossWeights{}, 42);
    FAIL("expected a divergence error");
  } catch (const DivergenceError& e) {
    CHECK(e.step() == 42);
    CHECK(std::string(e.what()).find("42") != std::string::npos);
  }
}
