#include <Eigen/Dense>
#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

#include "aot/data.hpp"
#include "aot/error.hpp"
#include "aot/generator.hpp"
#include "aot/metrics.hpp"

using namespace aot;
using testutil::random_tensor;

namespace {

Eigen::MatrixXd gaussian_features(int n, int d, std::uint64_t seed, double scale = 1.0) {
  Rng rng(seed);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd mix = Eigen::MatrixXd::Identity(d, d);
  for (int i = 0; i < d; ++i)
    for (int j = 0; j < d; ++j) mix(i, j) += 0.3 * g(rng);
  Eigen::MatrixXd m(n, d);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng) * scale;
  return m * mix;
}

}  // namespace

TEST_CASE("PSNR closed forms") {
  const Tensor x = random_tensor({2, 3, 8, 8}, 1, -0.5, 0.5);
  CHECK(psnr(x, x) == std::vector<double>{kPsnrCap, kPsnrCap});
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 0.2;  // 0.1 on the unit scale
  for (double p : psnr(x, shifted)) CHECK(p == doctest::Approx(20.0).epsilon(1e-9));
  CHECK(psnr(Tensor({1, 3, 4, 4}, -1.0), Tensor({1, 3, 4, 4}, 1.0))[0] == doctest::Approx(0.0));

  double last = kPsnrCap + 1;
  for (double d : {0.01, 0.05, 0.1, 0.3, 0.8}) {
    Tensor z = x;
    for (double& v : z.values()) v += d;
    const double p = psnr(x, z)[0];
    CHECK(p < last);
    last = p;
  }
}

TEST_CASE("SSIM closed forms") {
  const Tensor x = random_tensor({1, 3, 16, 16}, 2);
  CHECK(ssim(x, x)[0] == doctest::Approx(1.0).epsilon(1e-12));
  const double c1 = 1e-4;
  CHECK(ssim(Tensor({1, 3, 12, 12}, -1.0), Tensor({1, 3, 12, 12}, 1.0))[0] ==
        doctest::Approx(c1 / (1 + c1)).epsilon(1e-9));
  Tensor inverse = x;
  for (double& v : inverse.values()) v = -v;
  CHECK(ssim(x, inverse)[0] < 0.0);
  CHECK_THROWS(ssim(Tensor({1, 3, 10, 16}), Tensor({1, 3, 10, 16})));
}

TEST_CASE("SSIM matches the per-window oracle and stays in range") {
  for (std::uint64_t s = 0; s < 8; ++s) {
    const Tensor x = random_tensor({2, 3, 13 + static_cast<int>(s), 17}, s);
    Tensor z = random_tensor(x.shape(), s + 30);
    for (std::size_t i = 0; i < z.size(); ++i) z[i] = 0.6 * x[i] + 0.4 * z[i];
    const auto got = ssim(x, z);
    for (int n = 0; n < 2; ++n) {
      CHECK(got[n] == doctest::Approx(oracle::oracle_ssim(x, z, n)).epsilon(1e-10));
      CHECK(got[n] >= -1.0);
      CHECK(got[n] <= 1.0);
    }
  }
}

TEST_CASE("L1 error on the unit scale") {
  const Tensor x({1, 3, 4, 4}, 0.0);
  const Tensor z({1, 3, 4, 4}, 0.5);
  CHECK(l1_error(x, z)[0] == doctest::Approx(0.25));
  CHECK_THROWS_AS(l1_error(x, Tensor({1, 3, 4, 5})), ShapeError);
}

TEST_CASE("FID of identical sets is zero") {
  const Eigen::MatrixXd a = gaussian_features(200, 6, 1);
  const FidResult r = fid(a, a);
  CHECK(std::abs(r.value) < 1e-6);
  CHECK_FALSE(r.regularized);
  CHECK_FALSE(r.undersampled);

  // A rank-deficient set needs the ridge but still scores zero against itself.
  const Eigen::MatrixXd few = gaussian_features(3, 6, 2);
  const FidResult d = fid(few, few);
  CHECK(d.regularized);
  CHECK(d.undersampled);
  CHECK(std::abs(d.value) < 1e-6);
}

TEST_CASE("FID matches the Denman-Beavers oracle and is symmetric") {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const Eigen::MatrixXd a = gaussian_features(120, 5, s);
    Eigen::MatrixXd b = gaussian_features(150, 5, s + 100, 1.5);
    b.col(0).array() += 0.7;
    const double got = fid(a, b).value;
    CHECK(got == doctest::Approx(oracle::oracle_fid(a, b)).epsilon(1e-8));
    CHECK(std::abs(got - fid(b, a).value) < 1e-8);
    CHECK(got >= 0.0);
  }
}

TEST_CASE("FID of one-dimensional Gaussians approaches the closed form") {
  Rng rng(11);
  std::normal_distribution<double> a(0.5, 1.0);
  std::normal_distribution<double> b(2.0, 2.0);
  const int n = 10000;
  Eigen::MatrixXd ra(n, 1), rb(n, 1);
  for (int i = 0; i < n; ++i) {
    ra(i, 0) = a(rng);
    rb(i, 0) = b(rng);
  }
  // (0.5 - 2)^2 + (1 - 2)^2; sampling error of the moments is about 0.05.
  CHECK(fid(ra, rb).value == doctest::Approx(3.25).epsilon(0.05));
}

TEST_CASE("FID of mean-shifted copies is the squared shift") {
  const Eigen::MatrixXd a = gaussian_features(300, 4, 5);
  Eigen::MatrixXd b = a;
  const double delta[] = {0.5, -1.0, 0.25, 2.0};
  double expected = 0.0;
  for (int j = 0; j < 4; ++j) {
    b.col(j).array() += delta[j];
    expected += delta[j] * delta[j];
  }
  CHECK(fid(a, b).value == doctest::Approx(expected).epsilon(1e-8));
}

TEST_CASE("FID rejects mismatched inputs") {
  CHECK_THROWS_AS(fid(Eigen::MatrixXd(3, 2), Eigen::MatrixXd(3, 4)), Error);
  CHECK_THROWS_AS(fid(Eigen::MatrixXd(0, 2), Eigen::MatrixXd(3, 2)), Error);
}

TEST_CASE("evaluation protocol") {
  testutil::TempDir dir("metrics");
  testutil::write_corpus(dir.path, 10, 40, 36);
  const ImageSource data = ImageSource::scan(dir.path, 32);
  const FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  const auto buckets = parse_buckets("10-20%,30-40%");

  SUBCASE("identity inpainting scores perfectly") {
    const InpaintFn identity = [](const Tensor& image, const Tensor&) { return image; };
    const MetricsReport r = evaluate(identity, data, buckets, 3, fx);
    REQUIRE(r.rows.size() == 2);
    for (const auto& row : r.rows) {
      CHECK(row.samples == 10);
      CHECK(row.l1 == 0.0);
      CHECK(row.psnr == kPsnrCap);
      CHECK(row.ssim == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(std::abs(row.fid) < 1e-6);
    }
  }

  SUBCASE("constant gray inpainting matches a scalar reimplementation") {
    const InpaintFn gray = [](const Tensor& image, const Tensor&) { return Tensor(image.shape()); };
    const MetricsReport r = evaluate(gray, data, buckets, 7, fx);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      double l1 = 0, ps = 0, ss = 0;
      Eigen::MatrixXd real(10, 32), fake(10, 32);
      for (std::size_t i = 0; i < 10; ++i) {
        const Tensor x = data.load(i);
        const Tensor m = generate_free_form_mask(32, 32, buckets[b], eval_mask_seed(7, i, b));
        Tensor z = x;
        double abs_sum = 0, sq_sum = 0;
        for (int c = 0; c < 3; ++c)
          for (int y = 0; y < 32; ++y)
            for (int xx = 0; xx < 32; ++xx) {
              if (m.at(0, 0, y, xx) == 1.0) z.at(0, c, y, xx) = 0.0;
              const double d = (z.at(0, c, y, xx) - x.at(0, c, y, xx)) / 2;
              abs_sum += std::abs(d);
              sq_sum += d * d;
            }
        l1 += abs_sum / z.size();
        ps += 10 * std::log10(1.0 / (sq_sum / z.size()));
        ss += oracle::oracle_ssim(x, z, 0);
        const Tensor px = fx.pooled_features(x);
        const Tensor pz = fx.pooled_features(z);
        for (int k = 0; k < 32; ++k) {
          real(i, k) = px[k];
          fake(i, k) = pz[k];
        }
      }
      const MetricsRow& row = r.rows[b];
      CHECK(row.l1 == doctest::Approx(100 * l1 / 10).epsilon(1e-10));
      CHECK(row.psnr == doctest::Approx(ps / 10).epsilon(1e-10));
      CHECK(row.ssim == doctest::Approx(ss / 10).epsilon(1e-9));
      CHECK(row.fid_regularized);  // 10 samples in 32 dimensions
      CHECK(row.fid > 0.0);
    }
  }

  SUBCASE("reports are deterministic and seed dependent") {
    Generator g(GeneratorConfig::desk_scale(8), 1);
    const InpaintFn fn = [&](const Tensor& image, const Tensor& mask) {
      return g.infer(mask_image(image, mask), mask);
    };
    const std::string a = report_csv(evaluate(fn, data, buckets, 5, fx));
    const std::string b = report_csv(evaluate(fn, data, buckets, 5, fx));
    const std::string c = report_csv(evaluate(fn, data, buckets, 6, fx));
    CHECK(a == b);
    CHECK(a != c);
    CHECK(a.rfind("bucket,low,high,samples,l1_e-2,psnr,ssim,fid,fid_regularized\n", 0) == 0);
    const std::string table = report_table(evaluate(fn, data, buckets, 5, fx, 4));
    CHECK(table.find(fx.fingerprint()) != std::string::npos);
    CHECK(table.find("10-20%") != std::string::npos);
  }

  SUBCASE("empty inputs are errors") {
    const InpaintFn identity = [](const Tensor& image, const Tensor&) { return image; };
    CHECK_THROWS_AS(evaluate(identity, data, {}, 1, fx), Error);
  }
}
