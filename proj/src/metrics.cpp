#include "aot/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <Eigen/Eigenvalues>

#include "aot/error.hpp"
#include "aot/generator.hpp"
#include "aot/nn.hpp"

namespace aot {

namespace {

constexpr double kFidEpsilon = 1e-6;

double to_unit(double v) { return (v + 1.0) * 0.5; }

void check_pair(const Tensor& x, const Tensor& z, const char* what) {
  require_same_shape(x, z, what);
  if (x.empty()) throw Error(ErrorCode::kInvalidArgument, std::string(what) + ": empty input");
}

std::vector<double> gaussian_window(int size, double sigma) {
  std::vector<double> w(size);
  const double centre = (size - 1) / 2.0;
  double total = 0.0;
  for (int i = 0; i < size; ++i) {
    const double d = i - centre;
    w[i] = std::exp(-d * d / (2.0 * sigma * sigma));
    total += w[i];
  }
  for (double& v : w) v /= total;
  return w;
}

// Valid-mode separable filtering of one plane.
std::vector<double> filter_valid(const double* src, int h, int w, const std::vector<double>& k) {
  const int n = static_cast<int>(k.size());
  const int oh = h - n + 1;
  const int ow = w - n + 1;
  std::vector<double> rows(static_cast<std::size_t>(h) * ow);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * src[y * w + x + i];
      rows[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int y = 0; y < oh; ++y) {
    for (int x = 0; x < ow; ++x) {
      double acc = 0.0;
      for (int i = 0; i < n; ++i) acc += k[i] * rows[static_cast<std::size_t>(y + i) * ow + x];
      out[static_cast<std::size_t>(y) * ow + x] = acc;
    }
  }
  return out;
}

// Symmetric PSD square root with negative eigenvalues clipped to zero.
Eigen::MatrixXd sqrt_psd(const Eigen::MatrixXd& a) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (a + a.transpose()));
  const Eigen::VectorXd ev = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

bool degenerate(const Eigen::MatrixXd& cov) {
  if (cov.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(cov, Eigen::EigenvaluesOnly);
  const double top = std::max(1.0, es.eigenvalues().cwiseAbs().maxCoeff());
  return es.eigenvalues().minCoeff() <= 1e-12 * top;
}

void covariance(const Eigen::MatrixXd& feats, Eigen::VectorXd& mu, Eigen::MatrixXd& cov) {
  mu = feats.colwise().mean().transpose();
  const Eigen::MatrixXd centred = feats.rowwise() - mu.transpose();
  const double denom = feats.rows() > 1 ? static_cast<double>(feats.rows() - 1) : 1.0;
  cov = centred.transpose() * centred / denom;
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.6f", v);
  return buf;
}

}  // namespace

std::vector<double> psnr(const Tensor& x, const Tensor& z) {
  check_pair(x, z, "psnr");
  std::vector<double> out;
  const std::size_t per = x.sample_size();
  for (int n = 0; n < x.n(); ++n) {
    const double* a = x.sample(n);
    const double* b = z.sample(n);
    double se = 0.0;
    for (std::size_t i = 0; i < per; ++i) {
      const double d = to_unit(a[i]) - to_unit(b[i]);
      se += d * d;
    }
    const double mse = se / static_cast<double>(per);
    out.push_back(mse == 0.0 ? kPsnrCap : std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse)));
  }
  return out;
}

std::vector<double> ssim(const Tensor& x, const Tensor& z, const SsimOptions& opt) {
  check_pair(x, z, "ssim");
  if (x.h() < opt.window || x.w() < opt.window) {
    throw ShapeError("ssim: image " + x.shape().str() + " is smaller than the " +
                     std::to_string(opt.window) + "px window");
  }
  const auto k = gaussian_window(opt.window, opt.sigma);
  const int h = x.h();
  const int w = x.w();
  const std::size_t plane = x.shape().plane();
  std::vector<double> out;
  std::vector<double> a(plane), b(plane), aa(plane), bb(plane), ab(plane);
  for (int n = 0; n < x.n(); ++n) {
    double channel_total = 0.0;
    for (int c = 0; c < x.c(); ++c) {
      const std::size_t off = (static_cast<std::size_t>(n) * x.c() + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        a[i] = to_unit(x[off + i]);
        b[i] = to_unit(z[off + i]);
        aa[i] = a[i] * a[i];
        bb[i] = b[i] * b[i];
        ab[i] = a[i] * b[i];
      }
      const auto mu_a = filter_valid(a.data(), h, w, k);
      const auto mu_b = filter_valid(b.data(), h, w, k);
      const auto e_aa = filter_valid(aa.data(), h, w, k);
      const auto e_bb = filter_valid(bb.data(), h, w, k);
      const auto e_ab = filter_valid(ab.data(), h, w, k);
      double total = 0.0;
      for (std::size_t i = 0; i < mu_a.size(); ++i) {
        const double va = e_aa[i] - mu_a[i] * mu_a[i];
        const double vb = e_bb[i] - mu_b[i] * mu_b[i];
        const double cov = e_ab[i] - mu_a[i] * mu_b[i];
        const double num = (2 * mu_a[i] * mu_b[i] + opt.c1) * (2 * cov + opt.c2);
        const double den = (mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + opt.c1) * (va + vb + opt.c2);
        total += num / den;
      }
      channel_total += total / static_cast<double>(mu_a.size());
    }
    out.push_back(channel_total / x.c());
  }
  return out;
}

std::vector<double> l1_error(const Tensor& x, const Tensor& z) {
  check_pair(x, z, "l1_error");
  std::vector<double> out;
  const std::size_t per = x.sample_size();
  for (int n = 0; n < x.n(); ++n) {
    const double* a = x.sample(n);
    const double* b = z.sample(n);
    double acc = 0.0;
    for (std::size_t i = 0; i < per; ++i) acc += std::abs(to_unit(a[i]) - to_unit(b[i]));
    out.push_back(acc / static_cast<double>(per));
  }
  return out;
}

FidResult fid(const Eigen::MatrixXd& real, const Eigen::MatrixXd& fake) {
  if (real.rows() == 0 || fake.rows() == 0 || real.cols() != fake.cols()) {
    throw Error(ErrorCode::kInvalidArgument, "fid: feature sets must be non-empty with equal width");
  }
  FidResult result;
  const auto d = real.cols();
  result.undersampled = real.rows() <= d || fake.rows() <= d;

  Eigen::VectorXd mu_r, mu_f;
  Eigen::MatrixXd cov_r, cov_f;
  covariance(real, mu_r, cov_r);
  covariance(fake, mu_f, cov_f);
  if (degenerate(cov_r) || degenerate(cov_f)) {
    // Same ridge on both sides keeps identical sets at exactly zero distance.
    cov_r += kFidEpsilon * Eigen::MatrixXd::Identity(d, d);
    cov_f += kFidEpsilon * Eigen::MatrixXd::Identity(d, d);
    result.regularized = true;
  }

  const Eigen::MatrixXd s = sqrt_psd(cov_r);
  const Eigen::MatrixXd inner = s * cov_f * s;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()),
                                                    Eigen::EigenvaluesOnly);
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu_r - mu_f).squaredNorm() + cov_r.trace() + cov_f.trace() - 2.0 * tr_sqrt;
  result.value = std::max(0.0, value);
  return result;
}

std::uint64_t eval_mask_seed(std::uint64_t seed, std::size_t index, std::size_t bucket_index) {
  return mix_seed(seed, index, bucket_index);
}

MetricsReport evaluate(const InpaintFn& inpaint_fn, const ImageSource& dataset,
                       const std::vector<RatioBucket>& buckets, std::uint64_t seed,
                       const FeatureExtractor& extractor, std::size_t max_images) {
  if (dataset.empty()) throw Error(ErrorCode::kNotFound, "evaluation set is empty");
  if (buckets.empty()) throw Error(ErrorCode::kInvalidArgument, "no evaluation buckets");
  for (const auto& b : buckets) b.validate();
  const std::size_t count = max_images > 0 ? std::min(max_images, dataset.size()) : dataset.size();

  struct Acc {
    double l1 = 0, psnr = 0, ssim = 0;
    std::vector<Eigen::VectorXd> real, fake;
  };
  std::vector<Acc> acc(buckets.size());

  auto pooled = [&](const Tensor& img) {
    const Tensor f = extractor.pooled_features(img);
    return Eigen::VectorXd(Eigen::Map<const Eigen::VectorXd>(f.data(), static_cast<Eigen::Index>(f.size())));
  };

  for (std::size_t i = 0; i < count; ++i) {
    const Tensor image = dataset.load(i);
    const Eigen::VectorXd real_feat = pooled(image);
    for (std::size_t b = 0; b < buckets.size(); ++b) {
      const Tensor mask = generate_free_form_mask(image.h(), image.w(), buckets[b],
                                                  eval_mask_seed(seed, i, b));
      const Tensor z = compose(image, inpaint_fn(image, mask), mask);
      acc[b].l1 += l1_error(image, z)[0];
      acc[b].psnr += psnr(image, z)[0];
      acc[b].ssim += ssim(image, z)[0];
      acc[b].real.push_back(real_feat);
      acc[b].fake.push_back(pooled(z));
    }
  }

  MetricsReport report;
  report.extractor_fingerprint = extractor.fingerprint();
  report.seed = seed;
  const double n = static_cast<double>(count);
  for (std::size_t b = 0; b < buckets.size(); ++b) {
    const auto dim = acc[b].real.front().size();
    Eigen::MatrixXd real(count, dim), fake(count, dim);
    for (std::size_t i = 0; i < count; ++i) {
      real.row(i) = acc[b].real[i].transpose();
      fake.row(i) = acc[b].fake[i].transpose();
    }
    const FidResult f = fid(real, fake);
    report.rows.push_back({buckets[b], count, 100.0 * acc[b].l1 / n, acc[b].psnr / n,
                           acc[b].ssim / n, f.value, f.regularized});
  }
  return report;
}

std::string report_csv(const MetricsReport& report) {
  std::string out = "bucket,low,high,samples,l1_e-2,psnr,ssim,fid,fid_regularized\n";
  for (const auto& r : report.rows) {
    out += r.bucket.label() + "," + fmt(r.bucket.low) + "," + fmt(r.bucket.high) + "," +
           std::to_string(r.samples) + "," + fmt(r.l1) + "," + fmt(r.psnr) + "," + fmt(r.ssim) +
           "," + fmt(r.fid) + "," + (r.fid_regularized ? "1" : "0") + "\n";
  }
  return out;
}

std::string report_table(const MetricsReport& report) {
  char buf[64];
  std::string out = "# extractor " + report.extractor_fingerprint + ", seed " +
                    std::to_string(report.seed) + "\n";
  std::snprintf(buf, sizeof buf, "%-10s", "metric");
  out += buf;
  for (const auto& r : report.rows) {
    std::snprintf(buf, sizeof buf, "%12s", r.bucket.label().c_str());
    out += buf;
  }
  out += "\n";
  auto line = [&](const char* name, auto get) {
    std::snprintf(buf, sizeof buf, "%-10s", name);
    out += buf;
    for (const auto& r : report.rows) {
      std::snprintf(buf, sizeof buf, "%12.4f", get(r));
      out += buf;
    }
    out += "\n";
  };
  line("L1(1e-2)", [](const MetricsRow& r) { return r.l1; });
  line("PSNR", [](const MetricsRow& r) { return r.psnr; });
  line("SSIM", [](const MetricsRow& r) { return r.ssim; });
  line("FID", [](const MetricsRow& r) { return r.fid; });
  return out;
}

}  // namespace aot
