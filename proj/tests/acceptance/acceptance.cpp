// Acceptance gate: one PASS/FAIL line per headline property.
//
//   acceptance            run everything
//   acceptance --only 3,7 run a subset
//
// Exit status is the number of failing checks.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

#include "aot/archive.hpp"
#include "aot/data.hpp"
#include "aot/discriminator.hpp"
#include "aot/error.hpp"
#include "aot/generator.hpp"
#include "aot/losses.hpp"
#include "aot/masks.hpp"
#include "aot/metrics.hpp"
#include "aot/trainer.hpp"

using namespace aot;
using testutil::numeric_grad;
using testutil::random_tensor;
using testutil::rel_err;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

struct Check {
  int id;
  const char* name;
  std::function<Outcome()> run;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

// Small model for checks that only need the plumbing to run.
AppConfig toy_config() {
  AppConfig c = AppConfig::preset_named("desk");
  c.apply_override(R"(generator={"base_width": 8, "block": {"width": 8}})");
  c.discriminator.base_channels = 4;
  c.extractor.width_divisor = 16;
  c.train.image_size = 32;
  c.train.batch_size = 2;
  c.train.seed = 5;
  return c;
}

Outcome composition_identity() {
  Generator gen(GeneratorConfig::desk_scale(8), 3);
  const auto buckets = standard_buckets();
  Rng rng(2024);
  long mismatched = 0;
  long known = 0;
  for (int pair = 0; pair < 100; ++pair) {
    const int h = 4 * std::uniform_int_distribution<int>(16, 64)(rng);
    const int w = 4 * std::uniform_int_distribution<int>(16, 64)(rng);
    Tensor x = random_tensor({1, 3, h, w}, 10'000 + pair);
    // Saturated pixels are where clamping bugs would show.
    for (std::size_t i = 0; i < x.size(); i += 7) x[i] = (i % 2) ? 1.0 : -1.0;
    const Tensor m = pair % 2 ? generate_free_form_mask(h, w, buckets[pair % buckets.size()], pair)
                              : testutil::random_mask({1, 1, h, w}, 20'000 + pair, 0.4);
    const Tensor z = inpaint(gen, x, m);
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < h; ++y)
        for (int xx = 0; xx < w; ++xx)
          if (m.at(0, 0, y, xx) == 0.0) {
            ++known;
            mismatched += z.at(0, c, y, xx) != x.at(0, c, y, xx);
          }
  }
  return {mismatched == 0, fmt("100 pairs, %ld known values, %ld differ", known, mismatched)};
}

Outcome gated_fixed_points() {
  long bad = 0;
  for (std::uint64_t s = 0; s < 20; ++s) {
    const Tensor x1 = random_tensor({2, 8, 9, 7}, s, -5, 5);
    const Tensor x2 = random_tensor({2, 8, 9, 7}, s + 100, -5, 5);
    bad += max_abs_diff(gated_residual(x1, x2, Tensor(x1.shape(), 1.0)), x1) != 0.0;
    bad += max_abs_diff(gated_residual(x1, x2, Tensor(x1.shape(), 0.0)), x2) != 0.0;
  }

  // Same property through a real block: saturate the gate via its bias.
  Rng rng(9);
  AotBlockConfig bc;
  bc.width = 8;
  AotBlock block(bc, rng);
  const Tensor x = random_tensor({1, 8, 12, 12}, 7);
  ReLU relu;
  std::vector<Tensor> parts;
  for (std::size_t i = 0; i < bc.rates.size(); ++i) parts.push_back(relu.infer(block.branch(i).infer(x)));
  const Tensor x2 = relu.infer(block.fuse().infer(concat_channels(parts)));
  Conv2d* gate = block.gate_conv();
  std::vector<ParamRef> gp;
  gate->collect_parameters("", gp);
  for (double bias : {1000.0, -1000.0}) {
    for (auto& p : gp) {
      const bool is_bias = p.name.find("bias") != std::string::npos;
      for (double& v : p.param->value.values()) v = is_bias ? bias : 0.0;
    }
    bad += max_abs_diff(block.infer(x), bias > 0 ? x : x2) != 0.0;
  }
  return {bad == 0, fmt("42 cases (40 direct, 2 through a saturated block), %ld inexact", bad)};
}

Outcome parameter_parity() {
  int bad = 0;
  std::string counts;
  for (int width : {64, 128, 256}) {
    for (int branches : {1, 2, 4}) {
      AotBlockConfig c;
      c.width = width;
      c.rates.clear();
      for (int i = 0; i < branches; ++i) c.rates.push_back(1 << i);
      Rng rng(1);
      AotBlock block(c, rng);
      Conv2d undivided({width, width, 3, 1, 1, 1}, rng);
      std::vector<ParamRef> ref;
      undivided.collect_parameters("", ref);
      const std::size_t split = parameter_count(block.branch_parameters());
      const auto closed = static_cast<std::size_t>(9 * width * width + width);
      bad += split != parameter_count(ref) || split != closed;
    }
    counts += (counts.empty() ? "" : ", ") + std::to_string(9 * width * width + width);
  }
  return {bad == 0, fmt("9 (width, branches) combos, %d mismatched; counts %s", bad, counts.c_str())};
}

Outcome sigma_oracle() {
  double worst = 0.0;
  int masks = 0;
  Rng rng(31);
  std::vector<Tensor> cases = {Tensor({1, 1, 128, 128}), Tensor({1, 1, 128, 128}, 1.0)};
  for (int t = 0; t < 14; ++t) {
    const int h = 16 * std::uniform_int_distribution<int>(1, 8)(rng);
    const int w = 16 * std::uniform_int_distribution<int>(1, 8)(rng);
    cases.push_back(t % 2 ? testutil::random_blob_mask(h, w, 300 + t)
                          : generate_free_form_mask(h, w, standard_buckets()[t % 6], 400 + t));
  }
  for (const Tensor& m : cases) {
    worst = std::max(worst, max_abs_diff(soft_patch_label(m, 16), oracle::dense_soft_label(m, 16, 70, 0)));
    ++masks;
  }

  long violations = 0;
  for (int t = 0; t < 200; ++t) {
    const int h = 16 * std::uniform_int_distribution<int>(2, 8)(rng);
    const int w = 16 * std::uniform_int_distribution<int>(2, 8)(rng);
    const Tensor a = testutil::random_blob_mask(h, w, 1000 + t, 2);
    const Tensor extra = testutil::random_blob_mask(h, w, 5000 + t, 3);
    Tensor b = a;
    for (std::size_t i = 0; i < b.size(); ++i) b[i] = std::max(a[i], extra[i]);
    const Tensor la = soft_patch_label(a, 16);
    const Tensor lb = soft_patch_label(b, 16);
    for (std::size_t i = 0; i < la.size(); ++i) violations += la[i] < lb[i] - 1e-12 || la[i] < 0 || la[i] > 1;
  }
  return {worst < 1e-6 && violations == 0,
          fmt("%d masks up to 128x128, max error %.2e; 200 nested pairs, %ld violations", masks, worst, violations)};
}

Outcome loss_fixed_points_and_gradients() {
  std::vector<std::string> failures;
  const Tensor mask = testutil::random_blob_mask(64, 64, 4);
  const Tensor label = soft_patch_label(mask, 16);
  const Tensor weight = adversarial_weight(mask, 16);
  FeatureExtractor fx = FeatureExtractor::fixed_random(3, 16);
  const Tensor x = random_tensor({1, 3, 16, 16}, 1);

  if (d_loss(label, Tensor(label.shape(), 1.0), label) != 0.0) failures.push_back("d_loss fixed point");
  if (g_adv_loss(Tensor(weight.shape(), 1.0), weight) != 0.0) failures.push_back("g_adv fixed point");
  if (l1_rec(x, x) != 0.0) failures.push_back("rec fixed point");
  if (perceptual(x, x, fx) != 0.0) failures.push_back("perceptual fixed point");
  if (style(x, x, fx) != 0.0) failures.push_back("style fixed point");

  double worst_adv = 0.0;
  Tensor fake = random_tensor(label.shape(), 2, -2, 2);
  Tensor real = random_tensor(label.shape(), 3, -2, 2);
  const DLoss dl = d_loss_with_grad(fake, real, label);
  const GAdvLoss gl = g_adv_loss_with_grad(fake, weight);
  for (std::size_t i = 0; i < fake.size(); ++i) {
    worst_adv = std::max(worst_adv, rel_err(dl.grad_fake[i], numeric_grad([&] { return d_loss(fake, real, label); }, fake[i])));
    worst_adv = std::max(worst_adv, rel_err(dl.grad_real[i], numeric_grad([&] { return d_loss(fake, real, label); }, real[i])));
    worst_adv = std::max(worst_adv, rel_err(gl.grad_fake[i], numeric_grad([&] { return g_adv_loss(fake, weight); }, fake[i])));
  }
  if (worst_adv >= 1e-6) failures.push_back("adversarial gradients");

  double worst = 0.0;
  Tensor g = random_tensor({1, 3, 16, 16}, 4);
  const Tensor rec_grad = l1_rec_grad(x, g);
  for (std::size_t i = 0; i < g.size(); ++i) {
    worst = std::max(worst, rel_err(rec_grad[i], numeric_grad([&] { return l1_rec(x, g); }, g[i])));
  }
  Tensor z = random_tensor({1, 3, 16, 16}, 5);
  const auto ax = fx.infer(x);
  fx.forward(z);
  const Tensor gp = fx.backward(perceptual_from_features(ax, fx.forward(z)).tap_grads);
  fx.forward(z);
  const Tensor gs = fx.backward(style_from_features(ax, fx.forward(z)).tap_grads);
  Rng rng(6);
  for (int s = 0; s < 60; ++s) {
    const auto i = std::uniform_int_distribution<std::size_t>(0, z.size() - 1)(rng);
    worst = std::max(worst, rel_err(gp[i], numeric_grad([&] { return perceptual(x, z, fx); }, z[i], 1e-6), 1e-8));
    worst = std::max(worst, rel_err(gs[i], numeric_grad([&] { return style(x, z, fx); }, z[i], 1e-6), 1e-10));
  }
  if (worst >= 1e-4) failures.push_back("rec/perceptual/style gradients");

  std::string detail = fmt("5 fixed points; adversarial grad rel err %.1e; rec/per/sty %.1e", worst_adv, worst);
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

Outcome total_weighting() {
  const LossWeights w;
  const double total = total_loss({1, 1, 1, 1}, w);
  const bool lambdas = w.lambda_adv == 0.01 && w.lambda_rec == 1.0 && w.lambda_per == 0.1 && w.lambda_sty == 250.0;
  return {lambdas && total == 251.11, fmt("unit components give %.15g (== 251.11)", total)};
}

Outcome desk_training() {
  testutil::TempDir dir("acc_desk");
  testutil::write_corpus(dir.path, 16, 64, 64);
  const ImageSource data = ImageSource::scan(dir.path, 64);
  AppConfig c = AppConfig::preset_named("desk");
  const LossWeights paper;
  const bool paper_hparams = c.loss.lambda_adv == paper.lambda_adv && c.loss.lambda_rec == paper.lambda_rec &&
                             c.loss.lambda_per == paper.lambda_per && c.loss.lambda_sty == paper.lambda_sty &&
                             c.train.lr == 1e-4 && c.train.adam_beta1 == 0.0 && c.train.adam_beta2 == 0.9 &&
                             c.train.batch_size == 8 && c.train.image_size == 64;
  Trainer t(c);
  Tensor images, masks;
  double first = 0.0;
  double last = 0.0;
  double best = 1e9;
  bool finite = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (int s = 1; s <= 500; ++s) {
    t.sample_batch(data, images, masks);
    LossReport r;
    try {
      r = t.train_step(images, masks);
    } catch (const DivergenceError&) {
      finite = false;
      break;
    }
    for (double v : {r.adv_g, r.adv_d, r.rec, r.per, r.sty, r.total}) finite = finite && std::isfinite(v);
    if (s == 1) first = r.rec;
    last = r.rec;
    best = std::min(best, r.rec);
  }
  const double minutes = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() / 60;
  const double drop = first / last;
  return {paper_hparams && finite && drop >= 5.0,
          fmt("l1_rec %.4f -> %.4f (%.2fx, best %.4f), finite %s, %.1f min", first, last, drop, best,
              finite ? "yes" : "no", minutes)};
}

Outcome ablation_reachability() {
  testutil::TempDir dir("acc_ablation");
  testutil::write_corpus(dir.path, 4, 32, 32);
  const ImageSource data = ImageSource::scan(dir.path, 32);
  struct Variant {
    std::string label;
    AppConfig config;
  };
  std::vector<Variant> variants;
  for (const std::vector<int>& rates : {std::vector<int>{2}, std::vector<int>{1, 2, 4, 8}}) {
    for (ResidualMode rm : {ResidualMode::kGated, ResidualMode::kIdentity}) {
      for (TargetMode tm : {TargetMode::kSoftMask, TargetMode::kHardMask, TargetMode::kPatchGan}) {
        AppConfig c = toy_config();
        c.generator.block.rates = rates;
        c.generator.block.residual_mode = rm;
        c.discriminator.target_mode = tm;
        c.validate();
        variants.push_back({fmt("%zu-branch/%s/%s", rates.size(), to_string(rm).c_str(), to_string(tm).c_str()), c});
      }
    }
  }
  std::vector<std::vector<LossReport>> runs;
  bool finite = true;
  for (const auto& v : variants) {
    Trainer t(v.config);
    Tensor images, masks;
    std::vector<LossReport> curve;
    for (int s = 0; s < 50; ++s) {
      t.sample_batch(data, images, masks);
      curve.push_back(t.train_step(images, masks));
      finite = finite && std::isfinite(curve.back().total);
    }
    runs.push_back(curve);
  }
  int identical = 0;
  for (std::size_t a = 0; a < runs.size(); ++a)
    for (std::size_t b = a + 1; b < runs.size(); ++b) identical += runs[a] == runs[b];
  return {finite && identical == 0,
          fmt("%zu variants x 50 steps, %d identical trajectory pairs", variants.size(), identical)};
}

Outcome metric_oracles() {
  std::vector<std::string> failures;
  Rng rng(11);
  std::normal_distribution<double> g(0, 1);
  Eigen::MatrixXd a(300, 6);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = g(rng);
  const double same = fid(a, a).value;
  if (std::abs(same) >= 1e-6) failures.push_back("identical sets");

  const int n = 10000;
  std::normal_distribution<double> p(0.5, 1.0);
  std::normal_distribution<double> q(2.0, 2.0);
  Eigen::MatrixXd pa(n, 1), qa(n, 1);
  for (int i = 0; i < n; ++i) {
    pa(i, 0) = p(rng);
    qa(i, 0) = q(rng);
  }
  // (0.5 - 2)^2 + (1 - 2)^2 = 3.25; moment sampling error is a few hundredths.
  const double gauss = fid(pa, qa).value;
  if (std::abs(gauss - 3.25) > 0.15) failures.push_back("1-D Gaussian closed form");

  const Tensor x = random_tensor({1, 3, 16, 16}, 1, -0.5, 0.5);
  Tensor shifted = x;
  for (double& v : shifted.values()) v += 0.2;
  if (psnr(x, x)[0] != kPsnrCap) failures.push_back("psnr identical");
  if (std::abs(psnr(x, shifted)[0] - 20.0) > 1e-9) failures.push_back("psnr 20 dB");
  if (std::abs(psnr(Tensor({1, 3, 4, 4}, -1.0), Tensor({1, 3, 4, 4}, 1.0))[0]) > 1e-12) failures.push_back("psnr 0 dB");
  const double c1 = 1e-4;
  if (std::abs(ssim(x, x)[0] - 1.0) > 1e-12) failures.push_back("ssim identical");
  if (std::abs(ssim(Tensor({1, 3, 12, 12}, -1.0), Tensor({1, 3, 12, 12}, 1.0))[0] - c1 / (1 + c1)) > 1e-12) {
    failures.push_back("ssim constants");
  }
  const Tensor hv = random_tensor({1, 3, 16, 16}, 2);
  Tensor inv = hv;
  for (double& v : inv.values()) v = -v;
  if (ssim(hv, inv)[0] >= 0.0) failures.push_back("ssim anti-correlated");
  if (std::abs(ssim(hv, inv)[0] - oracle::oracle_ssim(hv, inv, 0)) > 1e-9) {
    failures.push_back("ssim oracle");
  }

  testutil::TempDir dir("acc_metrics");
  testutil::write_corpus(dir.path, 6, 32, 32);
  const ImageSource data = ImageSource::scan(dir.path, 32);
  const FeatureExtractor fx = FeatureExtractor::fixed_random(1, 16);
  const Generator gen(GeneratorConfig::desk_scale(8), 1);
  const InpaintFn fn = [&](const Tensor& img, const Tensor& m) { return inpaint(gen, img, m); };
  const std::string csv1 = report_csv(evaluate(fn, data, standard_buckets(), 3, fx));
  const std::string csv2 = report_csv(evaluate(fn, data, standard_buckets(), 3, fx));
  if (csv1 != csv2) failures.push_back("evaluate determinism");

  std::string detail = fmt("FID same %.1e, 1-D Gaussians %.4f vs 3.25; PSNR/SSIM closed forms; CSV %zu bytes stable",
                           same, gauss, csv1.size());
  for (const auto& f : failures) detail += "; FAILED " + f;
  return {failures.empty(), detail};
}

Outcome checkpoint_round_trip() {
  testutil::TempDir dir("acc_ckpt");
  testutil::write_corpus(dir / "data", 6, 32, 32);
  const ImageSource data = ImageSource::scan(dir / "data", 32);
  AppConfig c = toy_config();
  c.train.steps = 100;
  c.train.checkpoint_every = 50;

  const TrainResult full = train(c, data, {dir / "full", std::nullopt, nullptr});
  const TrainResult rest = train(c, data, {dir / "resumed", dir / "full" / "checkpoint_step50.aot", nullptr});
  const bool resume_equal = rest.losses.size() == 50 &&
                            read_file(rest.checkpoint) == read_file(full.checkpoint);

  Trainer loaded = Trainer::from_checkpoint(full.checkpoint);
  const InferenceModel model = load_inference_model(full.checkpoint);
  Trainer reference = Trainer::from_checkpoint(dir / "full" / "checkpoint_step50.aot");
  // Drive the step-50 trainer forward by hand and compare outputs with the loaded final one.
  Tensor images, masks;
  for (int s = 0; s < 50; ++s) {
    reference.sample_batch(data, images, masks);
    reference.train_step(images, masks);
  }
  const Tensor x = random_tensor({2, 3, 32, 32}, 9);
  const Tensor m = concat_batch(std::vector<Tensor>{testutil::random_blob_mask(32, 32, 1), testutil::random_blob_mask(32, 32, 2)});
  const Tensor xm = mask_image(x, m);
  const Tensor out = loaded.generator().infer(xm, m);
  const bool outputs_equal = max_abs_diff(out, model.generator.infer(xm, m)) == 0.0 &&
                             max_abs_diff(out, reference.generator().infer(xm, m)) == 0.0;
  const bool reserialized = serialize_archive(loaded.to_archive()) == read_file(full.checkpoint);
  return {resume_equal && outputs_equal && reserialized,
          fmt("resume 50+50 vs 100 steps byte-identical: %s; outputs bit-identical: %s; re-save identical: %s",
              resume_equal ? "yes" : "no", outputs_equal ? "yes" : "no", reserialized ? "yes" : "no")};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance checks"};
  std::vector<int> only;
  app.add_option("--only", only, "Run only these check numbers")->delimiter(',');
  CLI11_PARSE(app, argc, argv);

  const std::vector<Check> checks = {
      {1, "composition identity", composition_identity},
      {2, "gated residual fixed points", gated_fixed_points},
      {3, "split-transform parameter parity", parameter_parity},
      {4, "soft label oracle and monotonicity", sigma_oracle},
      {5, "loss fixed points and gradients", loss_fixed_points_and_gradients},
      {6, "total loss weighting", total_weighting},
      {7, "desk-scale training capability", desk_training},
      {8, "ablation reachability", ablation_reachability},
      {9, "metric oracles", metric_oracles},
      {10, "checkpoint round trip and resume", checkpoint_round_trip},
  };
  int failed = 0;
  for (const Check& c : checks) {
    if (!only.empty() && std::find(only.begin(), only.end(), c.id) == only.end()) continue;
    Outcome o;
    try {
      o = c.run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("%s %2d %s: %s\n", o.pass ? "PASS" : "FAIL", c.id, c.name, o.detail.c_str());
    std::fflush(stdout);
  }
  return failed;
}
