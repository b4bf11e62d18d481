#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <unistd.h>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "aamulet/checkpoint.hpp"
#include "aamulet/data_io.hpp"
#include "aamulet/gradcheck.hpp"
#include "aamulet/training.hpp"
#include "oracles.hpp"

using namespace aamulet;

namespace {

Tensor<float> make_mask(int h, int w, const std::vector<int>& fg) {
  Tensor<float> m(Shape{1, 1, h, w}, 0.0f);
  for (int i : fg) m.mutable_data()[std::size_t(i)] = 1.0f;
  return m;
}

NetworkConfig tiny_config() {
  NetworkConfig cfg;
  cfg.levels = 2;
  cfg.input_h = 8;
  cfg.input_w = 8;
  cfg.backbone_channels = {4, 8};
  cfg.agg_width = 4;
  return cfg;
}

std::vector<ImageSample> tiny_dataset(int n, std::uint64_t seed = 42) {
  SynthSpec spec;
  spec.image_h = 8;
  spec.image_w = 8;
  spec.seed = seed;
  return generate_synthetic(spec, n);
}

std::string temp_dir(const char* tag) {
  auto p = std::filesystem::temp_directory_path() /
           (std::string("aamulet_train_") + tag + "_" +
            std::to_string(::getpid()));
  std::filesystem::create_directories(p);
  return p.string();
}

}  // namespace

TEST_CASE("class_balance counts background and foreground fractions") {
  auto m = make_mask(4, 4, {0, 5, 10, 15});
  auto cb = class_balance(m);
  CHECK(cb.beta == doctest::Approx(0.75).epsilon(1e-15));
  CHECK(cb.one_minus_beta == doctest::Approx(0.25).epsilon(1e-15));
  CHECK(cb.beta + cb.one_minus_beta == 1.0);
  CHECK(!cb.degenerate);

  auto zero = make_mask(4, 4, {});
  auto cbz = class_balance(zero);
  CHECK(cbz.beta == 1.0);
  CHECK(cbz.one_minus_beta == 0.0);
  CHECK(cbz.degenerate);

  Tensor<float> full(Shape{1, 1, 2, 2}, 1.0f);
  auto cbf = class_balance(full);
  CHECK(cbf.beta == 0.0);
  CHECK(cbf.degenerate);

  Tensor<float> bad(Shape{1, 1, 2, 2}, 0.5f);
  CHECK_THROWS_AS(class_balance(bad), SpecError);

  // random 16x16 vs a direct pixel count
  Rng rng(3);
  Tensor<float> rnd(Shape{1, 1, 16, 16}, 0.0f);
  int fg = 0;
  for (auto& v : rnd.mutable_data())
    if (rng.bernoulli(0.37)) {
      v = 1.0f;
      ++fg;
    }
  auto cbr = class_balance(rnd);
  CHECK(cbr.one_minus_beta == double(fg) / 256.0);
  CHECK(cbr.beta == double(256 - fg) / 256.0);
}

TEST_CASE("level_loss on uniform logits equals the closed form") {
  const int h = 4, w = 4;
  auto mask = make_mask(h, w, {1, 2, 3, 7, 9});
  Tensor<float> logits(Shape{1, 2, h, w}, 0.0f);
  const double beta = class_balance(mask).beta;
  auto loss = level_loss(logits, mask, beta);
  const double expected = beta * 5 * std::log(2.0) + (1 - beta) * 11 * std::log(2.0);
  CHECK(double(loss.item()) == doctest::Approx(expected).epsilon(1e-6));
}

TEST_CASE("level_loss saturates to zero for a confident correct prediction") {
  const int h = 4, w = 4;
  auto mask = make_mask(h, w, {0, 1, 4, 5});
  Tensor<float> logits(Shape{1, 2, h, w}, 0.0f);
  for (int i = 0; i < h * w; ++i) {
    const bool fg = mask.data()[std::size_t(i)] == 1.0f;
    logits.mutable_data()[std::size_t(i)] = fg ? -50.0f : 50.0f;       // s0
    logits.mutable_data()[std::size_t(h * w + i)] = fg ? 50.0f : -50.0f;  // s1
  }
  auto loss = level_loss(logits, mask, class_balance(mask).beta);
  CHECK(double(loss.item()) >= 0.0);
  CHECK(double(loss.item()) < 1e-6);
}

TEST_CASE("level_loss matches the direct per-pixel summation oracle") {
  Rng rng(5);
  const int h = 4, w = 4;
  Tensor<double> mask(Shape{1, 1, h, w}, 0.0);
  std::vector<int> mask_int(h * w);
  for (int i = 0; i < h * w; ++i) {
    mask_int[std::size_t(i)] = rng.bernoulli(0.4) ? 1 : 0;
    mask.mutable_data()[std::size_t(i)] = mask_int[std::size_t(i)];
  }
  std::vector<double> s0(h * w), s1(h * w);
  Tensor<double> logits(Shape{1, 2, h, w}, 0.0);
  for (int i = 0; i < h * w; ++i) {
    s0[std::size_t(i)] = rng.uniform(-3, 3);
    s1[std::size_t(i)] = rng.uniform(-3, 3);
    logits.mutable_data()[std::size_t(i)] = s0[std::size_t(i)];
    logits.mutable_data()[std::size_t(h * w + i)] = s1[std::size_t(i)];
  }
  const double beta = class_balance(mask).beta;
  auto loss = level_loss(logits, mask, beta);
  const double want = oracle::level_loss(s0, s1, mask_int, beta);
  CHECK(loss.item() == doctest::Approx(want).epsilon(1e-9));
  CHECK(loss.item() >= 0.0);

  // gradients of the fused log-sum-exp form
  auto f = [&] { return level_loss(logits, mask, beta); };
  CHECK(grad_check(f, {logits}) < 1e-4);
}

TEST_CASE("total_loss selects and weights level terms linearly") {
  NetworkConfig cfg = tiny_config();
  auto store = init_params(cfg, 9);
  Rng rng(11);
  Tensor<float> x(Shape{1, 3, 8, 8}, 0.0f);
  for (auto& v : x.mutable_data()) v = float(rng.uniform(0, 1));
  auto mask = make_mask(8, 8, {9, 10, 17, 18, 26, 27});
  auto trace = forward(x, store, cfg, BnMode::infer);

  const double beta = class_balance(mask).beta;
  const double l1 = level_loss(trace.logits[0], mask, beta).item();
  const double l2 = level_loss(trace.logits[1], mask, beta).item();

  LossConfig only_first;
  only_first.alpha = {1.0, 0.0};
  CHECK(total_loss(trace, mask, only_first).item() ==
        doctest::Approx(l1).epsilon(1e-6));

  LossConfig both;
  both.alpha = {1.0, 1.0};
  CHECK(total_loss(trace, mask, both).item() ==
        doctest::Approx(l1 + l2).epsilon(1e-6));

  LossConfig doubled;
  doubled.alpha = {1.0, 2.0};
  CHECK(total_loss(trace, mask, doubled).item() ==
        doctest::Approx(l1 + 2 * l2).epsilon(1e-6));

  LossConfig wrong;
  wrong.alpha = {1.0};
  CHECK_THROWS_AS(total_loss(trace, mask, wrong), ConfigError);
}

TEST_CASE("sgd_step follows the momentum recurrence") {
  NetworkConfig cfg;  // store built by hand below
  (void)cfg;
  ParameterStore store;
  store.add("w", Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{1.0f}),
            true, true);
  auto& e = store.entry("w");

  OptimConfig opt;
  opt.momentum = 0.0;
  opt.weight_decay = 0.0;

  // w = 1, grad = 1, lr = 0.1 -> w' = 0.9
  e.value.zero_grad();
  e.value.node()->grad[0] = 1.0f;
  sgd_step(store, opt, 0.1);
  CHECK(e.value.data()[0] == doctest::Approx(0.9).epsilon(1e-7));

  // two steps with momentum 0.9 and constant unit gradient from w0 = 1
  e.value.mutable_data()[0] = 1.0f;
  e.momentum.mutable_data()[0] = 0.0f;
  opt.momentum = 0.9;
  e.value.node()->grad[0] = 1.0f;
  sgd_step(store, opt, 0.1);
  CHECK(e.momentum.data()[0] == doctest::Approx(-0.1).epsilon(1e-7));
  CHECK(e.value.data()[0] == doctest::Approx(0.9).epsilon(1e-7));
  e.value.node()->grad[0] = 1.0f;
  sgd_step(store, opt, 0.1);
  CHECK(e.momentum.data()[0] == doctest::Approx(-0.19).epsilon(1e-7));
  CHECK(e.value.data()[0] == doctest::Approx(0.71).epsilon(1e-7));

  // weight decay alone: w = 1, grad = 0, wd = 5e-4, lr = 0.1
  e.value.mutable_data()[0] = 1.0f;
  e.momentum.mutable_data()[0] = 0.0f;
  opt.momentum = 0.0;
  opt.weight_decay = 0.0005;
  e.value.node()->grad[0] = 0.0f;
  sgd_step(store, opt, 0.1);
  CHECK(e.value.data()[0] == doctest::Approx(0.99995).epsilon(1e-9));

  // decay-exempt entries ignore weight decay
  store.add("b", Tensor<float>(Shape{1, 1, 1, 1}, std::vector<float>{1.0f}),
            true, false);
  store.entry("b").value.zero_grad();
  e.value.node()->grad[0] = 0.0f;
  sgd_step(store, opt, 0.1);
  CHECK(store.at("b").data()[0] == 1.0f);

  // lr -> 0 keeps parameters bit-identical
  const float before = e.value.data()[0];
  e.value.node()->grad[0] = 123.0f;
  sgd_step(store, opt, 0.0);
  CHECK(e.value.data()[0] == before);

  // non-finite gradient aborts the step
  e.value.node()->grad[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(sgd_step(store, opt, 0.1), DivergedError);
}

TEST_CASE("augment identity spec returns the sample unchanged") {
  auto samples = tiny_dataset(1);
  AugmentSpec spec;
  spec.mirror = false;
  spec.rotations = {0};
  spec.crop_min = spec.crop_max = 1.0;
  Rng rng(7);
  auto out = augment(samples[0], spec, rng);
  CHECK(out.image.data() == samples[0].image.data());
  CHECK(out.mask.data() == samples[0].mask.data());
}

TEST_CASE("augment 180-degree rotation is an involution") {
  auto samples = tiny_dataset(1, 5);
  AugmentSpec spec;
  spec.mirror = false;
  spec.rotations = {180};
  spec.crop_min = spec.crop_max = 1.0;
  Rng r1(7), r2(8);
  auto once = augment(samples[0], spec, r1);
  CHECK(once.image.data() != samples[0].image.data());
  auto twice = augment(once, spec, r2);
  CHECK(twice.image.data() == samples[0].image.data());
  CHECK(twice.mask.data() == samples[0].mask.data());
}

TEST_CASE("augment preserves binaryness and dimensional equality") {
  SynthSpec sset;
  sset.image_h = 16;
  sset.image_w = 16;
  sset.seed = 11;
  auto samples = generate_synthetic(sset, 4);
  AugmentSpec spec;  // defaults: mirror, all rotations, crop 0.8..1.0
  Rng rng(13);
  for (const auto& s : samples) {
    auto out = augment(s, spec, rng);
    CHECK(out.image.shape() == s.image.shape());
    CHECK(out.mask.shape() == s.mask.shape());
    for (float v : out.mask.data()) CHECK((v == 0.0f || v == 1.0f));
  }
}

TEST_CASE("augmented masks match the generator rendered under the same map") {
  // one axis-aligned rectangle; rotating the sample must equal rendering the
  // rotated rectangle directly
  SynthSpec spec;
  spec.image_h = 16;
  spec.image_w = 16;
  spec.kinds = {ShapeKind::rectangle};
  spec.shapes_min = spec.shapes_max = 1;
  spec.seed = 17;
  std::vector<std::vector<ShapeDesc>> shapes;
  auto samples = generate_synthetic(spec, 1, &shapes);
  REQUIRE(shapes[0].size() == 1);
  const ShapeDesc& r = shapes[0][0];
  const int x0 = int(r.p[0]), y0 = int(r.p[1]), aw = int(r.p[2]),
            ah = int(r.p[3]);

  AugmentSpec aug;
  aug.mirror = false;
  aug.rotations = {180};
  aug.crop_min = aug.crop_max = 1.0;
  Rng rng(19);
  auto rotated = augment(samples[0], aug, rng);

  Tensor<float> expect(Shape{1, 1, 16, 16}, 0.0f);
  const int nx0 = 16 - x0 - aw, ny0 = 16 - y0 - ah;
  for (int y = ny0; y < ny0 + ah; ++y)
    for (int x = nx0; x < nx0 + aw; ++x)
      expect.mutable_data()[std::size_t(y) * 16 + x] = 1.0f;
  CHECK(rotated.mask.data() == expect.data());

  // mirror reflection maps x0 -> w - x0 - aw
  AugmentSpec mir;
  mir.mirror = true;
  mir.rotations = {0};
  mir.crop_min = mir.crop_max = 1.0;
  Tensor<float> expect_m(Shape{1, 1, 16, 16}, 0.0f);
  for (int y = y0; y < y0 + ah; ++y)
    for (int x = nx0; x < nx0 + aw; ++x)
      expect_m.mutable_data()[std::size_t(y) * 16 + x] = 1.0f;
  for (std::uint64_t s = 0; s < 64; ++s) {
    Rng mr(s);
    if (!Rng(s).bernoulli(0.5)) continue;  // find a seed that mirrors
    auto mirrored = augment(samples[0], mir, mr);
    CHECK(mirrored.mask.data() == expect_m.data());
    break;
  }
}

TEST_CASE("training runs deterministically for a fixed seed") {
  TrainJob job;
  job.dataset = tiny_dataset(4);
  job.network = tiny_config();
  job.optim.max_iters = 10;
  job.optim.batch_size = 2;
  job.seed = 99;
  auto r1 = train(job);
  auto r2 = train(job);
  REQUIRE(r1.rows.size() == 10);
  REQUIRE(r2.rows.size() == 10);
  for (std::size_t i = 0; i < 10; ++i) {
    CHECK(r1.rows[i].loss_raw == r2.rows[i].loss_raw);
    CHECK(r1.rows[i].lr == r2.rows[i].lr);
  }
  for (std::size_t i = 0; i < r1.store.entries().size(); ++i)
    CHECK(r1.store.entries()[i].value.data() ==
          r2.store.entries()[i].value.data());
  CHECK(!r1.diverged);
  // loss stays positive and finite
  for (const auto& row : r1.rows) {
    CHECK(row.loss_raw >= 0.0);
    CHECK(std::isfinite(row.loss_raw));
  }
}

TEST_CASE("resume from a checkpoint reproduces the uninterrupted run") {
  const std::string dir = temp_dir("resume");
  TrainJob job;
  job.dataset = tiny_dataset(4);
  job.network = tiny_config();
  job.optim.max_iters = 10;
  job.optim.batch_size = 2;
  job.optim.checkpoint_interval = 5;
  job.seed = 7;
  job.out_dir = dir + "/full";
  auto full = train(job);
  REQUIRE(full.rows.size() == 10);

  TrainJob first = job;
  first.optim.max_iters = 5;
  first.out_dir = dir + "/first";
  auto half = train(first);
  REQUIRE(half.rows.size() == 5);

  TrainJob second = job;
  second.out_dir = dir + "/second";
  second.resume_checkpoint = dir + "/first/ckpt-5.aamu";
  auto rest = train(second);
  REQUIRE(rest.rows.size() == 5);
  for (std::size_t i = 0; i < 5; ++i) {
    CHECK(rest.rows[i].iter == full.rows[i + 5].iter);
    CHECK(rest.rows[i].loss_raw == full.rows[i + 5].loss_raw);
    CHECK(rest.rows[i].lr == full.rows[i + 5].lr);
  }
  for (std::size_t i = 0; i < full.store.entries().size(); ++i)
    CHECK(rest.store.entries()[i].value.data() ==
          full.store.entries()[i].value.data());
  std::filesystem::remove_all(dir);
}

TEST_CASE("train rejects empty datasets and non-binary masks") {
  TrainJob job;
  job.network = tiny_config();
  CHECK_THROWS_AS(train(job), ConfigError);
  job.dataset = tiny_dataset(1);
  job.dataset[0].mask.mutable_data()[3] = 0.25f;
  CHECK_THROWS_AS(train(job), SpecError);
}
