#include "aamulet/training.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>

#include "aamulet/checkpoint.hpp"
#include "aamulet/ops.hpp"

namespace fs = std::filesystem;

namespace aamulet {

namespace {

// Spatial permutations shared by image and mask. Rotations are
// counter-clockwise multiples of 90 degrees and exact pixel moves.
Tensor<float> mirror_h(const Tensor<float>& t) {
  const Shape s = t.shape();
  Tensor<float> out(s);
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < s.h; ++y)
        for (int x = 0; x < s.w; ++x)
          out.mutable_data()[((std::int64_t(n) * s.c + c) * s.h + y) * s.w +
                             x] = t.at(n, c, y, s.w - 1 - x);
  return out;
}

Tensor<float> rotate(const Tensor<float>& t, int deg) {
  const Shape s = t.shape();
  if (deg == 0) return t;
  const bool swap = deg == 90 || deg == 270;
  const Shape os{s.n, s.c, swap ? s.w : s.h, swap ? s.h : s.w};
  Tensor<float> out(os);
  auto& o = out.mutable_data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < os.h; ++y)
        for (int x = 0; x < os.w; ++x) {
          float v;
          if (deg == 90)
            v = t.at(n, c, x, s.w - 1 - y);
          else if (deg == 180)
            v = t.at(n, c, s.h - 1 - y, s.w - 1 - x);
          else
            v = t.at(n, c, s.h - 1 - x, y);
          o[((std::int64_t(n) * os.c + c) * os.h + y) * os.w + x] = v;
        }
  return out;
}

Tensor<float> crop(const Tensor<float>& t, int y0, int x0, int ch, int cw) {
  const Shape s = t.shape();
  const Shape os{s.n, s.c, ch, cw};
  Tensor<float> out(os);
  auto& o = out.mutable_data();
  for (int n = 0; n < s.n; ++n)
    for (int c = 0; c < s.c; ++c)
      for (int y = 0; y < ch; ++y)
        for (int x = 0; x < cw; ++x)
          o[((std::int64_t(n) * os.c + c) * os.h + y) * os.w + x] =
              t.at(n, c, y0 + y, x0 + x);
  return out;
}

void binarize(Tensor<float>& mask) {
  for (auto& v : mask.mutable_data()) v = v > 0.5f ? 1.0f : 0.0f;
}

}  // namespace

ImageSample augment(const ImageSample& sample, const AugmentSpec& spec,
                    Rng& rng) {
  spec.validate();
  const Shape is = sample.image.shape();
  const Shape ms = sample.mask.shape();
  if (is.h != ms.h || is.w != ms.w)
    throw ShapeError("augment: image " + is.str() + " and mask " + ms.str() +
                     " disagree");
  // Draw order is pinned: mirror, rotation, crop fraction, crop origin.
  const bool do_mirror = spec.mirror ? rng.bernoulli(0.5) : false;
  int deg = 0;
  if (!spec.rotations.empty())
    deg = spec.rotations[std::size_t(
        rng.uniform_int(0, std::int64_t(spec.rotations.size()) - 1))];
  const double frac = rng.uniform(spec.crop_min, spec.crop_max);

  Tensor<float> img = sample.image;
  Tensor<float> msk = sample.mask;
  if (do_mirror) {
    img = mirror_h(img);
    msk = mirror_h(msk);
  }
  img = rotate(img, deg);
  msk = rotate(msk, deg);

  const Shape rs = img.shape();
  const int ch = std::max(1, int(std::lround(frac * rs.h)));
  const int cw = std::max(1, int(std::lround(frac * rs.w)));
  const int y0 = int(rng.uniform_int(0, rs.h - ch));
  const int x0 = int(rng.uniform_int(0, rs.w - cw));
  if (ch != rs.h || cw != rs.w) {
    img = crop(img, y0, x0, ch, cw);
    msk = crop(msk, y0, x0, ch, cw);
  }

  ImageSample out;
  out.id = sample.id;
  out.image = img.shape().h == is.h && img.shape().w == is.w
                  ? img
                  : resize_bilinear(img, is.h, is.w);
  out.mask = msk.shape().h == is.h && msk.shape().w == is.w
                 ? msk
                 : resize_nearest(msk, is.h, is.w);
  binarize(out.mask);
  return out;
}

TrainResult train(const TrainJob& job) {
  job.optim.validate();
  job.augment.validate();
  if (job.dataset.empty())
    throw ConfigError("train: dataset must not be empty");
  for (const auto& s : job.dataset)
    for (float v : s.mask.data())
      if (v != 0.0f && v != 1.0f)
        throw SpecError("train: mask of sample " + s.id + " is not binary");

  NetworkConfig cfg = job.network;
  ParameterStore store;
  OptimState opt;
  std::string last_good;
  if (!job.resume_checkpoint.empty()) {
    Checkpoint ck = load_checkpoint(job.resume_checkpoint);
    cfg = ck.config;
    store = std::move(ck.store);
    if (ck.optim) opt = std::move(*ck.optim);
    last_good = job.resume_checkpoint;
  } else {
    cfg.validate();
    store = init_params(cfg, job.seed);
  }
  job.loss.resolve(cfg.levels);

  double lr = job.optim.lr;
  for (int i = 0; i < opt.decay_count; ++i) lr *= job.optim.lr_decay_factor;

  std::ofstream csv;
  if (!job.out_dir.empty()) {
    fs::create_directories(job.out_dir);
    csv.open(fs::path(job.out_dir) / "loss.csv", std::ios::trunc);
    if (!csv) throw IoError("cannot write loss.csv under " + job.out_dir);
    csv << "iter,loss_raw,loss_per_pixel,lr\n";
  }

  const int H = cfg.input_h;
  const int W = cfg.input_w;
  const double pixels = double(H) * W;
  const int B = job.optim.batch_size;
  const std::int64_t plane = std::int64_t(H) * W;

  TrainResult res;
  res.network = cfg;
  for (std::int64_t iter = opt.iter + 1; iter <= job.optim.max_iters; ++iter) {
    Rng pick(Rng::stream_seed(job.seed, std::uint64_t(iter), 0));
    Tensor<float> x(Shape{B, 3, H, W});
    Tensor<float> m(Shape{B, 1, H, W});
    for (int j = 0; j < B; ++j) {
      const auto idx = std::size_t(
          pick.uniform_int(0, std::int64_t(job.dataset.size()) - 1));
      Rng aug_rng(Rng::stream_seed(job.seed, std::uint64_t(iter),
                                   std::uint64_t(j) + 1));
      ImageSample s = augment(job.dataset[idx], job.augment, aug_rng);
      if (s.image.shape().h != H || s.image.shape().w != W) {
        s.image = resize_bilinear(s.image, H, W);
        s.mask = resize_nearest(s.mask, H, W);
        binarize(s.mask);
      }
      std::copy(s.image.data().begin(), s.image.data().end(),
                x.mutable_data().begin() + std::int64_t(j) * 3 * plane);
      std::copy(s.mask.data().begin(), s.mask.data().end(),
                m.mutable_data().begin() + std::int64_t(j) * plane);
    }

    auto trace = forward(x, store, cfg, BnMode::train);
    auto raw = total_loss(trace, m, job.loss);
    const double loss_raw = double(raw.item());
    if (!std::isfinite(loss_raw)) {
      res.diverged = true;
      break;
    }
    // The optimized scalar is the per-pixel mean; the raw per-image sum is
    // the same objective times a constant and is what the log reports.
    auto objective = scale(raw, 1.0 / pixels);
    store.zero_grads();
    objective.backward();
    try {
      sgd_step(store, job.optim, lr);
    } catch (const DivergedError&) {
      res.diverged = true;
      break;
    }

    const double lr_used = lr;
    opt.iter = iter;
    opt.loss_history.push_back(float(loss_raw));
    if (opt.loss_history.size() > 200)
      opt.loss_history.erase(opt.loss_history.begin());
    if (iter % 100 == 0 && opt.loss_history.size() == 200) {
      double prev = 0, recent = 0;
      for (int i = 0; i < 100; ++i) {
        prev += double(opt.loss_history[std::size_t(i)]);
        recent += double(opt.loss_history[std::size_t(100 + i)]);
      }
      if (recent > 0.999 * prev) {
        lr *= job.optim.lr_decay_factor;
        ++opt.decay_count;
      }
    }

    res.rows.push_back({iter, loss_raw, loss_raw / pixels, lr_used});
    if (csv.is_open()) {
      char line[160];
      std::snprintf(line, sizeof line, "%lld,%.9g,%.9g,%.9g\n",
                    static_cast<long long>(iter), loss_raw, loss_raw / pixels,
                    lr_used);
      csv << line;
    }
    if (!job.out_dir.empty() && iter % job.optim.checkpoint_interval == 0) {
      const std::string path =
          (fs::path(job.out_dir) / ("ckpt-" + std::to_string(iter) + ".aamu"))
              .string();
      save_checkpoint(path, store, cfg, &opt);
      last_good = path;
    }
  }

  res.store = std::move(store);
  res.final_iter = opt.iter;
  if (!job.out_dir.empty()) {
    if (!res.diverged) {
      const std::string path = (fs::path(job.out_dir) / "final.aamu").string();
      save_checkpoint(path, res.store, cfg, &opt);
      res.final_checkpoint = path;
    } else {
      res.final_checkpoint = last_good;  // may be empty if nothing was saved
    }
  }
  return res;
}

}  // namespace aamulet
