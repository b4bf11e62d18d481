#include "aamulet/metrics.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <thread>

#include "aamulet/data_io.hpp"
#include "aamulet/error.hpp"

namespace fs = std::filesystem;

namespace aamulet {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();
constexpr int kThresholds = 256;

void check_pair(const SaliencyMap& pred, const GroundTruth& gt) {
  if (pred.h != gt.h || pred.w != gt.w)
    throw ShapeError("metrics: prediction " + std::to_string(pred.w) + "x" +
                     std::to_string(pred.h) + " does not match ground truth " +
                     std::to_string(gt.w) + "x" + std::to_string(gt.h));
  if (pred.values.size() != std::size_t(pred.h) * pred.w ||
      gt.values.size() != std::size_t(gt.h) * gt.w)
    throw ShapeError("metrics: value buffer does not match dims");
}

void check_binary(const GroundTruth& gt) {
  for (auto v : gt.values)
    if (v != 0 && v != 1)
      throw SpecError("metrics: ground truth must be strictly binary");
}

// Per-image precision/recall at all 256 thresholds via one descending sweep.
struct SweepResult {
  std::array<double, kThresholds> precision;
  std::array<double, kThresholds> recall;  // meaningless when !has_fg
  bool has_fg = false;
};

SweepResult threshold_sweep(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt);
  const std::size_t n = pred.values.size();
  std::vector<std::pair<double, std::uint8_t>> order(n);
  for (std::size_t i = 0; i < n; ++i)
    order[i] = {pred.values[i], gt.values[i]};
  std::sort(order.begin(), order.end(),
            [](const auto& a, const auto& b) { return a.first > b.first; });
  std::int64_t total_fg = 0;
  for (auto v : gt.values) total_fg += v;

  SweepResult res;
  res.has_fg = total_fg > 0;
  std::size_t ptr = 0;
  std::int64_t tp = 0, fp = 0;
  for (int k = kThresholds - 1; k >= 0; --k) {
    const double t = double(k) / 255.0;
    while (ptr < n && order[ptr].first > t) {
      if (order[ptr].second)
        ++tp;
      else
        ++fp;
      ++ptr;
    }
    res.precision[std::size_t(k)] =
        (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
    res.recall[std::size_t(k)] =
        total_fg == 0 ? 1.0 : double(tp) / double(total_fg);
  }
  return res;
}

template <typename Fn>
void parallel_for(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  const int workers = std::min<std::size_t>(std::size_t(jobs), count);
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(workers));
  std::atomic<std::size_t> next{0};
  for (int t = 0; t < workers; ++t)
    pool.emplace_back([&]() {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

}  // namespace

double f_measure(double precision, double recall, double eta2) {
  const double denom = eta2 * precision + recall;
  if (denom == 0) return 0;
  return (1 + eta2) * precision * recall / denom;
}

PrCurve pr_curve(const std::vector<SaliencyMap>& preds,
                 const std::vector<GroundTruth>& gts) {
  if (preds.empty() || preds.size() != gts.size())
    throw ShapeError("pr_curve: need equally many predictions and masks");
  PrCurve pr;
  pr.precision.assign(kThresholds, 0.0);
  pr.recall.assign(kThresholds, 0.0);
  int with_fg = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    check_binary(gts[i]);
    const SweepResult s = threshold_sweep(preds[i], gts[i]);
    for (int k = 0; k < kThresholds; ++k)
      pr.precision[std::size_t(k)] += s.precision[std::size_t(k)];
    if (s.has_fg) {
      ++with_fg;
      for (int k = 0; k < kThresholds; ++k)
        pr.recall[std::size_t(k)] += s.recall[std::size_t(k)];
    }
  }
  for (int k = 0; k < kThresholds; ++k) {
    pr.precision[std::size_t(k)] /= double(preds.size());
    pr.recall[std::size_t(k)] = with_fg ? pr.recall[std::size_t(k)] / with_fg : 0.0;
  }
  pr.empty_gt_excluded = int(preds.size()) - with_fg;
  return pr;
}

double f_adaptive(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt);
  check_binary(gt);
  double mean = 0;
  for (double v : pred.values) mean += v;
  mean /= double(pred.values.size());
  const double threshold = std::min(1.0, 2 * mean);
  std::int64_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    const bool hit = pred.values[i] > threshold;
    if (hit && gt.values[i])
      ++tp;
    else if (hit)
      ++fp;
    else if (gt.values[i])
      ++fn;
  }
  const double precision = (tp + fp) == 0 ? 1.0 : double(tp) / double(tp + fp);
  const double recall = (tp + fn) == 0 ? 1.0 : double(tp) / double(tp + fn);
  return f_measure(precision, recall);
}

double f_max(const SaliencyMap& pred, const GroundTruth& gt) {
  check_binary(gt);
  const SweepResult s = threshold_sweep(pred, gt);
  double best = 0;
  for (int k = 0; k < kThresholds; ++k) {
    const double r = s.has_fg ? s.recall[std::size_t(k)] : 1.0;
    best = std::max(best, f_measure(s.precision[std::size_t(k)], r));
  }
  return best;
}

double mae(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt);
  double acc = 0;
  for (std::size_t i = 0; i < pred.values.size(); ++i)
    acc += std::abs(pred.values[i] - double(gt.values[i]));
  return acc / double(pred.values.size());
}

namespace {

// Mean/sample-std similarity of prediction values over one region, as in
// the reference structure-measure definition.
double object_score(const std::vector<double>& values) {
  if (values.empty()) return 0;
  double mean = 0;
  for (double v : values) mean += v;
  mean /= double(values.size());
  double var = 0;
  for (double v : values) var += (v - mean) * (v - mean);
  const double sd =
      values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0;
  return 2 * mean / (mean * mean + 1 + sd + kEps);
}

struct Region {
  std::vector<double> pred;
  std::vector<double> gt;
};

// Two-pass SSIM over one region, mirroring the reference definition exactly
// (including its behaviour at the alpha == 0 branch).
double region_ssim(const Region& r) {
  const std::size_t n = r.pred.size();
  if (n == 0) return 1.0;
  double x = 0, y = 0;
  for (std::size_t i = 0; i < n; ++i) {
    x += r.pred[i];
    y += r.gt[i];
  }
  x /= double(n);
  y /= double(n);
  const double denom = double(n) - 1 + kEps;
  double sx2 = 0, sy2 = 0, sxy = 0;
  for (std::size_t i = 0; i < n; ++i) {
    sx2 += (r.pred[i] - x) * (r.pred[i] - x);
    sy2 += (r.gt[i] - y) * (r.gt[i] - y);
    sxy += (r.pred[i] - x) * (r.gt[i] - y);
  }
  sx2 /= denom;
  sy2 /= denom;
  sxy /= denom;
  const double alpha = 4 * x * y * sxy;
  const double beta = (x * x + y * y) * (sx2 + sy2);
  if (alpha != 0) return alpha / (beta + kEps);
  return beta == 0 ? 1.0 : 0.0;
}

}  // namespace

double s_object(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt);
  check_binary(gt);
  std::vector<double> fg, bg;
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (gt.values[i])
      fg.push_back(pred.values[i]);  // foreground similarity uses pred
    else
      bg.push_back(1.0 - pred.values[i]);  // background uses its complement
  }
  double u = 0;
  for (auto v : gt.values) u += v;
  u /= double(gt.values.size());
  return u * object_score(fg) + (1 - u) * object_score(bg);
}

double s_region(const SaliencyMap& pred, const GroundTruth& gt) {
  check_pair(pred, gt);
  check_binary(gt);
  const int h = gt.h;
  const int w = gt.w;
  // Centroid of the foreground (image centre when empty), then a 2x2 split
  // weighted by region area.
  std::int64_t total = 0;
  double sx = 0, sy = 0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (gt.values[std::size_t(y) * w + x]) {
        ++total;
        sx += x + 1;  // 1-based, as in the reference definition
        sy += y + 1;
      }
  int cx, cy;
  if (total == 0) {
    cx = int(std::lround(w / 2.0));
    cy = int(std::lround(h / 2.0));
  } else {
    cx = int(std::lround(sx / double(total)));
    cy = int(std::lround(sy / double(total)));
  }
  cx = std::min(std::max(cx, 1), w);
  cy = std::min(std::max(cy, 1), h);

  Region regions[4];
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const int quadrant = (y < cy ? 0 : 2) + (x < cx ? 0 : 1);
      Region& r = regions[quadrant];
      r.pred.push_back(pred.values[std::size_t(y) * w + x]);
      r.gt.push_back(double(gt.values[std::size_t(y) * w + x]));
    }
  const double area = double(h) * w;
  const double w1 = double(cx) * cy / area;
  const double w2 = double(w - cx) * cy / area;
  const double w3 = double(cx) * (h - cy) / area;
  const double w4 = 1.0 - w1 - w2 - w3;
  return w1 * region_ssim(regions[0]) + w2 * region_ssim(regions[1]) +
         w3 * region_ssim(regions[2]) + w4 * region_ssim(regions[3]);
}

double s_measure(const SaliencyMap& pred, const GroundTruth& gt,
                 double lambda) {
  check_pair(pred, gt);
  check_binary(gt);
  if (lambda < 0 || lambda > 1)
    throw SpecError("s_measure: lambda must lie in [0,1]");
  double mean_gt = 0;
  for (auto v : gt.values) mean_gt += v;
  mean_gt /= double(gt.values.size());
  double mean_pred = 0;
  for (double v : pred.values) mean_pred += v;
  mean_pred /= double(pred.values.size());

  double q;
  if (mean_gt == 0)
    q = 1.0 - mean_pred;  // nothing salient: reward an empty prediction
  else if (mean_gt == 1)
    q = mean_pred;
  else
    q = lambda * s_object(pred, gt) + (1 - lambda) * s_region(pred, gt);
  return std::min(std::max(q, 0.0), 1.0);
}

EvalReport evaluate_pairs(const std::vector<SaliencyMap>& preds,
                          const std::vector<GroundTruth>& gts, int jobs) {
  if (preds.empty() || preds.size() != gts.size())
    throw ShapeError("evaluate: need equally many predictions and masks");
  EvalReport report;
  report.per_image.resize(preds.size());
  parallel_for(preds.size(), jobs, [&](std::size_t i) {
    ImageMetrics& m = report.per_image[i];
    m.id = preds[i].id;
    m.f_adaptive = f_adaptive(preds[i], gts[i]);
    m.f_max = f_max(preds[i], gts[i]);
    m.mae = mae(preds[i], gts[i]);
    m.s_measure = s_measure(preds[i], gts[i]);
  });
  report.mean.id = "MEAN";
  for (const auto& m : report.per_image) {
    report.mean.f_adaptive += m.f_adaptive;
    report.mean.f_max += m.f_max;
    report.mean.mae += m.mae;
    report.mean.s_measure += m.s_measure;
  }
  const double n = double(report.per_image.size());
  report.mean.f_adaptive /= n;
  report.mean.f_max /= n;
  report.mean.mae /= n;
  report.mean.s_measure /= n;
  report.pr = pr_curve(preds, gts);
  return report;
}

EvalReport evaluate_dataset(const std::string& pred_dir,
                            const std::string& manifest_path, int jobs) {
  const auto entries = parse_manifest(manifest_path);
  std::string missing;
  for (const auto& e : entries) {
    const fs::path p = fs::path(pred_dir) / (e.id + ".pgm");
    if (!fs::exists(p)) missing += missing.empty() ? e.id : (", " + e.id);
  }
  if (!missing.empty())
    throw MissingDataError("missing predictions under " + pred_dir +
                           " for ids: " + missing);
  if (entries.empty())
    throw MissingDataError("manifest " + manifest_path + " lists no samples");

  std::vector<SaliencyMap> preds(entries.size());
  std::vector<GroundTruth> gts(entries.size());
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto& e = entries[i];
    const auto pm = read_pgm((fs::path(pred_dir) / (e.id + ".pgm")).string());
    SaliencyMap sm;
    sm.id = e.id;
    sm.h = pm.shape().h;
    sm.w = pm.shape().w;
    sm.values.assign(pm.data().begin(), pm.data().end());
    preds[i] = std::move(sm);
    const auto gm = read_pgm(e.mask_path);
    GroundTruth gt;
    gt.id = e.id;
    gt.h = gm.shape().h;
    gt.w = gm.shape().w;
    gt.values.resize(gm.data().size());
    for (std::size_t j = 0; j < gt.values.size(); ++j)
      gt.values[j] = gm.data()[j] > 0.5f ? 1 : 0;
    gts[i] = std::move(gt);
  }
  return evaluate_pairs(preds, gts, jobs);
}

void write_report_csv(const EvalReport& report, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "id,f_adaptive,f_max,mae,s_measure\n";
  char line[256];
  auto row = [&](const ImageMetrics& m) {
    std::snprintf(line, sizeof line, "%s,%.6f,%.6f,%.6f,%.6f\n", m.id.c_str(),
                  m.f_adaptive, m.f_max, m.mae, m.s_measure);
    out << line;
  };
  for (const auto& m : report.per_image) row(m);
  row(report.mean);
}

void write_pr_csv(const PrCurve& pr, const std::string& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << "threshold,precision,recall\n";
  char line[128];
  for (int k = 0; k < kThresholds; ++k) {
    std::snprintf(line, sizeof line, "%.6f,%.6f,%.6f\n", double(k) / 255.0,
                  pr.precision[std::size_t(k)], pr.recall[std::size_t(k)]);
    out << line;
  }
}

}  // namespace aamulet
