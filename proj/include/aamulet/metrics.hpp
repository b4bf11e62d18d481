#ifndef AAMULET_METRICS_HPP_
#define AAMULET_METRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

namespace aamulet {

struct SaliencyMap {
  int h = 0, w = 0;
  std::vector<double> values;  // in [0,1]
  std::string id;
};

struct GroundTruth {
  int h = 0, w = 0;
  std::vector<std::uint8_t> values;  // strictly 0/1
  std::string id;
};

// Dataset-mean precision/recall at thresholds k/255, k = 0..255. Images with
// an empty ground truth have no defined recall and are excluded from the
// recall averages; their count is reported.
struct PrCurve {
  std::vector<double> precision;  // length 256
  std::vector<double> recall;     // length 256
  int empty_gt_excluded = 0;
};

struct ImageMetrics {
  std::string id;
  double f_adaptive = 0;
  double f_max = 0;
  double mae = 0;
  double s_measure = 0;
};

struct EvalReport {
  std::vector<ImageMetrics> per_image;
  ImageMetrics mean;  // id = "MEAN", arithmetic means of the columns
  PrCurve pr;
};

// Binarization is strict (value > threshold). Precision of an empty
// binarization with nothing wrong (TP = FP = 0) is defined as 1.
PrCurve pr_curve(const std::vector<SaliencyMap>& preds,
                 const std::vector<GroundTruth>& gts);

// F = (1+eta2)*P*R / (eta2*P + R); 0 when the denominator vanishes.
double f_measure(double precision, double recall, double eta2 = 0.3);

// F at the adaptive threshold min(1, 2*mean(pred)).
double f_adaptive(const SaliencyMap& pred, const GroundTruth& gt);

// Best F over the 256-threshold sweep of this image.
double f_max(const SaliencyMap& pred, const GroundTruth& gt);

double mae(const SaliencyMap& pred, const GroundTruth& gt);

// Structure measure lambda*S_o + (1-lambda)*S_r, clamped to [0,1]. The
// object-aware and region-aware terms follow the published reference
// definition, including the degenerate all-background/all-foreground
// ground-truth branches.
double s_measure(const SaliencyMap& pred, const GroundTruth& gt,
                 double lambda = 0.5);
double s_object(const SaliencyMap& pred, const GroundTruth& gt);
double s_region(const SaliencyMap& pred, const GroundTruth& gt);

EvalReport evaluate_pairs(const std::vector<SaliencyMap>& preds,
                          const std::vector<GroundTruth>& gts, int jobs = 1);

// Pairs <id>.pgm predictions in pred_dir with the manifest's ground-truth
// masks. Missing predictions fail with every offending id listed.
EvalReport evaluate_dataset(const std::string& pred_dir,
                            const std::string& manifest_path, int jobs = 1);

// id,f_adaptive,f_max,mae,s_measure rows plus a MEAN row; 6 decimal places.
void write_report_csv(const EvalReport& report, const std::string& path);
// threshold,precision,recall with 256 rows; 6 decimal places.
void write_pr_csv(const PrCurve& pr, const std::string& path);

}  // namespace aamulet

#endif  // AAMULET_METRICS_HPP_
