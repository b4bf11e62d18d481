// aamulet: dataset synthesis, training, prediction, evaluation, gradient
// checking and ablation runs for the contextual-attention saliency network.
//
// Exit codes: 0 success, 2 usage/config, 3 divergence, 4 checkpoint,
// 5 missing data, 1 anything else.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <thread>

#include <CLI11.hpp>

#include "aamulet/checkpoint.hpp"
#include "aamulet/config.hpp"
#include "aamulet/data_io.hpp"
#include "aamulet/gradcheck.hpp"
#include "aamulet/metrics.hpp"
#include "aamulet/network.hpp"
#include "aamulet/training.hpp"

namespace fs = std::filesystem;
using namespace aamulet;

namespace {

RunConfig load_config(const std::string& path) {
  RunConfig cfg =
      path.empty() ? RunConfig{} : parse_run_config_file(path);
  apply_seed_override(cfg);
  return cfg;
}

void echo_config(const RunConfig& cfg, const std::string& dir) {
  std::ofstream out(fs::path(dir) / "config.json", std::ios::trunc);
  if (!out) throw IoError("cannot write config.json under " + dir);
  out << serialize_run_config(cfg);
}

template <typename Fn>
void parallel_over(std::size_t count, int jobs, Fn&& fn) {
  if (jobs <= 1 || count <= 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::vector<std::thread> pool;
  const std::size_t workers = std::min(std::size_t(jobs), count);
  for (std::size_t t = 0; t < workers; ++t)
    pool.emplace_back([&] {
      for (;;) {
        const std::size_t i = next.fetch_add(1);
        if (i >= count) return;
        fn(i);
      }
    });
  for (auto& th : pool) th.join();
}

// Runs one sample through the network in inference mode and returns the
// saliency map at the sample's native resolution.
Tensor<float> predict_sample(const ImageSample& sample, ParameterStore& store,
                             const NetworkConfig& cfg) {
  Tensor<float> img = sample.image;
  const Shape in = img.shape();
  if (in.h != cfg.input_h || in.w != cfg.input_w)
    img = resize_bilinear(img, cfg.input_h, cfg.input_w);
  auto trace = forward(img, store, cfg, BnMode::infer);
  Tensor<float> sal = trace.saliency;
  if (in.h != cfg.input_h || in.w != cfg.input_w)
    sal = resize_bilinear(sal, in.h, in.w);
  return sal;
}

SaliencyMap to_map(const Tensor<float>& t, const std::string& id) {
  SaliencyMap m;
  m.h = t.shape().h;
  m.w = t.shape().w;
  m.id = id;
  m.values.assign(t.data().begin(), t.data().end());
  return m;
}

GroundTruth to_gt(const Tensor<float>& t, const std::string& id) {
  GroundTruth g;
  g.h = t.shape().h;
  g.w = t.shape().w;
  g.id = id;
  g.values.resize(t.data().size());
  for (std::size_t i = 0; i < g.values.size(); ++i)
    g.values[i] = t.data()[i] > 0.5f ? 1 : 0;
  return g;
}

int cmd_synth(const std::string& config_path, const std::string& out_dir,
              int count) {
  RunConfig cfg = load_config(config_path);
  auto samples = generate_synthetic(cfg.data, count);
  fs::create_directories(out_dir);
  const std::string manifest = save_dataset(samples, out_dir);
  std::cout << "wrote " << samples.size() << " samples, manifest " << manifest
            << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& manifest,
              const std::string& out_dir, const std::string& resume) {
  RunConfig cfg = load_config(config_path);
  TrainJob job;
  job.dataset = read_manifest(manifest);
  job.network = cfg.network;
  job.loss = cfg.loss;
  job.optim = cfg.optim;
  job.augment = cfg.augment;
  job.seed = cfg.data.seed;
  job.out_dir = out_dir;
  job.resume_checkpoint = resume;
  fs::create_directories(out_dir);
  TrainResult result = train(job);
  cfg.network = result.network;
  echo_config(cfg, out_dir);
  if (result.diverged) {
    std::cerr << "training diverged at iteration " << result.final_iter + 1
              << "; last good checkpoint: "
              << (result.final_checkpoint.empty() ? "<none>"
                                                  : result.final_checkpoint)
              << "\n";
    throw DivergedError("non-finite loss");
  }
  if (!result.rows.empty())
    std::cout << "trained " << result.rows.size() << " iterations, final loss "
              << result.rows.back().loss_raw << ", checkpoint "
              << result.final_checkpoint << "\n";
  else
    std::cout << "nothing to train (max_iters reached in checkpoint)\n";
  return 0;
}

int cmd_predict(const std::string& ckpt_path, const std::string& manifest,
                const std::string& out_dir, int jobs) {
  Checkpoint ck = load_checkpoint(ckpt_path);
  auto samples = read_manifest(manifest);
  fs::create_directories(out_dir);
  parallel_over(samples.size(), jobs, [&](std::size_t i) {
    const Tensor<float> sal = predict_sample(samples[i], ck.store, ck.config);
    write_pgm((fs::path(out_dir) / (samples[i].id + ".pgm")).string(), sal);
  });
  std::cout << "wrote " << samples.size() << " saliency maps to " << out_dir
            << "\n";
  return 0;
}

int cmd_eval(const std::string& pred_dir, const std::string& manifest,
             const std::string& report_path, const std::string& pr_path,
             int jobs) {
  EvalReport report = evaluate_dataset(pred_dir, manifest, jobs);
  write_report_csv(report, report_path);
  if (!pr_path.empty()) write_pr_csv(report.pr, pr_path);
  std::printf("MEAN f_adaptive=%.6f f_max=%.6f mae=%.6f s=%.6f (%zu images)\n",
              report.mean.f_adaptive, report.mean.f_max, report.mean.mae,
              report.mean.s_measure, report.per_image.size());
  return 0;
}

int cmd_gradcheck(const std::string& config_path, double tolerance) {
  RunConfig cfg = load_config(config_path);
  auto store = init_params_t<double>(cfg.network, cfg.data.seed);
  const std::int64_t params = store.trainable_count();
  if (params > 50000)
    throw ConfigError("gradcheck: config has " + std::to_string(params) +
                      " parameters; the 64-bit check is capped at 50k");
  SynthSpec data = cfg.data;
  data.image_h = cfg.network.input_h;
  data.image_w = cfg.network.input_w;
  auto samples = generate_synthetic(data, 1);
  const Shape is = samples[0].image.shape();
  std::vector<double> img(samples[0].image.data().begin(),
                          samples[0].image.data().end());
  std::vector<double> msk(samples[0].mask.data().begin(),
                          samples[0].mask.data().end());
  Tensor<double> x(is, std::move(img));
  Tensor<double> m(samples[0].mask.shape(), std::move(msk));
  auto f = [&]() {
    auto trace = forward(x, store, cfg.network, BnMode::train);
    return total_loss(trace, m, cfg.loss);
  };
  const double err = grad_check(f, store.trainable_tensors(), 1e-4);
  std::printf("max relative error %.6e over %lld parameters (tolerance %g)\n",
              err, static_cast<long long>(params), tolerance);
  return err < tolerance ? 0 : 1;
}

NetworkConfig apply_variant(NetworkConfig cfg, char v) {
  switch (v) {
    case 'a':
      cfg.aggregation_enabled = false;
      cfg.attention_enabled = false;
      break;
    case 'b':
      cfg.aggregation_enabled = true;
      cfg.attention_enabled = false;
      break;
    case 'c':
      cfg.aggregation_enabled = true;
      cfg.attention_enabled = true;
      cfg.attention_direction = AttentionDirection::bottom_up;
      cfg.pyramid = false;
      break;
    case 'd':
      cfg.aggregation_enabled = true;
      cfg.attention_enabled = true;
      cfg.attention_direction = AttentionDirection::top_down;
      cfg.pyramid = false;
      break;
    case 'e':
      cfg.aggregation_enabled = true;
      cfg.attention_enabled = true;
      cfg.attention_direction = AttentionDirection::top_down;
      cfg.pyramid = true;
      break;
    case 'f':
      // deeper-backbone analog of the pyramid model
      cfg = apply_variant(cfg, 'e');
      cfg.stage_depth *= 2;
      break;
    default:
      throw ConfigError(std::string("ablate: unknown variant '") + v + "'");
  }
  return cfg;
}

int cmd_ablate(const std::string& config_path, const std::string& manifest,
               const std::string& out_dir, const std::string& variants,
               int seeds, double test_fraction) {
  RunConfig cfg = load_config(config_path);
  if (seeds < 1) throw ConfigError("ablate: --seeds must be >= 1");
  if (!(test_fraction > 0) || test_fraction >= 1)
    throw ConfigError("ablate: --test-fraction must lie in (0,1)");
  std::vector<char> vs;
  for (char c : variants) {
    if (c == ',' || c == ' ') continue;
    apply_variant(cfg.network, c);  // validates the label
    vs.push_back(c);
  }
  if (vs.empty()) throw ConfigError("ablate: no variants given");

  auto all = read_manifest(manifest);
  const std::size_t test_count =
      std::max<std::size_t>(1, std::size_t(std::lround(all.size() * test_fraction)));
  if (test_count >= all.size())
    throw ConfigError("ablate: dataset too small for the requested split");
  std::vector<ImageSample> train_set(all.begin(), all.end() - test_count);
  std::vector<ImageSample> test_set(all.end() - test_count, all.end());

  fs::create_directories(out_dir);
  echo_config(cfg, out_dir);
  std::ofstream csv(fs::path(out_dir) / "ablation.csv", std::ios::trunc);
  if (!csv) throw IoError("cannot write ablation.csv under " + out_dir);
  csv << "variant,seed,f_adaptive,f_max,mae,s_measure\n";
  char line[256];

  for (char v : vs) {
    std::vector<ImageMetrics> runs;
    for (int si = 0; si < seeds; ++si) {
      TrainJob job;
      job.dataset = train_set;
      job.network = apply_variant(cfg.network, v);
      job.loss = cfg.loss;
      job.optim = cfg.optim;
      job.augment = cfg.augment;
      job.seed = cfg.data.seed + std::uint64_t(si);
      TrainResult result = train(job);
      if (result.diverged)
        throw DivergedError(std::string("ablate: variant ") + v + " seed " +
                            std::to_string(si) + " diverged");
      std::vector<SaliencyMap> preds(test_set.size());
      std::vector<GroundTruth> gts(test_set.size());
      for (std::size_t i = 0; i < test_set.size(); ++i) {
        preds[i] = to_map(
            predict_sample(test_set[i], result.store, result.network),
            test_set[i].id);
        gts[i] = to_gt(test_set[i].mask, test_set[i].id);
      }
      EvalReport report = evaluate_pairs(preds, gts);
      runs.push_back(report.mean);
      std::snprintf(line, sizeof line, "%c,%d,%.6f,%.6f,%.6f,%.6f\n", v, si,
                    report.mean.f_adaptive, report.mean.f_max, report.mean.mae,
                    report.mean.s_measure);
      csv << line;
      std::cout << "variant " << v << " seed " << si << ": f_max "
                << report.mean.f_max << " mae " << report.mean.mae << "\n";
    }
    auto med = [&](auto proj) {
      std::vector<double> vals;
      for (const auto& r : runs) vals.push_back(proj(r));
      std::sort(vals.begin(), vals.end());
      const std::size_t n = vals.size();
      return n % 2 ? vals[n / 2] : 0.5 * (vals[n / 2 - 1] + vals[n / 2]);
    };
    std::snprintf(line, sizeof line, "%c,median,%.6f,%.6f,%.6f,%.6f\n", v,
                  med([](const ImageMetrics& m) { return m.f_adaptive; }),
                  med([](const ImageMetrics& m) { return m.f_max; }),
                  med([](const ImageMetrics& m) { return m.mae; }),
                  med([](const ImageMetrics& m) { return m.s_measure; }));
    csv << line;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"salient object detection with contextual attention pyramids"};
  app.require_subcommand(1);

  std::string config_path, out_dir, manifest, ckpt, resume, pred_dir;
  std::string report_path, pr_path, variants = "a,b,c,d,e";
  int count = 0, jobs = 1, seeds = 3;
  double tolerance = 1e-4, test_fraction = 0.25;

  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset");
  synth->add_option("--spec", config_path, "run config JSON");
  synth->add_option("--out", out_dir, "output directory")->required();
  synth->add_option("--count", count, "number of samples")->required();

  auto* train = app.add_subcommand("train", "train a model");
  train->add_option("--config", config_path, "run config JSON");
  train->add_option("--data", manifest, "dataset manifest")->required();
  train->add_option("--out", out_dir, "run directory")->required();
  train->add_option("--resume", resume, "checkpoint to resume from");

  auto* predict = app.add_subcommand("predict", "write saliency maps");
  predict->add_option("--ckpt", ckpt, "checkpoint file")->required();
  predict->add_option("--data", manifest, "dataset manifest")->required();
  predict->add_option("--out", out_dir, "output directory")->required();
  predict->add_option("--jobs", jobs, "parallel images");

  auto* eval = app.add_subcommand("eval", "evaluate predictions");
  eval->add_option("--pred", pred_dir, "prediction directory")->required();
  eval->add_option("--data", manifest, "dataset manifest")->required();
  eval->add_option("--out", report_path, "report CSV path")->required();
  eval->add_option("--pr", pr_path, "PR curve CSV path");
  eval->add_option("--jobs", jobs, "parallel images");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference check");
  gradcheck->add_option("--config", config_path, "run config JSON");
  gradcheck->add_option("--tolerance", tolerance, "max relative error");

  auto* ablate = app.add_subcommand("ablate", "train and score variants");
  ablate->add_option("--config", config_path, "run config JSON");
  ablate->add_option("--data", manifest, "dataset manifest")->required();
  ablate->add_option("--out", out_dir, "output directory")->required();
  ablate->add_option("--variants", variants, "comma-separated variant labels");
  ablate->add_option("--seeds", seeds, "seeds per variant");
  ablate->add_option("--test-fraction", test_fraction, "held-out fraction");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  }

  try {
    if (synth->parsed()) {
      if (count < 1) {
        std::cerr << "synth: --count must be >= 1\n";
        return 2;
      }
      return cmd_synth(config_path, out_dir, count);
    }
    if (train->parsed()) return cmd_train(config_path, manifest, out_dir, resume);
    if (predict->parsed()) return cmd_predict(ckpt, manifest, out_dir, jobs);
    if (eval->parsed())
      return cmd_eval(pred_dir, manifest, report_path, pr_path, jobs);
    if (gradcheck->parsed()) return cmd_gradcheck(config_path, tolerance);
    if (ablate->parsed())
      return cmd_ablate(config_path, manifest, out_dir, variants, seeds,
                        test_fraction);
  } catch (const ConfigError& e) {
    std::cerr << e.what() << "\n";
    return 2;
  } catch (const DivergedError& e) {
    std::cerr << e.what() << "\n";
    return 3;
  } catch (const CheckpointError& e) {
    std::cerr << e.what() << "\n";
    return 4;
  } catch (const MissingDataError& e) {
    std::cerr << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << e.what() << "\n";
    return 1;
  }
  return 2;
}
