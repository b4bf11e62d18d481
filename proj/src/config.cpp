#include "aamulet/config.hpp"

#include <cstdlib>
#include <fstream>
#include <set>
#include <sstream>

#include <json.hpp>

namespace aamulet {

namespace {

using nlohmann::json;

[[noreturn]] void bad(const std::string& path, const std::string& what) {
  throw ConfigError("config: key '" + path + "' " + what);
}

void expect_object(const json& j, const std::string& path) {
  if (!j.is_object()) bad(path, "must be an object");
}

// Fail-fast on anything not in the section's vocabulary.
void check_keys(const json& j, const std::string& path,
                const std::set<std::string>& known) {
  for (auto it = j.begin(); it != j.end(); ++it)
    if (!known.count(it.key()))
      throw ConfigError("config: unknown key '" +
                        (path.empty() ? it.key() : path + "." + it.key()) +
                        "'");
}

double get_num(const json& j, const std::string& path) {
  if (!j.is_number()) bad(path, "must be a number");
  return j.get<double>();
}

int get_int(const json& j, const std::string& path) {
  if (!j.is_number_integer()) bad(path, "must be an integer");
  return j.get<int>();
}

bool get_bool(const json& j, const std::string& path) {
  if (!j.is_boolean()) bad(path, "must be a boolean");
  return j.get<bool>();
}

std::string get_str(const json& j, const std::string& path) {
  if (!j.is_string()) bad(path, "must be a string");
  return j.get<std::string>();
}

void parse_network(const json& j, NetworkConfig& cfg) {
  expect_object(j, "network");
  check_keys(j, "network",
             {"levels", "input_h", "input_w", "backbone_channels",
              "agg_width", "attention_kernel", "prediction_kernel", "pyramid",
              "attention_enabled", "aggregation_enabled",
              "attention_direction", "stage_depth"});
  if (j.contains("levels")) cfg.levels = get_int(j["levels"], "network.levels");
  if (j.contains("input_h")) cfg.input_h = get_int(j["input_h"], "network.input_h");
  if (j.contains("input_w")) cfg.input_w = get_int(j["input_w"], "network.input_w");
  if (j.contains("backbone_channels")) {
    const json& a = j["backbone_channels"];
    if (!a.is_array()) bad("network.backbone_channels", "must be an array");
    cfg.backbone_channels.clear();
    for (const auto& v : a)
      cfg.backbone_channels.push_back(get_int(v, "network.backbone_channels"));
  }
  if (j.contains("agg_width"))
    cfg.agg_width = get_int(j["agg_width"], "network.agg_width");
  if (j.contains("attention_kernel"))
    cfg.attention_kernel = get_int(j["attention_kernel"], "network.attention_kernel");
  if (j.contains("prediction_kernel"))
    cfg.prediction_kernel = get_int(j["prediction_kernel"], "network.prediction_kernel");
  if (j.contains("pyramid")) cfg.pyramid = get_bool(j["pyramid"], "network.pyramid");
  if (j.contains("attention_enabled"))
    cfg.attention_enabled = get_bool(j["attention_enabled"], "network.attention_enabled");
  if (j.contains("aggregation_enabled"))
    cfg.aggregation_enabled = get_bool(j["aggregation_enabled"], "network.aggregation_enabled");
  if (j.contains("attention_direction")) {
    const std::string d = get_str(j["attention_direction"], "network.attention_direction");
    if (d == "top_down")
      cfg.attention_direction = AttentionDirection::top_down;
    else if (d == "bottom_up")
      cfg.attention_direction = AttentionDirection::bottom_up;
    else
      bad("network.attention_direction", "must be top_down or bottom_up");
  }
  if (j.contains("stage_depth"))
    cfg.stage_depth = get_int(j["stage_depth"], "network.stage_depth");
}

void parse_loss(const json& j, LossConfig& cfg) {
  expect_object(j, "loss");
  check_keys(j, "loss", {"alpha"});
  if (j.contains("alpha")) {
    const json& a = j["alpha"];
    if (!a.is_array()) bad("loss.alpha", "must be an array");
    cfg.alpha.clear();
    for (const auto& v : a) cfg.alpha.push_back(get_num(v, "loss.alpha"));
  }
}

void parse_optim(const json& j, OptimConfig& cfg) {
  expect_object(j, "optim");
  check_keys(j, "optim",
             {"lr", "momentum", "weight_decay", "batch_size",
              "lr_decay_factor", "max_iters", "checkpoint_interval"});
  if (j.contains("lr")) cfg.lr = get_num(j["lr"], "optim.lr");
  if (j.contains("momentum")) cfg.momentum = get_num(j["momentum"], "optim.momentum");
  if (j.contains("weight_decay"))
    cfg.weight_decay = get_num(j["weight_decay"], "optim.weight_decay");
  if (j.contains("batch_size"))
    cfg.batch_size = get_int(j["batch_size"], "optim.batch_size");
  if (j.contains("lr_decay_factor"))
    cfg.lr_decay_factor = get_num(j["lr_decay_factor"], "optim.lr_decay_factor");
  if (j.contains("max_iters"))
    cfg.max_iters = get_int(j["max_iters"], "optim.max_iters");
  if (j.contains("checkpoint_interval"))
    cfg.checkpoint_interval = get_int(j["checkpoint_interval"], "optim.checkpoint_interval");
}

void parse_augment(const json& j, AugmentSpec& cfg) {
  expect_object(j, "augment");
  check_keys(j, "augment", {"mirror", "rotations", "crop_min", "crop_max"});
  if (j.contains("mirror")) cfg.mirror = get_bool(j["mirror"], "augment.mirror");
  if (j.contains("rotations")) {
    const json& a = j["rotations"];
    if (!a.is_array()) bad("augment.rotations", "must be an array");
    cfg.rotations.clear();
    for (const auto& v : a)
      cfg.rotations.push_back(get_int(v, "augment.rotations"));
  }
  if (j.contains("crop_min")) cfg.crop_min = get_num(j["crop_min"], "augment.crop_min");
  if (j.contains("crop_max")) cfg.crop_max = get_num(j["crop_max"], "augment.crop_max");
}

void parse_data(const json& j, SynthSpec& cfg) {
  expect_object(j, "data");
  check_keys(j, "data",
             {"seed", "image_h", "image_w", "shapes_min", "shapes_max",
              "kinds", "contrast_min", "contrast_max", "noise", "gradient",
              "margin", "boundary_profile"});
  if (j.contains("seed")) {
    if (!j["seed"].is_number_unsigned() && !j["seed"].is_number_integer())
      bad("data.seed", "must be a non-negative integer");
    cfg.seed = j["seed"].get<std::uint64_t>();
  }
  if (j.contains("image_h")) cfg.image_h = get_int(j["image_h"], "data.image_h");
  if (j.contains("image_w")) cfg.image_w = get_int(j["image_w"], "data.image_w");
  if (j.contains("shapes_min"))
    cfg.shapes_min = get_int(j["shapes_min"], "data.shapes_min");
  if (j.contains("shapes_max"))
    cfg.shapes_max = get_int(j["shapes_max"], "data.shapes_max");
  if (j.contains("kinds")) {
    const json& a = j["kinds"];
    if (!a.is_array()) bad("data.kinds", "must be an array");
    cfg.kinds.clear();
    for (const auto& v : a) {
      const std::string k = get_str(v, "data.kinds");
      if (k == "ellipse")
        cfg.kinds.push_back(ShapeKind::ellipse);
      else if (k == "rectangle")
        cfg.kinds.push_back(ShapeKind::rectangle);
      else if (k == "triangle")
        cfg.kinds.push_back(ShapeKind::triangle);
      else
        bad("data.kinds", "must list ellipse/rectangle/triangle");
    }
  }
  if (j.contains("contrast_min"))
    cfg.contrast_min = get_num(j["contrast_min"], "data.contrast_min");
  if (j.contains("contrast_max"))
    cfg.contrast_max = get_num(j["contrast_max"], "data.contrast_max");
  if (j.contains("noise")) cfg.noise = get_num(j["noise"], "data.noise");
  if (j.contains("gradient")) cfg.gradient = get_num(j["gradient"], "data.gradient");
  if (j.contains("margin")) cfg.margin = get_int(j["margin"], "data.margin");
  if (j.contains("boundary_profile"))
    cfg.boundary_profile = get_bool(j["boundary_profile"], "data.boundary_profile");
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  expect_object(j, "<root>");
  check_keys(j, "", {"network", "loss", "optim", "augment", "data"});
  RunConfig cfg;
  if (j.contains("network")) parse_network(j["network"], cfg.network);
  if (j.contains("loss")) parse_loss(j["loss"], cfg.loss);
  if (j.contains("optim")) parse_optim(j["optim"], cfg.optim);
  if (j.contains("augment")) parse_augment(j["augment"], cfg.augment);
  if (j.contains("data")) parse_data(j["data"], cfg.data);
  cfg.validate();
  return cfg;
}

RunConfig parse_run_config_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config: cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
  json j;
  json& n = j["network"];
  n["levels"] = cfg.network.levels;
  n["input_h"] = cfg.network.input_h;
  n["input_w"] = cfg.network.input_w;
  n["backbone_channels"] = cfg.network.backbone_channels;
  n["agg_width"] = cfg.network.agg_width;
  n["attention_kernel"] = cfg.network.attention_kernel;
  n["prediction_kernel"] = cfg.network.prediction_kernel;
  n["pyramid"] = cfg.network.pyramid;
  n["attention_enabled"] = cfg.network.attention_enabled;
  n["aggregation_enabled"] = cfg.network.aggregation_enabled;
  n["attention_direction"] =
      cfg.network.attention_direction == AttentionDirection::bottom_up
          ? "bottom_up"
          : "top_down";
  n["stage_depth"] = cfg.network.stage_depth;
  j["loss"]["alpha"] = cfg.loss.resolve(cfg.network.levels);
  json& o = j["optim"];
  o["lr"] = cfg.optim.lr;
  o["momentum"] = cfg.optim.momentum;
  o["weight_decay"] = cfg.optim.weight_decay;
  o["batch_size"] = cfg.optim.batch_size;
  o["lr_decay_factor"] = cfg.optim.lr_decay_factor;
  o["max_iters"] = cfg.optim.max_iters;
  o["checkpoint_interval"] = cfg.optim.checkpoint_interval;
  json& a = j["augment"];
  a["mirror"] = cfg.augment.mirror;
  a["rotations"] = cfg.augment.rotations;
  a["crop_min"] = cfg.augment.crop_min;
  a["crop_max"] = cfg.augment.crop_max;
  json& d = j["data"];
  d["seed"] = cfg.data.seed;
  d["image_h"] = cfg.data.image_h;
  d["image_w"] = cfg.data.image_w;
  d["shapes_min"] = cfg.data.shapes_min;
  d["shapes_max"] = cfg.data.shapes_max;
  json kinds = json::array();
  for (ShapeKind k : cfg.data.kinds)
    kinds.push_back(k == ShapeKind::ellipse     ? "ellipse"
                    : k == ShapeKind::rectangle ? "rectangle"
                                                : "triangle");
  d["kinds"] = kinds;
  d["contrast_min"] = cfg.data.contrast_min;
  d["contrast_max"] = cfg.data.contrast_max;
  d["noise"] = cfg.data.noise;
  d["gradient"] = cfg.data.gradient;
  d["margin"] = cfg.data.margin;
  d["boundary_profile"] = cfg.data.boundary_profile;
  return j.dump(2) + "\n";
}

void apply_seed_override(RunConfig& cfg) {
  const char* env = std::getenv("AAMULET_SEED");
  if (!env || !*env) return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (!end || *end != '\0')
    throw ConfigError("AAMULET_SEED must be a non-negative integer, got '" +
                      std::string(env) + "'");
  cfg.data.seed = v;
}

}  // namespace aamulet
