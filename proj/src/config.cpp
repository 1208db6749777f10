#include "mvr/config.hpp"

#include <json.hpp>

#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "mvr/errors.hpp"

namespace mvr {

using nlohmann::json;

void OptimizerConfig::validate() const {
  if (!(lr > 0.0)) throw ConfigError("optimizer: lr must be positive");
  if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
    throw ConfigError("optimizer: betas must lie in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("optimizer: eps must be positive");
  if (weight_decay < 0.0) throw ConfigError("optimizer: weight decay must be >= 0");
}

void RunConfig::validate() const {
  modality();  // throws on unknown name
  if (suite_scenes < 1) throw ConfigError("config: suite_scenes must be >= 1");
  if (image_block < 1 || bev_block < 1)
    throw ConfigError("config: mask blocks must be >= 1");
  if (image_ratio < 0.0 || image_ratio > 1.0 || point_ratio < 0.0 || point_ratio > 1.0)
    throw ConfigError("config: mask ratios must lie in [0, 1]");
  budget.validate();
  weights.validate();
  optim.validate();
  dims.validate();
  if (lidar_azimuths < 1 || lidar_rows < 1)
    throw ConfigError("config: lidar grid must be positive");
  if (steps < 0) throw ConfigError("config: steps must be >= 0");
  if (threads < 1) throw ConfigError("config: threads must be >= 1");
  if (checkpoint_every < 1 || eval_every < 1 || eval_interval < 1)
    throw ConfigError("config: periods must be >= 1");
  if (out_dir.empty()) throw ConfigError("config: out_dir must not be empty");
}

namespace {

void reject_unknown(const json& obj, const char* where,
                    std::initializer_list<const char*> allowed) {
  for (auto it = obj.begin(); it != obj.end(); ++it) {
    bool known = false;
    for (const char* k : allowed)
      if (it.key() == k) {
        known = true;
        break;
      }
    if (!known)
      throw ConfigError(std::string("config: unknown key '") + it.key() + "' in " +
                        where);
  }
}

template <typename T>
void get_to(const json& obj, const char* key, T& out) {
  if (!obj.contains(key)) return;
  try {
    obj.at(key).get_to(out);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

RunConfig parse_config_json(const std::string& text) {
  json root;
  try {
    root = json::parse(text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: parse error: ") + e.what());
  }
  if (!root.is_object()) throw ConfigError("config: top level must be an object");
  reject_unknown(root, "top level",
                 {"scene", "suite_scenes", "modality", "image_mask", "point_mask",
                  "rays", "loss", "optimizer", "model", "lidar",
                  "oracle_depth_supervision", "steps", "seed", "out_dir", "threads",
                  "checkpoint_every", "eval_every", "eval_interval",
                  "deterministic_timing"});

  RunConfig cfg;
  get_to(root, "scene", cfg.scene_path);
  get_to(root, "suite_scenes", cfg.suite_scenes);
  get_to(root, "modality", cfg.modality_name);
  if (root.contains("image_mask")) {
    const json& m = root.at("image_mask");
    reject_unknown(m, "image_mask", {"block", "ratio"});
    get_to(m, "block", cfg.image_block);
    get_to(m, "ratio", cfg.image_ratio);
  }
  if (root.contains("point_mask")) {
    const json& m = root.at("point_mask");
    reject_unknown(m, "point_mask", {"block", "ratio"});
    get_to(m, "block", cfg.bev_block);
    get_to(m, "ratio", cfg.point_ratio);
  }
  if (root.contains("rays")) {
    const json& r = root.at("rays");
    reject_unknown(r, "rays",
                   {"strategy", "interval", "per_view", "points", "tau", "stratified"});
    std::string strategy = to_string(cfg.budget.strategy);
    get_to(r, "strategy", strategy);
    cfg.budget.strategy = ray_strategy_from_string(strategy);
    get_to(r, "interval", cfg.budget.interval);
    get_to(r, "per_view", cfg.budget.rays_per_view);
    get_to(r, "points", cfg.budget.points_per_ray);
    get_to(r, "tau", cfg.budget.tau);
    get_to(r, "stratified", cfg.budget.stratified);
  }
  if (root.contains("loss")) {
    const json& l = root.at("loss");
    reject_unknown(l, "loss", {"lambda_rgb", "lambda_depth"});
    get_to(l, "lambda_rgb", cfg.weights.lambda_rgb);
    get_to(l, "lambda_depth", cfg.weights.lambda_depth);
  }
  if (root.contains("optimizer")) {
    const json& o = root.at("optimizer");
    reject_unknown(o, "optimizer", {"lr", "beta1", "beta2", "eps", "weight_decay"});
    get_to(o, "lr", cfg.optim.lr);
    get_to(o, "beta1", cfg.optim.beta1);
    get_to(o, "beta2", cfg.optim.beta2);
    get_to(o, "eps", cfg.optim.eps);
    get_to(o, "weight_decay", cfg.optim.weight_decay);
  }
  if (root.contains("model")) {
    const json& m = root.at("model");
    reject_unknown(m, "model",
                   {"channels", "depth_bins", "render_channels", "mlp_width",
                    "sdf_layers", "rgb_layers", "geo_dim", "voxel_resolution"});
    int channels = cfg.dims.image_channels;
    get_to(m, "channels", channels);
    cfg.dims.image_channels = channels;
    cfg.dims.point_channels = channels;
    get_to(m, "depth_bins", cfg.dims.depth_bins);
    get_to(m, "render_channels", cfg.dims.render_channels);
    get_to(m, "mlp_width", cfg.dims.mlp_width);
    get_to(m, "sdf_layers", cfg.dims.sdf_layers);
    get_to(m, "rgb_layers", cfg.dims.rgb_layers);
    get_to(m, "geo_dim", cfg.dims.geo_dim);
    if (m.contains("voxel_resolution")) {
      std::vector<int> r;
      get_to(m, "voxel_resolution", r);
      if (r.size() != 3)
        throw ConfigError("config: voxel_resolution needs exactly three entries");
      cfg.dims.voxel_resolution = Eigen::Vector3i(r[0], r[1], r[2]);
    }
  }
  if (root.contains("lidar")) {
    const json& l = root.at("lidar");
    reject_unknown(l, "lidar", {"azimuths", "rows"});
    get_to(l, "azimuths", cfg.lidar_azimuths);
    get_to(l, "rows", cfg.lidar_rows);
  }
  get_to(root, "oracle_depth_supervision", cfg.oracle_depth_supervision);
  get_to(root, "steps", cfg.steps);
  get_to(root, "seed", cfg.seed);
  get_to(root, "out_dir", cfg.out_dir);
  get_to(root, "threads", cfg.threads);
  get_to(root, "checkpoint_every", cfg.checkpoint_every);
  get_to(root, "eval_every", cfg.eval_every);
  get_to(root, "eval_interval", cfg.eval_interval);
  get_to(root, "deterministic_timing", cfg.deterministic_timing);
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("config: cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_json(ss.str());
}

namespace {

struct EnvField {
  const char* name;  // suffix after MVR_
  std::function<void(RunConfig&, const std::string&)> apply;
};

long long parse_int(const std::string& v, const char* key) {
  try {
    std::size_t used = 0;
    long long n = std::stoll(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return n;
  } catch (const std::exception&) {
    throw ConfigError(std::string("config: env ") + key + " is not an integer: " + v);
  }
}

double parse_double(const std::string& v, const char* key) {
  try {
    std::size_t used = 0;
    double d = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument("trailing");
    return d;
  } catch (const std::exception&) {
    throw ConfigError(std::string("config: env ") + key + " is not a number: " + v);
  }
}

bool parse_bool(const std::string& v, const char* key) {
  if (v == "1" || v == "true") return true;
  if (v == "0" || v == "false") return false;
  throw ConfigError(std::string("config: env ") + key + " is not a bool: " + v);
}

const std::vector<EnvField>& env_fields() {
  static const std::vector<EnvField> fields = {
      {"SCENE", [](RunConfig& c, const std::string& v) { c.scene_path = v; }},
      {"SUITE_SCENES",
       [](RunConfig& c, const std::string& v) {
         c.suite_scenes = static_cast<int>(parse_int(v, "SUITE_SCENES"));
       }},
      {"MODALITY", [](RunConfig& c, const std::string& v) { c.modality_name = v; }},
      {"IMAGE_MASK_BLOCK",
       [](RunConfig& c, const std::string& v) {
         c.image_block = static_cast<int>(parse_int(v, "IMAGE_MASK_BLOCK"));
       }},
      {"IMAGE_MASK_RATIO",
       [](RunConfig& c, const std::string& v) {
         c.image_ratio = parse_double(v, "IMAGE_MASK_RATIO");
       }},
      {"POINT_MASK_BLOCK",
       [](RunConfig& c, const std::string& v) {
         c.bev_block = static_cast<int>(parse_int(v, "POINT_MASK_BLOCK"));
       }},
      {"POINT_MASK_RATIO",
       [](RunConfig& c, const std::string& v) {
         c.point_ratio = parse_double(v, "POINT_MASK_RATIO");
       }},
      {"RAYS_STRATEGY",
       [](RunConfig& c, const std::string& v) {
         c.budget.strategy = ray_strategy_from_string(v);
       }},
      {"RAYS_INTERVAL",
       [](RunConfig& c, const std::string& v) {
         c.budget.interval = static_cast<int>(parse_int(v, "RAYS_INTERVAL"));
       }},
      {"RAYS_PER_VIEW",
       [](RunConfig& c, const std::string& v) {
         c.budget.rays_per_view = static_cast<int>(parse_int(v, "RAYS_PER_VIEW"));
       }},
      {"RAYS_POINTS",
       [](RunConfig& c, const std::string& v) {
         c.budget.points_per_ray = static_cast<int>(parse_int(v, "RAYS_POINTS"));
       }},
      {"RAYS_TAU",
       [](RunConfig& c, const std::string& v) {
         c.budget.tau = parse_double(v, "RAYS_TAU");
       }},
      {"RAYS_STRATIFIED",
       [](RunConfig& c, const std::string& v) {
         c.budget.stratified = parse_bool(v, "RAYS_STRATIFIED");
       }},
      {"LOSS_LAMBDA_RGB",
       [](RunConfig& c, const std::string& v) {
         c.weights.lambda_rgb = parse_double(v, "LOSS_LAMBDA_RGB");
       }},
      {"LOSS_LAMBDA_DEPTH",
       [](RunConfig& c, const std::string& v) {
         c.weights.lambda_depth = parse_double(v, "LOSS_LAMBDA_DEPTH");
       }},
      {"OPT_LR",
       [](RunConfig& c, const std::string& v) { c.optim.lr = parse_double(v, "OPT_LR"); }},
      {"OPT_BETA1",
       [](RunConfig& c, const std::string& v) {
         c.optim.beta1 = parse_double(v, "OPT_BETA1");
       }},
      {"OPT_BETA2",
       [](RunConfig& c, const std::string& v) {
         c.optim.beta2 = parse_double(v, "OPT_BETA2");
       }},
      {"OPT_EPS",
       [](RunConfig& c, const std::string& v) {
         c.optim.eps = parse_double(v, "OPT_EPS");
       }},
      {"OPT_WEIGHT_DECAY",
       [](RunConfig& c, const std::string& v) {
         c.optim.weight_decay = parse_double(v, "OPT_WEIGHT_DECAY");
       }},
      {"MODEL_CHANNELS",
       [](RunConfig& c, const std::string& v) {
         int n = static_cast<int>(parse_int(v, "MODEL_CHANNELS"));
         c.dims.image_channels = n;
         c.dims.point_channels = n;
       }},
      {"MODEL_DEPTH_BINS",
       [](RunConfig& c, const std::string& v) {
         c.dims.depth_bins = static_cast<int>(parse_int(v, "MODEL_DEPTH_BINS"));
       }},
      {"MODEL_RENDER_CHANNELS",
       [](RunConfig& c, const std::string& v) {
         c.dims.render_channels = static_cast<int>(parse_int(v, "MODEL_RENDER_CHANNELS"));
       }},
      {"MODEL_MLP_WIDTH",
       [](RunConfig& c, const std::string& v) {
         c.dims.mlp_width = static_cast<int>(parse_int(v, "MODEL_MLP_WIDTH"));
       }},
      {"LIDAR_AZIMUTHS",
       [](RunConfig& c, const std::string& v) {
         c.lidar_azimuths = static_cast<int>(parse_int(v, "LIDAR_AZIMUTHS"));
       }},
      {"LIDAR_ROWS",
       [](RunConfig& c, const std::string& v) {
         c.lidar_rows = static_cast<int>(parse_int(v, "LIDAR_ROWS"));
       }},
      {"ORACLE_DEPTH_SUPERVISION",
       [](RunConfig& c, const std::string& v) {
         c.oracle_depth_supervision = parse_bool(v, "ORACLE_DEPTH_SUPERVISION");
       }},
      {"STEPS",
       [](RunConfig& c, const std::string& v) {
         c.steps = static_cast<int>(parse_int(v, "STEPS"));
       }},
      {"SEED",
       [](RunConfig& c, const std::string& v) {
         c.seed = static_cast<std::uint64_t>(parse_int(v, "SEED"));
       }},
      {"OUT_DIR", [](RunConfig& c, const std::string& v) { c.out_dir = v; }},
      {"THREADS",
       [](RunConfig& c, const std::string& v) {
         c.threads = static_cast<int>(parse_int(v, "THREADS"));
       }},
      {"CHECKPOINT_EVERY",
       [](RunConfig& c, const std::string& v) {
         c.checkpoint_every = static_cast<int>(parse_int(v, "CHECKPOINT_EVERY"));
       }},
      {"EVAL_EVERY",
       [](RunConfig& c, const std::string& v) {
         c.eval_every = static_cast<int>(parse_int(v, "EVAL_EVERY"));
       }},
      {"EVAL_INTERVAL",
       [](RunConfig& c, const std::string& v) {
         c.eval_interval = static_cast<int>(parse_int(v, "EVAL_INTERVAL"));
       }},
      {"DETERMINISTIC_TIMING",
       [](RunConfig& c, const std::string& v) {
         c.deterministic_timing = parse_bool(v, "DETERMINISTIC_TIMING");
       }},
  };
  return fields;
}

}  // namespace

int apply_env_overrides(RunConfig& cfg) {
  int applied = 0;
  for (const EnvField& f : env_fields()) {
    std::string key = std::string("MVR_") + f.name;
    const char* value = std::getenv(key.c_str());
    if (!value) continue;
    f.apply(cfg, value);
    ++applied;
  }
  return applied;
}

std::string config_to_json(const RunConfig& cfg) {
  json root;
  root["scene"] = cfg.scene_path;
  root["suite_scenes"] = cfg.suite_scenes;
  root["modality"] = cfg.modality_name;
  root["image_mask"] = {{"block", cfg.image_block}, {"ratio", cfg.image_ratio}};
  root["point_mask"] = {{"block", cfg.bev_block}, {"ratio", cfg.point_ratio}};
  root["rays"] = {{"strategy", to_string(cfg.budget.strategy)},
                  {"interval", cfg.budget.interval},
                  {"per_view", cfg.budget.rays_per_view},
                  {"points", cfg.budget.points_per_ray},
                  {"tau", cfg.budget.tau},
                  {"stratified", cfg.budget.stratified}};
  root["loss"] = {{"lambda_rgb", cfg.weights.lambda_rgb},
                  {"lambda_depth", cfg.weights.lambda_depth}};
  root["optimizer"] = {{"lr", cfg.optim.lr},
                       {"beta1", cfg.optim.beta1},
                       {"beta2", cfg.optim.beta2},
                       {"eps", cfg.optim.eps},
                       {"weight_decay", cfg.optim.weight_decay}};
  root["model"] = {{"channels", cfg.dims.image_channels},
                   {"depth_bins", cfg.dims.depth_bins},
                   {"render_channels", cfg.dims.render_channels},
                   {"mlp_width", cfg.dims.mlp_width},
                   {"sdf_layers", cfg.dims.sdf_layers},
                   {"rgb_layers", cfg.dims.rgb_layers},
                   {"geo_dim", cfg.dims.geo_dim},
                   {"voxel_resolution",
                    {cfg.dims.voxel_resolution.x(), cfg.dims.voxel_resolution.y(),
                     cfg.dims.voxel_resolution.z()}}};
  root["lidar"] = {{"azimuths", cfg.lidar_azimuths}, {"rows", cfg.lidar_rows}};
  root["oracle_depth_supervision"] = cfg.oracle_depth_supervision;
  root["steps"] = cfg.steps;
  root["seed"] = cfg.seed;
  root["out_dir"] = cfg.out_dir;
  root["threads"] = cfg.threads;
  root["checkpoint_every"] = cfg.checkpoint_every;
  root["eval_every"] = cfg.eval_every;
  root["eval_interval"] = cfg.eval_interval;
  root["deterministic_timing"] = cfg.deterministic_timing;
  return root.dump(2) + "\n";
}

}  // namespace mvr
