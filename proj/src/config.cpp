#include "stld/config.hpp"

#include <cmath>
#include <fstream>
#include <set>
#include <sstream>

namespace stld {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

std::string join(const std::string& prefix, const std::string& key) {
  return prefix.empty() ? key : prefix + "." + key;
}

// Reads one JSON object, remembering which keys were consumed so that
// leftovers (typos, stale fields) can be reported by name.
class Reader {
 public:
  Reader(const json& j, std::string prefix) : j_(j), prefix_(std::move(prefix)) {
    if (!j_.is_object())
      throw ValidationError("config field '" + (prefix_.empty() ? std::string("<root>") : prefix_) +
                            "': expected an object");
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return fallback;
    try {
      return j_.at(key).get<T>();
    } catch (const json::exception& e) {
      throw ValidationError("config field '" + join(prefix_, key) + "': " + e.what());
    }
  }

  const json* child(const std::string& key) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return nullptr;
    return &j_.at(key);
  }

  std::string path(const std::string& key) const { return join(prefix_, key); }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ValidationError("config field '" + join(prefix_, it.key()) + "': unknown field");
  }

 private:
  const json& j_;
  std::string prefix_;
  std::set<std::string> seen_;
};

const json kEmpty = json::object();

const json& object_or_empty(const json* j) { return j ? *j : kEmpty; }

std::string aggregate_name(ConfidenceAggregate a) { return a == ConfidenceAggregate::Min ? "min" : "mean"; }

ConfidenceAggregate aggregate_from(const std::string& s) {
  if (s == "mean") return ConfidenceAggregate::Mean;
  if (s == "min") return ConfidenceAggregate::Min;
  throw ValidationError("config field 'strategy.aggregate': must be 'mean' or 'min', got '" + s + "'");
}

// Prefixes a module's own precondition message with the config context.
template <typename F>
void check(F&& f) {
  try {
    f();
  } catch (const ValidationError& e) {
    throw ValidationError(std::string("config: ") + e.what());
  }
}

}  // namespace

ordered_json task_to_json(const TaskConfig& t) {
  ordered_json j;
  j["grid"] = t.grid;
  j["landmarks"] = t.landmarks;
  const LandmarkSet shape = t.base_shape.rows() ? t.base_shape : LandmarkSet(0, 2);
  ordered_json pts = ordered_json::array();
  for (Index k = 0; k < shape.rows(); ++k) pts.push_back({shape(k, 0), shape(k, 1)});
  j["base_shape"] = pts;
  j["rotation_max"] = t.rotation_max;
  j["scale_min"] = t.scale_min;
  j["scale_max"] = t.scale_max;
  j["translation"] = t.translation;
  j["jitter_std"] = t.jitter_std;
  j["clutter_level"] = t.clutter_level;
  j["noise_std"] = t.noise_std;
  j["landmark_amplitude"] = t.landmark_amplitude;
  j["clutter_amplitude"] = t.clutter_amplitude;
  j["margin"] = t.margin;
  j["max_retries"] = t.max_retries;
  return j;
}

namespace {

TaskConfig read_task(Reader& r) {
  TaskConfig t;
  t.grid = r.get("grid", t.grid);
  t.landmarks = r.get("landmarks", t.landmarks);
  const auto pts = r.get("base_shape", std::vector<std::vector<double>>{});
  if (!pts.empty()) {
    t.base_shape.resize(static_cast<Index>(pts.size()), 2);
    for (std::size_t k = 0; k < pts.size(); ++k) {
      if (pts[k].size() != 2) throw ValidationError("config field '" + r.path("base_shape") + "': points must be [x, y]");
      t.base_shape(static_cast<Index>(k), 0) = pts[k][0];
      t.base_shape(static_cast<Index>(k), 1) = pts[k][1];
    }
  }
  t.rotation_max = r.get("rotation_max", t.rotation_max);
  t.scale_min = r.get("scale_min", t.scale_min);
  t.scale_max = r.get("scale_max", t.scale_max);
  t.translation = r.get("translation", t.translation);
  t.jitter_std = r.get("jitter_std", t.jitter_std);
  t.clutter_level = r.get("clutter_level", t.clutter_level);
  t.noise_std = r.get("noise_std", t.noise_std);
  t.landmark_amplitude = r.get("landmark_amplitude", t.landmark_amplitude);
  t.clutter_amplitude = r.get("clutter_amplitude", t.clutter_amplitude);
  t.margin = r.get("margin", t.margin);
  t.max_retries = r.get("max_retries", t.max_retries);
  r.finish();
  return t;
}

}  // namespace

TaskConfig task_from_json(const json& j) {
  Reader r(j, "task");
  return read_task(r);
}

ordered_json to_json(const ExperimentConfig& c) {
  ordered_json j;
  j["schema_version"] = kSchemaVersion;
  j["task"] = task_to_json(c.task);
  j["data"] = {{"n_train", c.n_train}, {"n_test", c.n_test}, {"seed", c.data_seed}, {"dataset_dir", c.dataset_dir}};
  j["split"] = {{"ratio", c.labeled_ratio}, {"seed", c.split_seed}, {"bias_knob", c.bias_knob}};
  j["pathway"] = to_string(c.pathway);
  j["model"] = {{"hidden", c.hidden}};
  j["stage"] = {{"epochs", c.stage.epochs},
                {"lr", c.stage.lr},
                {"batch", c.stage.batch},
                {"decay_at", c.stage.decay_at},
                {"decay_factor", c.stage.decay_factor},
                {"speedup", c.stage.speedup},
                {"speedup_divisor", c.stage.speedup_divisor},
                {"batching", c.stage.per_source ? "joint_per_source" : "joint_pooled"}};
  j["strategy"] = {{"kind", to_string(c.strategy.kind)},
                   {"tau", c.strategy.tau},
                   {"percentile_steps", c.strategy.percentile_steps},
                   {"pseudo_pretrain", c.strategy.pseudo_pretrain},
                   {"shrink", c.strategy.shrink},
                   {"aggregate", aggregate_name(c.strategy.aggregate)}};
  j["curriculum"] = {{"values", c.curriculum.values},
                     {"sigma_std", c.curriculum.sigma_std},
                     {"lambda_sub", c.curriculum.lambda_sub}};
  j["rounds"] = c.rounds;
  j["seeds"] = c.seeds;
  ordered_json ev;
  if (c.normalizer.kind == Normalizer::Kind::InterLandmark) {
    ev["normalizer"] = "interlandmark";
    ev["normalizer_landmarks"] = {c.normalizer.i, c.normalizer.j};
  } else {
    ev["normalizer"] = "image_size";
    ev["image_size"] = c.normalizer.image_size;
  }
  ev["auc_cutoff"] = c.auc_cutoff;
  j["evaluation"] = ev;
  j["output"] = c.output;
  return j;
}

ExperimentConfig config_from_json(const json& j) {
  ExperimentConfig c;
  Reader root(j, "");
  const int version = root.get("schema_version", kSchemaVersion);
  if (version != kSchemaVersion)
    throw ValidationError("config field 'schema_version': version " + std::to_string(version) +
                          " is not supported (this build reads version " + std::to_string(kSchemaVersion) + ")");

  {
    Reader r(object_or_empty(root.child("task")), "task");
    c.task = read_task(r);
  }
  {
    Reader r(object_or_empty(root.child("data")), "data");
    c.n_train = r.get("n_train", c.n_train);
    c.n_test = r.get("n_test", c.n_test);
    c.data_seed = r.get("seed", c.data_seed);
    c.dataset_dir = r.get("dataset_dir", c.dataset_dir);
    r.finish();
  }
  {
    Reader r(object_or_empty(root.child("split")), "split");
    c.labeled_ratio = r.get("ratio", c.labeled_ratio);
    c.split_seed = r.get("seed", c.split_seed);
    c.bias_knob = r.get("bias_knob", c.bias_knob);
    r.finish();
  }
  c.pathway = pathway_from_string(root.get("pathway", to_string(c.pathway)));
  {
    Reader r(object_or_empty(root.child("model")), "model");
    c.hidden = r.get("hidden", c.hidden);
    r.finish();
  }
  {
    Reader r(object_or_empty(root.child("stage")), "stage");
    StageConfig& s = c.stage;
    s.epochs = r.get("epochs", s.epochs);
    s.lr = r.get("lr", s.lr);
    s.batch = r.get("batch", s.batch);
    s.decay_at = r.get("decay_at", s.decay_at);
    s.decay_factor = r.get("decay_factor", s.decay_factor);
    s.speedup = r.get("speedup", s.speedup);
    s.speedup_divisor = r.get("speedup_divisor", s.speedup_divisor);
    const std::string batching = r.get("batching", std::string("joint_per_source"));
    if (batching != "joint_per_source" && batching != "joint_pooled")
      throw ValidationError("config field 'stage.batching': must be 'joint_per_source' or 'joint_pooled', got '" +
                            batching + "'");
    s.per_source = batching == "joint_per_source";
    r.finish();
  }
  {
    Reader r(object_or_empty(root.child("strategy")), "strategy");
    Strategy& s = c.strategy;
    s.kind = strategy_kind_from_string(r.get("kind", to_string(s.kind)));
    s.tau = r.get("tau", s.tau);
    s.percentile_steps = r.get("percentile_steps", s.percentile_steps);
    s.pseudo_pretrain = r.get("pseudo_pretrain", s.pseudo_pretrain);
    s.shrink = r.get("shrink", s.shrink);
    s.aggregate = aggregate_from(r.get("aggregate", aggregate_name(s.aggregate)));
    r.finish();
  }
  {
    c.curriculum = c.pathway == Pathway::Heatmap ? Curriculum::heatmap_default() : Curriculum::coordinate_default();
    Reader r(object_or_empty(root.child("curriculum")), "curriculum");
    c.curriculum.values = r.get("values", c.curriculum.values);
    c.curriculum.sigma_std = r.get("sigma_std", c.curriculum.sigma_std);
    c.curriculum.lambda_sub = r.get("lambda_sub", c.curriculum.lambda_sub);
    r.finish();
  }
  c.rounds = root.get("rounds", c.curriculum.rounds());
  c.seeds = root.get("seeds", c.seeds);
  {
    Reader r(object_or_empty(root.child("evaluation")), "evaluation");
    const std::string kind = r.get("normalizer", std::string("interlandmark"));
    if (kind == "interlandmark") {
      const auto ij = r.get("normalizer_landmarks", std::vector<int>{0, 1});
      if (ij.size() != 2)
        throw ValidationError("config field 'evaluation.normalizer_landmarks': expected two landmark indices");
      c.normalizer = Normalizer::interlandmark(ij[0], ij[1]);
    } else if (kind == "image_size") {
      c.normalizer = Normalizer::image(r.get("image_size", static_cast<double>(c.task.grid)));
    } else {
      throw ValidationError("config field 'evaluation.normalizer': must be 'interlandmark' or 'image_size', got '" +
                            kind + "'");
    }
    c.auc_cutoff = r.get("auc_cutoff", c.auc_cutoff);
    r.finish();
  }
  c.output = root.get("output", c.output);
  root.finish();
  return c;
}

void ExperimentConfig::validate() const {
  check([&] { task.validate(); });
  require(n_train > 0, "config field 'data.n_train': must be > 0");
  require(n_test > 0, "config field 'data.n_test': must be > 0");
  require(labeled_ratio > 0.0 && labeled_ratio <= 1.0, "config field 'split.ratio': must be in (0, 1]");
  require(std::llround(labeled_ratio * n_train) >= 1, "config field 'split.ratio': empty labeled split for data.n_train");
  require(bias_knob >= 0.0 && bias_knob <= 1.0, "config field 'split.bias_knob': must be in [0, 1]");
  require(hidden >= 1, "config field 'model.hidden': must be >= 1");
  check([&] { stage.validate(); });
  check([&] { strategy.validate(pathway); });
  check([&] { curriculum.validate_allow_degenerate(); });
  require(curriculum.kind == pathway, "config field 'curriculum': built for the other pathway");
  require(rounds >= 1, "config field 'rounds': must be >= 1");
  if (strategy.kind == Strategy::Kind::Stld && strategy.shrink)
    require(rounds == curriculum.rounds(), "config field 'rounds': must equal the number of curriculum.values + 1 (" +
                                               std::to_string(curriculum.rounds()) + ")");
  require(!seeds.empty(), "config field 'seeds': must list at least one seed");
  require(std::set<std::uint64_t>(seeds.begin(), seeds.end()).size() == seeds.size(),
          "config field 'seeds': duplicate seed");
  if (normalizer.kind == Normalizer::Kind::InterLandmark) {
    require(normalizer.i >= 0 && normalizer.j >= 0 && normalizer.i < task.landmarks && normalizer.j < task.landmarks,
            "config field 'evaluation.normalizer_landmarks': index out of range");
    require(normalizer.i != normalizer.j, "config field 'evaluation.normalizer_landmarks': indices must differ");
  } else {
    require(normalizer.image_size > 0.0, "config field 'evaluation.image_size': must be > 0");
  }
  require(auc_cutoff > 0.0, "config field 'evaluation.auc_cutoff': must be > 0");
  require(!output.empty(), "config field 'output': must not be empty");
}

TrainSpec ExperimentConfig::train_spec() const {
  TrainSpec s;
  s.pathway = pathway;
  s.dims = ModelDims{task.grid, task.landmarks, hidden};
  s.stage = stage;
  s.sigma_std = curriculum.sigma_std;
  return s;
}

RunSettings ExperimentConfig::run_settings(std::uint64_t seed) const {
  RunSettings rs;
  rs.spec = train_spec();
  rs.curriculum = curriculum;
  rs.rounds = rounds;
  rs.seed = seed;
  rs.normalizer = normalizer;
  rs.auc_cutoff = auc_cutoff;
  return rs;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ValidationError("config file " + path.string() + " is not valid JSON: " + e.what());
  }
  return config_from_json(j);
}

void apply_override(json& doc, const std::string& dotted_key, const std::string& value) {
  require(!dotted_key.empty(), "override: empty key");
  json* node = &doc;
  std::stringstream ss(dotted_key);
  std::string part;
  std::vector<std::string> parts;
  while (std::getline(ss, part, '.')) parts.push_back(part);
  for (std::size_t i = 0; i + 1 < parts.size(); ++i) {
    if (!node->contains(parts[i]) || !(*node)[parts[i]].is_object()) (*node)[parts[i]] = json::object();
    node = &(*node)[parts[i]];
  }
  json v = json::parse(value, nullptr, false);
  (*node)[parts.back()] = v.is_discarded() ? json(value) : v;
}

std::string run_id(const ExperimentConfig& cfg) {
  ordered_json j = to_json(cfg);
  j.erase("output");
  return hex64(fnv1a64(j.dump())).substr(0, 12);
}

}  // namespace stld
