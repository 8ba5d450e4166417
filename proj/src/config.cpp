#include "hemo/config.hpp"

#include <yaml-cpp/yaml.h>

#include <fstream>
#include <set>
#include <sstream>

namespace hemo {

RunConfig::RunConfig() {
  synth.sample_count = 80;
  synth.frames_min = 300;
  synth.frames_max = 900;
  synth.visual_width = 32;
  synth.vocab_size = 256;

  features.keypoint_samples = 48;
  features.visual_samples = 48;

  model.spatial = SpatialEncoderConfig{SpatialKind::mlp, 8, 32, 2, 32, ag::Activation::relu, 2, true};
  model.keypoint_temporal = TemporalEncoderConfig{32, 1, 4, 64, 4000, 0.0};
  model.visual_temporal = TemporalEncoderConfig{32, 1, 4, 64, 4000, 0.0};
  model.text = TextEncoderConfig{256, 32, 1, 4, 64, 64, 0};
  model.visual_width = 32;
  model.branch_dim = 32;

  ablation.offsets = {true, false};

  pretrain.stage = Stage::pretrain_keypoint;
  finetune.stage = Stage::finetune_full;
}

void RunConfig::validate() const {
  if (workers < 1) throw ValidationError("workers must be at least 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0,1)");
  synth.validate();
  features.validate();
  model_config().validate();
  loss.validate();
  pretrain.validate();
  finetune.validate();
  votes.validate();
  if (!(weak_supervision.noise_rate >= 0.0 && weak_supervision.noise_rate <= 1.0)) {
    throw ValidationError("weak_supervision.noise_rate must lie in [0,1]");
  }
  if (!(weak_supervision.margin_threshold >= 0.0)) {
    throw ValidationError("weak_supervision.margin_threshold must be non-negative");
  }
  if (!(weak_supervision.pool_fraction > 0.0 && weak_supervision.pool_fraction < 1.0)) {
    throw ValidationError("weak_supervision.pool_fraction must lie in (0,1)");
  }
  ablation.validate();

  if (model.keypoint_temporal.max_sequence_length < features.keypoint_samples) {
    throw ValidationError("model.keypoint_temporal.max_sequence_length (" +
                          std::to_string(model.keypoint_temporal.max_sequence_length) +
                          ") is below features.keypoint_samples (" + std::to_string(features.keypoint_samples) + ")");
  }
  if (model.visual_temporal.max_sequence_length < features.visual_samples) {
    throw ValidationError("model.visual_temporal.max_sequence_length (" +
                          std::to_string(model.visual_temporal.max_sequence_length) +
                          ") is below features.visual_samples (" + std::to_string(features.visual_samples) + ")");
  }
  if (model.visual_width != synth.visual_width) {
    throw ValidationError("model.visual_width (" + std::to_string(model.visual_width) +
                          ") differs from synth.visual_width (" + std::to_string(synth.visual_width) + ")");
  }
  if (model.text.embedding_input_dim == 0 && model.text.vocabulary_size < synth.vocab_size) {
    throw ValidationError("model.text.vocabulary_size (" + std::to_string(model.text.vocabulary_size) +
                          ") is below synth.vocab_size (" + std::to_string(synth.vocab_size) + ")");
  }
}

TrimodalConfig RunConfig::model_config() const {
  TrimodalConfig c = model;
  c.spatial.node_feature_dim = features.node_feature_dim();
  return c;
}

std::uint64_t RunConfig::seed_for(std::string_view site) const { return derive_seed(seed, site); }

StageConfig RunConfig::stage_config(Stage stage) const {
  StageConfig s = stage == Stage::finetune_full ? finetune : pretrain;
  s.stage = stage;
  s.learning_rate = pretrain.learning_rate;
  s.seed = seed_for(to_string(stage));
  return s;
}

SynthConfig RunConfig::synth_config() const {
  SynthConfig s = synth;
  s.seed = seed_for("synth");
  return s;
}

VoteConfig RunConfig::vote_config() const {
  VoteConfig v = votes;
  v.base_seed = seed_for("votes");
  return v;
}

ExperimentSettings RunConfig::experiment() const {
  ExperimentSettings e;
  e.model = model_config();
  e.features = features;
  e.pretrain = stage_config(Stage::pretrain_keypoint);
  e.finetune = stage_config(Stage::finetune_full);
  e.loss = loss;
  e.votes = vote_config();
  e.val_fraction = val_fraction;
  e.pool_fraction = weak_supervision.pool_fraction;
  e.pseudo_noise = weak_supervision.noise_rate;
  e.workers = workers;
  return e;
}

DataPartition partition_dataset(const DatasetManifest& labeled, const RunConfig& config) {
  DataPartition p;
  auto [train, val] = split_train_val(labeled, config.val_fraction, config.seed_for("split"));
  p.validation = std::move(val);
  if (!config.weak_supervision.enabled) {
    p.gold = std::move(train);
    return p;
  }
  auto [gold, pool] = split_train_val(train, config.weak_supervision.pool_fraction, config.seed_for("pool"));
  p.gold = std::move(gold);
  p.pool = std::move(pool);
  return p;
}

// ---- YAML ------------------------------------------------------------------------

namespace {

// Reads the keys of one mapping and rejects any it did not ask for.
class Section {
 public:
  Section(const YAML::Node& node, std::string path, std::string_view origin)
      : node_(node), path_(std::move(path)), origin_(origin) {
    if (node_ && !node_.IsNull() && !node_.IsMap()) fail("", "expected a mapping");
  }

  /// Returns whether the key is present.
  template <typename T>
  bool get(const char* key, T& out) {
    seen_.insert(key);
    if (!node_ || !node_.IsMap() || !node_[key]) return false;
    try {
      out = node_[key].as<T>();
    } catch (const YAML::Exception&) {
      fail(key, "has the wrong type");
    }
    return true;
  }

  template <typename T, typename Parse>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string text;
    get(key, text);
    if (text.empty()) return;
    try {
      out = parse(text);
    } catch (const ValidationError& e) {
      fail(key, e.what());
    }
  }

  void get_optional(const char* key, std::optional<double>& out) {
    seen_.insert(key);
    if (!node_ || !node_.IsMap() || !node_[key]) return;
    if (node_[key].IsNull()) {
      out.reset();
      return;
    }
    try {
      out = node_[key].as<double>();
    } catch (const YAML::Exception&) {
      fail(key, "has the wrong type");
    }
  }

  Section child(const char* key) {
    seen_.insert(key);
    return Section(node_ && node_.IsMap() ? node_[key] : YAML::Node(), path_ + key + ".", origin_);
  }

  void finish() const {
    if (!node_ || !node_.IsMap()) return;
    for (const auto& kv : node_) {
      const auto key = kv.first.as<std::string>();
      if (!seen_.count(key)) fail(key, "is not a known setting");
    }
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what) const {
    throw ValidationError(std::string(origin_) + ": " + path_ + key + " " + what);
  }

 private:
  YAML::Node node_;
  std::string path_;
  std::string_view origin_;
  std::set<std::string> seen_;
};

KeypointGroup parse_group(std::string_view name) {
  for (KeypointGroup g : kAllGroups) {
    if (name == group_name(g)) return g;
  }
  throw ValidationError("unknown keypoint group '" + std::string(name) + "'");
}

MissingLagPolicy parse_lag_policy(std::string_view name) {
  if (name == "zero_fill") return MissingLagPolicy::zero_fill;
  throw ValidationError("unknown missing-lag policy '" + std::string(name) + "'");
}

TieRule parse_tie_rule(std::string_view name) {
  if (name == "mean_probability") return TieRule::mean_probability;
  throw ValidationError("unknown tie rule '" + std::string(name) + "'");
}

void read_temporal(Section s, TemporalEncoderConfig& t) {
  s.get("model_dim", t.model_dim);
  s.get("layer_count", t.layer_count);
  s.get("head_count", t.head_count);
  s.get("feedforward_dim", t.feedforward_dim);
  s.get("max_sequence_length", t.max_sequence_length);
  s.get("dropout_rate", t.dropout_rate);
  s.finish();
}

void read_stage(Section s, StageConfig& st, bool finetune) {
  if (!finetune) s.get("learning_rate", st.learning_rate);
  if (finetune) {
    s.get("learning_rate_scale", st.finetune_lr_scale);
    s.get_optional("learning_rate_override", st.learning_rate_override);
    s.get("pseudo_weight", st.pseudo_weight);
  }
  s.get("epochs", st.epochs);
  s.get("batch_size", st.batch_size);
  s.get("resample_views_per_epoch", st.resample_views_per_epoch);
  s.get("weight_decay", st.weight_decay);
  s.get("eval_views", st.eval_views);
  s.finish();
}

template <typename T, typename Parse>
void read_list(Section& s, const char* key, std::vector<T>& out, Parse parse) {
  std::vector<std::string> names;
  if (!s.get(key, names)) return;
  out.clear();
  for (const auto& n : names) {
    try {
      out.push_back(parse(n));
    } catch (const ValidationError& e) {
      s.fail(key, e.what());
    }
  }
}

bool parse_switch(std::string_view v) {
  if (v == "on" || v == "true") return true;
  if (v == "off" || v == "false") return false;
  throw ValidationError("expected on or off, got '" + std::string(v) + "'");
}

}  // namespace

RunConfig parse_run_config(std::string_view yaml_text, std::string_view origin) {
  YAML::Node root;
  try {
    root = YAML::Load(std::string(yaml_text));
  } catch (const YAML::Exception& e) {
    throw ParseError(std::string(origin) + ": " + e.what());
  }
  RunConfig c;
  Section top(root, "", origin);
  top.get("seed", c.seed);
  top.get("workers", c.workers);
  std::string run_dir = c.run_dir.string();
  top.get("run_dir", run_dir);
  c.run_dir = run_dir;
  std::string data_dir = c.data_dir.string();
  top.get("data_dir", data_dir);
  c.data_dir = data_dir;
  top.get("val_fraction", c.val_fraction);

  {
    auto s = top.child("synth");
    auto& y = c.synth;
    s.get("sample_count", y.sample_count);
    s.get("class_prior", y.class_prior);
    s.get("frames_min", y.frames_min);
    s.get("frames_max", y.frames_max);
    s.get("event_count", y.event_count);
    s.get("event_duration_frames", y.event_duration_frames);
    s.get("event_magnitude", y.event_magnitude);
    s.get("event_keypoint_fraction", y.event_keypoint_fraction);
    s.get_enum("win_group", y.win_group, parse_group);
    s.get_enum("loss_group", y.loss_group, parse_group);
    s.get("visual_width", y.visual_width);
    s.get("visual_signal", y.visual_signal);
    s.get("vocab_size", y.vocab_size);
    s.get("text_length", y.text_length);
    s.get("text_signal", y.text_signal);
    s.get("noise_floor", y.noise_floor);
    s.get("shape_variation", y.shape_variation);
    s.get("sway_amplitude", y.sway_amplitude);
    s.get("id_prefix", y.id_prefix);
    s.finish();
  }
  {
    auto s = top.child("features");
    auto& f = c.features;
    s.get("keypoint_samples", f.keypoint_samples);
    s.get("visual_samples", f.visual_samples);
    s.get("min_gap", f.min_gap);
    s.get("offsets_enabled", f.offsets_enabled);
    s.get("lags", f.offsets.lags);
    s.get_enum("missing_lag_policy", f.offsets.missing_lag_policy, parse_lag_policy);
    s.finish();
  }
  {
    auto s = top.child("model");
    auto& m = c.model;
    {
      auto sp = s.child("spatial");
      sp.get_enum("kind", m.spatial.kind, parse_spatial_kind);
      sp.get("hidden_dim", m.spatial.hidden_dim);
      sp.get("layer_count", m.spatial.layer_count);
      sp.get("frame_embedding_dim", m.spatial.frame_embedding_dim);
      sp.get_enum("activation", m.spatial.activation, ag::parse_activation);
      sp.get("attention_heads", m.spatial.attention_heads);
      sp.get("epsilon_learnable", m.spatial.epsilon_learnable);
      sp.finish();
    }
    read_temporal(s.child("keypoint_temporal"), m.keypoint_temporal);
    read_temporal(s.child("visual_temporal"), m.visual_temporal);
    {
      auto t = s.child("text");
      t.get("vocabulary_size", m.text.vocabulary_size);
      t.get("token_embedding_dim", m.text.token_embedding_dim);
      t.get("layer_count", m.text.layer_count);
      t.get("head_count", m.text.head_count);
      t.get("feedforward_dim", m.text.feedforward_dim);
      t.get("max_tokens", m.text.max_tokens);
      t.get("embedding_input_dim", m.text.embedding_input_dim);
      t.finish();
    }
    s.get("visual_width", m.visual_width);
    s.get("branch_dim", m.branch_dim);
    s.get_enum("fusion_activation", m.fusion_activation, ag::parse_activation);
    s.finish();
  }
  {
    auto s = top.child("loss");
    s.get("gamma", c.loss.gamma);
    s.get("alpha_win", c.loss.alpha_win);
    s.get("alpha_loss", c.loss.alpha_loss);
    s.finish();
  }
  read_stage(top.child("pretrain"), c.pretrain, false);
  read_stage(top.child("finetune"), c.finetune, true);
  {
    auto s = top.child("votes");
    s.get("views", c.votes.views);
    s.get_enum("tie_rule", c.votes.tie_rule, parse_tie_rule);
    s.finish();
  }
  {
    auto s = top.child("weak_supervision");
    s.get("enabled", c.weak_supervision.enabled);
    s.get("noise_rate", c.weak_supervision.noise_rate);
    s.get("margin_threshold", c.weak_supervision.margin_threshold);
    s.get("pool_fraction", c.weak_supervision.pool_fraction);
    s.finish();
  }
  {
    auto s = top.child("ablation");
    read_list(s, "kinds", c.ablation.kinds, parse_spatial_kind);
    read_list(s, "offsets", c.ablation.offsets, parse_switch);
    read_list(s, "strategies", c.ablation.strategies, parse_strategy);
    s.get("seeds", c.ablation.seeds);
    s.get("budget_seconds", c.ablation_budget_seconds);
    s.finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open config '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_run_config(buf.str(), path.string());
}

namespace {

void emit_temporal(YAML::Emitter& e, const char* key, const TemporalEncoderConfig& t) {
  e << YAML::Key << key << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "model_dim" << YAML::Value << t.model_dim;
  e << YAML::Key << "layer_count" << YAML::Value << t.layer_count;
  e << YAML::Key << "head_count" << YAML::Value << t.head_count;
  e << YAML::Key << "feedforward_dim" << YAML::Value << t.feedforward_dim;
  e << YAML::Key << "max_sequence_length" << YAML::Value << t.max_sequence_length;
  e << YAML::Key << "dropout_rate" << YAML::Value << t.dropout_rate;
  e << YAML::EndMap;
}

void emit_stage(YAML::Emitter& e, const char* key, const StageConfig& s, bool finetune) {
  e << YAML::Key << key << YAML::Value << YAML::BeginMap;
  if (!finetune) e << YAML::Key << "learning_rate" << YAML::Value << s.learning_rate;
  if (finetune) {
    e << YAML::Key << "learning_rate_scale" << YAML::Value << s.finetune_lr_scale;
    e << YAML::Key << "learning_rate_override" << YAML::Value;
    if (s.learning_rate_override) {
      e << *s.learning_rate_override;
    } else {
      e << YAML::Null;
    }
    e << YAML::Key << "pseudo_weight" << YAML::Value << s.pseudo_weight;
  }
  e << YAML::Key << "epochs" << YAML::Value << s.epochs;
  e << YAML::Key << "batch_size" << YAML::Value << s.batch_size;
  e << YAML::Key << "resample_views_per_epoch" << YAML::Value << s.resample_views_per_epoch;
  e << YAML::Key << "weight_decay" << YAML::Value << s.weight_decay;
  e << YAML::Key << "eval_views" << YAML::Value << s.eval_views;
  e << YAML::EndMap;
}

template <typename T, typename Name>
void emit_list(YAML::Emitter& e, const char* key, const std::vector<T>& items, Name name) {
  e << YAML::Key << key << YAML::Value << YAML::Flow << YAML::BeginSeq;
  for (const auto& i : items) e << std::string(name(i));
  e << YAML::EndSeq;
}

}  // namespace

std::string to_yaml(const RunConfig& c) {
  YAML::Emitter e;
  e.SetDoublePrecision(17);
  e << YAML::BeginMap;
  e << YAML::Key << "seed" << YAML::Value << c.seed;
  e << YAML::Key << "workers" << YAML::Value << c.workers;
  e << YAML::Key << "run_dir" << YAML::Value << c.run_dir.string();
  e << YAML::Key << "data_dir" << YAML::Value << c.data_dir.string();
  e << YAML::Key << "val_fraction" << YAML::Value << c.val_fraction;

  const auto& y = c.synth;
  e << YAML::Key << "synth" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "sample_count" << YAML::Value << y.sample_count;
  e << YAML::Key << "class_prior" << YAML::Value << y.class_prior;
  e << YAML::Key << "frames_min" << YAML::Value << y.frames_min;
  e << YAML::Key << "frames_max" << YAML::Value << y.frames_max;
  e << YAML::Key << "event_count" << YAML::Value << y.event_count;
  e << YAML::Key << "event_duration_frames" << YAML::Value << y.event_duration_frames;
  e << YAML::Key << "event_magnitude" << YAML::Value << y.event_magnitude;
  e << YAML::Key << "event_keypoint_fraction" << YAML::Value << y.event_keypoint_fraction;
  e << YAML::Key << "win_group" << YAML::Value << group_name(y.win_group);
  e << YAML::Key << "loss_group" << YAML::Value << group_name(y.loss_group);
  e << YAML::Key << "visual_width" << YAML::Value << y.visual_width;
  e << YAML::Key << "visual_signal" << YAML::Value << y.visual_signal;
  e << YAML::Key << "vocab_size" << YAML::Value << y.vocab_size;
  e << YAML::Key << "text_length" << YAML::Value << y.text_length;
  e << YAML::Key << "text_signal" << YAML::Value << y.text_signal;
  e << YAML::Key << "noise_floor" << YAML::Value << y.noise_floor;
  e << YAML::Key << "shape_variation" << YAML::Value << y.shape_variation;
  e << YAML::Key << "sway_amplitude" << YAML::Value << y.sway_amplitude;
  e << YAML::Key << "id_prefix" << YAML::Value << y.id_prefix;
  e << YAML::EndMap;

  const auto& f = c.features;
  e << YAML::Key << "features" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "keypoint_samples" << YAML::Value << f.keypoint_samples;
  e << YAML::Key << "visual_samples" << YAML::Value << f.visual_samples;
  e << YAML::Key << "min_gap" << YAML::Value << f.min_gap;
  e << YAML::Key << "offsets_enabled" << YAML::Value << f.offsets_enabled;
  e << YAML::Key << "lags" << YAML::Value << YAML::Flow << f.offsets.lags;
  e << YAML::Key << "missing_lag_policy" << YAML::Value << "zero_fill";
  e << YAML::EndMap;

  const auto& m = c.model;
  e << YAML::Key << "model" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "spatial" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "kind" << YAML::Value << std::string(to_string(m.spatial.kind));
  e << YAML::Key << "hidden_dim" << YAML::Value << m.spatial.hidden_dim;
  e << YAML::Key << "layer_count" << YAML::Value << m.spatial.layer_count;
  e << YAML::Key << "frame_embedding_dim" << YAML::Value << m.spatial.frame_embedding_dim;
  e << YAML::Key << "activation" << YAML::Value << std::string(to_string(m.spatial.activation));
  e << YAML::Key << "attention_heads" << YAML::Value << m.spatial.attention_heads;
  e << YAML::Key << "epsilon_learnable" << YAML::Value << m.spatial.epsilon_learnable;
  e << YAML::EndMap;
  emit_temporal(e, "keypoint_temporal", m.keypoint_temporal);
  emit_temporal(e, "visual_temporal", m.visual_temporal);
  e << YAML::Key << "text" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "vocabulary_size" << YAML::Value << m.text.vocabulary_size;
  e << YAML::Key << "token_embedding_dim" << YAML::Value << m.text.token_embedding_dim;
  e << YAML::Key << "layer_count" << YAML::Value << m.text.layer_count;
  e << YAML::Key << "head_count" << YAML::Value << m.text.head_count;
  e << YAML::Key << "feedforward_dim" << YAML::Value << m.text.feedforward_dim;
  e << YAML::Key << "max_tokens" << YAML::Value << m.text.max_tokens;
  e << YAML::Key << "embedding_input_dim" << YAML::Value << m.text.embedding_input_dim;
  e << YAML::EndMap;
  e << YAML::Key << "visual_width" << YAML::Value << m.visual_width;
  e << YAML::Key << "branch_dim" << YAML::Value << m.branch_dim;
  e << YAML::Key << "fusion_activation" << YAML::Value << std::string(to_string(m.fusion_activation));
  e << YAML::EndMap;

  e << YAML::Key << "loss" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "gamma" << YAML::Value << c.loss.gamma;
  e << YAML::Key << "alpha_win" << YAML::Value << c.loss.alpha_win;
  e << YAML::Key << "alpha_loss" << YAML::Value << c.loss.alpha_loss;
  e << YAML::EndMap;

  emit_stage(e, "pretrain", c.pretrain, false);
  emit_stage(e, "finetune", c.finetune, true);

  e << YAML::Key << "votes" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "views" << YAML::Value << c.votes.views;
  e << YAML::Key << "tie_rule" << YAML::Value << "mean_probability";
  e << YAML::EndMap;

  e << YAML::Key << "weak_supervision" << YAML::Value << YAML::BeginMap;
  e << YAML::Key << "enabled" << YAML::Value << c.weak_supervision.enabled;
  e << YAML::Key << "noise_rate" << YAML::Value << c.weak_supervision.noise_rate;
  e << YAML::Key << "margin_threshold" << YAML::Value << c.weak_supervision.margin_threshold;
  e << YAML::Key << "pool_fraction" << YAML::Value << c.weak_supervision.pool_fraction;
  e << YAML::EndMap;

  e << YAML::Key << "ablation" << YAML::Value << YAML::BeginMap;
  emit_list(e, "kinds", c.ablation.kinds, [](SpatialKind k) { return to_string(k); });
  emit_list(e, "offsets", c.ablation.offsets, [](bool on) { return on ? "on" : "off"; });
  emit_list(e, "strategies", c.ablation.strategies, [](Strategy s) { return to_string(s); });
  e << YAML::Key << "seeds" << YAML::Value << YAML::Flow << c.ablation.seeds;
  e << YAML::Key << "budget_seconds" << YAML::Value << c.ablation_budget_seconds;
  e << YAML::EndMap;

  e << YAML::EndMap;
  return std::string(e.c_str()) + "\n";
}

}  // namespace hemo
