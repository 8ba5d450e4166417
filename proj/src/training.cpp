#include "hemo/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "json.hpp"

namespace hemo {

using ag::Var;

// ---- focal loss ---------------------------------------------------------------

void FocalLossParams::validate() const {
  if (!(gamma >= 0.0)) throw ValidationError("focal gamma must be non-negative");
  if (!(alpha_win > 0.0) || !(alpha_loss > 0.0)) throw ValidationError("focal alpha weights must be positive");
}

namespace {

struct FocalTerms {
  double value;
  double dgap;  // derivative with respect to z_true - z_other
};

FocalTerms focal_terms(double gap, double alpha, double gamma) {
  // p_t = sigmoid(gap), q = 1 - p_t = sigmoid(-gap), log p_t = -softplus(-gap).
  const double log_pt = gap >= 0.0 ? -std::log1p(std::exp(-gap)) : gap - std::log1p(std::exp(gap));
  const double q = gap >= 0.0 ? std::exp(-gap) / (1.0 + std::exp(-gap)) : 1.0 / (1.0 + std::exp(gap));
  const double pt = 1.0 - q;
  const double qg = std::pow(q, gamma);
  return {-alpha * qg * log_pt, alpha * qg * (gamma * pt * log_pt - q)};
}

}  // namespace

double focal_loss(const std::array<double, 2>& logits, Label label, const FocalLossParams& params) {
  const int t = class_index(label);
  return focal_terms(logits[t] - logits[1 - t], params.alpha(label), params.gamma).value;
}

Var focal_loss(Var logits, Label label, const FocalLossParams& params) {
  if (logits.rows() != 1 || logits.cols() != 2) throw ValidationError("focal loss expects 1x2 logits");
  const Matrix& z = logits.value();
  if (!z.allFinite()) throw ValidationError("focal loss received non-finite logits");
  const int t = class_index(label);
  const auto terms = focal_terms(z(0, t) - z(0, 1 - t), params.alpha(label), params.gamma);
  Matrix out(1, 1);
  out(0, 0) = terms.value;
  return logits.tape()->record(std::move(out), {logits}, [li = logits.id(), t, d = terms.dgap](ag::Tape& tp, int self) {
    const double g = tp.grad(self)(0, 0);
    Matrix gz(1, 2);
    gz(0, t) = g * d;
    gz(0, 1 - t) = -g * d;
    tp.accumulate(li, gz);
  });
}

// ---- optimizer ---------------------------------------------------------------

AdamW::AdamW(ag::ParameterSet& params, std::vector<std::size_t> indices, AdamWConfig cfg)
    : params_(params), indices_(std::move(indices)), cfg_(cfg) {
  for (std::size_t i : indices_) {
    m_.push_back(Matrix::Zero(params_[i].value.rows(), params_[i].value.cols()));
    v_.push_back(Matrix::Zero(params_[i].value.rows(), params_[i].value.cols()));
  }
}

void AdamW::step(const ag::Gradients& grads) {
  ++steps_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, steps_);
  const double c2 = 1.0 - std::pow(cfg_.beta2, steps_);
  for (std::size_t k = 0; k < indices_.size(); ++k) {
    Matrix& p = params_[indices_[k]].value;
    const Matrix& g = grads[indices_[k]];
    m_[k] = cfg_.beta1 * m_[k] + (1.0 - cfg_.beta1) * g;
    v_[k] = cfg_.beta2 * v_[k] + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    p -= (cfg_.learning_rate * cfg_.weight_decay) * p;
    p.array() -= cfg_.learning_rate * (m_[k].array() / c1) / ((v_[k].array() / c2).sqrt() + cfg_.epsilon);
  }
}

// ---- stage config -------------------------------------------------------------

double StageConfig::effective_learning_rate() const {
  if (learning_rate_override) return *learning_rate_override;
  return stage == Stage::finetune_full ? learning_rate * finetune_lr_scale : learning_rate;
}

void StageConfig::validate() const {
  if (!(effective_learning_rate() >= 0.0)) throw ValidationError("learning rate must be non-negative");
  if (epochs < 0) throw ValidationError("epochs must be non-negative");
  if (batch_size < 1) throw ValidationError("batch_size must be at least 1");
  if (resample_views_per_epoch < 1) throw ValidationError("resample_views_per_epoch must be at least 1");
  if (!(finetune_lr_scale > 0.0)) throw ValidationError("finetune_lr_scale must be positive");
  if (!(weight_decay >= 0.0)) throw ValidationError("weight_decay must be non-negative");
  if (!(pseudo_weight >= 0.0)) throw ValidationError("pseudo_weight must be non-negative");
  if (eval_views < 1) throw ValidationError("eval_views must be at least 1");
}

// ---- reports -------------------------------------------------------------------

namespace {

nlohmann::json epoch_json(const EpochRecord& e) {
  nlohmann::json j{{"epoch", e.epoch},
                   {"train_loss", e.train_loss},
                   {"train_accuracy", e.train_accuracy},
                   {"validation_accuracy", e.validation_accuracy},
                   {"validation_loss", e.validation_loss}};
  j["gold_accuracy"] = e.gold_accuracy ? nlohmann::json(*e.gold_accuracy) : nlohmann::json(nullptr);
  j["pseudo_accuracy"] = e.pseudo_accuracy ? nlohmann::json(*e.pseudo_accuracy) : nlohmann::json(nullptr);
  return j;
}

std::optional<double> optional_number(const nlohmann::json& j, const char* key) {
  if (!j.contains(key) || j[key].is_null()) return std::nullopt;
  return j[key].get<double>();
}

}  // namespace

void write_report(const std::filesystem::path& path, const TrainReport& r) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  for (const auto& e : r.history) out << epoch_json(e).dump() << '\n';
  nlohmann::json s{{"stage", std::string(to_string(r.stage))},
                   {"best_epoch", r.best_epoch},
                   {"best_validation_accuracy", r.best_validation_accuracy},
                   {"best_checkpoint_path", r.best_checkpoint_path},
                   {"wall_seconds", r.wall_seconds},
                   {"error", r.error},
                   {"error_message", r.error_message}};
  out << nlohmann::json{{"summary", s}}.dump() << '\n';
}

TrainReport read_report(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  TrainReport r;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    if (j.contains("summary")) {
      const auto& s = j["summary"];
      r.stage = parse_stage(s["stage"].get<std::string>());
      r.best_epoch = s["best_epoch"].get<int>();
      r.best_validation_accuracy = s["best_validation_accuracy"].get<double>();
      r.best_checkpoint_path = s["best_checkpoint_path"].get<std::string>();
      r.wall_seconds = s["wall_seconds"].get<double>();
      r.error = s["error"].get<bool>();
      r.error_message = s["error_message"].get<std::string>();
      continue;
    }
    EpochRecord e;
    e.epoch = j["epoch"].get<int>();
    e.train_loss = j["train_loss"].get<double>();
    e.train_accuracy = j["train_accuracy"].get<double>();
    e.validation_accuracy = j["validation_accuracy"].get<double>();
    e.validation_loss = j["validation_loss"].get<double>();
    e.gold_accuracy = optional_number(j, "gold_accuracy");
    e.pseudo_accuracy = optional_number(j, "pseudo_accuracy");
    r.history.push_back(e);
  }
  return r;
}

std::string format_report(const TrainReport& r) {
  std::ostringstream s;
  s << "stage " << to_string(r.stage) << '\n';
  if (r.error) {
    s << "error: " << r.error_message << '\n';
    return s.str();
  }
  auto cell = [](const std::optional<double>& v) {
    std::ostringstream c;
    if (v) {
      c << std::fixed << std::setprecision(3) << *v;
    } else {
      c << "-";
    }
    return c.str();
  };
  s << "epoch  train_loss  train_acc  val_acc  val_loss  gold_acc  pseudo_acc\n";
  for (const auto& e : r.history) {
    s << std::setw(5) << e.epoch << std::fixed << std::setprecision(4) << std::setw(12) << e.train_loss
      << std::setprecision(3) << std::setw(11) << e.train_accuracy << std::setw(9) << e.validation_accuracy
      << std::setprecision(4) << std::setw(10) << e.validation_loss << std::setw(10) << cell(e.gold_accuracy)
      << std::setw(12) << cell(e.pseudo_accuracy) << (e.epoch == r.best_epoch ? "  *" : "") << '\n';
  }
  s << std::setprecision(3) << "best epoch " << r.best_epoch << ", validation accuracy " << r.best_validation_accuracy
    << ", " << std::setprecision(1) << r.wall_seconds << " s\n";
  return s.str();
}

// ---- training loop ---------------------------------------------------------------

namespace {

std::string_view target_name(Target t) {
  switch (t) {
    case Target::full: return "full";
    case Target::keypoint: return "keypoint";
    case Target::visual: return "visual";
    case Target::text: return "text";
  }
  return "?";
}

void require_labeled(const SampleStore& store, std::string_view what) {
  for (const auto& rec : store.manifest().records) {
    if (!rec.label) {
      throw ValidationError(std::string(what) + " record '" + rec.sample_id + "' has no label");
    }
  }
}

struct ItemResult {
  ag::Gradients grads;
  double loss = 0.0;
  bool correct = false;
};

}  // namespace

TrainResult train_model(TrimodalModel& model, Target target, const SampleStore& train, const SampleStore& validation,
                        const FeatureConfig& features, const StageConfig& stage, const FocalLossParams& loss,
                        const TrainOptions& options) {
  const auto started = std::chrono::steady_clock::now();
  TrainResult result;
  TrainReport& report = result.report;
  report.stage = stage.stage;

  stage.validate();
  loss.validate();
  features.validate();
  if (features.node_feature_dim() != model.config().spatial.node_feature_dim) {
    throw ValidationError("feature width " + std::to_string(features.node_feature_dim()) +
                          " does not match spatial node_feature_dim " +
                          std::to_string(model.config().spatial.node_feature_dim));
  }
  require_labeled(train, "training");
  require_labeled(validation, "validation");
  if (stage.epochs == 0) {
    report.error = true;
    report.error_message = "epochs is 0: nothing was trained and no checkpoint was written";
    return result;
  }
  if (train.size() == 0) throw ValidationError("training set is empty");
  if (validation.size() == 0) throw ValidationError("validation set is empty");

  auto& params = model.parameters();
  const auto trainable = model.trainable_parameters(target);
  const auto saved = model.checkpoint_parameters(target);
  AdamW optimizer(params, trainable,
                  AdamWConfig{stage.effective_learning_rate(), 0.9, 0.999, 1e-8, stage.weight_decay});
  const VoteConfig val_votes{stage.eval_views, TieRule::mean_probability, derive_seed(stage.seed, "validation")};
  const auto& records = train.manifest().records;

  double best_loss = std::numeric_limits<double>::infinity();
  for (int epoch = 1; epoch <= stage.epochs; ++epoch) {
    std::vector<std::pair<std::size_t, int>> items;
    for (int v = 0; v < stage.resample_views_per_epoch; ++v) {
      for (std::size_t i = 0; i < train.size(); ++i) items.emplace_back(i, v);
    }
    Rng order(derive_seed(stage.seed, "order", {static_cast<std::uint64_t>(epoch)}));
    std::shuffle(items.begin(), items.end(), order);

    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::array<std::size_t, 2> source_total{}, source_correct{};
    for (std::size_t start = 0; start < items.size(); start += static_cast<std::size_t>(stage.batch_size)) {
      const std::size_t count = std::min<std::size_t>(static_cast<std::size_t>(stage.batch_size), items.size() - start);
      std::vector<ItemResult> batch(count);
      parallel_for(count, options.workers, [&](std::size_t k) {
        const auto [i, view] = items[start + k];
        const auto& rec = records[i];
        const std::uint64_t seed = training_view_seed(stage.seed, epoch, rec.sample_id, view);
        const auto input = prepare_features(train.sample(i), features, seed, target);
        Rng dropout_rng(derive_seed(seed, "dropout"));
        ag::Tape tape(&params);
        const Var logits = model.forward(tape, target, input, &dropout_rng);
        const Var l = focal_loss(logits, *rec.label, loss);
        const double weight = rec.label_source == LabelSource::pseudo ? stage.pseudo_weight : 1.0;
        auto& out = batch[k];
        out.grads = ag::Gradients(params);
        tape.backward(l, out.grads, weight / static_cast<double>(count));
        out.loss = l.value()(0, 0);
        const Matrix& z = logits.value();
        out.correct = (z(0, 1) >= z(0, 0) ? Label::win : Label::loss) == *rec.label;
      });
      // Summed in item order so the result does not depend on the worker count.
      ag::Gradients total = std::move(batch[0].grads);
      for (std::size_t k = 1; k < count; ++k) total.add_scaled(batch[k].grads, 1.0);
      optimizer.step(total);
      for (std::size_t k = 0; k < count; ++k) {
        const auto& rec = records[items[start + k].first];
        const int src = rec.label_source == LabelSource::pseudo ? 1 : 0;
        loss_sum += batch[k].loss;
        correct += batch[k].correct;
        ++source_total[src];
        source_correct[src] += batch[k].correct;
      }
    }

    EpochRecord e;
    e.epoch = epoch;
    e.train_loss = loss_sum / static_cast<double>(items.size());
    e.train_accuracy = static_cast<double>(correct) / static_cast<double>(items.size());
    if (source_total[0]) e.gold_accuracy = static_cast<double>(source_correct[0]) / static_cast<double>(source_total[0]);
    if (source_total[1]) e.pseudo_accuracy = static_cast<double>(source_correct[1]) / static_cast<double>(source_total[1]);
    const auto val = evaluate(model, validation, features, val_votes, target, options.workers);
    e.validation_accuracy = val.metrics.accuracy;
    e.validation_loss = val.loss;
    report.history.push_back(e);
    if (options.on_epoch) options.on_epoch(e);

    if (report.best_epoch < 0 || e.validation_accuracy > report.best_validation_accuracy ||
        (e.validation_accuracy == report.best_validation_accuracy && e.validation_loss < best_loss)) {
      report.best_epoch = epoch;
      report.best_validation_accuracy = e.validation_accuracy;
      best_loss = e.validation_loss;
      result.checkpoint = make_checkpoint(model, stage.stage, epoch, e.validation_accuracy, saved);
    }
  }

  apply_checkpoint(model, *result.checkpoint);
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  if (!options.out_dir.empty()) {
    std::filesystem::create_directories(options.out_dir);
    const auto base = std::string(to_string(stage.stage));
    const auto ckpt_path = options.out_dir / (base + ".ckpt");
    save_checkpoint(ckpt_path, *result.checkpoint);
    report.best_checkpoint_path = ckpt_path.string();
    write_report(options.out_dir / (base + "_report.jsonl"), report);
    std::ofstream(options.out_dir / (base + "_summary.txt")) << "target " << target_name(target) << '\n'
                                                              << format_report(report);
  }
  return result;
}

namespace {

struct ChannelMoments {
  Eigen::ArrayXd sum, sum_sq;
  double count = 0.0;

  explicit ChannelMoments(Eigen::Index channels) : sum(Eigen::ArrayXd::Zero(channels)), sum_sq(sum) {}

  // Rows of m (row-major) are split into consecutive runs of `channels` values.
  void add(const Matrix& m) {
    const auto channels = sum.size();
    const Eigen::Map<const Matrix> view(m.data(), m.size() / channels, channels);
    sum += view.colwise().sum().transpose().array();
    sum_sq += view.array().square().colwise().sum().transpose();
    count += static_cast<double>(view.rows());
  }

  void merge(const ChannelMoments& o) {
    sum += o.sum;
    sum_sq += o.sum_sq;
    count += o.count;
  }

  std::pair<Matrix, Matrix> standardization() const {
    Matrix mean = Matrix::Zero(1, sum.size());
    Matrix scale = Matrix::Ones(1, sum.size());
    if (count == 0.0) return {mean, scale};
    for (Eigen::Index c = 0; c < sum.size(); ++c) {
      const double mu = sum(c) / count;
      const double var = std::max(sum_sq(c) / count - mu * mu, 0.0);
      mean(0, c) = mu;
      if (var > 1e-16) scale(0, c) = 1.0 / std::sqrt(var);
    }
    return {mean, scale};
  }
};

}  // namespace

void fit_input_normalization(TrimodalModel& model, Target target, const SampleStore& train,
                             const FeatureConfig& features, std::uint64_t seed, int workers) {
  const bool keypoint = target == Target::full || target == Target::keypoint;
  const bool visual = target == Target::full || target == Target::visual;
  if (!keypoint && !visual) return;
  if (train.size() == 0) throw ValidationError("cannot fit input standardization on an empty training set");
  const auto f = model.config().spatial.node_feature_dim;
  const auto w = model.config().visual_width;
  std::vector<ChannelMoments> kp(train.size(), ChannelMoments(f)), vis(train.size(), ChannelMoments(w));
  const Target needed = keypoint && visual ? Target::full : target;
  parallel_for(train.size(), workers, [&](std::size_t i) {
    const auto view_seed = derive_seed(seed, train.record(i).sample_id, {0});
    const auto input = prepare_features(train.sample(i), features, derive_seed(view_seed, "normalization"), needed);
    if (keypoint) {
      for (const auto& g : input.keypoint_groups) kp[i].add(g);
    }
    if (visual) vis[i].add(input.visual);
  });
  // Merged in record order so the result does not depend on the worker count.
  for (std::size_t i = 1; i < train.size(); ++i) {
    kp[0].merge(kp[i]);
    vis[0].merge(vis[i]);
  }
  if (keypoint) {
    const auto [mean, scale] = kp[0].standardization();
    model.set_input_normalization(Branch::keypoint, mean, scale);
  }
  if (visual) {
    const auto [mean, scale] = vis[0].standardization();
    model.set_input_normalization(Branch::visual, mean, scale);
  }
}

TrainResult pretrain_branch(TrimodalModel& model, Branch branch, const SampleStore& train,
                            const SampleStore& validation, const FeatureConfig& features, StageConfig stage,
                            const FocalLossParams& loss, const TrainOptions& options) {
  stage.stage = pretrain_stage(branch);
  fit_input_normalization(model, target_for(branch), train, features, stage.seed, options.workers);
  return train_model(model, target_for(branch), train, validation, features, stage, loss, options);
}

TrainResult finetune_full(TrimodalModel& model, std::span<const Checkpoint> pretrained, const SampleStore& merged,
                          const SampleStore& validation, const FeatureConfig& features, StageConfig stage,
                          const FocalLossParams& loss, const TrainOptions& options) {
  std::array<bool, 3> loaded{};
  for (const auto& ckpt : pretrained) {
    const auto b = std::find_if(kAllBranches.begin(), kAllBranches.end(),
                                [&](Branch x) { return pretrain_stage(x) == ckpt.stage; });
    if (b == kAllBranches.end()) {
      throw ValidationError("stage-2 input checkpoint has stage " + std::string(to_string(ckpt.stage)) +
                            ", expected a pretraining stage");
    }
    auto& seen = loaded[static_cast<std::size_t>(*b)];
    if (seen) throw ValidationError("two checkpoints given for the " + std::string(to_string(*b)) + " branch");
    seen = true;
    apply_checkpoint(model, ckpt, {branch_prefix(*b)});
  }
  stage.stage = Stage::finetune_full;
  if (!loaded[static_cast<std::size_t>(Branch::keypoint)]) {
    fit_input_normalization(model, Target::keypoint, merged, features, stage.seed, options.workers);
  }
  if (!loaded[static_cast<std::size_t>(Branch::visual)]) {
    fit_input_normalization(model, Target::visual, merged, features, stage.seed, options.workers);
  }
  return train_model(model, Target::full, merged, validation, features, stage, loss, options);
}

TrainResult train_direct(TrimodalModel& model, const SampleStore& train, const SampleStore& validation,
                         const FeatureConfig& features, StageConfig stage, const FocalLossParams& loss,
                         const TrainOptions& options) {
  stage.stage = Stage::finetune_full;
  if (!stage.learning_rate_override) stage.learning_rate_override = stage.learning_rate;
  fit_input_normalization(model, Target::full, train, features, stage.seed, options.workers);
  return train_model(model, Target::full, train, validation, features, stage, loss, options);
}

// ---- gradient check suite ------------------------------------------------------------

double GradientCheckSuite::max_relative_error() const {
  double m = 0.0;
  for (const auto& e : entries) m = std::max(m, e.max_relative_error);
  return m;
}

namespace {

Matrix normal_matrix(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed, double scale) {
  Rng rng(seed);
  std::normal_distribution<double> n(0.0, scale);
  Matrix m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
  return m;
}

// Moves every zero-initialized bias and LayerNorm parameter off its initial
// value so the check does not run at a special point.
void jitter(ag::ParameterSet& params, std::uint64_t seed) {
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    p.value += normal_matrix(p.value.rows(), p.value.cols(), derive_seed(seed, p.name), 0.1);
  }
}

TrimodalConfig tiny_model_config() {
  TrimodalConfig cfg;
  cfg.spatial = SpatialEncoderConfig{SpatialKind::mlp, 2, 3, 1, 3, ag::Activation::tanh};
  cfg.keypoint_temporal = TemporalEncoderConfig{4, 1, 2, 4, 16, 0.0};
  cfg.visual_temporal = TemporalEncoderConfig{4, 1, 2, 4, 16, 0.0};
  cfg.text = TextEncoderConfig{10, 4, 1, 2, 4, 8};
  cfg.visual_width = 3;
  cfg.branch_dim = 3;
  cfg.fusion_activation = ag::Activation::tanh;
  return cfg;
}

}  // namespace

GradientCheckSuite gradient_check_suite(std::uint64_t seed) {
  GradientCheckSuite suite;
  auto add = [&](std::string block, const GradientCheckResult& r) {
    suite.entries.push_back({std::move(block), r.max_relative_error, r.worst_parameter});
  };

  std::vector<Edge> path;
  for (int i = 0; i + 1 < 5; ++i) path.emplace_back(i, i + 1);
  path.emplace_back(1, 3);
  const auto graph = make_group_graph(5, path);
  for (auto kind : {SpatialKind::mlp, SpatialKind::gcn, SpatialKind::gat, SpatialKind::gin}) {
    ag::ParameterSet params;
    SpatialEncoder enc("spatial", {kind, 3, 4, 2, 3, ag::Activation::tanh, 2}, 5, params,
                       derive_seed(seed, "spatial", {static_cast<std::uint64_t>(kind)}));
    jitter(params, seed);
    const Matrix x = normal_matrix(3, 15, derive_seed(seed, "x"), 1.0);
    const Matrix w = normal_matrix(1, 3, derive_seed(seed, "w"), 1.0);
    add("spatial." + std::string(to_string(kind)), gradient_check(params, [&](ag::Tape& t) {
          return ag::sum(ag::matmul_bt(enc.forward(t, t.constant(x), &graph), t.constant(w)));
        }));
  }
  {
    ag::ParameterSet params;
    TemporalEncoder enc("temporal", {8, 2, 2, 8, 16, 0.0}, 3, params, derive_seed(seed, "temporal"));
    jitter(params, seed);
    const Matrix x = normal_matrix(5, 3, derive_seed(seed, "tx"), 1.0);
    const Matrix w = normal_matrix(1, 8, derive_seed(seed, "tw"), 1.0);
    add("temporal", gradient_check(params, [&](ag::Tape& t) {
          return ag::sum(ag::matmul_bt(enc.forward(t, t.constant(x)), t.constant(w)));
        }));
  }
  {
    ag::ParameterSet params;
    TextEncoder enc("text", {12, 4, 1, 2, 8, 8}, params, derive_seed(seed, "text"));
    jitter(params, seed);
    const std::vector<int> tokens{3, 1, 4, 1, 5, 9};
    const Matrix w = normal_matrix(1, 4, derive_seed(seed, "xw"), 1.0);
    add("text", gradient_check(params, [&](ag::Tape& t) {
          return ag::sum(ag::matmul_bt(enc.forward(t, tokens), t.constant(w)));
        }));
  }

  const auto cfg = tiny_model_config();
  TrimodalModel model(cfg, derive_seed(seed, "model"));
  jitter(model.parameters(), seed);
  SampleFeatures sample;
  for (auto g : kAllGroups) {
    const int n = default_topology().group_size(g);
    sample.keypoint_groups[static_cast<std::size_t>(g)] =
        normal_matrix(3, n * 2, derive_seed(seed, group_name(g)), 0.5);
  }
  sample.visual = normal_matrix(4, 3, derive_seed(seed, "visual"), 1.0);
  sample.text.tokens = {2, 7, 1};
  const FocalLossParams focal;
  {
    // Fusion and head only: branch vectors enter as constants.
    ag::ParameterSet head;
    const auto& all = model.parameters();
    for (const auto& p : all) {
      if (p.name.starts_with("fusion.") || p.name.starts_with("head.")) head.add(p.name, p.value);
    }
    const Matrix k = normal_matrix(1, 3, derive_seed(seed, "k"), 1.0);
    const Matrix v = normal_matrix(1, 3, derive_seed(seed, "v"), 1.0);
    const Matrix x = normal_matrix(1, 3, derive_seed(seed, "t"), 1.0);
    add("fusion+head", gradient_check(head, [&](ag::Tape& t) {
          std::array<Var, 3> parts{t.constant(k), t.constant(v), t.constant(x)};
          Var cat = ag::concat_cols(parts);
          Var fused = ag::add(cat, ag::activate(ag::affine(cat, t.param("fusion.weight"), t.param("fusion.bias")),
                                                cfg.fusion_activation));
          return focal_loss(ag::affine(fused, t.param("head.weight"), t.param("head.bias")), Label::loss, focal);
        }));
  }
  add("full model", gradient_check(model.parameters(), [&](ag::Tape& t) {
        return focal_loss(model.forward_full(t, sample), Label::win, focal);
      }));
  {
    ag::ParameterSet logits;
    logits.add("logits", normal_matrix(1, 2, derive_seed(seed, "logits"), 1.0));
    double worst = 0.0;
    for (Label l : {Label::win, Label::loss}) {
      for (const auto& fp : {FocalLossParams{}, FocalLossParams{0.0, 1.0, 1.0}, FocalLossParams{0.5, 0.3, 2.0}}) {
        const auto r = gradient_check(logits, [&](ag::Tape& t) { return focal_loss(t.param("logits"), l, fp); });
        worst = std::max(worst, r.max_relative_error);
      }
    }
    suite.entries.push_back({"focal loss", worst, "logits"});
  }
  return suite;
}

std::string format_gradient_checks(const GradientCheckSuite& suite, double tolerance) {
  std::ostringstream s;
  s << "block            max_rel_error  worst_parameter\n";
  for (const auto& e : suite.entries) {
    s << std::left << std::setw(17) << e.block << std::right << std::scientific << std::setprecision(3)
      << std::setw(13) << e.max_relative_error << "  " << e.worst_parameter
      << (e.max_relative_error > tolerance ? "  FAIL" : "") << '\n';
  }
  s << (suite.passed(tolerance) ? "all blocks within " : "some blocks exceed ") << std::scientific
    << std::setprecision(0) << tolerance << '\n';
  return s.str();
}

}  // namespace hemo
