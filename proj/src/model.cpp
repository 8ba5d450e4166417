#include "hemo/model.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

namespace hemo {

using ag::Var;

namespace {

void add_linear(ag::ParameterSet& params, const std::string& name, int in, int out, std::uint64_t seed) {
  params.add(name + ".weight", glorot(in, out, derive_seed(seed, name + ".weight")));
  params.add(name + ".bias", Matrix::Zero(1, out));
}

Var linear(ag::Tape& tape, Var x, const std::string& name) {
  return ag::affine(x, tape.param(name + ".weight"), tape.param(name + ".bias"));
}

const char* kHeadPrefix = "pretrain_head.";

}  // namespace

std::string_view to_string(Branch b) {
  switch (b) {
    case Branch::keypoint: return "keypoint";
    case Branch::visual: return "visual";
    case Branch::text: return "text";
  }
  return "?";
}

Branch parse_branch(std::string_view name) {
  if (name == "keypoint") return Branch::keypoint;
  if (name == "visual") return Branch::visual;
  if (name == "text") return Branch::text;
  throw ValidationError("unknown branch '" + std::string(name) + "'");
}

Target target_for(Branch b) {
  switch (b) {
    case Branch::keypoint: return Target::keypoint;
    case Branch::visual: return Target::visual;
    case Branch::text: return Target::text;
  }
  return Target::full;
}

std::string branch_prefix(Branch b) { return std::string(to_string(b)) + "."; }

void TrimodalConfig::validate() const {
  spatial.validate();
  keypoint_temporal.validate();
  visual_temporal.validate();
  text.validate();
  if (visual_width <= 0) throw ValidationError("visual_width must be positive");
  if (branch_dim <= 0) throw ValidationError("branch_dim must be positive");
}

std::string TrimodalConfig::describe() const {
  std::ostringstream s;
  s << "spatial{kind=" << to_string(spatial.kind) << ",F=" << spatial.node_feature_dim
    << ",H=" << spatial.hidden_dim << ",layers=" << spatial.layer_count << ",E=" << spatial.frame_embedding_dim
    << ",act=" << ag::to_string(spatial.activation) << ",heads=" << spatial.attention_heads
    << ",eps=" << spatial.epsilon_learnable << "}";
  for (const auto* t : {&keypoint_temporal, &visual_temporal}) {
    s << ";temporal{d=" << t->model_dim << ",layers=" << t->layer_count << ",heads=" << t->head_count
      << ",ff=" << t->feedforward_dim << ",max=" << t->max_sequence_length << "}";
  }
  s << ";text{V=" << text.vocabulary_size << ",E=" << text.token_embedding_dim << ",layers=" << text.layer_count
    << ",heads=" << text.head_count << ",ff=" << text.feedforward_dim << ",max=" << text.max_tokens
    << ",embedding=" << text.embedding_input_dim << "}";
  s << ";visual_width=" << visual_width << ";branch_dim=" << branch_dim
    << ";fusion_act=" << ag::to_string(fusion_activation);
  return s.str();
}

std::string TrimodalConfig::fingerprint() const {
  std::ostringstream s;
  s << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(describe());
  return s.str();
}

TrimodalModel::TrimodalModel(TrimodalConfig cfg, std::uint64_t seed, const Topology& topology)
    : cfg_(std::move(cfg)) {
  cfg_.validate();
  const std::uint64_t init = derive_seed(seed, "init");
  for (auto g : kAllGroups) {
    graphs_[static_cast<int>(g)] = make_group_graph(topology, g);
    const std::string prefix = std::string("keypoint.") + group_name(g);
    spatial_.emplace_back(prefix + ".spatial", cfg_.spatial, topology.group_size(g), params_, init);
    keypoint_temporal_.emplace_back(prefix + ".temporal", cfg_.keypoint_temporal, cfg_.spatial.frame_embedding_dim,
                                    params_, init);
  }
  add_linear(params_, "keypoint.compress", 3 * cfg_.keypoint_temporal.model_dim, cfg_.branch_dim, init);

  params_.add("keypoint.input_norm.mean", Matrix::Zero(1, cfg_.spatial.node_feature_dim));
  params_.add("keypoint.input_norm.scale", Matrix::Ones(1, cfg_.spatial.node_feature_dim));
  params_.add("visual.input_norm.mean", Matrix::Zero(1, cfg_.visual_width));
  params_.add("visual.input_norm.scale", Matrix::Ones(1, cfg_.visual_width));

  visual_temporal_ =
      std::make_unique<TemporalEncoder>("visual.temporal", cfg_.visual_temporal, cfg_.visual_width, params_, init);
  add_linear(params_, "visual.compress", cfg_.visual_temporal.model_dim, cfg_.branch_dim, init);

  if (cfg_.text.embedding_input_dim > 0) {
    add_linear(params_, "text.compress", cfg_.text.embedding_input_dim, cfg_.branch_dim, init);
  } else {
    text_encoder_ = std::make_unique<TextEncoder>("text.encoder", cfg_.text, params_, init);
    add_linear(params_, "text.compress", cfg_.text.token_embedding_dim, cfg_.branch_dim, init);
  }

  add_linear(params_, "fusion", cfg_.fused_dim(), cfg_.fused_dim(), init);
  add_linear(params_, "head", cfg_.fused_dim(), TrimodalConfig::class_count, init);
  for (auto b : kAllBranches) {
    add_linear(params_, kHeadPrefix + std::string(to_string(b)), cfg_.branch_dim, TrimodalConfig::class_count, init);
  }
}

Var TrimodalModel::keypoint_branch(ag::Tape& tape, const std::array<Matrix, 3>& groups, Rng* rng) const {
  const auto frames = groups[0].rows();
  std::array<Var, 3> pooled;
  for (int g = 0; g < 3; ++g) {
    if (groups[g].rows() != frames) {
      throw ValidationError("keypoint groups disagree on frame count (" + std::to_string(frames) + " vs " +
                            std::to_string(groups[g].rows()) + ")");
    }
    Var input = ag::standardize_channels(tape.constant(groups[g]), tape.param("keypoint.input_norm.mean"),
                                         tape.param("keypoint.input_norm.scale"));
    Var frame_emb = spatial_[g].forward(tape, input, &graphs_[g]);
    pooled[g] = keypoint_temporal_[g].forward(tape, frame_emb, -1, rng);
  }
  return linear(tape, ag::concat_cols(pooled), "keypoint.compress");
}

Var TrimodalModel::visual_branch(ag::Tape& tape, const Matrix& visual, Rng* rng) const {
  if (visual.cols() != cfg_.visual_width) {
    throw ValidationError("visual frames have width " + std::to_string(visual.cols()) + ", expected " +
                          std::to_string(cfg_.visual_width));
  }
  Var input = ag::standardize_channels(tape.constant(visual), tape.param("visual.input_norm.mean"),
                                       tape.param("visual.input_norm.scale"));
  Var pooled = visual_temporal_->forward(tape, input, -1, rng);
  return linear(tape, pooled, "visual.compress");
}

Var TrimodalModel::text_branch(ag::Tape& tape, const TextInput& text, Rng* rng) const {
  if (cfg_.text.embedding_input_dim > 0) {
    if (static_cast<int>(text.embedding.size()) != cfg_.text.embedding_input_dim) {
      throw ValidationError("text embedding has width " + std::to_string(text.embedding.size()) + ", expected " +
                            std::to_string(cfg_.text.embedding_input_dim));
    }
    Matrix row = Eigen::Map<const Matrix>(text.embedding.data(), 1, static_cast<Eigen::Index>(text.embedding.size()));
    return linear(tape, tape.constant(std::move(row)), "text.compress");
  }
  if (text.is_embedding()) throw ValidationError("model expects text tokens, got an embedding");
  return linear(tape, text_encoder_->forward(tape, text.tokens, rng), "text.compress");
}

Var TrimodalModel::fuse_and_classify(ag::Tape& tape, Var keypoint, Var visual, Var text) const {
  for (Var v : {keypoint, visual, text}) {
    if (v.rows() != 1 || v.cols() != cfg_.branch_dim) throw ValidationError("branch vector has wrong shape");
    if (!v.value().allFinite()) throw ValidationError("branch vector contains non-finite values");
  }
  std::array<Var, 3> parts{keypoint, visual, text};
  Var x = ag::concat_cols(parts);
  Var fused = ag::add(x, ag::activate(linear(tape, x, "fusion"), cfg_.fusion_activation));
  return linear(tape, fused, "head");
}

Var TrimodalModel::forward_full(ag::Tape& tape, const SampleFeatures& sample, Rng* rng) const {
  return fuse_and_classify(tape, keypoint_branch(tape, sample.keypoint_groups, rng),
                           visual_branch(tape, sample.visual, rng), text_branch(tape, sample.text, rng));
}

Var TrimodalModel::branch_logits(ag::Tape& tape, Branch branch, const SampleFeatures& sample, Rng* rng) const {
  Var vec;
  switch (branch) {
    case Branch::keypoint: vec = keypoint_branch(tape, sample.keypoint_groups, rng); break;
    case Branch::visual: vec = visual_branch(tape, sample.visual, rng); break;
    case Branch::text: vec = text_branch(tape, sample.text, rng); break;
  }
  return linear(tape, vec, kHeadPrefix + std::string(to_string(branch)));
}

Var TrimodalModel::forward(ag::Tape& tape, Target target, const SampleFeatures& sample, Rng* rng) const {
  switch (target) {
    case Target::full: return forward_full(tape, sample, rng);
    case Target::keypoint: return branch_logits(tape, Branch::keypoint, sample, rng);
    case Target::visual: return branch_logits(tape, Branch::visual, sample, rng);
    case Target::text: return branch_logits(tape, Branch::text, sample, rng);
  }
  throw ValidationError("unknown target");
}

std::array<double, 2> TrimodalModel::logits(const SampleFeatures& sample, Target target) const {
  ag::Tape tape(&params_);
  const Matrix& out = forward(tape, target, sample).value();
  return {out(0, 0), out(0, 1)};
}

namespace {

bool is_normalization(const std::string& name) { return name.find(".input_norm.") != std::string::npos; }

}  // namespace

std::vector<std::size_t> TrimodalModel::branch_parameters(Branch b) const {
  auto all = params_.with_prefix({branch_prefix(b)});
  std::erase_if(all, [&](std::size_t i) { return is_normalization(params_[i].name); });
  return all;
}

std::vector<std::size_t> TrimodalModel::normalization_parameters(Branch b) const {
  return params_.with_prefix({branch_prefix(b) + "input_norm."});
}

void TrimodalModel::set_input_normalization(Branch b, const Matrix& mean, const Matrix& scale) {
  if (b == Branch::text) throw ValidationError("the text branch has no input standardization");
  const std::string p = branch_prefix(b) + "input_norm.";
  Matrix& m = params_.value(p + "mean");
  Matrix& s = params_.value(p + "scale");
  if (mean.rows() != 1 || mean.cols() != m.cols() || scale.rows() != 1 || scale.cols() != s.cols()) {
    throw ValidationError("input standardization for the " + std::string(to_string(b)) + " branch must be 1x" +
                          std::to_string(m.cols()));
  }
  if (!mean.allFinite() || !scale.allFinite()) throw ValidationError("input standardization must be finite");
  m = mean;
  s = scale;
}

std::vector<std::size_t> TrimodalModel::checkpoint_parameters(Target target) const {
  auto out = trainable_parameters(target);
  for (Branch b : kAllBranches) {
    if (target == Target::full || target == target_for(b)) {
      const auto norm = normalization_parameters(b);
      out.insert(out.end(), norm.begin(), norm.end());
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

std::vector<std::size_t> TrimodalModel::head_parameters(Branch b) const {
  return params_.with_prefix({kHeadPrefix + std::string(to_string(b)) + "."});
}

std::vector<std::size_t> TrimodalModel::full_parameters() const {
  std::vector<std::size_t> out;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].name.starts_with(kHeadPrefix) && !is_normalization(params_[i].name)) out.push_back(i);
  }
  return out;
}

std::vector<std::size_t> TrimodalModel::trainable_parameters(Target target) const {
  if (target == Target::full) return full_parameters();
  const Branch b = target == Target::keypoint ? Branch::keypoint
                   : target == Target::visual ? Branch::visual
                                              : Branch::text;
  auto out = branch_parameters(b);
  const auto head = head_parameters(b);
  out.insert(out.end(), head.begin(), head.end());
  return out;
}

// ---- checkpoints ----------------------------------------------------------------

std::string_view to_string(Stage s) {
  switch (s) {
    case Stage::pretrain_keypoint: return "pretrain_keypoint";
    case Stage::pretrain_visual: return "pretrain_visual";
    case Stage::pretrain_text: return "pretrain_text";
    case Stage::finetune_full: return "finetune_full";
  }
  return "?";
}

Stage parse_stage(std::string_view name) {
  for (auto s : {Stage::pretrain_keypoint, Stage::pretrain_visual, Stage::pretrain_text, Stage::finetune_full}) {
    if (to_string(s) == name) return s;
  }
  throw ParseError("unknown stage '" + std::string(name) + "'");
}

Stage pretrain_stage(Branch b) {
  switch (b) {
    case Branch::keypoint: return Stage::pretrain_keypoint;
    case Branch::visual: return Stage::pretrain_visual;
    case Branch::text: return Stage::pretrain_text;
  }
  return Stage::finetune_full;
}

Checkpoint make_checkpoint(const TrimodalModel& model, Stage stage, int epoch, double validation_accuracy,
                           const std::vector<std::size_t>& parameter_indices) {
  Checkpoint c;
  c.fingerprint = model.config().fingerprint();
  c.stage = stage;
  c.epoch = epoch;
  c.validation_accuracy = validation_accuracy;
  for (auto i : parameter_indices) c.tensors.emplace_back(model.parameters()[i].name, model.parameters()[i].value);
  return c;
}

namespace {

constexpr char kCheckpointMagic[8] = {'H', 'E', 'M', 'O', 'C', 'K', 'P', '1'};

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

void put_string(std::ostream& out, const std::string& s) {
  put(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

template <typename T>
T get(std::istream& in, const std::filesystem::path& path) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (in.gcount() != static_cast<std::streamsize>(sizeof(T))) {
    throw ParseError("truncated checkpoint '" + path.string() + "'");
  }
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path) {
  const auto n = get<std::uint32_t>(in, path);
  if (n > (1u << 20)) throw ParseError("corrupt string length in checkpoint '" + path.string() + "'");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (in.gcount() != static_cast<std::streamsize>(n)) throw ParseError("truncated checkpoint '" + path.string() + "'");
  return s;
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write checkpoint '" + path.string() + "'");
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_string(out, ckpt.fingerprint);
  put_string(out, std::string(to_string(ckpt.stage)));
  put(out, static_cast<std::int32_t>(ckpt.epoch));
  put(out, ckpt.validation_accuracy);
  put(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
  for (const auto& [name, m] : ckpt.tensors) {
    put_string(out, name);
    put(out, static_cast<std::uint32_t>(m.rows()));
    put(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
  }
  if (!out) throw IngestionError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("cannot open checkpoint '" + path.string() + "'");
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  if (in.gcount() != 8 || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw ParseError("'" + path.string() + "' is not a checkpoint");
  }
  Checkpoint c;
  c.fingerprint = get_string(in, path);
  c.stage = parse_stage(get_string(in, path));
  c.epoch = get<std::int32_t>(in, path);
  c.validation_accuracy = get<double>(in, path);
  const auto count = get<std::uint32_t>(in, path);
  for (std::uint32_t i = 0; i < count; ++i) {
    auto name = get_string(in, path);
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    Matrix m(rows, cols);
    in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(double)));
    if (in.gcount() != static_cast<std::streamsize>(m.size() * sizeof(double))) {
      throw ParseError("truncated checkpoint '" + path.string() + "'");
    }
    c.tensors.emplace_back(std::move(name), std::move(m));
  }
  return c;
}

std::vector<std::string> apply_checkpoint(TrimodalModel& model, const Checkpoint& ckpt,
                                          const std::vector<std::string>& prefixes, bool allow_mismatch) {
  if (!allow_mismatch && ckpt.fingerprint != model.config().fingerprint()) {
    throw ValidationError("checkpoint fingerprint " + ckpt.fingerprint + " does not match model " +
                          model.config().fingerprint());
  }
  std::vector<std::string> written;
  auto& params = model.parameters();
  for (const auto& [name, m] : ckpt.tensors) {
    bool wanted = prefixes.empty();
    for (const auto& p : prefixes) wanted = wanted || name.starts_with(p);
    if (!wanted) continue;
    if (!params.contains(name)) throw ValidationError("checkpoint tensor '" + name + "' unknown to the model");
    Matrix& dst = params.value(name);
    if (dst.rows() != m.rows() || dst.cols() != m.cols()) {
      throw ValidationError("checkpoint tensor '" + name + "' has the wrong shape");
    }
    dst = m;
    written.push_back(name);
  }
  return written;
}

}  // namespace hemo
