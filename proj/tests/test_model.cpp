#include <cmath>
#include <fstream>
#include <random>
#include <set>

#include "doctest.h"
#include "hemo/model.hpp"
#include "test_util.hpp"

using namespace hemo;
using hemo::testing::TempDir;

namespace {

TrimodalConfig small_config() {
  TrimodalConfig cfg;
  cfg.spatial = SpatialEncoderConfig{SpatialKind::mlp, 2, 4, 1, 4, ag::Activation::tanh};
  cfg.keypoint_temporal = TemporalEncoderConfig{4, 1, 2, 8, 32, 0.0};
  cfg.visual_temporal = TemporalEncoderConfig{4, 1, 2, 8, 32, 0.0};
  cfg.text = TextEncoderConfig{16, 4, 1, 2, 8, 16};
  cfg.visual_width = 5;
  cfg.branch_dim = 3;
  cfg.fusion_activation = ag::Activation::tanh;
  return cfg;
}

Matrix random_matrix(Eigen::Index r, Eigen::Index c, std::uint64_t seed, double sd = 1.0) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, sd);
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < r; ++i)
    for (Eigen::Index j = 0; j < c; ++j) m(i, j) = n(rng);
  return m;
}

SampleFeatures random_sample(const TrimodalConfig& cfg, int frames, std::uint64_t seed) {
  SampleFeatures s;
  for (auto g : kAllGroups) {
    const int n = default_topology().group_size(g);
    s.keypoint_groups[static_cast<std::size_t>(g)] =
        random_matrix(frames, n * cfg.spatial.node_feature_dim, seed + static_cast<std::uint64_t>(g), 0.5);
  }
  s.visual = random_matrix(frames + 2, cfg.visual_width, seed + 10);
  s.text.tokens = {3, 1, 4, 1, 5, 9, 2, 6};
  return s;
}

void randomize(TrimodalModel& model, std::uint64_t seed) {
  auto& params = model.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    if (p.name.find(".input_norm.") != std::string::npos) continue;
    p.value += random_matrix(p.value.rows(), p.value.cols(), seed + i, 0.2);
  }
}

// x W + b with explicit loops.
std::vector<double> affine_loops(const std::vector<double>& x, const Matrix& w, const Matrix& b) {
  std::vector<double> out(static_cast<std::size_t>(w.cols()));
  for (Eigen::Index j = 0; j < w.cols(); ++j) {
    double acc = b(0, j);
    for (Eigen::Index i = 0; i < w.rows(); ++i) acc += x[static_cast<std::size_t>(i)] * w(i, j);
    out[static_cast<std::size_t>(j)] = acc;
  }
  return out;
}

std::array<Matrix, 3> branch_vectors(const TrimodalModel& model, const SampleFeatures& s) {
  ag::Tape tape(&model.parameters());
  return {model.keypoint_branch(tape, s.keypoint_groups).value(), model.visual_branch(tape, s.visual).value(),
          model.text_branch(tape, s.text).value()};
}

}  // namespace

TEST_CASE("fusion and head match a straight-line recomputation") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 5);
  randomize(model, 17);
  const auto sample = random_sample(cfg, 6, 3);
  const auto b = branch_vectors(model, sample);
  std::vector<double> x;
  for (const auto& v : b)
    for (Eigen::Index j = 0; j < v.cols(); ++j) x.push_back(v(0, j));
  const auto& p = model.parameters();
  auto h = affine_loops(x, p.value("fusion.weight"), p.value("fusion.bias"));
  for (std::size_t i = 0; i < h.size(); ++i) h[i] = x[i] + std::tanh(h[i]);
  const auto expected = affine_loops(h, p.value("head.weight"), p.value("head.bias"));
  const auto got = model.logits(sample);
  CHECK(std::abs(got[0] - expected[0]) <= 1e-12);
  CHECK(std::abs(got[1] - expected[1]) <= 1e-12);
}

TEST_CASE("zero fusion map leaves the concatenation unchanged") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 2);
  randomize(model, 4);
  model.parameters().value("fusion.weight").setZero();
  model.parameters().value("fusion.bias").setZero();
  const auto sample = random_sample(cfg, 5, 8);
  const auto b = branch_vectors(model, sample);
  Matrix x(1, cfg.fused_dim());
  x << b[0], b[1], b[2];
  const auto& p = model.parameters();
  const Matrix expected = x * p.value("head.weight") + p.value("head.bias");
  const auto got = model.logits(sample);
  CHECK(got[0] == doctest::Approx(expected(0, 0)).epsilon(1e-14));
  CHECK(got[1] == doctest::Approx(expected(0, 1)).epsilon(1e-14));
}

TEST_CASE("zero head weights pass the head bias through") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 9);
  model.parameters().value("head.weight").setZero();
  model.parameters().value("head.bias") << 0.3, -0.3;
  for (std::uint64_t s : {1u, 2u, 3u}) {
    const auto got = model.logits(random_sample(cfg, 4, s));
    CHECK(got[0] == 0.3);
    CHECK(got[1] == -0.3);
  }
}

TEST_CASE("branch outputs have branch_dim width and zero compression gives zero") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 1);
  const auto sample = random_sample(cfg, 10, 2);
  for (const auto& v : branch_vectors(model, sample)) {
    CHECK(v.rows() == 1);
    CHECK(v.cols() == cfg.branch_dim);
  }
  for (const auto& p : model.parameters()) {
    if (p.name.ends_with("compress.weight") || p.name.ends_with("compress.bias")) {
      model.parameters().value(p.name).setZero();
    }
  }
  for (const auto& v : branch_vectors(model, sample)) CHECK(v.isZero(0.0));
}

TEST_CASE("forward passes are deterministic and finite") {
  const auto cfg = small_config();
  TrimodalModel a(cfg, 3), b(cfg, 3);
  const auto sample = random_sample(cfg, 7, 5);
  const auto la = a.logits(sample);
  CHECK(std::isfinite(la[0]));
  CHECK(la == b.logits(sample));
  CHECK(la == a.logits(sample));
  TrimodalModel c(cfg, 4);
  CHECK(la != c.logits(sample));
}

TEST_CASE("branch input validation") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 1);
  auto sample = random_sample(cfg, 5, 1);
  auto bad = sample;
  bad.keypoint_groups[1] = random_matrix(6, bad.keypoint_groups[1].cols(), 3);
  CHECK_THROWS_AS(model.logits(bad), ValidationError);
  bad = sample;
  bad.visual = random_matrix(5, cfg.visual_width + 1, 3);
  CHECK_THROWS_AS(model.logits(bad), ValidationError);
  bad = sample;
  bad.text.embedding = {1.0, 2.0};
  CHECK_THROWS_AS(model.logits(bad), ValidationError);

  ag::Tape tape(&model.parameters());
  const ag::Var ok = tape.constant(Matrix::Zero(1, cfg.branch_dim));
  Matrix nan = Matrix::Zero(1, cfg.branch_dim);
  nan(0, 1) = std::nan("");
  CHECK_THROWS_AS(model.fuse_and_classify(tape, ok, tape.constant(nan), ok), ValidationError);
}

TEST_CASE("input standardization is applied per channel and excluded from training") {
  const auto cfg = small_config();
  TrimodalModel model(cfg, 6);
  randomize(model, 6);
  const auto sample = random_sample(cfg, 6, 11);

  const Matrix mean = random_matrix(1, cfg.visual_width, 21);
  const Matrix scale = random_matrix(1, cfg.visual_width, 22).array().abs() + 0.5;
  // Shifting and scaling the input by hand with identity standardization is
  // the same as storing the transform in the model.
  auto shifted = sample;
  for (Eigen::Index r = 0; r < shifted.visual.rows(); ++r) {
    shifted.visual.row(r) = ((shifted.visual.row(r) - mean).array() * scale.array()).matrix();
  }
  const auto reference = model.logits(shifted);
  model.set_input_normalization(Branch::visual, mean, scale);
  const auto got = model.logits(sample);
  CHECK(std::abs(got[0] - reference[0]) <= 1e-12);
  CHECK(std::abs(got[1] - reference[1]) <= 1e-12);

  CHECK_THROWS_AS(model.set_input_normalization(Branch::text, mean, scale), ValidationError);
  CHECK_THROWS_AS(model.set_input_normalization(Branch::visual, Matrix::Zero(1, 2), Matrix::Ones(1, 2)),
                  ValidationError);
  Matrix inf = scale;
  inf(0, 0) = INFINITY;
  CHECK_THROWS_AS(model.set_input_normalization(Branch::visual, mean, inf), ValidationError);

  const auto& params = model.parameters();
  for (Target t : {Target::full, Target::keypoint, Target::visual, Target::text}) {
    for (auto i : model.trainable_parameters(t)) CHECK(params[i].name.find(".input_norm.") == std::string::npos);
  }
  std::set<std::string> saved;
  for (auto i : model.checkpoint_parameters(Target::full)) saved.insert(params[i].name);
  CHECK(saved.contains("keypoint.input_norm.mean"));
  CHECK(saved.contains("visual.input_norm.scale"));
  CHECK(model.normalization_parameters(Branch::text).empty());
}

TEST_CASE("checkpoint round-trip reproduces logits bit-exactly") {
  TempDir dir("ckpt");
  const auto cfg = small_config();
  TrimodalModel model(cfg, 12);
  randomize(model, 12);
  model.set_input_normalization(Branch::keypoint, Matrix::Constant(1, 2, 0.25), Matrix::Constant(1, 2, 3.0));
  const auto sample = random_sample(cfg, 5, 4);
  const auto ckpt = make_checkpoint(model, Stage::finetune_full, 7, 0.8, model.checkpoint_parameters(Target::full));
  save_checkpoint(dir / "m.ckpt", ckpt);
  const auto loaded = load_checkpoint(dir / "m.ckpt");
  CHECK(loaded.epoch == 7);
  CHECK(loaded.stage == Stage::finetune_full);
  CHECK(loaded.validation_accuracy == 0.8);
  CHECK(loaded.fingerprint == cfg.fingerprint());

  TrimodalModel fresh(cfg, 99);
  CHECK(fresh.logits(sample) != model.logits(sample));
  apply_checkpoint(fresh, loaded);
  CHECK(fresh.logits(sample) == model.logits(sample));

  auto other = cfg;
  other.branch_dim = 4;
  TrimodalModel mismatched(other, 1);
  CHECK_THROWS_AS(apply_checkpoint(mismatched, loaded), ValidationError);

  std::ofstream(dir / "junk.ckpt") << "not a checkpoint";
  CHECK_THROWS_AS(load_checkpoint(dir / "junk.ckpt"), ParseError);
}

TEST_CASE("loading a branch checkpoint changes only that branch") {
  const auto cfg = small_config();
  TrimodalModel source(cfg, 31);
  randomize(source, 31);
  const auto ckpt = make_checkpoint(source, Stage::pretrain_visual, 0, 1.0, source.checkpoint_parameters(Target::visual));
  TrimodalModel target(cfg, 32);
  const auto before = target.parameters();
  const auto written = apply_checkpoint(target, ckpt, {branch_prefix(Branch::visual)});
  CHECK_FALSE(written.empty());
  for (std::size_t i = 0; i < before.size(); ++i) {
    const auto& name = before[i].name;
    const bool changed = before[i].value != target.parameters()[i].value;
    if (name.starts_with("visual.") && name.find(".input_norm.") == std::string::npos) {
      CHECK_MESSAGE(changed, name);
    } else if (!name.starts_with("visual.")) {
      CHECK_FALSE_MESSAGE(changed, name);
    }
  }
}
