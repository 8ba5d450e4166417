#include <filesystem>

#include "doctest.h"
#include "hemo/inference.hpp"
#include "hemo/synthgen.hpp"
#include "hemo/training.hpp"
#include "test_util.hpp"

using namespace hemo;
using hemo::testing::TempDir;

namespace {

struct Fixture {
  TempDir dir{"train"};
  FeatureConfig features;
  TrimodalConfig model;
  SampleStore train;
  SampleStore validation;
  StageConfig stage;
  FocalLossParams loss;

  Fixture() {
    SynthConfig synth;
    synth.sample_count = 12;
    synth.frames_min = 120;
    synth.frames_max = 180;
    synth.visual_width = 4;
    synth.vocab_size = 32;
    synth.text_length = 10;
    synth.seed = 3;
    const auto ds = generate_dataset(synth, dir.path());
    const auto [tr, va] = split_train_val(ds.manifest, 0.34, 2);
    features.keypoint_samples = 8;
    features.visual_samples = 8;
    model.spatial = SpatialEncoderConfig{SpatialKind::mlp, features.node_feature_dim(), 4, 1, 4};
    model.keypoint_temporal = TemporalEncoderConfig{4, 1, 2, 8, 16, 0.0};
    model.visual_temporal = TemporalEncoderConfig{4, 1, 2, 8, 16, 0.0};
    model.text = TextEncoderConfig{32, 4, 1, 2, 8, 16};
    model.visual_width = 4;
    model.branch_dim = 4;
    train = SampleStore(tr, 32);
    validation = SampleStore(va, 32);
    stage.epochs = 3;
    stage.batch_size = 4;
    stage.seed = 9;
  }
};

bool same_parameters(const TrimodalModel& a, const TrimodalModel& b) {
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    if (a.parameters()[i].value != b.parameters()[i].value) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("training is identical across repeats and worker counts") {
  Fixture f;
  TrimodalModel a(f.model, 1), b(f.model, 1), c(f.model, 1);
  const auto ra = train_direct(a, f.train, f.validation, f.features, f.stage, f.loss, {1, {}, {}});
  const auto rb = train_direct(b, f.train, f.validation, f.features, f.stage, f.loss, {1, {}, {}});
  const auto rc = train_direct(c, f.train, f.validation, f.features, f.stage, f.loss, {3, {}, {}});
  CHECK(same_parameters(a, b));
  CHECK(same_parameters(a, c));
  REQUIRE(ra.report.history.size() == 3);
  for (std::size_t e = 0; e < 3; ++e) {
    CHECK(ra.report.history[e].train_loss == rb.report.history[e].train_loss);
    CHECK(ra.report.history[e].train_loss == rc.report.history[e].train_loss);
    CHECK(ra.report.history[e].validation_loss == rc.report.history[e].validation_loss);
  }
}

TEST_CASE("zero learning rate leaves trainable parameters untouched") {
  Fixture f;
  f.stage.learning_rate = 0.0;
  f.stage.stage = Stage::pretrain_keypoint;
  TrimodalModel model(f.model, 4);
  const TrimodalModel before(f.model, 4);
  const auto r = train_model(model, Target::keypoint, f.train, f.validation, f.features, f.stage, f.loss);
  CHECK_FALSE(r.report.error);
  CHECK(same_parameters(model, before));
}

TEST_CASE("zero epochs yields an error report and no checkpoint") {
  Fixture f;
  TempDir out("train_out");
  f.stage.epochs = 0;
  TrimodalModel model(f.model, 4);
  const auto r = train_direct(model, f.train, f.validation, f.features, f.stage, f.loss, {1, out.path(), {}});
  CHECK(r.report.error);
  CHECK_FALSE(r.report.error_message.empty());
  CHECK_FALSE(r.checkpoint.has_value());
  bool any_ckpt = false;
  for (const auto& e : std::filesystem::directory_iterator(out.path())) any_ckpt |= e.path().extension() == ".ckpt";
  CHECK_FALSE(any_ckpt);
}

TEST_CASE("the model is left at the best validation epoch") {
  Fixture f;
  f.stage.epochs = 4;
  TempDir out("train_best");
  TrimodalModel model(f.model, 6);
  std::vector<EpochRecord> seen;
  TrainOptions options{1, out.path(), [&](const EpochRecord& e) { seen.push_back(e); }};
  const auto r = pretrain_branch(model, Branch::visual, f.train, f.validation, f.features, f.stage, f.loss, options);
  REQUIRE(r.checkpoint.has_value());
  CHECK(seen.size() == 4);
  double best = 0.0;
  for (const auto& e : r.report.history) best = std::max(best, e.validation_accuracy);
  CHECK(r.report.best_validation_accuracy == best);
  CHECK(r.report.history[static_cast<std::size_t>(r.report.best_epoch - 1)].validation_accuracy == best);
  CHECK(r.checkpoint->epoch == r.report.best_epoch);

  for (const auto& [name, value] : r.checkpoint->tensors) CHECK(model.parameters().value(name) == value);

  REQUIRE(std::filesystem::exists(r.report.best_checkpoint_path));
  const auto loaded = load_checkpoint(r.report.best_checkpoint_path);
  CHECK(loaded.tensors == r.checkpoint->tensors);
  CHECK(read_report(out.path() / "pretrain_visual_report.jsonl").best_epoch == r.report.best_epoch);
}

TEST_CASE("stage 2 accepts partial checkpoints and rejects conflicting ones") {
  Fixture f;
  f.stage.epochs = 1;
  TrimodalModel kp(f.model, 7);
  const auto r = pretrain_branch(kp, Branch::keypoint, f.train, f.validation, f.features, f.stage, f.loss);
  std::vector<Checkpoint> one{*r.checkpoint};
  TrimodalModel full(f.model, 8);
  auto fine = f.stage;
  fine.stage = Stage::finetune_full;
  const auto rf = finetune_full(full, one, f.train, f.validation, f.features, fine, f.loss);
  CHECK_FALSE(rf.report.error);
  CHECK(full.parameters().value("visual.input_norm.scale") != Matrix::Ones(1, f.model.visual_width));

  std::vector<Checkpoint> twice{*r.checkpoint, *r.checkpoint};
  TrimodalModel other(f.model, 8);
  CHECK_THROWS_AS(finetune_full(other, twice, f.train, f.validation, f.features, fine, f.loss), ValidationError);
  std::vector<Checkpoint> wrong{*rf.checkpoint};
  CHECK_THROWS_AS(finetune_full(other, wrong, f.train, f.validation, f.features, fine, f.loss), ValidationError);
}

TEST_CASE("input standardization fit is deterministic and centres the training views") {
  Fixture f;
  TrimodalModel a(f.model, 1), b(f.model, 1);
  fit_input_normalization(a, Target::full, f.train, f.features, 5, 1);
  fit_input_normalization(b, Target::full, f.train, f.features, 5, 2);
  CHECK(same_parameters(a, b));
  const Matrix& scale = a.parameters().value("keypoint.input_norm.scale");
  CHECK((scale.array() > 0.0).all());
  CHECK(a.parameters().value("keypoint.input_norm.mean") != Matrix::Zero(1, f.features.node_feature_dim()));
}
