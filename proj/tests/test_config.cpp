#include "doctest.h"
#include "hemo/config.hpp"
#include "test_util.hpp"

using namespace hemo;
using hemo::testing::label_only_manifest;

namespace {

std::string error_of(const std::string& yaml) {
  try {
    parse_run_config(yaml, "test.yaml");
  } catch (const std::exception& e) {
    return e.what();
  }
  return "";
}

}  // namespace

TEST_CASE("shipped default config equals the built-in defaults") {
  const auto shipped = load_run_config(std::filesystem::path(HEMO_SOURCE_DIR) / "configs" / "default.yaml");
  CHECK(to_yaml(shipped) == to_yaml(RunConfig{}));
}

TEST_CASE("shipped full-scale config loads and keeps the full dimensions") {
  const auto cfg = load_run_config(std::filesystem::path(HEMO_SOURCE_DIR) / "configs" / "full_scale.yaml");
  CHECK(cfg.features.keypoint_samples == 4000);
  CHECK(cfg.features.visual_samples == 800);
  CHECK(cfg.model.branch_dim == 256);
  CHECK(cfg.model.visual_width == 768);
  CHECK(cfg.model_config().fused_dim() == 768);
}

TEST_CASE("yaml echo round-trips every field") {
  RunConfig cfg;
  cfg.seed = 42;
  cfg.workers = 3;
  cfg.loss.gamma = 1.5;
  cfg.finetune.learning_rate_override = 3e-5;
  cfg.ablation.kinds = {SpatialKind::gcn, SpatialKind::gat};
  cfg.ablation.strategies = {Strategy::direct, Strategy::pretrain_weak_sup};
  cfg.weak_supervision.enabled = false;
  const auto text = to_yaml(cfg);
  const auto back = parse_run_config(text);
  CHECK(to_yaml(back) == text);
  CHECK(back.seed == 42);
  CHECK(back.finetune.learning_rate_override == 3e-5);
  CHECK(back.ablation.strategies == cfg.ablation.strategies);
  CHECK_FALSE(back.weak_supervision.enabled);
}

TEST_CASE("partial configs fall back to defaults") {
  const auto cfg = parse_run_config("seed: 7\nloss:\n  gamma: 0\n");
  CHECK(cfg.seed == 7);
  CHECK(cfg.loss.gamma == 0.0);
  CHECK(cfg.loss.alpha_loss == RunConfig{}.loss.alpha_loss);
  CHECK(cfg.stage_config(Stage::finetune_full).effective_learning_rate() ==
        doctest::Approx(0.1 * cfg.pretrain.learning_rate));
  CHECK(cfg.seed_for("split") != cfg.seed_for("pool"));
  CHECK(cfg.seed_for("split") == RunConfig{cfg}.seed_for("split"));
}

TEST_CASE("unknown keys and bad values are named in the error") {
  CHECK(error_of("loss:\n  gama: 2\n").find("loss.gama") != std::string::npos);
  CHECK(error_of("sead: 1\n").find("sead") != std::string::npos);
  CHECK_FALSE(error_of("loss:\n  gamma: fast\n").empty());
  CHECK_FALSE(error_of("model:\n  spatial:\n    kind: rnn\n").empty());
  CHECK_FALSE(error_of("[1, 2").empty());
}

TEST_CASE("cross-field validation") {
  CHECK_FALSE(error_of("features:\n  keypoint_samples: 5000\n").empty());
  CHECK_FALSE(error_of("synth:\n  visual_width: 16\n").empty());
  CHECK_FALSE(error_of("synth:\n  vocab_size: 512\n").empty());
  CHECK_FALSE(error_of("weak_supervision:\n  noise_rate: 1.2\n").empty());
  CHECK_FALSE(error_of("weak_supervision:\n  pool_fraction: 1.0\n").empty());
  CHECK_FALSE(error_of("val_fraction: 0\n").empty());
  CHECK_FALSE(error_of("workers: 0\n").empty());
  CHECK_FALSE(error_of("ablation:\n  kinds: []\n").empty());
}

TEST_CASE("dataset partition follows the weak-supervision switch") {
  const auto labeled = label_only_manifest(60, 20);
  RunConfig cfg;
  const auto with_pool = partition_dataset(labeled, cfg);
  CHECK(with_pool.validation.size() == 20);
  CHECK(with_pool.pool.size() == 24);
  CHECK(with_pool.gold.size() == 36);
  cfg.weak_supervision.enabled = false;
  const auto without = partition_dataset(labeled, cfg);
  CHECK(without.pool.size() == 0);
  CHECK(without.gold.size() == 60);
  CHECK(without.validation.records == with_pool.validation.records);
}

TEST_CASE("ablation grid and strategy names") {
  AblationGrid grid;
  CHECK_NOTHROW(grid.validate());
  grid.kinds.clear();
  CHECK_THROWS_AS(grid.validate(), ValidationError);
  grid = {};
  grid.seeds.clear();
  CHECK_THROWS_AS(grid.validate(), ValidationError);
  for (Strategy s : {Strategy::keypoint, Strategy::direct, Strategy::weak_sup, Strategy::weak_sup_offsets,
                     Strategy::pretrain_weak_sup}) {
    CHECK(parse_strategy(to_string(s)) == s);
  }
  CHECK_THROWS_AS(parse_strategy("magic"), ValidationError);
  CHECK(uses_pool(Strategy::weak_sup));
  CHECK_FALSE(uses_pool(Strategy::direct));

  AblationRow row;
  row.accuracies = {0.6, 0.8, 1.0};
  CHECK(row.mean() == doctest::Approx(0.8));
  CHECK(row.spread() == doctest::Approx(0.2));
  AblationTable table;
  table.rows.push_back(row);
  table.complete = false;
  const auto text = format_ablation(table);
  CHECK(text.find("80.00 +- 20.00") != std::string::npos);
  CHECK(text.find("INCOMPLETE") != std::string::npos);
}

TEST_CASE("ablation grid expands to one row per distinct cell") {
  // An exhausted budget returns before any training, which exposes the rows.
  AblationGrid grid;
  grid.kinds = {SpatialKind::mlp, SpatialKind::gcn};
  grid.offsets = {true, false};
  grid.strategies = {Strategy::keypoint, Strategy::weak_sup_offsets};
  grid.seeds = {1};
  const auto table = run_ablation(grid, label_only_manifest(12, 4), RunConfig{}.experiment(), 1e-12);
  CHECK_FALSE(table.complete);
  // kinds x offsets x keypoint, plus one weak_sup+offsets row per kind.
  CHECK(table.rows.size() == 6);
  for (const auto& r : table.rows) {
    if (r.strategy == Strategy::weak_sup_offsets) CHECK(r.offsets);
  }
  CHECK_THROWS_AS(run_ablation(AblationGrid{{}, {true}, {Strategy::keypoint}, {1}}, label_only_manifest(3, 3),
                               RunConfig{}.experiment()),
                  ValidationError);
}
