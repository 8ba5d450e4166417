// Acceptance run: one PASS/FAIL line per criterion on the desk profile.

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <functional>
#include <iostream>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "hemo/config.hpp"
#include "hemo/graph_topology.hpp"
#include "hemo/inference.hpp"
#include "hemo/synthgen.hpp"
#include "hemo/training.hpp"
#include "hemo/weaksup.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace hemo;
using hemo::testing::TempDir;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fixed(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

std::string sci(double v) {
  std::ostringstream s;
  s.setf(std::ios::scientific);
  s.precision(2);
  s << v;
  return s.str();
}

std::string join(const std::vector<double>& values, int digits = 3) {
  std::string out;
  for (std::size_t i = 0; i < values.size(); ++i) out += (i ? "," : "") + fixed(values[i], digits);
  return out;
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

const std::vector<std::uint64_t> kSeeds{1, 2, 3};

/// Desk-profile synthetic data, generated once per (sample count, seed).
DatasetManifest synthetic(const TempDir& dir, const RunConfig& cfg, int count, std::uint64_t seed) {
  SynthConfig synth = cfg.synth;
  synth.sample_count = count;
  synth.seed = derive_seed(seed, "acceptance-synth");
  const auto sub = dir / ("synth_" + std::to_string(count) + "_" + std::to_string(seed));
  return generate_dataset(synth, sub, cfg.workers).manifest;
}

// ---- 1 ---------------------------------------------------------------------------

Outcome oracle_suite() {
  std::mt19937_64 rng(2024);
  std::size_t offset_bad = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int frames = 1 + static_cast<int>(rng() % 200);
    offset_bad += testing::offset_mismatches(testing::random_sequence(frames, rng()), OffsetConfig{});
  }

  double adjacency_err = 0.0;
  const auto pair = make_group_graph(2, {{0, 1}});
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j) adjacency_err = std::max(adjacency_err, std::abs(pair.normalized(i, j) - 0.5));
  const auto path = make_group_graph(3, {{0, 1}, {1, 2}});
  // Degrees with self loops are (2, 3, 2).
  const double expected[3][3] = {{1.0 / 2, 1.0 / std::sqrt(6.0), 0.0},
                                 {1.0 / std::sqrt(6.0), 1.0 / 3, 1.0 / std::sqrt(6.0)},
                                 {0.0, 1.0 / std::sqrt(6.0), 1.0 / 2}};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) adjacency_err = std::max(adjacency_err, std::abs(path.normalized(i, j) - expected[i][j]));

  double ce_err = 0.0;
  std::normal_distribution<double> n(0.0, 4.0);
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 2> z{n(rng), n(rng)};
    for (Label y : {Label::win, Label::loss}) {
      const long double m = std::max(z[0], z[1]);
      const long double lse = m + std::log(std::exp(z[0] - m) + std::exp(z[1] - m));
      const double ce = static_cast<double>(lse - (y == Label::win ? z[1] : z[0]));
      ce_err = std::max(ce_err, std::abs(focal_loss(z, y, {0.0, 1.0, 1.0}) - ce));
    }
  }
  const double focal_err = std::abs(focal_loss({0.3, 0.3}, Label::win, {2.0, 1.0, 1.0}) - 0.25 * std::log(2.0));

  double gcn_err = 0.0;
  for (auto act : {ag::Activation::relu, ag::Activation::tanh}) {
    ag::ParameterSet params;
    const SpatialEncoderConfig cfg{SpatialKind::gcn, 3, 4, 2, 6, act};
    SpatialEncoder enc("s", cfg, 5, params, 11);
    const auto graph = make_group_graph(5, {});
    Matrix input(4, 15);
    for (Eigen::Index i = 0; i < input.size(); ++i) input.data()[i] = n(rng);
    ag::Tape tape(&params);
    const Matrix out = enc.forward(tape, tape.constant(input), &graph).value();
    gcn_err = std::max(gcn_err, (out - testing::per_node_linear_oracle(params, "s", cfg, 5, input)).cwiseAbs().maxCoeff());
  }

  Outcome o;
  o.pass = offset_bad == 0 && adjacency_err <= 1e-12 && ce_err <= 1e-12 && focal_err <= 1e-9 && gcn_err <= 1e-12;
  o.detail = "offset mismatches " + std::to_string(offset_bad) + " over 50 sequences, adjacency err " +
             sci(adjacency_err) + ", focal(gamma 0) vs CE err " + sci(ce_err) + ", focal(p 0.5, gamma 2) err " +
             sci(focal_err) + ", gcn identity-adjacency err " + sci(gcn_err);
  return o;
}

// ---- 2 ---------------------------------------------------------------------------

Outcome gradient_checks() {
  const auto suite = gradient_check_suite(0);
  Outcome o;
  o.pass = suite.passed(1e-4);
  std::ostringstream s;
  s << "max relative error " << suite.max_relative_error() << " over " << suite.entries.size() << " blocks (";
  for (std::size_t i = 0; i < suite.entries.size(); ++i) s << (i ? ", " : "") << suite.entries[i].block;
  s << ")";
  o.detail = s.str();
  return o;
}

// ---- 3 ---------------------------------------------------------------------------

Outcome learnability(const TempDir& dir, const RunConfig& cfg) {
  const auto labeled = synthetic(dir, cfg, cfg.synth.sample_count, cfg.seed);
  const auto [train, val] = split_train_val(labeled, cfg.val_fraction, cfg.seed_for("split"));
  const int vocab = cfg.model.text.vocabulary_size;
  const SampleStore gold(train, vocab), validation(val, vocab);
  const auto model_cfg = cfg.model_config();
  const TrainOptions options{cfg.workers, {}, {}};

  std::vector<Checkpoint> ckpts;
  std::vector<double> branch_acc;
  for (Branch b : kAllBranches) {
    TrimodalModel model(model_cfg, cfg.seed_for("init"));
    auto stage = cfg.stage_config(pretrain_stage(b));
    const auto r = pretrain_branch(model, b, gold, validation, cfg.features, stage, cfg.loss, options);
    branch_acc.push_back(r.report.best_validation_accuracy);
    ckpts.push_back(*r.checkpoint);
  }
  TrimodalModel full(model_cfg, cfg.seed_for("init"));
  const auto r = finetune_full(full, ckpts, gold, validation, cfg.features, cfg.stage_config(Stage::finetune_full),
                               cfg.loss, options);
  const double full_acc = evaluate(full, validation, cfg.features, cfg.vote_config(), Target::full, cfg.workers)
                              .metrics.accuracy;

  Outcome o;
  o.pass = std::all_of(branch_acc.begin(), branch_acc.end(), [](double a) { return a >= 0.9; }) &&
           r.report.best_validation_accuracy >= 0.9;
  o.detail = std::to_string(gold.size()) + " train / " + std::to_string(validation.size()) +
             " val; stage-1 keypoint/visual/text " + join(branch_acc) + ", stage-2 " +
             fixed(r.report.best_validation_accuracy, 3) + " (voted " + std::to_string(cfg.votes.views) + " views " +
             fixed(full_acc, 3) + "), majority floor " + fixed(std::max(val.class_prior, 1 - val.class_prior), 3);
  return o;
}

// ---- 4 ---------------------------------------------------------------------------

Outcome offset_direction(const TempDir& dir, const RunConfig& cfg) {
  const auto labeled = synthetic(dir, cfg, cfg.synth.sample_count, cfg.seed);
  AblationGrid grid;
  grid.kinds = {SpatialKind::mlp};
  grid.offsets = {true, false};
  grid.strategies = {Strategy::keypoint};
  grid.seeds = kSeeds;
  const auto table = run_ablation(grid, labeled, cfg.experiment());
  const auto& on = table.rows[0];
  const auto& off = table.rows[1];
  Outcome o;
  const double gap = 100.0 * (on.mean() - off.mean());
  o.pass = on.offsets && !off.offsets && gap >= 5.0;
  o.detail = "keypoint branch, 3 seeds: on " + join(on.accuracies) + " (mean " + fixed(on.mean(), 3) + "), off " +
             join(off.accuracies) + " (mean " + fixed(off.mean(), 3) + "), gap " + fixed(gap, 2) + " points";
  return o;
}

// ---- 5 ---------------------------------------------------------------------------

Outcome weak_supervision(const TempDir& dir, const RunConfig& cfg) {
  const int vocab = cfg.model.text.vocabulary_size;
  const auto model_cfg = cfg.model_config();
  const TrainOptions options{cfg.workers, {}, {}};
  std::vector<double> gold_acc, merged_acc;
  std::size_t gold_n = 0, pool_n = 0, val_n = 0;
  for (std::uint64_t seed : kSeeds) {
    const auto labeled = synthetic(dir, cfg, 104, seed);
    const auto [rest, val] = split_train_val(labeled, 40.0 / 104.0, derive_seed(seed, "ws-split"));
    const auto [gold, pool] = split_train_val(rest, 40.0 / 64.0, derive_seed(seed, "ws-pool"));
    const auto pseudo = simulate_pseudo_labels(pool, 0.356, derive_seed(seed, "ws-pseudo"));
    const auto merged = merge_datasets(gold, pseudo, pool);
    gold_n = gold.size();
    pool_n = pool.size();
    val_n = val.size();
    const SampleStore gold_store(gold, vocab), val_store(val, vocab), merged_store(merged, vocab);

    std::vector<Checkpoint> ckpts;
    for (Branch b : kAllBranches) {
      TrimodalModel model(model_cfg, derive_seed(seed, "ws-init"));
      auto stage = cfg.stage_config(pretrain_stage(b));
      stage.seed = derive_seed(seed, "ws-pretrain");
      ckpts.push_back(*pretrain_branch(model, b, gold_store, val_store, cfg.features, stage, cfg.loss, options).checkpoint);
    }
    auto fine = cfg.stage_config(Stage::finetune_full);
    fine.seed = derive_seed(seed, "ws-finetune");
    const VoteConfig votes{cfg.votes.views, cfg.votes.tie_rule, derive_seed(seed, "ws-votes")};
    for (bool use_pool : {false, true}) {
      TrimodalModel model(model_cfg, derive_seed(seed, "ws-init"));
      finetune_full(model, ckpts, use_pool ? merged_store : gold_store, val_store, cfg.features, fine, cfg.loss, options);
      const double acc = evaluate(model, val_store, cfg.features, votes, Target::full, cfg.workers).metrics.accuracy;
      (use_pool ? merged_acc : gold_acc).push_back(acc);
    }
  }
  int wins = 0;
  for (std::size_t i = 0; i < kSeeds.size(); ++i) wins += merged_acc[i] > gold_acc[i];
  const double delta = 100.0 * (mean(merged_acc) - mean(gold_acc));
  Outcome o;
  o.pass = wins >= 2 && delta >= -1.0;
  o.detail = std::to_string(gold_n) + " gold / " + std::to_string(pool_n) + " pool / " + std::to_string(val_n) +
             " val, noise 0.356: gold-only " + join(gold_acc) + ", gold+pseudo " + join(merged_acc) + "; merged wins " +
             std::to_string(wins) + "/3, mean change " + fixed(delta, 2) + " points";
  return o;
}

// ---- 6 ---------------------------------------------------------------------------

struct RunRecord {
  std::vector<EpochRecord> history;
  std::vector<Prediction> predictions;
  Metrics metrics;
};

bool same(const RunRecord& a, const RunRecord& b) {
  if (a.history.size() != b.history.size() || a.predictions.size() != b.predictions.size()) return false;
  for (std::size_t i = 0; i < a.history.size(); ++i) {
    const auto &x = a.history[i], &y = b.history[i];
    if (x.train_loss != y.train_loss || x.train_accuracy != y.train_accuracy ||
        x.validation_accuracy != y.validation_accuracy || x.validation_loss != y.validation_loss) {
      return false;
    }
  }
  for (std::size_t i = 0; i < a.predictions.size(); ++i) {
    if (a.predictions[i].mean_win_probability != b.predictions[i].mean_win_probability ||
        a.predictions[i].predicted != b.predictions[i].predicted) {
      return false;
    }
  }
  return a.metrics.accuracy == b.metrics.accuracy && a.metrics.confusion == b.metrics.confusion;
}

RunRecord full_run(const TempDir& dir, const RunConfig& cfg) {
  const auto labeled = synthetic(dir, cfg, 40, cfg.seed);
  const auto part = partition_dataset(labeled, cfg);
  const int vocab = cfg.model.text.vocabulary_size;
  const SampleStore gold(part.gold, vocab), val(part.validation, vocab);
  const auto pseudo = simulate_pseudo_labels(part.pool, cfg.weak_supervision.noise_rate, cfg.seed_for("pseudo"));
  const SampleStore merged(merge_datasets(part.gold, pseudo, part.pool), vocab);
  const TrainOptions options{cfg.workers, {}, {}};
  auto stage = cfg.stage_config(Stage::pretrain_keypoint);
  stage.epochs = 4;
  TrimodalModel kp(cfg.model_config(), cfg.seed_for("init"));
  const auto pre = pretrain_branch(kp, Branch::keypoint, gold, val, cfg.features, stage, cfg.loss, options);
  std::vector<Checkpoint> ckpts{*pre.checkpoint};
  auto fine = cfg.stage_config(Stage::finetune_full);
  fine.epochs = 3;
  TrimodalModel full(cfg.model_config(), cfg.seed_for("init"));
  const auto r = finetune_full(full, ckpts, merged, val, cfg.features, fine, cfg.loss, options);
  const auto e = evaluate(full, val, cfg.features, cfg.vote_config(), Target::full, cfg.workers);
  RunRecord rec{pre.report.history, e.predictions, e.metrics};
  rec.history.insert(rec.history.end(), r.report.history.begin(), r.report.history.end());
  return rec;
}

Outcome determinism(const TempDir& dir, RunConfig cfg) {
  cfg.seed = 5;
  const auto first = full_run(dir, cfg);
  const auto repeat = full_run(dir, cfg);
  cfg.workers = 3;
  const auto threaded = full_run(dir, cfg);
  Outcome o;
  const bool repeat_ok = same(first, repeat);
  const bool threaded_ok = same(first, threaded);
  o.pass = repeat_ok && threaded_ok;
  o.detail = "stage-1 keypoint + stage-2 with pseudo-labels, " + std::to_string(first.history.size()) +
             " epochs, " + std::to_string(first.predictions.size()) + " voted predictions: repeat " +
             (repeat_ok ? "bit-identical" : "DIFFERS") + ", 3 workers " + (threaded_ok ? "bit-identical" : "DIFFERS");
  return o;
}

// ---- 7 ---------------------------------------------------------------------------

Outcome voting(const TempDir& dir, const RunConfig& cfg) {
  // 100 validation records per seed, so one record is one accuracy point.
  const int vocab = cfg.model.text.vocabulary_size;
  const auto& features = cfg.features;
  const auto model_cfg = cfg.model_config();

  bool single_ok = true;
  std::vector<double> one, five;
  std::size_t val_n = 0;
  for (std::uint64_t seed : kSeeds) {
    const auto labeled = synthetic(dir, cfg, 200, seed);
    const auto [train, val] = split_train_val(labeled, 0.5, derive_seed(seed, "vote-split"));
    const SampleStore train_store(train, vocab), val_store(val, vocab);
    val_n = val_store.size();
    TrimodalModel model(model_cfg, derive_seed(seed, "vote-init"));
    auto stage = cfg.stage_config(Stage::pretrain_keypoint);
    stage.seed = derive_seed(seed, "vote-train");
    pretrain_branch(model, Branch::keypoint, train_store, val_store, features, stage, cfg.loss, {cfg.workers, {}, {}});

    const std::uint64_t base = derive_seed(seed, "vote-views");
    for (std::size_t i = 0; i < val_store.size(); ++i) {
      const auto& id = val_store.record(i).sample_id;
      const auto voted =
          predict_voted(model, val_store.sample(i), id, features, {1, TieRule::mean_probability, base}, Target::keypoint);
      const auto input = prepare_features(val_store.sample(i), features, inference_view_seed(base, id, 0), Target::keypoint);
      const double p = win_probability(model.logits(input, Target::keypoint));
      single_ok &= voted.mean_win_probability == p && voted.label == (p >= 0.5 ? Label::win : Label::loss);
    }
    one.push_back(evaluate(model, val_store, features, {1, TieRule::mean_probability, base}, Target::keypoint, cfg.workers)
                      .metrics.accuracy);
    five.push_back(evaluate(model, val_store, features, {5, TieRule::mean_probability, base}, Target::keypoint, cfg.workers)
                       .metrics.accuracy);
  }
  bool no_harm = true;
  for (std::size_t i = 0; i < one.size(); ++i) no_harm &= five[i] >= one[i] - 0.01;
  Outcome o;
  o.pass = single_ok && no_harm;
  o.detail = std::string("views=1 vs single pass ") + (single_ok ? "identical" : "DIFFERS") +
             "; keypoint branch, " + std::to_string(val_n) + " val per seed, 3 seeds: views=1 " + join(one) + ", views=5 " + join(five);
  return o;
}

}  // namespace

// Optional arguments select criteria by number; default is all of them.
int main(int argc, char** argv) {
  RunConfig cfg;
  TempDir dir("acceptance");
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"oracle suite", [] { return oracle_suite(); }},
      {"gradient checks", [] { return gradient_checks(); }},
      {"end-to-end learnability", [&] { return learnability(dir, cfg); }},
      {"offset-feature direction", [&] { return offset_direction(dir, cfg); }},
      {"weak-supervision direction", [&] { return weak_supervision(dir, cfg); }},
      {"determinism", [&] { return determinism(dir, cfg); }},
      {"voting consistency", [&] { return voting(dir, cfg); }},
  };
  std::vector<bool> selected(criteria.size(), argc == 1);
  for (int a = 1; a < argc; ++a) {
    const int k = std::atoi(argv[a]);
    if (k < 1 || k > static_cast<int>(criteria.size())) {
      std::cerr << "unknown criterion '" << argv[a] << "'\n";
      return 2;
    }
    selected[static_cast<std::size_t>(k - 1)] = true;
  }
  int failed = 0, run = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!selected[i]) continue;
    ++run;
    const auto started = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    failed += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " [" << criteria[i].first << "] "
              << o.detail << " (" << fixed(secs, 1) << " s)" << std::endl;
  }
  std::cout << (run - failed) << "/" << run << " criteria passed" << std::endl;
  return failed == 0 ? 0 : 1;
}
