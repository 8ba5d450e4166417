#include "hemo/ablation.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <sstream>

#include "hemo/weaksup.hpp"

namespace hemo {

std::string_view to_string(Strategy s) {
  switch (s) {
    case Strategy::keypoint: return "keypoint";
    case Strategy::direct: return "direct";
    case Strategy::weak_sup: return "weak_sup";
    case Strategy::weak_sup_offsets: return "weak_sup+offsets";
    case Strategy::pretrain_weak_sup: return "pretrain+weak_sup";
  }
  return "?";
}

Strategy parse_strategy(std::string_view name) {
  for (Strategy s : {Strategy::keypoint, Strategy::direct, Strategy::weak_sup, Strategy::weak_sup_offsets,
                     Strategy::pretrain_weak_sup}) {
    if (name == to_string(s)) return s;
  }
  throw ValidationError("unknown strategy '" + std::string(name) +
                        "' (expected keypoint, direct, weak_sup, weak_sup+offsets, pretrain+weak_sup)");
}

bool uses_pool(Strategy s) {
  return s == Strategy::weak_sup || s == Strategy::weak_sup_offsets || s == Strategy::pretrain_weak_sup;
}

void AblationGrid::validate() const {
  if (kinds.empty()) throw ValidationError("ablation grid has no encoder kinds");
  if (offsets.empty()) throw ValidationError("ablation grid has no offset settings");
  if (strategies.empty()) throw ValidationError("ablation grid has no strategies");
  if (seeds.empty()) throw ValidationError("ablation grid has no seeds");
}

double AblationRow::mean() const {
  if (accuracies.empty()) return std::nan("");
  return std::accumulate(accuracies.begin(), accuracies.end(), 0.0) / static_cast<double>(accuracies.size());
}

double AblationRow::spread() const {
  if (accuracies.size() < 2) return 0.0;
  const double m = mean();
  double ss = 0.0;
  for (double a : accuracies) ss += (a - m) * (a - m);
  return std::sqrt(ss / static_cast<double>(accuracies.size() - 1));
}

namespace {

struct SeedData {
  DatasetManifest gold;
  DatasetManifest validation;
  DatasetManifest merged;
};

SeedData split_for_seed(const DatasetManifest& labeled, const ExperimentSettings& s, std::uint64_t seed,
                        bool need_pool) {
  SeedData d;
  auto [train, val] = split_train_val(labeled, s.val_fraction, derive_seed(seed, "ablation-split"));
  d.validation = std::move(val);
  if (!need_pool) {
    d.gold = std::move(train);
    return d;
  }
  auto [gold, pool] = split_train_val(train, s.pool_fraction, derive_seed(seed, "ablation-pool"));
  const auto pseudo = simulate_pseudo_labels(pool, s.pseudo_noise, derive_seed(seed, "ablation-pseudo"));
  d.merged = merge_datasets(gold, pseudo, pool);
  d.gold = std::move(gold);
  return d;
}

double run_cell(const AblationRow& cell, const SeedData& data, const ExperimentSettings& s, std::uint64_t seed) {
  FeatureConfig features = s.features;
  features.offsets_enabled = cell.offsets;
  TrimodalConfig cfg = s.model;
  cfg.spatial.kind = cell.kind;
  cfg.spatial.node_feature_dim = features.node_feature_dim();
  const int vocab = cfg.text.vocabulary_size;

  StageConfig pre = s.pretrain;
  pre.seed = derive_seed(seed, "ablation-pretrain");
  StageConfig fine = s.finetune;
  fine.seed = derive_seed(seed, "ablation-finetune");
  const TrainOptions options{s.workers, {}, {}};

  const SampleStore gold(data.gold, vocab);
  const SampleStore val(data.validation, vocab);
  TrimodalModel model(cfg, derive_seed(seed, "ablation-init"));
  Target target = Target::full;
  switch (cell.strategy) {
    case Strategy::keypoint:
      pretrain_branch(model, Branch::keypoint, gold, val, features, pre, s.loss, options);
      target = Target::keypoint;
      break;
    case Strategy::direct:
      train_direct(model, gold, val, features, pre, s.loss, options);
      break;
    case Strategy::weak_sup:
    case Strategy::weak_sup_offsets:
      train_direct(model, SampleStore(data.merged, vocab), val, features, pre, s.loss, options);
      break;
    case Strategy::pretrain_weak_sup: {
      std::array<Checkpoint, 3> ckpts;
      for (Branch b : kAllBranches) {
        TrimodalModel branch_model(cfg, derive_seed(seed, "ablation-init"));
        auto r = pretrain_branch(branch_model, b, gold, val, features, pre, s.loss, options);
        ckpts[static_cast<std::size_t>(b)] = std::move(*r.checkpoint);
      }
      finetune_full(model, ckpts, SampleStore(data.merged, vocab), val, features, fine, s.loss, options);
      break;
    }
  }
  const VoteConfig votes{s.votes.views, s.votes.tie_rule, derive_seed(seed, "ablation-votes")};
  return evaluate(model, val, features, votes, target, s.workers).metrics.accuracy;
}

}  // namespace

AblationTable run_ablation(const AblationGrid& grid, const DatasetManifest& labeled, const ExperimentSettings& settings,
                           double budget_seconds, const AblationProgress& progress) {
  grid.validate();
  const auto started = std::chrono::steady_clock::now();
  const auto elapsed = [&] { return std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count(); };

  AblationTable table;
  for (SpatialKind kind : grid.kinds) {
    for (bool offsets : grid.offsets) {
      for (Strategy strategy : grid.strategies) {
        AblationRow row;
        row.kind = kind;
        row.offsets = strategy == Strategy::weak_sup_offsets ? true : offsets;
        row.strategy = strategy;
        const bool duplicate = std::any_of(table.rows.begin(), table.rows.end(), [&](const AblationRow& r) {
          return r.kind == row.kind && r.offsets == row.offsets && r.strategy == row.strategy;
        });
        if (!duplicate) table.rows.push_back(std::move(row));
      }
    }
  }
  const bool need_pool = std::any_of(grid.strategies.begin(), grid.strategies.end(), uses_pool);

  for (std::uint64_t seed : grid.seeds) {
    const SeedData data = split_for_seed(labeled, settings, seed, need_pool);
    for (auto& row : table.rows) {
      if (budget_seconds > 0.0 && elapsed() >= budget_seconds) {
        table.complete = false;
        table.wall_seconds = elapsed();
        return table;
      }
      const double acc = run_cell(row, data, settings, seed);
      row.seeds.push_back(seed);
      row.accuracies.push_back(acc);
      if (progress) progress(row, seed, acc);
    }
  }
  table.wall_seconds = elapsed();
  return table;
}

void write_ablation_csv(const std::filesystem::path& path, const AblationTable& table) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write " + path.string());
  out << std::setprecision(17);
  out << "kind,offsets,strategy,runs,mean_accuracy,std_accuracy,accuracies,complete\n";
  for (const auto& r : table.rows) {
    out << to_string(r.kind) << ',' << (r.offsets ? "on" : "off") << ',' << to_string(r.strategy) << ','
        << r.accuracies.size() << ',';
    if (!r.accuracies.empty()) out << r.mean();
    out << ',' << r.spread() << ',';
    for (std::size_t i = 0; i < r.accuracies.size(); ++i) out << (i ? ";" : "") << r.accuracies[i];
    out << ',' << (table.complete ? "true" : "false") << '\n';
  }
}

std::string format_ablation(const AblationTable& table) {
  std::ostringstream out;
  out << std::left << std::setw(6) << "kind" << std::setw(9) << "offsets" << std::setw(20) << "strategy"
      << std::setw(6) << "runs" << "accuracy (%)\n";
  out << std::fixed << std::setprecision(2);
  for (const auto& r : table.rows) {
    out << std::setw(6) << to_string(r.kind) << std::setw(9) << (r.offsets ? "on" : "off") << std::setw(20)
        << to_string(r.strategy) << std::setw(6) << r.accuracies.size();
    if (r.accuracies.empty()) {
      out << "n/a\n";
    } else {
      out << 100.0 * r.mean() << " +- " << 100.0 * r.spread() << '\n';
    }
  }
  if (!table.complete) out << "INCOMPLETE: budget exhausted before every run finished\n";
  return out.str();
}

}  // namespace hemo
