#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "hemo/pipeline.hpp"

namespace hemo {

enum class TieRule { mean_probability };

struct VoteConfig {
  int views = 5;
  TieRule tie_rule = TieRule::mean_probability;
  std::uint64_t base_seed = 0;
  void validate() const;
};

struct VoteResult {
  Label label = Label::win;
  double mean_win_probability = 0.0;
  int win_votes = 0;
  int loss_votes = 0;
  bool tie_rule_used = false;
  std::vector<double> view_win_probabilities;
};

/// Majority vote over per-view win probabilities (a view votes win when its
/// win probability is at least 0.5). An exact vote tie goes to win iff the mean
/// win probability is at least 0.5.
VoteResult aggregate_votes(std::span<const double> win_probabilities);

/// Softmax probability of the win class.
double win_probability(const std::array<double, 2>& logits);

VoteResult predict_voted(const TrimodalModel& model, const LoadedSample& sample, std::string_view sample_id,
                         const FeatureConfig& features, const VoteConfig& votes, Target target = Target::full);

struct Prediction {
  std::string sample_id;
  std::optional<Label> truth;
  Label predicted = Label::win;
  double mean_win_probability = 0.0;
  bool tie_rule_used = false;
};

struct Metrics {
  std::size_t count = 0;
  double accuracy = 0.0;
  /// confusion[truth][predicted], indexed by class index (loss=0, win=1).
  std::array<std::array<std::size_t, 2>, 2> confusion{};
  std::array<double, 2> precision{};
  std::array<double, 2> recall{};
};

/// Errors on an empty list or an unlabeled prediction.
Metrics compute_metrics(std::span<const Prediction> predictions);

struct Evaluation {
  Metrics metrics;
  std::vector<Prediction> predictions;
  /// Mean cross-entropy of the voted win probability against the truth.
  double loss = 0.0;
  std::size_t tie_rule_invocations = 0;
};

/// Voted predictions for every record; the store must be fully labeled.
Evaluation evaluate(const TrimodalModel& model, const SampleStore& store, const FeatureConfig& features,
                    const VoteConfig& votes, Target target = Target::full, int workers = 1);

/// Predictions without requiring labels.
std::vector<Prediction> predict_all(const TrimodalModel& model, const SampleStore& store, const FeatureConfig& features,
                                    const VoteConfig& votes, Target target = Target::full, int workers = 1);

/// CSV: sample_id,label,prediction,mean_win_probability
void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions);
std::vector<Prediction> read_predictions(const std::filesystem::path& path);
void write_metrics(const std::filesystem::path& path, const Metrics& metrics);
std::string format_metrics(const Metrics& metrics);

}  // namespace hemo
