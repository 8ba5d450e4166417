#pragma once

// Per-view feature preparation shared by training and inference.

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

#include "hemo/datamodel.hpp"
#include "hemo/keypoint_features.hpp"
#include "hemo/model.hpp"
#include "hemo/streams.hpp"

namespace hemo {

struct FeatureConfig {
  int keypoint_samples = 4000;
  int visual_samples = 800;
  /// Minimum spacing between sampled frames ("more than 5 frames apart").
  int min_gap = 6;
  bool offsets_enabled = true;
  OffsetConfig offsets;
  GroupSpec groups;

  /// Per-keypoint feature width: coordinates plus two values per lag when enabled.
  int node_feature_dim() const { return offsets_enabled ? offsets.feature_dim() : 2; }
  void validate() const;
};

/// Streams of one record, held in memory.
struct LoadedSample {
  KeypointSequence keypoints;
  VisualSequence visual;
  TextInput text;
};

/// Loads every stream referenced by a manifest once. Read-only afterwards.
class SampleStore {
 public:
  SampleStore() = default;
  SampleStore(DatasetManifest manifest, int vocabulary_size);

  const DatasetManifest& manifest() const { return manifest_; }
  std::size_t size() const { return samples_.size(); }
  const LoadedSample& sample(std::size_t i) const { return samples_[i]; }
  const SampleRecord& record(std::size_t i) const { return manifest_.records[i]; }

 private:
  DatasetManifest manifest_;
  std::vector<LoadedSample> samples_;
};

/// hash(seed, epoch, sample_id, view): training-time resampling.
std::uint64_t training_view_seed(std::uint64_t seed, int epoch, std::string_view sample_id, int view);
/// hash(base_seed, sample_id, view): inference-time voting views.
std::uint64_t inference_view_seed(std::uint64_t base_seed, std::string_view sample_id, int view);

/// Samples frames and builds the model inputs needed for `target`.
/// Keypoint and visual indices are drawn from independent sub-seeds.
SampleFeatures prepare_features(const LoadedSample& sample, const FeatureConfig& cfg, std::uint64_t view_seed,
                                Target target = Target::full);

/// Runs fn(i) for i in [0,n) on up to `workers` threads. Results must be
/// written by index so the outcome does not depend on the worker count.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

}  // namespace hemo
