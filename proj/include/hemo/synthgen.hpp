#pragma once

// Class-conditional synthetic trimodal data with injected micro-gesture events.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hemo/datamodel.hpp"
#include "hemo/keypoint_features.hpp"
#include "hemo/streams.hpp"

namespace hemo {

struct SynthConfig {
  int sample_count = 40;
  double class_prior = 0.75;
  int frames_min = 600;
  int frames_max = 3000;
  int event_count = 4;
  int event_duration_frames = 10;
  /// Peak displacement of an event, in box-normalized units.
  double event_magnitude = 0.04;
  /// Share of the biased group's keypoints that move together in an event.
  double event_keypoint_fraction = 0.4;
  KeypointGroup win_group = KeypointGroup::face;
  KeypointGroup loss_group = KeypointGroup::hands;
  int visual_width = 768;
  /// Scale of the class bump added to visual frames inside event windows.
  double visual_signal = 3.0;
  int vocab_size = 1024;
  int text_length = 48;
  /// Probability that a token comes from the class-specific vocabulary slice.
  double text_signal = 0.3;
  /// Per-frame coordinate jitter (standard deviation).
  double noise_floor = 0.002;
  /// Static per-sample displacement of every keypoint (standard deviation).
  double shape_variation = 0.03;
  /// Amplitude of the slow whole-pose sway.
  double sway_amplitude = 0.05;
  std::string id_prefix = "syn";
  std::uint64_t seed = 0;

  void validate() const;
};

struct EventWindow {
  int start = 0;
  int duration = 0;
  KeypointGroup group = KeypointGroup::face;
};

struct GeneratedSample {
  std::string sample_id;
  Label label = Label::win;
  KeypointSequence keypoints;
  VisualSequence visual;
  std::vector<int> tokens;
  std::vector<EventWindow> events;
};

/// Deterministic in (cfg, index); world parameters depend on cfg.seed only.
GeneratedSample generate_sample(const SynthConfig& cfg, int index);

struct SynthDataset {
  DatasetManifest manifest;
  std::vector<std::vector<EventWindow>> events;  // aligned with manifest.records
  std::filesystem::path manifest_path;
};

/// Writes samples/<id>.{kpt,vis,txt}, manifest.jsonl, events.jsonl and
/// synth_config.json under out_dir.
SynthDataset generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir, int workers = 1);

void write_synth_config(const std::filesystem::path& path, const SynthConfig& cfg);
SynthConfig read_synth_config(const std::filesystem::path& path);

struct DatasetSummary {
  struct Bin {
    int low = 0;
    int high = 0;  // inclusive
    std::size_t count = 0;
  };
  std::vector<Bin> histogram;
  std::size_t win = 0;
  std::size_t loss = 0;
  std::size_t unlabeled = 0;
  double class_prior = 0.0;
  int min_frames = 0;
  int max_frames = 0;
};

/// Frame-count histogram plus class balance.
DatasetSummary describe(const DatasetManifest& manifest, int bins = 10);
std::string format_summary(const DatasetSummary& summary);

}  // namespace hemo
