#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "hemo/common.hpp"

namespace hemo {

namespace fs = std::filesystem;

enum class LabelSource { gold, pseudo };
enum class Split { train, test, synthetic };

std::string_view to_string(LabelSource s);
std::string_view to_string(Split s);

struct SampleRecord {
  std::string sample_id;
  fs::path keypoint_path;  // absolute after loading
  fs::path visual_path;
  fs::path text_path;
  std::optional<Label> label;
  LabelSource label_source = LabelSource::gold;
  int frame_count = 0;

  bool operator==(const SampleRecord&) const = default;
};

struct DatasetManifest {
  std::vector<SampleRecord> records;
  Split split = Split::synthetic;
  /// Fraction of `win` among labeled records; 0 when nothing is labeled.
  double class_prior = 0.0;

  std::size_t size() const { return records.size(); }
  std::size_t labeled_count() const;
  std::size_t count(Label l) const;
  /// Recomputes class_prior and checks id uniqueness and label-source rules.
  void finalize();
};

/// Parses a JSON-lines manifest. Relative paths resolve against the manifest's
/// directory; every referenced stream must exist and agree on frame_count.
DatasetManifest load_manifest(const fs::path& path);

/// Writes paths relative to the manifest's directory when they live under it.
void write_manifest(const fs::path& path, const DatasetManifest& manifest);

/// Stratified, seed-deterministic split. Returns (train, validation).
std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest, double val_fraction,
                                                            std::uint64_t seed);

/// Subset in the given record order.
DatasetManifest select(const DatasetManifest& manifest, const std::vector<std::size_t>& indices);

}  // namespace hemo
