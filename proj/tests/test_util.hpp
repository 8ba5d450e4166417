#pragma once

#include <atomic>
#include <chrono>
#include <filesystem>
#include <optional>
#include <random>
#include <string>

#include "hemo/datamodel.hpp"
#include "hemo/keypoint_features.hpp"
#include "hemo/streams.hpp"

namespace hemo::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("hemo_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() { std::filesystem::remove_all(path_); }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline KeypointSequence random_sequence(int frames, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::vector<float> data(static_cast<std::size_t>(frames) * 2 * kKeypointCount);
  for (auto& v : data) v = u(rng);
  return KeypointSequence(std::move(data));
}

/// Writes keypoint, visual, and token files for one record under `dir`.
inline SampleRecord write_sample(const std::filesystem::path& dir, const std::string& id, int frames, int width,
                                 std::optional<Label> label, std::uint64_t seed) {
  SampleRecord r;
  r.sample_id = id;
  r.keypoint_path = dir / (id + ".kpt");
  r.visual_path = dir / (id + ".vis");
  r.text_path = dir / (id + ".txt");
  r.label = label;
  r.frame_count = frames;
  write_keypoints(r.keypoint_path, random_sequence(frames, seed));
  VisualSequence v;
  v.frame_count = frames;
  v.width = width;
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<float> n(0.0f, 1.0f);
  v.values.resize(static_cast<std::size_t>(frames) * width);
  for (auto& x : v.values) x = n(rng);
  write_visual(r.visual_path, v);
  write_text_tokens(r.text_path, {1, 2, 3, static_cast<int>(seed % 5) + 4});
  return r;
}

/// Records without files, for split and merge arithmetic.
inline DatasetManifest label_only_manifest(int wins, int losses, const std::string& prefix = "s") {
  DatasetManifest m;
  for (int i = 0; i < wins + losses; ++i) {
    SampleRecord r;
    r.sample_id = prefix + std::to_string(i);
    r.label = i < wins ? Label::win : Label::loss;
    r.frame_count = 100;
    m.records.push_back(r);
  }
  m.finalize();
  return m;
}

}  // namespace hemo::testing
