#include "hemo/pipeline.hpp"

#include <atomic>
#include <exception>
#include <mutex>
#include <thread>

namespace hemo {

void FeatureConfig::validate() const {
  if (keypoint_samples < 1 || visual_samples < 1) throw ValidationError("sample counts must be positive");
  if (min_gap < 0) throw ValidationError("min_gap must be non-negative");
  offsets.validate();
  groups.validate();
}

SampleStore::SampleStore(DatasetManifest manifest, int vocabulary_size) : manifest_(std::move(manifest)) {
  samples_.resize(manifest_.records.size());
  for (std::size_t i = 0; i < samples_.size(); ++i) {
    const auto& rec = manifest_.records[i];
    auto& s = samples_[i];
    s.keypoints = read_keypoints(rec.keypoint_path);
    s.visual = read_visual(rec.visual_path);
    s.text = read_text(rec.text_path, vocabulary_size);
  }
}

std::uint64_t training_view_seed(std::uint64_t seed, int epoch, std::string_view sample_id, int view) {
  return derive_seed(seed, sample_id, {static_cast<std::uint64_t>(epoch), static_cast<std::uint64_t>(view)});
}

std::uint64_t inference_view_seed(std::uint64_t base_seed, std::string_view sample_id, int view) {
  return derive_seed(base_seed, sample_id, {static_cast<std::uint64_t>(view)});
}

SampleFeatures prepare_features(const LoadedSample& sample, const FeatureConfig& cfg, std::uint64_t view_seed,
                                Target target) {
  SampleFeatures out;
  if (target == Target::full || target == Target::keypoint) {
    const int total = sample.keypoints.frame_count();
    const auto idx = sample_frames(total, cfg.keypoint_samples, cfg.min_gap, derive_seed(view_seed, "keypoint"));
    OffsetConfig offsets = cfg.offsets;
    if (!cfg.offsets_enabled) offsets.lags.clear();
    const auto tensor = build_feature_tensor(sample.keypoints, offsets, idx, cfg.groups);
    for (int g = 0; g < 3; ++g) {
      const auto& s = tensor.groups[static_cast<std::size_t>(g)];
      out.keypoint_groups[static_cast<std::size_t>(g)] =
          Eigen::Map<const Matrix>(s.values.data(), s.frame_count, static_cast<Eigen::Index>(s.keypoint_count) * s.feature_dim);
    }
  }
  if (target == Target::full || target == Target::visual) {
    const auto& v = sample.visual;
    const auto idx = sample_frames(v.frame_count, cfg.visual_samples, cfg.min_gap, derive_seed(view_seed, "visual"));
    out.visual.resize(static_cast<Eigen::Index>(idx.size()), v.width);
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const float* row = v.frame(idx[r]);
      for (int c = 0; c < v.width; ++c) out.visual(static_cast<Eigen::Index>(r), c) = row[c];
    }
  }
  if (target == Target::full || target == Target::text) out.text = sample.text;
  return out;
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn) {
  const std::size_t threads = std::min<std::size_t>(n, static_cast<std::size_t>(std::max(workers, 1)));
  if (threads <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  auto run = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        fn(i);
      } catch (...) {
        std::lock_guard lock(failure_mutex);
        if (!failure) failure = std::current_exception();
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(run);
  run();
  for (auto& t : pool) t.join();
  if (failure) std::rethrow_exception(failure);
}

}  // namespace hemo
