#include "hemo/keypoint_features.hpp"

#include <algorithm>
#include <string>

namespace hemo {

NormalizedFrame normalize_frame(const RawKeypointFrame& raw) {
  const auto& box = raw.box;
  if (!(box.width > 0.0) || !(box.height > 0.0)) {
    throw ValidationError("detection box must have positive width and height (got " + std::to_string(box.width) +
                          " x " + std::to_string(box.height) + ")");
  }
  NormalizedFrame out{};
  for (int k = 0; k < kKeypointCount; ++k) {
    const double nx = (raw.coords[k].x - box.x0) / box.width;
    const double ny = (raw.coords[k].y - box.y0) / box.height;
    out[2 * k] = static_cast<float>(std::clamp(nx, 0.0, 1.0));
    out[2 * k + 1] = static_cast<float>(std::clamp(ny, 0.0, 1.0));
  }
  return out;
}

KeypointSequence::KeypointSequence(std::vector<float> data) : data_(std::move(data)) {
  if (data_.size() % (2 * kKeypointCount) != 0) {
    throw ValidationError("keypoint data size " + std::to_string(data_.size()) + " is not a multiple of " +
                          std::to_string(2 * kKeypointCount));
  }
  for (std::size_t i = 0; i < data_.size(); ++i) {
    if (!(data_[i] >= 0.0f && data_[i] <= 1.0f)) {
      throw ValidationError("keypoint component out of [0,1] at frame " +
                            std::to_string(i / (2 * kKeypointCount)));
    }
  }
}

KeypointSequence KeypointSequence::from_frames(std::span<const NormalizedFrame> frames) {
  std::vector<float> data;
  data.reserve(frames.size() * 2 * kKeypointCount);
  for (const auto& f : frames) data.insert(data.end(), f.begin(), f.end());
  return KeypointSequence(std::move(data));
}

void OffsetConfig::validate() const {
  for (std::size_t i = 0; i < lags.size(); ++i) {
    if (lags[i] <= 0) throw ValidationError("offset lags must be positive");
    if (i > 0 && lags[i] <= lags[i - 1]) throw ValidationError("offset lags must be strictly increasing");
  }
}

FrameFeatures compute_offsets_at(const KeypointSequence& seq, const OffsetConfig& cfg,
                                 std::span<const int> frame_indices) {
  cfg.validate();
  if (seq.frame_count() == 0) throw ValidationError("keypoint sequence is empty");
  FrameFeatures out;
  out.frame_count = static_cast<int>(frame_indices.size());
  out.feature_dim = cfg.feature_dim();
  out.values.assign(static_cast<std::size_t>(out.frame_count) * kKeypointCount * out.feature_dim, 0.0);

  double* dst = out.values.data();
  for (int t : frame_indices) {
    if (t < 0 || t >= seq.frame_count()) throw ValidationError("frame index out of range: " + std::to_string(t));
    const auto cur = seq.frame(t);
    for (int k = 0; k < kKeypointCount; ++k) {
      const double x = cur[2 * k];
      const double y = cur[2 * k + 1];
      dst[0] = x;
      dst[1] = y;
      for (std::size_t l = 0; l < cfg.lags.size(); ++l) {
        const int past = t - cfg.lags[l];
        if (past >= 0) {
          const auto prev = seq.frame(past);
          dst[2 + 2 * l] = x - static_cast<double>(prev[2 * k]);
          dst[3 + 2 * l] = y - static_cast<double>(prev[2 * k + 1]);
        }
        // zero_fill: left at 0
      }
      dst += out.feature_dim;
    }
  }
  return out;
}

FrameFeatures compute_offsets(const KeypointSequence& seq, const OffsetConfig& cfg) {
  std::vector<int> all(static_cast<std::size_t>(seq.frame_count()));
  for (int t = 0; t < seq.frame_count(); ++t) all[t] = t;
  return compute_offsets_at(seq, cfg, all);
}

const char* group_name(KeypointGroup g) {
  switch (g) {
    case KeypointGroup::skeleton: return "skeleton";
    case KeypointGroup::face: return "face";
    case KeypointGroup::hands: return "hands";
  }
  return "?";
}

const IndexRange& GroupSpec::range(KeypointGroup g) const {
  switch (g) {
    case KeypointGroup::skeleton: return skeleton;
    case KeypointGroup::face: return face;
    case KeypointGroup::hands: return hands;
  }
  throw ValidationError("unknown keypoint group");
}

void GroupSpec::validate() const {
  if (skeleton.first != 0 || face.first != skeleton.last + 1 || hands.first != face.last + 1 ||
      hands.last != kKeypointCount - 1 || skeleton.size() <= 0 || face.size() <= 0 || hands.size() <= 0) {
    throw ValidationError("keypoint groups must be disjoint, contiguous and cover 0..136");
  }
}

std::array<GroupStream, 3> split_groups(const FrameFeatures& features, const GroupSpec& spec) {
  spec.validate();
  if (features.keypoint_count != kKeypointCount) {
    throw ValidationError("expected 137 keypoints per frame, got " + std::to_string(features.keypoint_count));
  }
  std::array<GroupStream, 3> out;
  const int fd = features.feature_dim;
  for (auto g : kAllGroups) {
    const auto& r = spec.range(g);
    auto& s = out[static_cast<int>(g)];
    s.group = g;
    s.frame_count = features.frame_count;
    s.keypoint_count = r.size();
    s.feature_dim = fd;
    s.values.resize(static_cast<std::size_t>(s.frame_count) * s.keypoint_count * fd);
    for (int t = 0; t < features.frame_count; ++t) {
      const auto* src = features.values.data() + (static_cast<std::size_t>(t) * kKeypointCount + r.first) * fd;
      std::copy(src, src + static_cast<std::size_t>(s.keypoint_count) * fd,
                s.values.begin() + static_cast<std::ptrdiff_t>(t) * s.keypoint_count * fd);
    }
  }
  return out;
}

FrameFeatures concat_groups(const std::array<GroupStream, 3>& streams) {
  FrameFeatures out;
  out.frame_count = streams[0].frame_count;
  out.feature_dim = streams[0].feature_dim;
  out.keypoint_count = 0;
  for (const auto& s : streams) {
    if (s.frame_count != out.frame_count || s.feature_dim != out.feature_dim) {
      throw ValidationError("group streams disagree on frame count or feature width");
    }
    out.keypoint_count += s.keypoint_count;
  }
  out.values.reserve(static_cast<std::size_t>(out.frame_count) * out.keypoint_count * out.feature_dim);
  for (int t = 0; t < out.frame_count; ++t) {
    for (const auto& s : streams) {
      const std::size_t width = static_cast<std::size_t>(s.keypoint_count) * s.feature_dim;
      const auto first = s.values.begin() + static_cast<std::ptrdiff_t>(t * width);
      out.values.insert(out.values.end(), first, first + static_cast<std::ptrdiff_t>(width));
    }
  }
  return out;
}

std::vector<int> sample_frames(int total_frames, int n_samples, int min_gap, std::uint64_t seed) {
  if (n_samples < 1) throw ValidationError("n_samples must be at least 1");
  if (total_frames < 1) throw ValidationError("total_frames must be positive");
  if (min_gap < 0) throw ValidationError("min_gap must be non-negative");

  Rng rng(seed);
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(n_samples));

  const auto total = static_cast<std::int64_t>(total_frames);
  const auto n = static_cast<std::int64_t>(n_samples);
  std::int64_t gap = std::max(min_gap, 1);
  if (total < n * gap) gap = std::max<std::int64_t>(total / n, 1);

  if (total < n) {
    std::uniform_int_distribution<int> pick(0, total_frames - 1);
    for (int i = 0; i < n_samples; ++i) out.push_back(pick(rng));
    std::sort(out.begin(), out.end());
    return out;
  }

  std::int64_t prev = -gap;
  for (std::int64_t i = 0; i < n; ++i) {
    const std::int64_t begin = i * total / n;
    const std::int64_t end = (i + 1) * total / n;
    // Drawing uniformly from the admissible tail is the rejection sampler's
    // conditional distribution, without the retry loop.
    const std::int64_t lo = std::max(begin, prev + gap);
    std::uniform_int_distribution<std::int64_t> pick(lo, end - 1);
    prev = pick(rng);
    out.push_back(static_cast<int>(prev));
  }
  return out;
}

FeatureTensor build_feature_tensor(const KeypointSequence& seq, const OffsetConfig& cfg,
                                   std::span<const int> sampled_indices, const GroupSpec& spec) {
  FeatureTensor out;
  out.sampled_indices.assign(sampled_indices.begin(), sampled_indices.end());
  out.groups = split_groups(compute_offsets_at(seq, cfg, sampled_indices), spec);
  return out;
}

}  // namespace hemo
