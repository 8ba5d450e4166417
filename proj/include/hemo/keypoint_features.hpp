#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <vector>

#include "hemo/common.hpp"

namespace hemo {

inline constexpr int kKeypointCount = 137;
inline constexpr int kBodyKeypoints = 25;
inline constexpr int kFaceKeypoints = 70;
inline constexpr int kHandKeypoints = 42;

struct KeypointPx {
  double x = 0.0;
  double y = 0.0;
};

struct DetectionBox {
  double x0 = 0.0;
  double y0 = 0.0;
  double width = 0.0;
  double height = 0.0;
};

/// One OpenPose detection in pixel units of the source frame.
struct RawKeypointFrame {
  std::array<KeypointPx, kKeypointCount> coords{};
  DetectionBox box;
};

/// Box-relative coordinates, clamped into [0,1]. Layout: [k][x,y].
using NormalizedFrame = std::array<float, 2 * kKeypointCount>;

NormalizedFrame normalize_frame(const RawKeypointFrame& raw);

/// Normalized keypoint track of one video, row-major [frame][keypoint][xy].
class KeypointSequence {
 public:
  KeypointSequence() = default;
  /// Takes ownership of row-major data; throws if size is not a multiple of 274
  /// or any component falls outside [0,1].
  explicit KeypointSequence(std::vector<float> data);

  static KeypointSequence from_frames(std::span<const NormalizedFrame> frames);

  int frame_count() const { return static_cast<int>(data_.size() / (2 * kKeypointCount)); }
  float x(int t, int k) const { return data_[index(t, k)]; }
  float y(int t, int k) const { return data_[index(t, k) + 1]; }
  std::span<const float> frame(int t) const {
    return {data_.data() + static_cast<std::size_t>(t) * 2 * kKeypointCount, 2 * kKeypointCount};
  }
  const std::vector<float>& data() const { return data_; }

 private:
  static std::size_t index(int t, int k) {
    return (static_cast<std::size_t>(t) * kKeypointCount + k) * 2;
  }
  std::vector<float> data_;
};

enum class MissingLagPolicy { zero_fill };

struct OffsetConfig {
  std::vector<int> lags{8, 16, 24};
  MissingLagPolicy missing_lag_policy = MissingLagPolicy::zero_fill;

  int feature_dim() const { return 2 + 2 * static_cast<int>(lags.size()); }
  void validate() const;
};

/// Per-frame features for all 137 keypoints: row-major [frame][keypoint][feature].
struct FrameFeatures {
  int frame_count = 0;
  int keypoint_count = kKeypointCount;
  int feature_dim = 0;
  std::vector<double> values;

  double at(int t, int k, int f) const {
    return values[(static_cast<std::size_t>(t) * keypoint_count + k) * feature_dim + f];
  }
};

/// Features at every frame of the sequence.
FrameFeatures compute_offsets(const KeypointSequence& seq, const OffsetConfig& cfg);

/// Features at the listed frames only. Lags always refer to the original
/// (unsampled) timeline.
FrameFeatures compute_offsets_at(const KeypointSequence& seq, const OffsetConfig& cfg,
                                 std::span<const int> frame_indices);

enum class KeypointGroup { skeleton = 0, face = 1, hands = 2 };
inline constexpr std::array<KeypointGroup, 3> kAllGroups{KeypointGroup::skeleton, KeypointGroup::face,
                                                        KeypointGroup::hands};

const char* group_name(KeypointGroup g);

struct IndexRange {
  int first = 0;
  int last = 0;  // inclusive
  int size() const { return last - first + 1; }
};

struct GroupSpec {
  IndexRange skeleton{0, 24};
  IndexRange face{25, 94};
  IndexRange hands{95, 136};

  const IndexRange& range(KeypointGroup g) const;
  void validate() const;
};

/// One group's stream, row-major [frame][keypoint][feature].
struct GroupStream {
  KeypointGroup group = KeypointGroup::skeleton;
  int frame_count = 0;
  int keypoint_count = 0;
  int feature_dim = 0;
  std::vector<double> values;
};

std::array<GroupStream, 3> split_groups(const FrameFeatures& features, const GroupSpec& spec = {});

/// Inverse of split_groups.
FrameFeatures concat_groups(const std::array<GroupStream, 3>& streams);

/// Stratified, gap-constrained frame sampling.
///
/// [0,total) is partitioned into n equal strata and one index is drawn per
/// stratum, uniformly among positions at least `gap` after the previous pick,
/// where gap = max(min_gap, 1). When total < n * gap the gap degrades to
/// max(total / n, 1); when total < n the draw is with replacement (sorted).
std::vector<int> sample_frames(int total_frames, int n_samples, int min_gap, std::uint64_t seed);

/// Model-ready keypoint input of one sample.
struct FeatureTensor {
  std::array<GroupStream, 3> groups;
  std::vector<int> sampled_indices;
};

FeatureTensor build_feature_tensor(const KeypointSequence& seq, const OffsetConfig& cfg,
                                   std::span<const int> sampled_indices, const GroupSpec& spec = {});

}  // namespace hemo
