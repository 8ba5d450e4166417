#pragma once

// On-disk formats for the three modality streams referenced by a manifest.
//
// keypoints  binary: "KPT1" + uint32 T, then T*137*2 float32 (little endian)
//            text:   one frame per line, 274 comma-separated floats
// visual     binary: "VIS1" + uint32 T + uint32 W, then T*W float32
//            text:   one frame per line, W comma-separated floats
// text       "#tokens" header then whitespace-separated token ids, or
//            "#embedding" header then whitespace-separated floats, or
//            free text (tokenized by hashing lowercase words)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hemo/keypoint_features.hpp"

namespace hemo {

namespace fs = std::filesystem;

/// Per-frame external visual embeddings, row-major [frame][dim].
struct VisualSequence {
  int frame_count = 0;
  int width = 0;
  std::vector<float> values;

  const float* frame(int t) const { return values.data() + static_cast<std::size_t>(t) * width; }
};

/// Text modality of one sample: either token ids or a precomputed embedding.
struct TextInput {
  std::vector<int> tokens;
  std::vector<double> embedding;

  bool is_embedding() const { return !embedding.empty(); }
};

void write_keypoints(const fs::path& path, const KeypointSequence& seq);
void write_keypoints_csv(const fs::path& path, const KeypointSequence& seq);
/// Dispatches on the binary magic; anything else is read as CSV.
KeypointSequence read_keypoints(const fs::path& path);
/// Frame dimension without reading the payload (binary) or by counting lines (CSV).
int peek_keypoint_frames(const fs::path& path);

void write_visual(const fs::path& path, const VisualSequence& seq);
VisualSequence read_visual(const fs::path& path);
int peek_visual_frames(const fs::path& path);

void write_text_tokens(const fs::path& path, const std::vector<int>& tokens);
void write_text_embedding(const fs::path& path, const std::vector<double>& embedding);
TextInput read_text(const fs::path& path, int vocabulary_size);

/// Maps words to ids in [1, vocabulary_size); id 0 is never produced.
std::vector<int> hash_tokenize(const std::string& text, int vocabulary_size);

/// Raw pixel detections, one frame per line: 274 coordinates then x0,y0,w,h.
std::vector<RawKeypointFrame> read_raw_keypoints_csv(const fs::path& path);

}  // namespace hemo
