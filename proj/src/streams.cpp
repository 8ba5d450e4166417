#include "hemo/streams.hpp"

#include <array>
#include <cctype>
#include <cstring>
#include <fstream>
#include <sstream>

namespace hemo {
namespace {

constexpr std::array<char, 4> kKeypointMagic{'K', 'P', 'T', '1'};
constexpr std::array<char, 4> kVisualMagic{'V', 'I', 'S', '1'};

std::ifstream open_in(const fs::path& path, std::ios::openmode mode = std::ios::in) {
  std::ifstream in(path, mode);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  return in;
}

std::ofstream open_out(const fs::path& path, std::ios::openmode mode = std::ios::out) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, mode | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  return out;
}

bool has_magic(const fs::path& path, const std::array<char, 4>& magic) {
  auto in = open_in(path, std::ios::binary);
  std::array<char, 4> head{};
  in.read(head.data(), 4);
  return in.gcount() == 4 && head == magic;
}

void put_u32(std::ostream& out, std::uint32_t v) {
  const std::array<unsigned char, 4> b{static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                                       static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b.data()), 4);
}

std::uint32_t get_u32(std::istream& in, const fs::path& path) {
  std::array<unsigned char, 4> b{};
  in.read(reinterpret_cast<char*>(b.data()), 4);
  if (in.gcount() != 4) throw ParseError("truncated header in '" + path.string() + "'");
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

// Hosts in this project are little endian; payloads are written as-is.
void put_floats(std::ostream& out, const std::vector<float>& v) {
  out.write(reinterpret_cast<const char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(float)));
}

std::vector<float> get_floats(std::istream& in, std::size_t count, const fs::path& path) {
  std::vector<float> v(count);
  in.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(count * sizeof(float)));
  if (static_cast<std::size_t>(in.gcount()) != count * sizeof(float)) {
    throw ParseError("truncated payload in '" + path.string() + "'");
  }
  return v;
}

std::vector<double> parse_csv_line(const std::string& line, const fs::path& path, int line_no) {
  std::vector<double> values;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    try {
      std::size_t used = 0;
      values.push_back(std::stod(cell, &used));
    } catch (const std::exception&) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": bad number '" + cell + "'");
    }
  }
  return values;
}

template <typename Fn>
void for_each_csv_row(const fs::path& path, Fn&& fn) {
  auto in = open_in(path);
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    fn(parse_csv_line(line, path, line_no), line_no);
  }
}

void write_csv_rows(const fs::path& path, const float* data, std::size_t rows, std::size_t cols) {
  auto out = open_out(path);
  out.precision(9);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) {
      if (c) out << ',';
      out << data[r * cols + c];
    }
    out << '\n';
  }
}

}  // namespace

void write_keypoints(const fs::path& path, const KeypointSequence& seq) {
  auto out = open_out(path, std::ios::binary);
  out.write(kKeypointMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(seq.frame_count()));
  put_floats(out, seq.data());
}

void write_keypoints_csv(const fs::path& path, const KeypointSequence& seq) {
  write_csv_rows(path, seq.data().data(), static_cast<std::size_t>(seq.frame_count()), 2 * kKeypointCount);
}

KeypointSequence read_keypoints(const fs::path& path) {
  if (has_magic(path, kKeypointMagic)) {
    auto in = open_in(path, std::ios::binary);
    in.seekg(4);
    const auto frames = get_u32(in, path);
    return KeypointSequence(get_floats(in, static_cast<std::size_t>(frames) * 2 * kKeypointCount, path));
  }
  std::vector<float> data;
  for_each_csv_row(path, [&](const std::vector<double>& row, int line_no) {
    if (row.size() != 2 * kKeypointCount) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 274 values, got " +
                       std::to_string(row.size()));
    }
    for (double v : row) data.push_back(static_cast<float>(v));
  });
  return KeypointSequence(std::move(data));
}

int peek_keypoint_frames(const fs::path& path) {
  if (has_magic(path, kKeypointMagic)) {
    auto in = open_in(path, std::ios::binary);
    in.seekg(4);
    return static_cast<int>(get_u32(in, path));
  }
  return read_keypoints(path).frame_count();
}

void write_visual(const fs::path& path, const VisualSequence& seq) {
  auto out = open_out(path, std::ios::binary);
  out.write(kVisualMagic.data(), 4);
  put_u32(out, static_cast<std::uint32_t>(seq.frame_count));
  put_u32(out, static_cast<std::uint32_t>(seq.width));
  put_floats(out, seq.values);
}

VisualSequence read_visual(const fs::path& path) {
  VisualSequence seq;
  if (has_magic(path, kVisualMagic)) {
    auto in = open_in(path, std::ios::binary);
    in.seekg(4);
    seq.frame_count = static_cast<int>(get_u32(in, path));
    seq.width = static_cast<int>(get_u32(in, path));
    seq.values = get_floats(in, static_cast<std::size_t>(seq.frame_count) * seq.width, path);
    return seq;
  }
  for_each_csv_row(path, [&](const std::vector<double>& row, int line_no) {
    if (seq.frame_count == 0) seq.width = static_cast<int>(row.size());
    if (static_cast<int>(row.size()) != seq.width || row.empty()) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": inconsistent visual width");
    }
    for (double v : row) seq.values.push_back(static_cast<float>(v));
    ++seq.frame_count;
  });
  return seq;
}

int peek_visual_frames(const fs::path& path) {
  if (has_magic(path, kVisualMagic)) {
    auto in = open_in(path, std::ios::binary);
    in.seekg(4);
    return static_cast<int>(get_u32(in, path));
  }
  return read_visual(path).frame_count;
}

void write_text_tokens(const fs::path& path, const std::vector<int>& tokens) {
  auto out = open_out(path);
  out << "#tokens\n";
  for (std::size_t i = 0; i < tokens.size(); ++i) out << (i ? " " : "") << tokens[i];
  out << '\n';
}

void write_text_embedding(const fs::path& path, const std::vector<double>& embedding) {
  auto out = open_out(path);
  out.precision(17);
  out << "#embedding\n";
  for (std::size_t i = 0; i < embedding.size(); ++i) out << (i ? " " : "") << embedding[i];
  out << '\n';
}

TextInput read_text(const fs::path& path, int vocabulary_size) {
  auto in = open_in(path);
  std::stringstream buf;
  buf << in.rdbuf();
  std::string content = buf.str();

  TextInput text;
  std::stringstream ss(content);
  std::string first;
  std::getline(ss, first);
  if (first == "#tokens") {
    long long id = 0;
    while (ss >> id) {
      if (id < 0 || id >= vocabulary_size) {
        throw ValidationError("token id " + std::to_string(id) + " outside vocabulary in '" + path.string() + "'");
      }
      text.tokens.push_back(static_cast<int>(id));
    }
    if (!ss.eof()) throw ParseError("non-integer token in '" + path.string() + "'");
  } else if (first == "#embedding") {
    double v = 0.0;
    while (ss >> v) text.embedding.push_back(v);
    if (!ss.eof() || text.embedding.empty()) throw ParseError("bad embedding in '" + path.string() + "'");
  } else {
    text.tokens = hash_tokenize(content, vocabulary_size);
  }
  return text;
}

std::vector<int> hash_tokenize(const std::string& text, int vocabulary_size) {
  if (vocabulary_size < 2) throw ValidationError("vocabulary_size must be at least 2");
  std::vector<int> ids;
  std::string word;
  auto flush = [&] {
    if (!word.empty()) {
      ids.push_back(1 + static_cast<int>(fnv1a64(word) % static_cast<std::uint64_t>(vocabulary_size - 1)));
      word.clear();
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c) || c == '\'') {
      word.push_back(static_cast<char>(std::tolower(c)));
    } else {
      flush();
    }
  }
  flush();
  return ids;
}

std::vector<RawKeypointFrame> read_raw_keypoints_csv(const fs::path& path) {
  std::vector<RawKeypointFrame> frames;
  for_each_csv_row(path, [&](const std::vector<double>& row, int line_no) {
    if (row.size() != 2 * kKeypointCount + 4) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": expected 278 values, got " +
                       std::to_string(row.size()));
    }
    RawKeypointFrame f;
    for (int k = 0; k < kKeypointCount; ++k) f.coords[k] = {row[2 * k], row[2 * k + 1]};
    const std::size_t b = 2 * kKeypointCount;
    f.box = {row[b], row[b + 1], row[b + 2], row[b + 3]};
    frames.push_back(f);
  });
  return frames;
}

}  // namespace hemo
