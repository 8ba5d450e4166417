#include "hemo/datamodel.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <unordered_set>

#include <json.hpp>

#include "hemo/streams.hpp"

namespace hemo {

using json = nlohmann::json;

std::string_view to_string(LabelSource s) { return s == LabelSource::gold ? "gold" : "pseudo"; }

std::string_view to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::synthetic: return "synthetic";
  }
  return "?";
}

namespace {

Split parse_split(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "synthetic") return Split::synthetic;
  throw ParseError("unknown split '" + s + "'");
}

LabelSource parse_source(const std::string& s) {
  if (s == "gold") return LabelSource::gold;
  if (s == "pseudo") return LabelSource::pseudo;
  throw ParseError("unknown label_source '" + s + "'");
}

fs::path relative_if_under(const fs::path& p, const fs::path& base) {
  if (p.is_relative()) return p;
  auto rel = p.lexically_relative(base);
  if (rel.empty() || *rel.begin() == "..") return p;
  return rel;
}

}  // namespace

std::size_t DatasetManifest::labeled_count() const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [](const auto& r) { return r.label.has_value(); }));
}

std::size_t DatasetManifest::count(Label l) const {
  return static_cast<std::size_t>(
      std::count_if(records.begin(), records.end(), [l](const auto& r) { return r.label == l; }));
}

void DatasetManifest::finalize() {
  std::unordered_set<std::string> seen;
  for (const auto& r : records) {
    if (r.sample_id.empty()) throw ValidationError("empty sample_id");
    if (!seen.insert(r.sample_id).second) throw ValidationError("duplicate sample_id '" + r.sample_id + "'");
    if (r.label_source == LabelSource::pseudo && !r.label) {
      throw ValidationError("sample '" + r.sample_id + "' is marked pseudo but has no label");
    }
    if (r.frame_count <= 0) throw ValidationError("sample '" + r.sample_id + "' has non-positive frame_count");
  }
  const auto labeled = labeled_count();
  class_prior = labeled == 0 ? 0.0 : static_cast<double>(count(Label::win)) / static_cast<double>(labeled);
}

DatasetManifest load_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open manifest '" + path.string() + "'");
  const fs::path base = fs::absolute(path).parent_path();

  DatasetManifest manifest;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    if (j.contains("manifest")) {
      manifest.split = parse_split(j["manifest"].value("split", "synthetic"));
      continue;
    }
    SampleRecord r;
    try {
      r.sample_id = j.at("sample_id").get<std::string>();
      r.keypoint_path = base / j.at("keypoint_path").get<std::string>();
      r.visual_path = base / j.at("visual_path").get<std::string>();
      r.text_path = base / j.at("text_path").get<std::string>();
      const auto label = j.at("label").get<std::string>();
      if (label != "none") r.label = parse_label(label);
      r.label_source = parse_source(j.value("label_source", "gold"));
      r.frame_count = j.at("frame_count").get<int>();
    } catch (const json::exception& e) {
      throw ParseError(path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
    for (const auto* p : {&r.keypoint_path, &r.visual_path, &r.text_path}) {
      if (!fs::exists(*p)) {
        throw IngestionError("sample '" + r.sample_id + "': missing file '" + p->string() + "'");
      }
    }
    const int kp_frames = peek_keypoint_frames(r.keypoint_path);
    const int vis_frames = peek_visual_frames(r.visual_path);
    if (kp_frames != r.frame_count || vis_frames != r.frame_count) {
      throw ValidationError("sample '" + r.sample_id + "': frame_count " + std::to_string(r.frame_count) +
                            " disagrees with streams (keypoints " + std::to_string(kp_frames) + ", visual " +
                            std::to_string(vis_frames) + ")");
    }
    manifest.records.push_back(std::move(r));
  }
  manifest.finalize();
  return manifest;
}

void write_manifest(const fs::path& path, const DatasetManifest& manifest) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IngestionError("cannot write manifest '" + path.string() + "'");
  const fs::path base = fs::absolute(path).parent_path();
  out << json{{"manifest", {{"split", std::string(to_string(manifest.split))}}}}.dump() << '\n';
  for (const auto& r : manifest.records) {
    json j;
    j["sample_id"] = r.sample_id;
    j["keypoint_path"] = relative_if_under(fs::absolute(r.keypoint_path), base).generic_string();
    j["visual_path"] = relative_if_under(fs::absolute(r.visual_path), base).generic_string();
    j["text_path"] = relative_if_under(fs::absolute(r.text_path), base).generic_string();
    j["label"] = r.label ? std::string(to_string(*r.label)) : std::string("none");
    j["label_source"] = std::string(to_string(r.label_source));
    j["frame_count"] = r.frame_count;
    out << j.dump() << '\n';
  }
}

DatasetManifest select(const DatasetManifest& manifest, const std::vector<std::size_t>& indices) {
  DatasetManifest out;
  out.split = manifest.split;
  out.records.reserve(indices.size());
  for (auto i : indices) out.records.push_back(manifest.records.at(i));
  out.finalize();
  return out;
}

std::pair<DatasetManifest, DatasetManifest> split_train_val(const DatasetManifest& manifest, double val_fraction,
                                                            std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) throw ValidationError("val_fraction must lie in (0,1)");

  // Strata: win, loss, unlabeled.
  std::array<std::vector<std::size_t>, 3> strata;
  for (std::size_t i = 0; i < manifest.records.size(); ++i) {
    const auto& l = manifest.records[i].label;
    strata[l ? class_index(*l) : 2].push_back(i);
  }

  // Largest-remainder allocation of the overall validation count across strata.
  const auto total = manifest.records.size();
  const auto target = static_cast<std::size_t>(std::llround(val_fraction * static_cast<double>(total)));
  std::array<std::size_t, 3> n_val{};
  std::array<double, 3> remainder{};
  std::size_t allocated = 0;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    const double quota = val_fraction * static_cast<double>(strata[s].size());
    n_val[s] = static_cast<std::size_t>(std::floor(quota));
    remainder[s] = quota - std::floor(quota);
    allocated += n_val[s];
  }
  std::array<std::size_t, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return remainder[a] > remainder[b]; });
  for (auto s : order) {
    if (allocated >= target) break;
    if (n_val[s] < strata[s].size()) {
      ++n_val[s];
      ++allocated;
    }
  }
  // Keep both sides of a stratum populated whenever it can afford it.
  for (std::size_t s = 0; s < strata.size(); ++s) {
    if (strata[s].size() >= 2) n_val[s] = std::clamp<std::size_t>(n_val[s], 1, strata[s].size() - 1);
  }

  std::vector<std::size_t> train_idx;
  std::vector<std::size_t> val_idx;
  for (std::size_t s = 0; s < strata.size(); ++s) {
    auto& members = strata[s];
    if (members.empty()) continue;
    Rng rng(derive_seed(seed, "split", {s}));
    std::shuffle(members.begin(), members.end(), rng);
    const auto cut = static_cast<std::ptrdiff_t>(n_val[s]);
    val_idx.insert(val_idx.end(), members.begin(), members.begin() + cut);
    train_idx.insert(train_idx.end(), members.begin() + cut, members.end());
  }
  if (train_idx.empty() || val_idx.empty()) {
    throw ValidationError("val_fraction " + std::to_string(val_fraction) + " leaves an empty split");
  }
  std::sort(train_idx.begin(), train_idx.end());
  std::sort(val_idx.begin(), val_idx.end());
  return {select(manifest, train_idx), select(manifest, val_idx)};
}

}  // namespace hemo
