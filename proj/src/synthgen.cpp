#include "hemo/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "hemo/pipeline.hpp"
#include "json.hpp"

namespace hemo {

void SynthConfig::validate() const {
  if (sample_count < 1) throw ValidationError("sample_count must be positive");
  if (!(class_prior > 0.0 && class_prior < 1.0)) throw ValidationError("class_prior must lie in (0,1)");
  if (frames_min < 24) throw ValidationError("frames_min must be at least the largest lag (24)");
  if (frames_max < frames_min) throw ValidationError("frames_max must be at least frames_min");
  if (event_count < 0) throw ValidationError("event_count must be non-negative");
  if (event_duration_frames < 1 || event_duration_frames > 12) {
    throw ValidationError("event_duration_frames must lie in [1,12]");
  }
  if (event_count * event_duration_frames > frames_min) {
    throw ValidationError("events do not fit in the shortest sample");
  }
  if (!(event_magnitude >= 0.0)) throw ValidationError("event_magnitude must be non-negative");
  if (!(event_keypoint_fraction > 0.0 && event_keypoint_fraction <= 1.0)) {
    throw ValidationError("event_keypoint_fraction must lie in (0,1]");
  }
  if (win_group == loss_group) throw ValidationError("win and loss events must target different groups");
  if (visual_width < 1) throw ValidationError("visual_width must be positive");
  if (!(visual_signal >= 0.0)) throw ValidationError("visual_signal must be non-negative");
  if (vocab_size < 8) throw ValidationError("vocab_size must be at least 8");
  if (text_length < 1) throw ValidationError("text_length must be positive");
  if (!(text_signal >= 0.0 && text_signal <= 1.0)) throw ValidationError("text_signal must lie in [0,1]");
  if (!(noise_floor >= 0.0) || !(shape_variation >= 0.0) || !(sway_amplitude >= 0.0)) {
    throw ValidationError("noise amplitudes must be non-negative");
  }
}

namespace {

struct World {
  std::array<double, 2 * kKeypointCount> rest{};
  std::array<std::vector<int>, 3> movers;  // global keypoint indices per group
  std::array<std::vector<double>, 2> bump;  // per class index
};

World make_world(const SynthConfig& cfg) {
  Rng rng(derive_seed(cfg.seed, "world"));
  std::uniform_real_distribution<double> pos(0.3, 0.7);
  World w;
  for (auto& v : w.rest) v = pos(rng);
  const GroupSpec spec;
  for (auto g : kAllGroups) {
    const auto range = spec.range(g);
    std::vector<int> idx(static_cast<std::size_t>(range.size()));
    std::iota(idx.begin(), idx.end(), range.first);
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto keep = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(cfg.event_keypoint_fraction * range.size())));
    idx.resize(std::min(keep, idx.size()));
    std::sort(idx.begin(), idx.end());
    w.movers[static_cast<std::size_t>(g)] = std::move(idx);
  }
  std::normal_distribution<double> n(0.0, 1.0);
  for (auto& b : w.bump) {
    b.resize(static_cast<std::size_t>(cfg.visual_width));
    for (auto& v : b) v = n(rng);
  }
  return w;
}

// Sum of three slow sinusoids, unit amplitude overall.
struct Sway {
  std::array<double, 3> period{}, phase{};
  double at(int t) const {
    double s = 0.0;
    for (int k = 0; k < 3; ++k) s += std::sin(2.0 * std::numbers::pi * t / period[k] + phase[k]);
    return s / 3.0;
  }
};

Sway make_sway(Rng& rng) {
  std::uniform_real_distribution<double> period(300.0, 1200.0);
  std::uniform_real_distribution<double> phase(0.0, 2.0 * std::numbers::pi);
  Sway s;
  for (int k = 0; k < 3; ++k) {
    s.period[k] = period(rng);
    s.phase[k] = phase(rng);
  }
  return s;
}

std::string sample_id(const SynthConfig& cfg, int index) {
  std::ostringstream s;
  s << cfg.id_prefix << std::setw(5) << std::setfill('0') << index;
  return s.str();
}

const char* group_key(KeypointGroup g) { return group_name(g); }

KeypointGroup group_from_key(const std::string& s) {
  for (auto g : kAllGroups) {
    if (s == group_name(g)) return g;
  }
  throw ParseError("unknown keypoint group '" + s + "'");
}

}  // namespace

GeneratedSample generate_sample(const SynthConfig& cfg, int index) {
  cfg.validate();
  static thread_local std::pair<std::string, World> cache;
  const std::string world_key = nlohmann::json{{"seed", cfg.seed},
                                               {"fraction", cfg.event_keypoint_fraction},
                                               {"width", cfg.visual_width}}.dump();
  if (cache.first != world_key) cache = {world_key, make_world(cfg)};
  const World& world = cache.second;

  Rng rng(derive_seed(cfg.seed, "sample", {static_cast<std::uint64_t>(index)}));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::normal_distribution<double> n(0.0, 1.0);

  GeneratedSample s;
  s.sample_id = sample_id(cfg, index);
  s.label = u(rng) < cfg.class_prior ? Label::win : Label::loss;
  const int frames = std::uniform_int_distribution<int>(cfg.frames_min, cfg.frames_max)(rng);

  // Events: one per equal segment of the timeline, fully inside it.
  const KeypointGroup target = s.label == Label::win ? cfg.win_group : cfg.loss_group;
  const int d = cfg.event_duration_frames;
  std::vector<std::array<double, 2>> directions;
  for (int e = 0; e < cfg.event_count; ++e) {
    const int lo = e * frames / cfg.event_count;
    const int hi = (e + 1) * frames / cfg.event_count - d;
    const int start = std::uniform_int_distribution<int>(lo, std::max(lo, hi))(rng);
    s.events.push_back({start, d, target});
    const double angle = 2.0 * std::numbers::pi * u(rng);
    directions.push_back({std::cos(angle), std::sin(angle)});
  }

  // Keypoints: rest pose + static shape offsets + slow sway + jitter + events.
  std::array<double, 2 * kKeypointCount> pose = world.rest;
  for (auto& v : pose) v += cfg.shape_variation * n(rng);
  const Sway sway_x = make_sway(rng);
  const Sway sway_y = make_sway(rng);
  std::vector<double> event_dx(static_cast<std::size_t>(frames), 0.0), event_dy(static_cast<std::size_t>(frames), 0.0);
  for (std::size_t e = 0; e < s.events.size(); ++e) {
    for (int k = 0; k < d; ++k) {
      // Out and back: rises to the peak mid-window and returns.
      const double phase = (k + 0.5) / d;
      const double shape = 1.0 - std::abs(2.0 * phase - 1.0);
      event_dx[static_cast<std::size_t>(s.events[e].start + k)] = cfg.event_magnitude * shape * directions[e][0];
      event_dy[static_cast<std::size_t>(s.events[e].start + k)] = cfg.event_magnitude * shape * directions[e][1];
    }
  }
  std::vector<char> moves(kKeypointCount, 0);
  for (int k : world.movers[static_cast<std::size_t>(target)]) moves[static_cast<std::size_t>(k)] = 1;

  std::vector<float> data(static_cast<std::size_t>(frames) * 2 * kKeypointCount);
  for (int t = 0; t < frames; ++t) {
    const double sx = cfg.sway_amplitude * sway_x.at(t);
    const double sy = cfg.sway_amplitude * sway_y.at(t);
    for (int k = 0; k < kKeypointCount; ++k) {
      double x = pose[2 * k] + sx + cfg.noise_floor * n(rng);
      double y = pose[2 * k + 1] + sy + cfg.noise_floor * n(rng);
      if (moves[static_cast<std::size_t>(k)]) {
        x += event_dx[static_cast<std::size_t>(t)];
        y += event_dy[static_cast<std::size_t>(t)];
      }
      const std::size_t o = (static_cast<std::size_t>(t) * kKeypointCount + k) * 2;
      data[o] = static_cast<float>(std::clamp(x, 0.0, 1.0));
      data[o + 1] = static_cast<float>(std::clamp(y, 0.0, 1.0));
    }
  }
  s.keypoints = KeypointSequence(std::move(data));

  // Visual: stationary AR(1) walk per dimension, class bump inside event windows.
  const int width = cfg.visual_width;
  const double rho = 0.95;
  const double innovation = std::sqrt(1.0 - rho * rho);
  std::vector<char> in_event(static_cast<std::size_t>(frames), 0);
  for (const auto& e : s.events) {
    for (int k = 0; k < e.duration; ++k) in_event[static_cast<std::size_t>(e.start + k)] = 1;
  }
  const auto& bump = world.bump[static_cast<std::size_t>(class_index(s.label))];
  s.visual.frame_count = frames;
  s.visual.width = width;
  s.visual.values.resize(static_cast<std::size_t>(frames) * width);
  std::vector<double> walk(static_cast<std::size_t>(width));
  for (auto& v : walk) v = n(rng);
  for (int t = 0; t < frames; ++t) {
    for (int c = 0; c < width; ++c) {
      auto& w = walk[static_cast<std::size_t>(c)];
      if (t > 0) w = rho * w + innovation * n(rng);
      const double b = in_event[static_cast<std::size_t>(t)] ? cfg.visual_signal * bump[static_cast<std::size_t>(c)] : 0.0;
      s.visual.values[static_cast<std::size_t>(t) * width + c] = static_cast<float>(w + b);
    }
  }

  // Text: class slice [1, 1+V/8) for win and [1+V/8, 1+V/4) for loss; shared rest.
  const int slice = cfg.vocab_size / 8;
  const int class_base = 1 + (s.label == Label::win ? 0 : slice);
  std::uniform_int_distribution<int> class_token(class_base, class_base + slice - 1);
  std::uniform_int_distribution<int> shared_token(1 + 2 * slice, cfg.vocab_size - 1);
  for (int i = 0; i < cfg.text_length; ++i) {
    s.tokens.push_back(u(rng) < cfg.text_signal ? class_token(rng) : shared_token(rng));
  }
  return s;
}

SynthDataset generate_dataset(const SynthConfig& cfg, const std::filesystem::path& out_dir, int workers) {
  cfg.validate();
  const auto sample_dir = out_dir / "samples";
  std::filesystem::create_directories(sample_dir);

  SynthDataset ds;
  ds.manifest.split = Split::synthetic;
  ds.manifest.records.resize(static_cast<std::size_t>(cfg.sample_count));
  ds.events.resize(static_cast<std::size_t>(cfg.sample_count));
  parallel_for(static_cast<std::size_t>(cfg.sample_count), workers, [&](std::size_t i) {
    auto s = generate_sample(cfg, static_cast<int>(i));
    SampleRecord rec;
    rec.sample_id = s.sample_id;
    rec.keypoint_path = sample_dir / (s.sample_id + ".kpt");
    rec.visual_path = sample_dir / (s.sample_id + ".vis");
    rec.text_path = sample_dir / (s.sample_id + ".txt");
    rec.label = s.label;
    rec.label_source = LabelSource::gold;
    rec.frame_count = s.keypoints.frame_count();
    write_keypoints(rec.keypoint_path, s.keypoints);
    write_visual(rec.visual_path, s.visual);
    write_text_tokens(rec.text_path, s.tokens);
    ds.manifest.records[i] = std::move(rec);
    ds.events[i] = std::move(s.events);
  });
  ds.manifest.finalize();

  ds.manifest_path = out_dir / "manifest.jsonl";
  write_manifest(ds.manifest_path, ds.manifest);
  std::ofstream events(out_dir / "events.jsonl");
  for (std::size_t i = 0; i < ds.events.size(); ++i) {
    nlohmann::json j{{"sample_id", ds.manifest.records[i].sample_id},
                     {"label", std::string(to_string(*ds.manifest.records[i].label))}};
    j["events"] = nlohmann::json::array();
    for (const auto& e : ds.events[i]) {
      j["events"].push_back({{"start", e.start}, {"duration", e.duration}, {"group", group_key(e.group)}});
    }
    events << j.dump() << '\n';
  }
  write_synth_config(out_dir / "synth_config.json", cfg);
  return ds;
}

void write_synth_config(const std::filesystem::path& path, const SynthConfig& c) {
  nlohmann::json j{{"sample_count", c.sample_count},
                   {"class_prior", c.class_prior},
                   {"frames_min", c.frames_min},
                   {"frames_max", c.frames_max},
                   {"event_count", c.event_count},
                   {"event_duration_frames", c.event_duration_frames},
                   {"event_magnitude", c.event_magnitude},
                   {"event_keypoint_fraction", c.event_keypoint_fraction},
                   {"event_group_bias", {{"win", group_key(c.win_group)}, {"loss", group_key(c.loss_group)}}},
                   {"visual_width", c.visual_width},
                   {"visual_signal", c.visual_signal},
                   {"vocab_size", c.vocab_size},
                   {"text_length", c.text_length},
                   {"text_signal", c.text_signal},
                   {"noise_floor", c.noise_floor},
                   {"shape_variation", c.shape_variation},
                   {"sway_amplitude", c.sway_amplitude},
                   {"id_prefix", c.id_prefix},
                   {"seed", c.seed}};
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

SynthConfig read_synth_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  const auto j = nlohmann::json::parse(in);
  SynthConfig c;
  c.sample_count = j.at("sample_count").get<int>();
  c.class_prior = j.at("class_prior").get<double>();
  c.frames_min = j.at("frames_min").get<int>();
  c.frames_max = j.at("frames_max").get<int>();
  c.event_count = j.at("event_count").get<int>();
  c.event_duration_frames = j.at("event_duration_frames").get<int>();
  c.event_magnitude = j.at("event_magnitude").get<double>();
  c.event_keypoint_fraction = j.at("event_keypoint_fraction").get<double>();
  c.win_group = group_from_key(j.at("event_group_bias").at("win").get<std::string>());
  c.loss_group = group_from_key(j.at("event_group_bias").at("loss").get<std::string>());
  c.visual_width = j.at("visual_width").get<int>();
  c.visual_signal = j.at("visual_signal").get<double>();
  c.vocab_size = j.at("vocab_size").get<int>();
  c.text_length = j.at("text_length").get<int>();
  c.text_signal = j.at("text_signal").get<double>();
  c.noise_floor = j.at("noise_floor").get<double>();
  c.shape_variation = j.at("shape_variation").get<double>();
  c.sway_amplitude = j.at("sway_amplitude").get<double>();
  c.id_prefix = j.at("id_prefix").get<std::string>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.validate();
  return c;
}

DatasetSummary describe(const DatasetManifest& manifest, int bins) {
  if (bins < 1) throw ValidationError("histogram needs at least one bin");
  DatasetSummary s;
  if (manifest.records.empty()) return s;
  s.min_frames = manifest.records.front().frame_count;
  s.max_frames = s.min_frames;
  for (const auto& r : manifest.records) {
    s.min_frames = std::min(s.min_frames, r.frame_count);
    s.max_frames = std::max(s.max_frames, r.frame_count);
    if (!r.label) {
      ++s.unlabeled;
    } else if (*r.label == Label::win) {
      ++s.win;
    } else {
      ++s.loss;
    }
  }
  s.class_prior = manifest.class_prior;
  const int span = s.max_frames - s.min_frames + 1;
  const int count = std::min(bins, span);
  for (int b = 0; b < count; ++b) {
    const int low = s.min_frames + static_cast<int>(static_cast<long long>(span) * b / count);
    const int high = s.min_frames + static_cast<int>(static_cast<long long>(span) * (b + 1) / count) - 1;
    s.histogram.push_back({low, high, 0});
  }
  for (const auto& r : manifest.records) {
    const auto b = static_cast<std::size_t>(static_cast<long long>(r.frame_count - s.min_frames) * count / span);
    ++s.histogram[b].count;
  }
  return s;
}

std::string format_summary(const DatasetSummary& s) {
  std::ostringstream o;
  o << "records " << s.win + s.loss + s.unlabeled << "  win " << s.win << "  loss " << s.loss << "  unlabeled "
    << s.unlabeled << "  win prior " << std::fixed << std::setprecision(4) << s.class_prior << '\n';
  o << "frames min " << s.min_frames << "  max " << s.max_frames << '\n';
  std::size_t peak = 1;
  for (const auto& b : s.histogram) peak = std::max(peak, b.count);
  for (const auto& b : s.histogram) {
    o << std::setw(6) << b.low << '-' << std::left << std::setw(6) << b.high << std::right << std::setw(5) << b.count
      << "  " << std::string(b.count * 40 / peak, '#') << '\n';
  }
  return o.str();
}

}  // namespace hemo
