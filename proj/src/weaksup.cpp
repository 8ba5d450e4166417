#include "hemo/weaksup.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <random>
#include <set>
#include <sstream>

namespace hemo {

void PriorRuleSet::validate() const {
  if (rules.empty()) throw ValidationError("prior rule set is empty");
  for (std::size_t i = 0; i < rules.size(); ++i) {
    if (rules[i].find_first_not_of(" \t\r\n") == std::string::npos) {
      throw ValidationError("prior rule " + std::to_string(i + 1) + " is empty");
    }
  }
}

PriorRuleSet PriorRuleSet::defaults() {
  return PriorRuleSet{
      {"Touching or scratching the face right after a match is usually a physical reaction to sweat, dust or "
       "itching skin. Do not read it as self-soothing or as a sign of defeat on its own.",
       "Fatigue cues such as heavy breathing or slumped shoulders follow any long match and say little about "
       "the result.",
       "Give more weight to brief, involuntary movements than to deliberate, posed expressions."},
      "placeholder-1"};
}

std::string build_prompt(const PriorRuleSet& rules) {
  rules.validate();
  std::ostringstream p;
  p << "You will watch a post-match press interview with a tennis player. Work through the steps below in "
       "order and write out each step.\n\n";
  p << kPromptActionUnits << '\n'
    << "Identify the action units you can observe, using the facial (FACS), postural (PGCS) and gestural "
       "(GACS) coding systems. For each unit give the approximate time, the body region, and the emotion it "
       "is commonly associated with.\n\n";
  p << kPromptRules << " (version " << rules.version << ")\n";
  for (std::size_t i = 0; i < rules.rules.size(); ++i) p << i + 1 << ". " << rules.rules[i] << '\n';
  p << '\n';
  p << kPromptEvidence << '\n'
    << "Using the action units and the rules above, collect observations that point towards a won match and, "
       "separately, observations that point towards a lost match. Do not decide the outcome yet.\n\n";
  p << kPromptReflection << '\n'
    << "Check each piece of evidence against the prior rules. Remove or reinterpret any item that breaks a "
       "rule and explain the change.\n\n";
  p << kPromptOutput << '\n'
    << "Answer with these tagged sections, in this order:\n"
       "[ACTION_UNITS]\n<free text>\n"
       "[EVIDENCE_WIN]\n- <one item per line>\n"
       "[EVIDENCE_LOSS]\n- <one item per line>\n"
       "[REFLECTION]\n<free text>\n"
       "[CONFIDENCE]\nconfidence_win: <number in [0,1]>\nconfidence_loss: <number in [0,1]>\n";
  return p.str();
}

// ---- responses ---------------------------------------------------------------------

namespace {

constexpr std::array<std::string_view, 6> kSections{"SAMPLE_ID",     "ACTION_UNITS", "EVIDENCE_WIN",
                                                    "EVIDENCE_LOSS", "REFLECTION",   "CONFIDENCE"};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> evidence_items(const std::string& body) {
  std::vector<std::string> items;
  std::istringstream in(body);
  std::string line;
  while (std::getline(in, line)) {
    auto t = trim(line);
    if (t.empty()) continue;
    if (t.starts_with("- ")) t = trim(t.substr(2));
    if (t == "-") continue;
    items.push_back(t);
  }
  return items;
}

double parse_confidence(const std::map<std::string, std::string>& kv, const std::string& key,
                        std::string_view origin) {
  const auto it = kv.find(key);
  if (it == kv.end()) throw ParseError(std::string(origin) + ": missing " + key);
  double value = 0.0;
  std::size_t used = 0;
  try {
    value = std::stod(it->second, &used);
  } catch (const std::exception&) {
    throw ParseError(std::string(origin) + ": " + key + " is not a number ('" + it->second + "')");
  }
  if (used != it->second.size()) {
    throw ParseError(std::string(origin) + ": " + key + " is not a number ('" + it->second + "')");
  }
  if (!(value >= 0.0 && value <= 1.0)) {
    throw ParseError(std::string(origin) + ": " + key + " = " + it->second + " is outside [0,1]");
  }
  return value;
}

}  // namespace

std::string format_response(const VlmResponse& r) {
  std::ostringstream s;
  s << "[SAMPLE_ID]\n" << r.sample_id << "\n[ACTION_UNITS]\n" << r.action_units_text << "\n[EVIDENCE_WIN]\n";
  for (const auto& e : r.evidence_win) s << "- " << e << '\n';
  s << "[EVIDENCE_LOSS]\n";
  for (const auto& e : r.evidence_loss) s << "- " << e << '\n';
  s << "[REFLECTION]\n" << r.reflection << "\n[CONFIDENCE]\n" << std::setprecision(17)
    << "confidence_win: " << r.confidence_win << "\nconfidence_loss: " << r.confidence_loss << '\n';
  return s.str();
}

VlmResponse parse_response_text(std::string_view text, std::string_view origin, std::string_view fallback_id) {
  std::map<std::string, std::string> bodies;
  std::string current;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    const auto t = trim(line);
    if (t.size() > 2 && t.front() == '[' && t.back() == ']') {
      const auto name = t.substr(1, t.size() - 2);
      if (std::find(kSections.begin(), kSections.end(), name) != kSections.end()) {
        if (bodies.count(name)) throw ParseError(std::string(origin) + ": duplicate section [" + name + "]");
        current = name;
        bodies[current];
        continue;
      }
    }
    if (!current.empty()) bodies[current] += line + "\n";
  }
  for (std::size_t i = 1; i < kSections.size(); ++i) {
    if (!bodies.count(std::string(kSections[i]))) {
      throw ParseError(std::string(origin) + ": missing section [" + std::string(kSections[i]) + "]");
    }
  }

  std::map<std::string, std::string> kv;
  std::istringstream conf(bodies["CONFIDENCE"]);
  while (std::getline(conf, line)) {
    const auto t = trim(line);
    if (t.empty()) continue;
    const auto colon = t.find(':');
    if (colon == std::string::npos) throw ParseError(std::string(origin) + ": malformed confidence line '" + t + "'");
    kv[trim(t.substr(0, colon))] = trim(t.substr(colon + 1));
  }

  VlmResponse r;
  r.raw_text = std::string(text);
  r.sample_id = bodies.count("SAMPLE_ID") ? trim(bodies["SAMPLE_ID"]) : std::string(fallback_id);
  if (r.sample_id.empty()) r.sample_id = std::string(fallback_id);
  r.action_units_text = trim(bodies["ACTION_UNITS"]);
  r.evidence_win = evidence_items(bodies["EVIDENCE_WIN"]);
  r.evidence_loss = evidence_items(bodies["EVIDENCE_LOSS"]);
  r.reflection = trim(bodies["REFLECTION"]);
  r.confidence_win = parse_confidence(kv, "confidence_win", origin);
  r.confidence_loss = parse_confidence(kv, "confidence_loss", origin);
  return r;
}

VlmResponse parse_response(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open response file '" + path.string() + "'");
  std::stringstream buf;
  buf << in.rdbuf();
  return parse_response_text(buf.str(), path.string(), path.stem().string());
}

void write_response(const std::filesystem::path& path, const VlmResponse& response) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << format_response(response);
}

PseudoLabel select_pseudo_label(const VlmResponse& r, double margin_threshold) {
  PseudoLabel p;
  p.sample_id = r.sample_id;
  p.label = r.confidence_win >= r.confidence_loss ? Label::win : Label::loss;
  p.margin = std::abs(r.confidence_win - r.confidence_loss);
  p.excluded = p.margin <= margin_threshold;
  return p;
}

DatasetManifest merge_datasets(const DatasetManifest& gold, std::span<const PseudoLabel> pseudo,
                               const DatasetManifest& pool) {
  std::set<std::string> gold_ids;
  for (const auto& r : gold.records) gold_ids.insert(r.sample_id);
  std::map<std::string, const SampleRecord*> pool_by_id;
  for (const auto& r : pool.records) {
    if (gold_ids.count(r.sample_id)) {
      throw ValidationError("sample '" + r.sample_id + "' appears in both the gold set and the pool");
    }
    pool_by_id[r.sample_id] = &r;
  }
  DatasetManifest merged;
  merged.split = Split::train;
  merged.records = gold.records;
  std::set<std::string> seen;
  for (const auto& p : pseudo) {
    const auto it = pool_by_id.find(p.sample_id);
    if (it == pool_by_id.end()) throw ValidationError("pseudo-label for '" + p.sample_id + "' has no pool record");
    if (!seen.insert(p.sample_id).second) throw ValidationError("duplicate pseudo-label for '" + p.sample_id + "'");
    if (p.excluded) continue;
    SampleRecord rec = *it->second;
    rec.label = p.label;
    rec.label_source = LabelSource::pseudo;
    merged.records.push_back(std::move(rec));
  }
  merged.finalize();
  return merged;
}

std::vector<PseudoLabel> simulate_pseudo_labels(std::span<const Label> true_labels, double noise_rate,
                                                std::uint64_t seed) {
  if (!(noise_rate >= 0.0 && noise_rate <= 1.0)) throw ValidationError("noise_rate must lie in [0,1]");
  Rng rng(derive_seed(seed, "pseudo-labels"));
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_real_distribution<double> margin(0.1, 0.9);
  std::vector<PseudoLabel> out;
  out.reserve(true_labels.size());
  for (Label truth : true_labels) {
    PseudoLabel p;
    p.label = u(rng) < noise_rate ? flip(truth) : truth;
    p.margin = margin(rng);
    out.push_back(p);
  }
  return out;
}

std::vector<PseudoLabel> simulate_pseudo_labels(const DatasetManifest& pool, double noise_rate, std::uint64_t seed) {
  std::vector<Label> truth;
  for (const auto& r : pool.records) {
    if (!r.label) throw ValidationError("pool record '" + r.sample_id + "' has no ground truth to corrupt");
    truth.push_back(*r.label);
  }
  auto out = simulate_pseudo_labels(truth, noise_rate, seed);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].sample_id = pool.records[i].sample_id;
  return out;
}

VlmResponse simulated_response(const PseudoLabel& label) {
  VlmResponse r;
  r.sample_id = label.sample_id;
  const double hi = 0.5 + label.margin / 2.0;
  const double lo = 0.5 - label.margin / 2.0;
  r.confidence_win = label.label == Label::win ? hi : lo;
  r.confidence_loss = label.label == Label::win ? lo : hi;
  r.action_units_text = "Simulated response; no video was analysed.";
  r.evidence_win = {"simulated evidence item"};
  r.evidence_loss = {"simulated evidence item"};
  r.reflection = "No rule conflicts checked (simulated).";
  return r;
}

std::vector<VlmResponse> load_responses(const std::filesystem::path& dir, const DatasetManifest& pool) {
  std::vector<VlmResponse> out;
  for (const auto& rec : pool.records) {
    auto r = parse_response(dir / (rec.sample_id + ".txt"));
    if (r.sample_id != rec.sample_id) {
      throw ValidationError("response file for '" + rec.sample_id + "' names sample '" + r.sample_id + "'");
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace hemo
