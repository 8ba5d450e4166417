#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hemo/datamodel.hpp"

namespace hemo {

struct PriorRuleSet {
  std::vector<std::string> rules;
  std::string version;
  void validate() const;
  /// Placeholder rules; the only one grounded in practice concerns face
  /// scratching after physical exertion.
  static PriorRuleSet defaults();
};

/// Section headings of the prompt, in order. Tests and tooling key on these.
inline constexpr std::string_view kPromptActionUnits = "STEP 1 - ACTION UNITS";
inline constexpr std::string_view kPromptRules = "STEP 2 - PRIOR RULES";
inline constexpr std::string_view kPromptEvidence = "STEP 3 - EVIDENCE";
inline constexpr std::string_view kPromptReflection = "STEP 4 - REFLECTION";
inline constexpr std::string_view kPromptOutput = "STEP 5 - OUTPUT FORMAT";

std::string build_prompt(const PriorRuleSet& rules);

struct VlmResponse {
  std::string sample_id;
  std::string action_units_text;
  std::vector<std::string> evidence_win;
  std::vector<std::string> evidence_loss;
  std::string reflection;
  double confidence_win = 0.0;
  double confidence_loss = 0.0;
  std::string raw_text;
};

/// Tagged-section text: [SAMPLE_ID] (optional), [ACTION_UNITS], [EVIDENCE_WIN],
/// [EVIDENCE_LOSS], [REFLECTION], [CONFIDENCE]. Evidence items are "- " lines;
/// CONFIDENCE holds "confidence_win: x" and "confidence_loss: y".
std::string format_response(const VlmResponse& response);
/// `fallback_id` is used when the text has no SAMPLE_ID section.
VlmResponse parse_response_text(std::string_view text, std::string_view origin, std::string_view fallback_id);
/// Sample id defaults to the file stem.
VlmResponse parse_response(const std::filesystem::path& path);
void write_response(const std::filesystem::path& path, const VlmResponse& response);

struct PseudoLabel {
  std::string sample_id;
  Label label = Label::win;
  double margin = 0.0;
  bool excluded = false;
  bool operator==(const PseudoLabel&) const = default;
};

/// Higher confidence wins. Excluded when the margin does not exceed the
/// threshold, so the default threshold 0 excludes exact ties only.
PseudoLabel select_pseudo_label(const VlmResponse& response, double margin_threshold = 0.0);

/// Gold records unchanged, followed by pool records carrying their
/// non-excluded pseudo-labels, in pseudo-label order.
DatasetManifest merge_datasets(const DatasetManifest& gold, std::span<const PseudoLabel> pseudo,
                               const DatasetManifest& pool);

/// Flips each label independently with probability noise_rate; margins are
/// uniform in [0.1, 0.9]. Sample ids are left empty.
std::vector<PseudoLabel> simulate_pseudo_labels(std::span<const Label> true_labels, double noise_rate,
                                                std::uint64_t seed);
/// Same, keyed by the pool's sample ids; every pool record must be labeled.
std::vector<PseudoLabel> simulate_pseudo_labels(const DatasetManifest& pool, double noise_rate, std::uint64_t seed);

/// Response whose confidences reproduce the pseudo-label: 0.5 +- margin/2.
VlmResponse simulated_response(const PseudoLabel& label);

/// Reads <dir>/<sample_id>.txt for every pool record.
std::vector<VlmResponse> load_responses(const std::filesystem::path& dir, const DatasetManifest& pool);

}  // namespace hemo
