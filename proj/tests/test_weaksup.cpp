#include <fstream>

#include "doctest.h"
#include "hemo/weaksup.hpp"
#include "test_util.hpp"

using namespace hemo;
using hemo::testing::label_only_manifest;
using hemo::testing::TempDir;

namespace {

VlmResponse response(double win, double loss) {
  VlmResponse r;
  r.sample_id = "x";
  r.action_units_text = "AU12 brief";
  r.evidence_win = {"smile after point"};
  r.reflection = "consistent";
  r.confidence_win = win;
  r.confidence_loss = loss;
  return r;
}

}  // namespace

TEST_CASE("prompt sections appear once and in order") {
  const auto prompt = build_prompt(PriorRuleSet::defaults());
  std::size_t last = 0;
  for (auto marker : {kPromptActionUnits, kPromptRules, kPromptEvidence, kPromptReflection, kPromptOutput}) {
    const auto at = prompt.find(marker);
    REQUIRE(at != std::string::npos);
    CHECK(at >= last);
    CHECK(prompt.find(marker, at + 1) == std::string::npos);
    last = at;
  }
  CHECK(build_prompt(PriorRuleSet::defaults()) == prompt);
}

TEST_CASE("different rule sets change only the rules section") {
  auto a = PriorRuleSet::defaults();
  auto b = a;
  b.rules.push_back("an extra rule");
  b.version = a.version + "-b";
  const auto pa = build_prompt(a);
  const auto pb = build_prompt(b);
  CHECK(pa != pb);
  const auto ra = pa.find(kPromptRules), ea = pa.find(kPromptEvidence);
  const auto rb = pb.find(kPromptRules), eb = pb.find(kPromptEvidence);
  CHECK(pa.substr(0, ra) == pb.substr(0, rb));
  CHECK(pa.substr(ea) == pb.substr(eb));
  CHECK_THROWS_AS(PriorRuleSet{}.validate(), ValidationError);
}

TEST_CASE("response text parses back to its fields") {
  const auto r = response(0.7, 0.3);
  const auto parsed = parse_response_text(format_response(r), "mem", "fallback");
  CHECK(parsed.sample_id == "x");
  CHECK(parsed.confidence_win == 0.7);
  CHECK(parsed.confidence_loss == 0.3);
  CHECK(parsed.evidence_win == r.evidence_win);
  CHECK(parsed.evidence_loss.empty());

  TempDir dir("resp");
  auto nameless = r;
  nameless.sample_id.clear();
  write_response(dir / "clip9.txt", nameless);
  CHECK(parse_response(dir / "clip9.txt").sample_id == "clip9");
}

TEST_CASE("response parse errors") {
  auto text = format_response(response(1.4, 0.3));
  CHECK_THROWS_AS(parse_response_text(text, "mem", "x"), ParseError);
  text = format_response(response(0.7, 0.3));
  const auto cut = text.find("confidence_loss");
  REQUIRE(cut != std::string::npos);
  CHECK_THROWS_AS(parse_response_text(text.substr(0, cut), "mem", "x"), ParseError);
  auto no_reflection = text;
  no_reflection.replace(no_reflection.find("[REFLECTION]"), 12, "[REFLECTIONS]");
  CHECK_THROWS_AS(parse_response_text(no_reflection, "mem", "x"), ParseError);
  CHECK_THROWS_AS(parse_response("/nonexistent/hemo/response.txt"), IngestionError);
}

TEST_CASE("pseudo-label selection") {
  const auto a = select_pseudo_label(response(0.7, 0.3));
  CHECK(a.label == Label::win);
  CHECK(a.margin == doctest::Approx(0.4).epsilon(1e-12));
  CHECK_FALSE(a.excluded);
  const auto b = select_pseudo_label(response(0.2, 0.9));
  CHECK(b.label == Label::loss);
  CHECK(b.margin == doctest::Approx(0.7).epsilon(1e-12));
  CHECK(select_pseudo_label(response(0.5, 0.5)).excluded);
  CHECK(select_pseudo_label(response(0.7, 0.3), 0.5).excluded);
}

TEST_CASE("merging gold with pseudo-labeled pool records") {
  const auto gold = label_only_manifest(24, 8, "g");
  const auto pool = label_only_manifest(15, 5, "p");
  auto pseudo = simulate_pseudo_labels(pool, 0.0, 1);
  pseudo[3].excluded = true;
  pseudo[11].excluded = true;
  const auto merged = merge_datasets(gold, pseudo, pool);
  CHECK(merged.size() == 50);
  std::size_t from_pool = 0;
  for (const auto& r : merged.records) from_pool += r.label_source == LabelSource::pseudo;
  CHECK(from_pool == 18);
  for (std::size_t i = 0; i < gold.size(); ++i) CHECK(merged.records[i] == gold.records[i]);

  CHECK(merge_datasets(gold, {}, pool).records == gold.records);
  const auto overlap = label_only_manifest(2, 1, "g");
  CHECK_THROWS_AS(merge_datasets(gold, simulate_pseudo_labels(overlap, 0.0, 1), overlap), ValidationError);
  auto dup = pseudo;
  dup.push_back(dup.front());
  CHECK_THROWS_AS(merge_datasets(gold, dup, pool), ValidationError);
}

TEST_CASE("simulated pseudo-label noise") {
  std::vector<Label> truth(10000);
  for (std::size_t i = 0; i < truth.size(); ++i) truth[i] = i % 4 ? Label::win : Label::loss;
  const auto clean = simulate_pseudo_labels(truth, 0.0, 5);
  const auto flipped = simulate_pseudo_labels(truth, 1.0, 5);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    REQUIRE(clean[i].label == truth[i]);
    REQUIRE(flipped[i].label != truth[i]);
  }
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    const auto noisy = simulate_pseudo_labels(truth, 0.356, seed);
    std::size_t flips = 0;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      flips += noisy[i].label != truth[i];
      REQUIRE((noisy[i].margin >= 0.1 && noisy[i].margin <= 0.9));
    }
    CHECK(std::abs(static_cast<double>(flips) / 10000.0 - 0.356) <= 0.015);
  }
  CHECK(simulate_pseudo_labels(truth, 0.356, 4) == simulate_pseudo_labels(truth, 0.356, 4));
  CHECK_THROWS_AS(simulate_pseudo_labels(truth, 1.5, 1), ValidationError);
}

TEST_CASE("simulated responses reproduce their pseudo-labels") {
  const auto pool = label_only_manifest(6, 4);
  for (const auto& p : simulate_pseudo_labels(pool, 0.356, 8)) {
    const auto r = simulated_response(p);
    const auto back = select_pseudo_label(parse_response_text(format_response(r), "mem", ""));
    CHECK(back.sample_id == p.sample_id);
    CHECK(back.label == p.label);
    CHECK(back.margin == doctest::Approx(p.margin).epsilon(1e-12));
  }
}
