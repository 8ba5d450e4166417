#include <cmath>
#include <random>

#include "doctest.h"
#include "hemo/training.hpp"

using namespace hemo;

namespace {

// Cross-entropy from the softmax definition, in long double.
double cross_entropy(const std::array<double, 2>& z, Label y) {
  const long double a = z[0], b = z[1];
  const long double m = std::max(a, b);
  const long double lse = m + std::log(std::exp(a - m) + std::exp(b - m));
  return static_cast<double>(lse - (y == Label::win ? b : a));
}

}  // namespace

TEST_CASE("focal loss with gamma 0 and unit alpha is cross-entropy") {
  std::mt19937_64 rng(1);
  std::normal_distribution<double> n(0.0, 4.0);
  const FocalLossParams ce{0.0, 1.0, 1.0};
  double worst = 0.0;
  for (int i = 0; i < 1000; ++i) {
    const std::array<double, 2> z{n(rng), n(rng)};
    for (Label y : {Label::win, Label::loss}) worst = std::max(worst, std::abs(focal_loss(z, y, ce) - cross_entropy(z, y)));
  }
  CHECK(worst <= 1e-12);
}

TEST_CASE("focal loss closed-form values") {
  const FocalLossParams unit{2.0, 1.0, 1.0};
  CHECK(std::abs(focal_loss({0.3, 0.3}, Label::win, unit) - 0.25 * std::log(2.0)) <= 1e-9);
  CHECK(std::abs(focal_loss({0.3, 0.3}, Label::win, unit) - 0.173287) <= 1e-6);
  CHECK(focal_loss({0.0, 20.0}, Label::win, unit) < 1e-8);
  CHECK(focal_loss({0.0, 20.0}, Label::win, unit) >= 0.0);
  // Default alphas weight the loss class three times as much as win.
  const FocalLossParams def;
  CHECK(focal_loss({0.0, 0.0}, Label::loss, def) == doctest::Approx(3.0 * focal_loss({0.0, 0.0}, Label::win, def)));
}

TEST_CASE("focal loss strictly decreases in p_true") {
  for (double gamma : {0.5, 1.0, 2.0, 5.0}) {
    const FocalLossParams p{gamma, 0.25, 0.75};
    double previous = std::numeric_limits<double>::infinity();
    for (int i = -400; i <= 400; ++i) {
      const double gap = i * 0.05;
      const double l = focal_loss({0.0, gap}, Label::win, p);
      REQUIRE(l < previous);
      previous = l;
    }
  }
}

TEST_CASE("focal loss op gradient matches finite differences") {
  ag::ParameterSet params;
  params.add("z", Matrix{{0.4, -1.3}});
  for (Label y : {Label::win, Label::loss}) {
    for (const auto& fp : {FocalLossParams{}, FocalLossParams{0.0, 1.0, 1.0}, FocalLossParams{3.0, 0.5, 0.5}}) {
      const auto r = gradient_check(params, [&](ag::Tape& t) { return focal_loss(t.param("z"), y, fp); });
      CHECK(r.max_relative_error <= 1e-7);
    }
  }
}

TEST_CASE("focal loss parameter validation") {
  CHECK_THROWS_AS((FocalLossParams{-1.0, 0.25, 0.75}.validate()), ValidationError);
  CHECK_THROWS_AS((FocalLossParams{2.0, 0.0, 0.75}.validate()), ValidationError);
}

TEST_CASE("AdamW first step moves each weight by the learning rate against its gradient sign") {
  ag::ParameterSet params;
  params.add("w", Matrix{{1.0, -2.0, 0.5}});
  ag::Gradients g(params);
  g[0] = Matrix{{0.3, -4.0, 0.0}};
  AdamW opt(params, {0}, AdamWConfig{0.01, 0.9, 0.999, 1e-8, 0.0});
  opt.step(g);
  CHECK(params.value("w")(0, 0) == doctest::Approx(0.99).epsilon(1e-9));
  CHECK(params.value("w")(0, 1) == doctest::Approx(-1.99).epsilon(1e-9));
  CHECK(params.value("w")(0, 2) == 0.5);
}

TEST_CASE("AdamW decay is decoupled from the gradient") {
  ag::ParameterSet params;
  params.add("w", Matrix{{2.0}});
  ag::Gradients g(params);
  AdamW opt(params, {0}, AdamWConfig{0.1, 0.9, 0.999, 1e-8, 0.5});
  opt.step(g);
  CHECK(params.value("w")(0, 0) == doctest::Approx(2.0 * (1.0 - 0.05)));
}

TEST_CASE("AdamW with zero learning rate leaves parameters bit-identical") {
  ag::ParameterSet params;
  params.add("w", Matrix{{1.0 / 3.0, -7.25}});
  const Matrix before = params.value("w");
  ag::Gradients g(params);
  g[0] = Matrix{{5.0, -1.0}};
  AdamW opt(params, {0}, AdamWConfig{0.0, 0.9, 0.999, 1e-8, 0.01});
  for (int i = 0; i < 3; ++i) opt.step(g);
  CHECK(params.value("w") == before);
}

TEST_CASE("stage config learning rate scaling") {
  StageConfig s;
  s.learning_rate = 2e-3;
  CHECK(s.effective_learning_rate() == 2e-3);
  s.stage = Stage::finetune_full;
  CHECK(s.effective_learning_rate() == doctest::Approx(2e-4));
  s.learning_rate_override = 5e-4;
  CHECK(s.effective_learning_rate() == 5e-4);
  s.batch_size = 0;
  CHECK_THROWS_AS(s.validate(), ValidationError);
}

TEST_CASE("gradient check suite passes on every block") {
  const auto suite = gradient_check_suite(3);
  CHECK(suite.entries.size() == 9);
  for (const auto& e : suite.entries) {
    INFO(e.block, " ", e.worst_parameter);
    CHECK(e.max_relative_error <= 1e-4);
  }
  CHECK(suite.passed());
}

TEST_CASE("train report round-trips through its line format") {
  TrainReport r;
  r.stage = Stage::pretrain_visual;
  r.history.push_back({1, 0.5, 0.6, 0.7, 0.8, 0.9, std::nullopt});
  r.history.push_back({2, 0.25, 0.75, 0.875, 0.4, 1.0, 0.5});
  r.best_epoch = 2;
  r.best_validation_accuracy = 0.875;
  r.best_checkpoint_path = "x.ckpt";
  r.wall_seconds = 1.5;
  const auto path = std::filesystem::temp_directory_path() / "hemo_report_roundtrip.jsonl";
  write_report(path, r);
  const auto back = read_report(path);
  std::filesystem::remove(path);
  CHECK(back.stage == r.stage);
  REQUIRE(back.history.size() == 2);
  CHECK(back.history[1].pseudo_accuracy == 0.5);
  CHECK_FALSE(back.history[0].pseudo_accuracy.has_value());
  CHECK(back.best_epoch == 2);
  CHECK(back.best_validation_accuracy == 0.875);
  CHECK(format_report(back).find("best epoch 2") != std::string::npos);
}
