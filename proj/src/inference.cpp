#include "hemo/inference.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "json.hpp"

namespace hemo {

void VoteConfig::validate() const {
  if (views < 1) throw ValidationError("views must be at least 1");
}

double win_probability(const std::array<double, 2>& logits) {
  // Two-class softmax as a logistic of the logit gap.
  const double gap = logits[1] - logits[0];
  return gap >= 0.0 ? 1.0 / (1.0 + std::exp(-gap)) : std::exp(gap) / (1.0 + std::exp(gap));
}

VoteResult aggregate_votes(std::span<const double> win_probabilities) {
  if (win_probabilities.empty()) throw ValidationError("no views to vote over");
  VoteResult r;
  r.view_win_probabilities.assign(win_probabilities.begin(), win_probabilities.end());
  double total = 0.0;
  for (double p : win_probabilities) {
    total += p;
    if (p >= 0.5) {
      ++r.win_votes;
    } else {
      ++r.loss_votes;
    }
  }
  r.mean_win_probability = total / static_cast<double>(win_probabilities.size());
  if (r.win_votes != r.loss_votes) {
    r.label = r.win_votes > r.loss_votes ? Label::win : Label::loss;
  } else {
    r.tie_rule_used = true;
    r.label = r.mean_win_probability >= 0.5 ? Label::win : Label::loss;
  }
  return r;
}

VoteResult predict_voted(const TrimodalModel& model, const LoadedSample& sample, std::string_view sample_id,
                         const FeatureConfig& features, const VoteConfig& votes, Target target) {
  votes.validate();
  std::vector<double> probs;
  probs.reserve(static_cast<std::size_t>(votes.views));
  for (int v = 0; v < votes.views; ++v) {
    const auto input = prepare_features(sample, features, inference_view_seed(votes.base_seed, sample_id, v), target);
    probs.push_back(win_probability(model.logits(input, target)));
  }
  return aggregate_votes(probs);
}

Metrics compute_metrics(std::span<const Prediction> predictions) {
  if (predictions.empty()) throw ValidationError("cannot compute metrics on an empty dataset");
  Metrics m;
  m.count = predictions.size();
  std::size_t correct = 0;
  for (const auto& p : predictions) {
    if (!p.truth) throw ValidationError("record '" + p.sample_id + "' is unlabeled");
    const int t = class_index(*p.truth);
    const int q = class_index(p.predicted);
    ++m.confusion[t][q];
    if (t == q) ++correct;
  }
  m.accuracy = static_cast<double>(correct) / static_cast<double>(m.count);
  for (int c = 0; c < 2; ++c) {
    const double tp = static_cast<double>(m.confusion[c][c]);
    const double predicted = static_cast<double>(m.confusion[0][c] + m.confusion[1][c]);
    const double actual = static_cast<double>(m.confusion[c][0] + m.confusion[c][1]);
    m.precision[c] = predicted > 0 ? tp / predicted : 0.0;
    m.recall[c] = actual > 0 ? tp / actual : 0.0;
  }
  return m;
}

std::vector<Prediction> predict_all(const TrimodalModel& model, const SampleStore& store, const FeatureConfig& features,
                                    const VoteConfig& votes, Target target, int workers) {
  std::vector<Prediction> out(store.size());
  parallel_for(store.size(), workers, [&](std::size_t i) {
    const auto& rec = store.record(i);
    const auto r = predict_voted(model, store.sample(i), rec.sample_id, features, votes, target);
    out[i] = Prediction{rec.sample_id, rec.label, r.label, r.mean_win_probability, r.tie_rule_used};
  });
  return out;
}

Evaluation evaluate(const TrimodalModel& model, const SampleStore& store, const FeatureConfig& features,
                    const VoteConfig& votes, Target target, int workers) {
  if (store.size() == 0) throw ValidationError("cannot evaluate an empty dataset");
  for (const auto& rec : store.manifest().records) {
    if (!rec.label) throw ValidationError("record '" + rec.sample_id + "' is unlabeled");
  }
  Evaluation e;
  e.predictions = predict_all(model, store, features, votes, target, workers);
  e.metrics = compute_metrics(e.predictions);
  double loss = 0.0;
  for (const auto& p : e.predictions) {
    const double q = *p.truth == Label::win ? p.mean_win_probability : 1.0 - p.mean_win_probability;
    loss -= std::log(std::max(q, 1e-300));
    if (p.tie_rule_used) ++e.tie_rule_invocations;
  }
  e.loss = loss / static_cast<double>(e.predictions.size());
  return e;
}

void write_predictions(const std::filesystem::path& path, std::span<const Prediction> predictions) {
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << "sample_id,label,prediction,mean_win_probability\n";
  out << std::setprecision(17);
  for (const auto& p : predictions) {
    out << p.sample_id << ',' << (p.truth ? to_string(*p.truth) : "none") << ',' << to_string(p.predicted) << ','
        << p.mean_win_probability << '\n';
  }
}

std::vector<Prediction> read_predictions(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open '" + path.string() + "'");
  std::string line;
  std::getline(in, line);
  std::vector<Prediction> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string id, truth, pred, prob;
    if (!std::getline(ss, id, ',') || !std::getline(ss, truth, ',') || !std::getline(ss, pred, ',') ||
        !std::getline(ss, prob)) {
      throw ParseError(path.string() + ": malformed prediction line '" + line + "'");
    }
    Prediction p;
    p.sample_id = id;
    if (truth != "none") p.truth = parse_label(truth);
    p.predicted = parse_label(pred);
    p.mean_win_probability = std::stod(prob);
    out.push_back(std::move(p));
  }
  return out;
}

void write_metrics(const std::filesystem::path& path, const Metrics& m) {
  nlohmann::json j;
  j["count"] = m.count;
  j["accuracy"] = m.accuracy;
  j["confusion"] = {{"loss", {{"loss", m.confusion[0][0]}, {"win", m.confusion[0][1]}}},
                    {"win", {{"loss", m.confusion[1][0]}, {"win", m.confusion[1][1]}}}};
  j["precision"] = {{"loss", m.precision[0]}, {"win", m.precision[1]}};
  j["recall"] = {{"loss", m.recall[0]}, {"win", m.recall[1]}};
  std::ofstream out(path);
  if (!out) throw IngestionError("cannot write '" + path.string() + "'");
  out << j.dump(2) << '\n';
}

std::string format_metrics(const Metrics& m) {
  std::ostringstream s;
  s << std::fixed << std::setprecision(4);
  s << "samples   " << m.count << "\naccuracy  " << m.accuracy << "\n\n";
  s << "               pred loss  pred win\n";
  s << "truth loss   " << std::setw(11) << m.confusion[0][0] << std::setw(10) << m.confusion[0][1] << '\n';
  s << "truth win    " << std::setw(11) << m.confusion[1][0] << std::setw(10) << m.confusion[1][1] << "\n\n";
  s << "class  precision  recall\n";
  s << "loss   " << std::setw(9) << m.precision[0] << std::setw(8) << m.recall[0] << '\n';
  s << "win    " << std::setw(9) << m.precision[1] << std::setw(8) << m.recall[1] << '\n';
  return s.str();
}

}  // namespace hemo
