// Command-line front end: one subcommand per pipeline step.

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

#include "hemo/ablation.hpp"
#include "hemo/config.hpp"
#include "hemo/streams.hpp"
#include "hemo/weaksup.hpp"

namespace fs = std::filesystem;
using namespace hemo;

namespace {

constexpr double kGradientTolerance = 1e-4;

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
  std::string out;
  std::string command_line;
};

RunConfig load_config(const Globals& g) {
  RunConfig c = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (g.seed) c.seed = *g.seed;
  if (g.workers) c.workers = *g.workers;
  c.validate();
  return c;
}

// Creates the output directory and records the effective config and seed.
fs::path prepare_out(const Globals& g, const RunConfig& c, const fs::path& fallback) {
  const fs::path out = g.out.empty() ? fallback : fs::path(g.out);
  fs::create_directories(out);
  std::ofstream(out / "run_config.yaml") << to_yaml(c);
  std::ofstream(out / "seed.txt") << c.seed << '\n';
  std::ofstream(out / "command.txt") << g.command_line << '\n';
  return out;
}

std::string resolve(const std::string& flag, const fs::path& fallback) {
  return flag.empty() ? fallback.string() : flag;
}

Target target_of(Stage s) {
  switch (s) {
    case Stage::pretrain_keypoint: return Target::keypoint;
    case Stage::pretrain_visual: return Target::visual;
    case Stage::pretrain_text: return Target::text;
    case Stage::finetune_full: return Target::full;
  }
  return Target::full;
}

TrainOptions train_options(const RunConfig& c, const fs::path& out) {
  TrainOptions o;
  o.workers = c.workers;
  o.out_dir = out;
  o.on_epoch = [](const EpochRecord& e) {
    std::cout << "  epoch " << e.epoch << "  train_loss " << e.train_loss << "  train_acc " << e.train_accuracy
              << "  val_acc " << e.validation_accuracy << "  val_loss " << e.validation_loss << '\n';
  };
  return o;
}

// ---- subcommands -------------------------------------------------------------------

int run_synth(const Globals& g, int count) {
  RunConfig c = load_config(g);
  if (count > 0) c.synth.sample_count = count;
  const fs::path out = resolve(g.out, c.data_dir);
  const auto synth = c.synth_config();
  synth.validate();
  const auto ds = generate_dataset(synth, out, c.workers);
  prepare_out(g, c, out);
  const auto summary = format_summary(describe(ds.manifest));
  std::ofstream(out / "summary.txt") << summary;
  std::cout << "wrote " << ds.manifest.size() << " samples to " << out.string() << '\n' << summary;
  return 0;
}

int run_featgen(const Globals& g, const std::string& manifest_flag, const std::string& raw_dir, bool dump) {
  const RunConfig c = load_config(g);
  const fs::path out = prepare_out(g, c, c.run_dir / "featgen");
  if (!raw_dir.empty()) {
    // Raw pixel detections -> normalized keypoint tracks.
    fs::create_directories(out / "keypoints");
    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(raw_dir)) {
      if (e.path().extension() == ".csv") inputs.push_back(e.path());
    }
    std::sort(inputs.begin(), inputs.end());
    for (const auto& p : inputs) {
      const auto raw = read_raw_keypoints_csv(p);
      std::vector<NormalizedFrame> frames;
      frames.reserve(raw.size());
      for (const auto& f : raw) frames.push_back(normalize_frame(f));
      write_keypoints(out / "keypoints" / (p.stem().string() + ".kpt"), KeypointSequence::from_frames(frames));
    }
    std::cout << "normalized " << inputs.size() << " detection files into " << (out / "keypoints").string() << '\n';
    return 0;
  }
  const auto manifest = load_manifest(resolve(manifest_flag, c.manifest_path()));
  std::ofstream index(out / "features.jsonl");
  if (dump) fs::create_directories(out / "features");
  for (const auto& rec : manifest.records) {
    const auto seq = read_keypoints(rec.keypoint_path);
    const auto idx = sample_frames(seq.frame_count(), c.features.keypoint_samples, c.features.min_gap,
                                   derive_seed(inference_view_seed(c.vote_config().base_seed, rec.sample_id, 0),
                                               "keypoint"));
    OffsetConfig offsets = c.features.offsets;
    if (!c.features.offsets_enabled) offsets.lags.clear();
    const auto tensor = build_feature_tensor(seq, offsets, idx, c.features.groups);
    index << "{\"sample_id\":\"" << rec.sample_id << "\",\"frames\":" << seq.frame_count()
          << ",\"sampled\":" << idx.size() << ",\"feature_dim\":" << offsets.feature_dim() << ",\"groups\":{";
    for (int gi = 0; gi < 3; ++gi) {
      const auto& gs = tensor.groups[static_cast<std::size_t>(gi)];
      index << (gi ? "," : "") << '"' << group_name(gs.group) << "\":" << gs.keypoint_count;
      if (dump) {
        std::ofstream csv(out / "features" / (rec.sample_id + "_" + group_name(gs.group) + ".csv"));
        const std::size_t width = static_cast<std::size_t>(gs.keypoint_count) * gs.feature_dim;
        for (int t = 0; t < gs.frame_count; ++t) {
          for (std::size_t j = 0; j < width; ++j) csv << (j ? "," : "") << gs.values[t * width + j];
          csv << '\n';
        }
      }
    }
    index << "}}\n";
  }
  std::cout << "feature index for " << manifest.size() << " samples in " << (out / "features.jsonl").string()
            << '\n';
  return 0;
}

int run_pretrain(const Globals& g, const std::string& branch_name, const std::string& manifest_flag) {
  const RunConfig c = load_config(g);
  const fs::path out = prepare_out(g, c, c.run_dir / "pretrain");
  const auto labeled = load_manifest(resolve(manifest_flag, c.manifest_path()));
  const auto parts = partition_dataset(labeled, c);
  write_manifest(out / "gold.jsonl", parts.gold);
  write_manifest(out / "val.jsonl", parts.validation);
  if (!parts.pool.records.empty()) write_manifest(out / "pool.jsonl", parts.pool);
  std::cout << "gold " << parts.gold.size() << "  validation " << parts.validation.size() << "  pool "
            << parts.pool.size() << '\n';

  std::vector<Branch> branches;
  if (branch_name == "all") {
    branches.assign(kAllBranches.begin(), kAllBranches.end());
  } else {
    branches.push_back(parse_branch(branch_name));
  }
  const int vocab = c.model.text.vocabulary_size;
  const SampleStore gold(parts.gold, vocab);
  const SampleStore val(parts.validation, vocab);
  for (Branch b : branches) {
    std::cout << "pretraining " << to_string(b) << " branch\n";
    TrimodalModel model(c.model_config(), c.seed_for("init"));
    const auto r = pretrain_branch(model, b, gold, val, c.features, c.stage_config(pretrain_stage(b)), c.loss,
                                   train_options(c, out));
    std::cout << format_report(r.report);
  }
  return 0;
}

int run_finetune(const Globals& g, const std::string& pretrained_flag, const std::string& responses_dir,
                 const std::string& gold_flag, const std::string& val_flag, const std::string& pool_flag) {
  const RunConfig c = load_config(g);
  const fs::path pretrained = resolve(pretrained_flag, c.run_dir / "pretrain");
  const fs::path out = prepare_out(g, c, c.run_dir / "finetune");
  const auto gold = load_manifest(resolve(gold_flag, pretrained / "gold.jsonl"));
  const auto val = load_manifest(resolve(val_flag, pretrained / "val.jsonl"));

  DatasetManifest merged = gold;
  const fs::path pool_path = resolve(pool_flag, pretrained / "pool.jsonl");
  if (c.weak_supervision.enabled && fs::exists(pool_path)) {
    const auto pool = load_manifest(pool_path);
    std::vector<PseudoLabel> pseudo;
    if (!responses_dir.empty()) {
      for (const auto& r : load_responses(responses_dir, pool)) {
        pseudo.push_back(select_pseudo_label(r, c.weak_supervision.margin_threshold));
      }
    } else {
      pseudo = simulate_pseudo_labels(pool, c.weak_supervision.noise_rate, c.seed_for("pseudo"));
      for (auto& p : pseudo) p.excluded = p.margin <= c.weak_supervision.margin_threshold;
    }
    std::ofstream csv(out / "pseudo_labels.csv");
    csv << "sample_id,pseudo_label,margin,excluded\n";
    for (const auto& p : pseudo) {
      csv << p.sample_id << ',' << to_string(p.label) << ',' << p.margin << ',' << (p.excluded ? 1 : 0) << '\n';
    }
    merged = merge_datasets(gold, pseudo, pool);
  }
  write_manifest(out / "merged.jsonl", merged);

  std::vector<Checkpoint> ckpts;
  for (Branch b : kAllBranches) {
    const auto path = pretrained / (std::string(to_string(pretrain_stage(b))) + ".ckpt");
    if (fs::exists(path)) {
      ckpts.push_back(load_checkpoint(path));
    } else {
      std::cout << "no pretrained " << to_string(b) << " checkpoint; that branch starts from initialization\n";
    }
  }
  std::cout << "stage 2 on " << merged.size() << " records (" << merged.size() - gold.size() << " pseudo-labeled)\n";
  const int vocab = c.model.text.vocabulary_size;
  TrimodalModel model(c.model_config(), c.seed_for("init"));
  const auto r = finetune_full(model, ckpts, SampleStore(merged, vocab), SampleStore(val, vocab), c.features,
                               c.stage_config(Stage::finetune_full), c.loss, train_options(c, out));
  std::cout << format_report(r.report);
  return 0;
}

struct Loaded {
  TrimodalModel model;
  Target target;
};

Loaded load_model(const RunConfig& c, const fs::path& ckpt_path) {
  const auto ckpt = load_checkpoint(ckpt_path);
  Loaded l{TrimodalModel(c.model_config(), c.seed_for("init")), target_of(ckpt.stage)};
  apply_checkpoint(l.model, ckpt);
  return l;
}

int run_predict(const Globals& g, const std::string& ckpt_flag, const std::string& manifest_flag, bool labeled) {
  const RunConfig c = load_config(g);
  const fs::path ckpt = resolve(ckpt_flag, c.run_dir / "finetune" / "finetune_full.ckpt");
  const fs::path manifest_path =
      resolve(manifest_flag, labeled ? c.run_dir / "pretrain" / "val.jsonl" : c.manifest_path());
  const fs::path out = prepare_out(g, c, c.run_dir / (labeled ? "evaluate" : "infer"));
  const auto loaded = load_model(c, ckpt);
  const SampleStore store(load_manifest(manifest_path), c.model.text.vocabulary_size);
  const auto votes = c.vote_config();
  if (labeled) {
    const auto e = evaluate(loaded.model, store, c.features, votes, loaded.target, c.workers);
    write_predictions(out / "predictions.csv", e.predictions);
    write_metrics(out / "metrics.json", e.metrics);
    std::cout << format_metrics(e.metrics) << "tie rule used on " << e.tie_rule_invocations << " records\n";
  } else {
    const auto preds = predict_all(loaded.model, store, c.features, votes, loaded.target, c.workers);
    write_predictions(out / "predictions.csv", preds);
    std::cout << "wrote " << preds.size() << " predictions to " << (out / "predictions.csv").string() << '\n';
  }
  return 0;
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

int run_ablate(const Globals& g, const std::string& grid, const std::string& offsets, const std::string& strategies,
               const std::string& seeds, double budget, const std::string& manifest_flag) {
  RunConfig c = load_config(g);
  if (!grid.empty()) {
    c.ablation.kinds.clear();
    for (const auto& k : split_list(grid)) c.ablation.kinds.push_back(parse_spatial_kind(k));
  }
  if (!offsets.empty()) {
    c.ablation.offsets.clear();
    for (const auto& o : split_list(offsets)) {
      if (o != "on" && o != "off") throw ValidationError("--offsets takes on and/or off, got '" + o + "'");
      c.ablation.offsets.push_back(o == "on");
    }
  }
  if (!strategies.empty()) {
    c.ablation.strategies.clear();
    for (const auto& s : split_list(strategies)) c.ablation.strategies.push_back(parse_strategy(s));
  }
  if (!seeds.empty()) {
    c.ablation.seeds.clear();
    for (const auto& s : split_list(seeds)) c.ablation.seeds.push_back(std::stoull(s));
  }
  if (budget >= 0.0) c.ablation_budget_seconds = budget;
  c.ablation.validate();
  const fs::path out = prepare_out(g, c, c.run_dir / "ablate");
  const auto labeled = load_manifest(resolve(manifest_flag, c.manifest_path()));
  const auto table = run_ablation(c.ablation, labeled, c.experiment(), c.ablation_budget_seconds,
                                  [](const AblationRow& row, std::uint64_t seed, double acc) {
                                    std::cout << "  " << to_string(row.kind) << " offsets "
                                              << (row.offsets ? "on" : "off") << ' ' << to_string(row.strategy)
                                              << " seed " << seed << ": " << acc << '\n';
                                  });
  write_ablation_csv(out / "ablation.csv", table);
  const auto text = format_ablation(table);
  std::ofstream(out / "ablation.txt") << text;
  std::cout << text;
  return table.complete ? 0 : 3;
}

int run_gradcheck(const Globals& g) {
  const RunConfig c = load_config(g);
  const fs::path out = prepare_out(g, c, c.run_dir / "gradcheck");
  const auto suite = gradient_check_suite(c.seed_for("gradcheck"));
  const auto text = format_gradient_checks(suite);
  std::ofstream(out / "gradcheck.txt") << text;
  std::cout << text;
  const bool ok = suite.passed(kGradientTolerance);
  std::cout << (ok ? "PASS" : "FAIL") << ": max relative error " << suite.max_relative_error() << " (tolerance "
            << kGradientTolerance << ")\n";
  return ok ? 0 : 1;
}

PriorRuleSet read_rules(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IngestionError("cannot open rules file '" + path.string() + "'");
  PriorRuleSet r;
  r.version = path.stem().string();
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.front() != '#') r.rules.push_back(line);
  }
  r.validate();
  return r;
}

std::string read_text_file(const fs::path& p) {
  std::ifstream in(p);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

int run_report(const Globals& g, bool prompt, const std::string& rules_file) {
  const RunConfig c = load_config(g);
  const fs::path out = prepare_out(g, c, c.run_dir / "report");
  if (prompt) {
    const auto rules = rules_file.empty() ? PriorRuleSet::defaults() : read_rules(rules_file);
    const auto text = build_prompt(rules);
    std::ofstream(out / "prompt.txt") << text;
    std::cout << text;
    return 0;
  }
  std::ostringstream rep;
  rep << "# Run report\n\n";
  if (fs::exists(c.manifest_path())) {
    rep << "## Dataset\n\n```\n" << format_summary(describe(load_manifest(c.manifest_path()))) << "```\n\n";
  }
  for (const char* dir : {"pretrain", "finetune"}) {
    for (Stage s : {Stage::pretrain_keypoint, Stage::pretrain_visual, Stage::pretrain_text, Stage::finetune_full}) {
      const auto path = c.run_dir / dir / (std::string(to_string(s)) + "_report.jsonl");
      if (fs::exists(path)) rep << "## " << to_string(s) << "\n\n```\n" << format_report(read_report(path)) << "```\n\n";
    }
  }
  if (fs::exists(c.run_dir / "evaluate" / "metrics.json")) {
    rep << "## Evaluation\n\n```\n" << read_text_file(c.run_dir / "evaluate" / "metrics.json") << "```\n\n";
  }
  if (fs::exists(c.run_dir / "ablate" / "ablation.txt")) {
    rep << "## Ablation\n\n```\n" << read_text_file(c.run_dir / "ablate" / "ablation.txt") << "```\n\n";
  }
  std::ofstream(out / "report.md") << rep.str();
  std::cout << rep.str();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trimodal hidden-emotion pipeline: synthetic data, two-stage training, voting inference"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  for (int i = 0; i < argc; ++i) g.command_line += (i ? " " : "") + std::string(argv[i]);
  app.add_option("--config", g.config, "YAML run configuration (default: built-in desk profile)")
      ->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "global seed, overrides the config");
  app.add_option("--workers", g.workers, "worker threads, overrides the config")->check(CLI::PositiveNumber);
  app.add_option("--out", g.out, "output directory (default: <run_dir>/<subcommand>)");

  int synth_count = 0;
  auto* synth = app.add_subcommand("synth", "generate a synthetic trimodal dataset");
  synth->add_option("--count", synth_count, "number of samples, overrides synth.sample_count");

  std::string manifest, raw_dir;
  bool dump = false;
  auto* featgen = app.add_subcommand("featgen", "build offset features for inspection, or normalize raw detections");
  featgen->add_option("--manifest", manifest, "dataset manifest (default: <data_dir>/manifest.jsonl)");
  featgen->add_option("--raw", raw_dir, "directory of raw pixel detection CSVs to normalize")
      ->check(CLI::ExistingDirectory);
  featgen->add_flag("--dump", dump, "also write per-group feature matrices as CSV");

  std::string branch;
  auto* pretrain = app.add_subcommand("pretrain", "stage 1: train one branch (or all) in isolation");
  pretrain->add_option("--branch", branch, "keypoint, visual, text, or all")
      ->required()
      ->check(CLI::IsMember({"keypoint", "visual", "text", "all"}));
  pretrain->add_option("--manifest", manifest, "labeled manifest (default: <data_dir>/manifest.jsonl)");

  std::string pretrained, responses, gold, val, pool;
  auto* finetune = app.add_subcommand("finetune", "stage 2: joint fine-tuning on gold plus pseudo-labeled records");
  finetune->add_option("--pretrained", pretrained, "pretrain output directory (default: <run_dir>/pretrain)");
  finetune->add_option("--responses", responses, "VLM response files for the pool (default: simulated labels)")
      ->check(CLI::ExistingDirectory);
  finetune->add_option("--gold", gold, "gold manifest (default: <pretrained>/gold.jsonl)");
  finetune->add_option("--val", val, "validation manifest (default: <pretrained>/val.jsonl)");
  finetune->add_option("--pool", pool, "pool manifest (default: <pretrained>/pool.jsonl)");

  std::string checkpoint;
  auto* infer = app.add_subcommand("infer", "voted predictions for every record of a manifest");
  infer->add_option("--checkpoint", checkpoint, "model checkpoint (default: <run_dir>/finetune/finetune_full.ckpt)");
  infer->add_option("--manifest", manifest, "manifest to predict (default: <data_dir>/manifest.jsonl)");

  auto* evaluate_cmd = app.add_subcommand("evaluate", "accuracy, confusion matrix, per-class precision and recall");
  evaluate_cmd->add_option("--checkpoint", checkpoint,
                           "model checkpoint (default: <run_dir>/finetune/finetune_full.ckpt)");
  evaluate_cmd->add_option("--manifest", manifest, "labeled manifest (default: <run_dir>/pretrain/val.jsonl)");

  std::string grid, offsets, strategies, seeds;
  double budget = -1.0;
  auto* ablate = app.add_subcommand("ablate", "encoder kind x offsets x strategy table");
  ablate->add_option("--grid", grid, "comma-separated encoder kinds (mlp,gcn,gat,gin)");
  ablate->add_option("--offsets", offsets, "comma-separated on/off");
  ablate->add_option("--strategies", strategies,
                     "comma-separated keypoint,direct,weak_sup,weak_sup+offsets,pretrain+weak_sup");
  ablate->add_option("--seeds", seeds, "comma-separated seeds");
  ablate->add_option("--budget", budget, "wall-clock budget in seconds (0 = unlimited)");
  ablate->add_option("--manifest", manifest, "labeled manifest (default: <data_dir>/manifest.jsonl)");

  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks; nonzero exit above 1e-4");

  bool prompt = false;
  std::string rules;
  auto* report = app.add_subcommand("report", "summarize a run directory, or emit the VLM prompt");
  report->add_flag("--prompt", prompt, "write the CoT + reflection prompt instead");
  report->add_option("--rules", rules, "prior rules file, one rule per line")->check(CLI::ExistingFile);

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth->parsed()) return run_synth(g, synth_count);
    if (featgen->parsed()) return run_featgen(g, manifest, raw_dir, dump);
    if (pretrain->parsed()) return run_pretrain(g, branch, manifest);
    if (finetune->parsed()) return run_finetune(g, pretrained, responses, gold, val, pool);
    if (infer->parsed()) return run_predict(g, checkpoint, manifest, false);
    if (evaluate_cmd->parsed()) return run_predict(g, checkpoint, manifest, true);
    if (ablate->parsed()) return run_ablate(g, grid, offsets, strategies, seeds, budget, manifest);
    if (gradcheck->parsed()) return run_gradcheck(g);
    if (report->parsed()) return run_report(g, prompt, rules);
  } catch (const ValidationError& e) {
    std::cerr << "validation error: " << e.what() << '\n';
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << '\n';
    return 2;
  } catch (const IngestionError& e) {
    std::cerr << "ingestion error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
