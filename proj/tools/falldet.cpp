// falldet: dataset preparation, feature extraction, experiments and the
// streaming sentinel behind one command.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "falldet/audio/manifest.hpp"
#include "falldet/audio/synth.hpp"
#include "falldet/augment/plan.hpp"
#include "falldet/error.hpp"
#include "falldet/experiments/ablation.hpp"
#include "falldet/experiments/evaluate.hpp"
#include "falldet/experiments/pipeline.hpp"
#include "falldet/features/cache.hpp"
#include "falldet/features/features.hpp"
#include "falldet/nn/checkpoint.hpp"
#include "falldet/runtime.hpp"
#include "falldet/sentinel/stream.hpp"

namespace fs = std::filesystem;
using namespace falldet;

namespace {

std::atomic<bool> g_stop{false};

void on_signal(int) { g_stop = true; }

struct FeatureArgs {
  std::string kind = "diff";
  int t_seg = 100, n_fft = 2048, hop = 1600, mels = 64;

  void add(CLI::App* app) {
    app->add_option("--features,--kind", kind, "raw | diff | logmel | combined")
        ->check(CLI::IsMember({"raw", "diff", "logmel", "combined"}));
    app->add_option("--t-seg", t_seg, "Segment length in ms")->check(CLI::PositiveNumber);
    app->add_option("--n-fft", n_fft, "STFT size");
    app->add_option("--hop", hop, "STFT hop in samples")->check(CLI::PositiveNumber);
    app->add_option("--mels", mels, "Number of mel bins")->check(CLI::PositiveNumber);
  }

  FeatureSpec spec() const {
    FeatureSpec s;
    s.kind = parse_feature_kind(kind);
    s.t_seg_ms = t_seg;
    s.n_fft = n_fft;
    s.hop = hop;
    s.n_mels = mels;
    return s;
  }
};

struct TrainArgs {
  int epochs = 10;
  std::size_t batch = 20;
  double lr = 1e-5;
  std::uint64_t seed = 2023;
  std::string weights = "auto";
  std::string log_path;
  bool quiet = false;

  void add(CLI::App* app) {
    app->add_option("--epochs", epochs)->check(CLI::NonNegativeNumber);
    app->add_option("--batch", batch)->check(CLI::PositiveNumber);
    app->add_option("--lr", lr)->check(CLI::PositiveNumber);
    app->add_option("--seed", seed);
    app->add_option("--weights", weights, "auto (inverse frequency) | none")->check(CLI::IsMember({"auto", "none"}));
    app->add_option("--log", log_path, "Per-epoch JSON lines");
    app->add_flag("--quiet", quiet, "No progress on stderr");
  }

  nn::TrainOptions options(std::ostream* log) const {
    nn::TrainOptions o;
    o.epochs = epochs;
    o.batch_size = batch;
    o.lr = lr;
    o.seed = seed;
    if (weights == "none") o.class_weights = nn::ClassWeights{1.0, 1.0};
    o.log = log;
    if (!quiet) {
      o.on_batch = [](int epoch, std::size_t b, std::size_t n) {
        if (b % 10 == 0 || b == n) std::cerr << "\repoch " << epoch << " batch " << b << "/" << n << std::flush;
        if (b == n) std::cerr << '\n';
      };
    }
    return o;
  }
};

void write_text(const fs::path& path, const std::string& text) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
}

nlohmann::json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  return nlohmann::json::parse(in);
}

Split parse_split_arg(const std::string& s) { return parse_split(s); }

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Audio fall detection: datasets, features, experiments, streaming sentinel"};
  app.require_subcommand(1);

  // ---------------------------------------------------------------- dataset
  auto* dataset = app.add_subcommand("dataset", "Corpus generation, manifests and augmentation");
  dataset->require_subcommand(1);

  std::string synth_spec, synth_out;
  std::uint64_t synth_seed = 2023;
  auto* synth = dataset->add_subcommand("synth", "Generate the procedural desk-scale corpus");
  synth->add_option("--spec", synth_spec, "JSON {seed, counts: {category: n}}; default is 92 clips");
  synth->add_option("--seed", synth_seed, "Seed when no spec file is given");
  synth->add_option("--out", synth_out)->required();

  std::string build_corpus, build_out;
  std::uint64_t build_seed = 2023;
  bool build_grouped = false;
  auto* build = dataset->add_subcommand("build", "Scan a corpus and write a split manifest");
  build->add_option("--corpus", build_corpus)->required()->check(CLI::ExistingDirectory);
  build->add_option("--seed", build_seed);
  build->add_option("--out", build_out)->required();
  build->add_flag("--group-by-source", build_grouped, "Keep augmentation lineages inside one split");

  std::string aug_manifest, aug_fall, aug_nofall, aug_out, aug_manifest_out;
  auto* augment = dataset->add_subcommand("augment", "Expand a corpus with augmentation plans");
  augment->add_option("--manifest", aug_manifest)->required()->check(CLI::ExistingFile);
  augment->add_option("--fall-plan", aug_fall)->required()->check(CLI::ExistingFile);
  augment->add_option("--nofall-plan", aug_nofall)->required()->check(CLI::ExistingFile);
  augment->add_option("--out", aug_out)->required();
  augment->add_option("--manifest-out", aug_manifest_out, "Default: <out>/manifest.jsonl");

  std::string plans_out;
  std::uint64_t plans_seed = 2023;
  auto* plans = dataset->add_subcommand("plans", "Write the default 14- and 100-entry plans");
  plans->add_option("--out", plans_out)->required();
  plans->add_option("--seed", plans_seed);

  // --------------------------------------------------------------- features
  auto* features = app.add_subcommand("features", "Feature extraction");
  features->require_subcommand(1);
  std::string fx_manifest, fx_out, fx_split;
  FeatureArgs fx_args;
  auto* extract = features->add_subcommand("extract", "Write one feature file per manifest entry");
  extract->add_option("--manifest", fx_manifest)->required()->check(CLI::ExistingFile);
  extract->add_option("--out", fx_out)->required();
  extract->add_option("--split", fx_split, "train | val | test (default: all)");
  fx_args.add(extract);

  // -------------------------------------------------------------------- exp
  auto* exp = app.add_subcommand("exp", "Training, evaluation, baselines and ablations");
  exp->require_subcommand(1);

  std::string tr_config = "B", tr_manifest, tr_out;
  int tr_heads = 0, tr_layers = 0;
  FeatureArgs tr_features;
  TrainArgs tr_args;
  auto* train = exp->add_subcommand("train", "Train a Transformer and save a checkpoint");
  train->add_option("--config", tr_config)->check(CLI::IsMember({"A", "B", "C"}));
  train->add_option("--manifest", tr_manifest)->required()->check(CLI::ExistingFile);
  train->add_option("--out", tr_out, "Checkpoint path")->required();
  train->add_option("--heads", tr_heads, "Override the number of attention heads");
  train->add_option("--layers", tr_layers, "Override the number of encoder layers");
  tr_features.add(train);
  tr_args.add(train);

  std::string ev_checkpoint, ev_manifest, ev_split = "test", ev_out;
  auto* evaluate = exp->add_subcommand("evaluate", "Evaluate a checkpoint on a split");
  evaluate->add_option("--checkpoint", ev_checkpoint)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--manifest", ev_manifest)->required()->check(CLI::ExistingFile);
  evaluate->add_option("--split", ev_split)->check(CLI::IsMember({"train", "val", "test"}));
  evaluate->add_option("--out", ev_out, "Report JSON (default: stdout)");

  std::string pw_checkpoint, pw_manifest, pw_out;
  auto* pairwise = exp->add_subcommand("pairwise", "Fall recall for every (fall, no-fall) category pair");
  pairwise->add_option("--checkpoint", pw_checkpoint)->required()->check(CLI::ExistingFile);
  pairwise->add_option("--manifest", pw_manifest)->required()->check(CLI::ExistingFile);
  pairwise->add_option("--out", pw_out, "Delimited table (default: stdout)");

  std::string ab_axis, ab_manifest, ab_out, ab_cell, ab_kind = "diff";
  TrainArgs ab_args;
  auto* ablate = exp->add_subcommand("ablate", "Run one ablation grid");
  ablate->add_option("--axis", ab_axis)->required()->check(
      CLI::IsMember({"heads-layers", "mels", "hop", "tseg", "combined"}));
  ablate->add_option("--manifest", ab_manifest)->required()->check(CLI::ExistingFile);
  ablate->add_option("--out", ab_out, "Output directory")->required();
  ablate->add_option("--cell", ab_cell, "Run only this setting, e.g. heads=6;layers=3");
  ablate->add_option("--features", ab_kind, "Feature family for heads-layers")
      ->check(CLI::IsMember({"raw", "diff", "logmel", "combined"}));
  ab_args.add(ablate);

  std::string bl_model, bl_manifest, bl_out;
  FeatureArgs bl_features;
  TrainArgs bl_args;
  double bl_c = 1.0, bl_gamma = 0.0;
  auto* baseline = exp->add_subcommand("baseline", "Dense network or SVM baseline");
  baseline->add_option("--model", bl_model)->required()->check(CLI::IsMember({"dnn", "svm-linear", "svm-rbf"}));
  baseline->add_option("--manifest", bl_manifest)->required()->check(CLI::ExistingFile);
  baseline->add_option("--out", bl_out, "Report JSON (default: stdout)");
  baseline->add_option("--c", bl_c, "SVM box constraint");
  baseline->add_option("--gamma", bl_gamma, "RBF gamma (0: 1 / features)");
  bl_features.add(baseline);
  bl_args.add(baseline);

  // --------------------------------------------------------------- sentinel
  auto* sentinel = app.add_subcommand("sentinel", "Streaming inference daemon");
  sentinel->require_subcommand(1);
  std::string sn_checkpoint, sn_input = "mic";
  sentinel::SentinelOptions sn_opt;
  sentinel::EndpointConfig sn_endpoint;
  bool sn_drop = false;
  auto* run = sentinel->add_subcommand("run", "Classify a live or replayed stream and dispatch alerts");
  run->add_option("--checkpoint", sn_checkpoint)->required()->check(CLI::ExistingFile);
  run->add_option("--input", sn_input, "mic (16 kHz s16le on stdin) | file:PATH");
  run->add_option("--window", sn_opt.window_s, "Window length in seconds")->check(CLI::PositiveNumber);
  run->add_option("--stride", sn_opt.stride_s, "Window stride in seconds")->check(CLI::PositiveNumber);
  run->add_option("--threshold", sn_opt.threshold)->check(CLI::Range(0.0, 1.0));
  run->add_option("--refractory", sn_opt.refractory_s, "Seconds between alerts")->check(CLI::NonNegativeNumber);
  run->add_option("--alert-url", sn_endpoint.url, "http:// webhook (env FALLDET_ALERT_URL)");
  run->add_option("--alert-cmd", sn_endpoint.command, "Shell command fed the payload on stdin");
  run->add_option("--device-id", sn_endpoint.device_id, "env FALLDET_DEVICE_ID");
  run->add_flag("--drop-oldest", sn_drop, "Never block capture (default for mic)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*synth) {
      SynthSpec spec = synth_spec.empty() ? default_synth_spec(synth_seed) : synth_spec_from_json(read_json(synth_spec));
      const auto files = synth_corpus(spec, synth_out);
      std::cout << "wrote " << files.size() << " clips to " << synth_out << '\n';
    } else if (*build) {
      BuildOptions o;
      o.group_by_source = build_grouped;
      const DatasetManifest m = build_manifest(build_corpus, build_seed, o);
      write_manifest(build_out, m);
      std::cout << "entries " << m.entries.size() << " max_len " << m.max_len_samples << '\n';
      for (Split s : {Split::Train, Split::Val, Split::Test}) {
        std::cout << to_string(s) << ": fall " << m.count(s, Label::Fall) << " nofall " << m.count(s, Label::NoFall)
                  << '\n';
      }
    } else if (*augment) {
      const DatasetManifest src = read_manifest(aug_manifest);
      augment::ExpandOptions o;
      o.progress = [](std::size_t done, std::size_t total) {
        std::cerr << "\rclip " << done << "/" << total << std::flush;
        if (done == total) std::cerr << '\n';
      };
      const DatasetManifest out =
          augment::expand_corpus(src, augment::read_plan(aug_fall), augment::read_plan(aug_nofall), aug_out, o);
      write_manifest(aug_manifest_out.empty() ? fs::path(aug_out) / "manifest.jsonl" : fs::path(aug_manifest_out), out);
      std::cout << "fall " << out.count(Label::Fall) << " nofall " << out.count(Label::NoFall) << " total "
                << out.entries.size() << '\n';
    } else if (*plans) {
      fs::create_directories(plans_out);
      augment::write_plan(fs::path(plans_out) / "fall_plan.jsonl", augment::default_fall_plan(plans_seed));
      augment::write_plan(fs::path(plans_out) / "nofall_plan.jsonl", augment::default_nofall_plan(plans_seed));
      std::cout << "wrote fall_plan.jsonl and nofall_plan.jsonl to " << plans_out << '\n';
    } else if (*extract) {
      const DatasetManifest m = read_manifest(fx_manifest);
      const FeatureSpec spec = fx_args.spec();
      std::size_t n = 0;
      for (const auto& e : m.entries) {
        if (!fx_split.empty() && e.split != parse_split_arg(fx_split)) continue;
        const FeatureMatrix x = extract_features(pad_to_length(load_clip(e), m.max_len_samples), spec);
        const fs::path out = fs::path(fx_out) / std::to_string(e.category_id) /
                             (fs::path(e.path).stem().string() + ".fdf");
        fs::create_directories(out.parent_path());
        write_feature_file(out, x);
        if (n++ == 0) std::cout << "shape " << x.shape_string() << '\n';
      }
      std::cout << "wrote " << n << " feature files to " << fx_out << '\n';
    } else if (*train) {
      const DatasetManifest m = read_manifest(tr_manifest);
      const FeatureSpec spec = tr_features.spec();
      std::ofstream log_file;
      if (!tr_args.log_path.empty()) log_file.open(tr_args.log_path);
      const auto sources = exp::manifest_sources(m)(spec);
      auto trained = exp::train_transformer(sources, tr_config, spec, tr_args.options(log_file ? &log_file : nullptr),
                                            [&](nn::ModelConfig& c) {
                                              if (tr_heads > 0) c.n_heads = tr_heads;
                                              if (tr_layers > 0) c.n_layers = tr_layers;
                                            });
      trained.save(tr_out);
      for (const auto& e : trained.result.epochs) {
        std::cout << "epoch " << e.epoch << " train_acc " << e.train_accuracy << " val_acc " << e.val_accuracy
                  << '\n';
      }
      const exp::EvalReport r = exp::evaluate(trained.model, *sources.test);
      std::cout << exp::to_json(r).dump(2) << '\n';
    } else if (*evaluate) {
      auto loaded = nn::load_checkpoint<float>(ev_checkpoint);
      const DatasetManifest m = read_manifest(ev_manifest);
      nn::ManifestSource src(m, parse_split(ev_split), loaded.features, loaded.target_len);
      const auto preds = exp::predict_all(loaded.model, src);
      exp::EvalReport r = exp::report_from(preds);
      try {
        r.per_pair_recall = exp::pair_recalls(exp::pairwise_from(preds));
      } catch (const MissingCategory&) {
      }
      const std::string text = exp::to_json(r).dump(2) + "\n";
      if (ev_out.empty()) std::cout << text;
      else write_text(ev_out, text);
    } else if (*pairwise) {
      auto loaded = nn::load_checkpoint<float>(pw_checkpoint);
      const DatasetManifest m = read_manifest(pw_manifest);
      nn::ManifestSource src(m, Split::Test, loaded.features, loaded.target_len);
      const auto stats = exp::pairwise_analysis(loaded.model, src);
      std::string text = "fall_category,nofall_category,recall,precision,accuracy,n_fall,n_nofall\n";
      for (const auto& [k, v] : stats) {
        text += std::to_string(k.first) + "," + std::to_string(k.second) + "," + std::to_string(v.recall) + "," +
                std::to_string(v.precision) + "," + std::to_string(v.accuracy) + "," + std::to_string(v.n_fall) +
                "," + std::to_string(v.n_nofall) + "\n";
      }
      if (pw_out.empty()) std::cout << text;
      else write_text(pw_out, text);
    } else if (*ablate) {
      const DatasetManifest m = read_manifest(ab_manifest);
      const auto axis = exp::parse_axis(ab_axis);
      exp::AblationOptions o;
      o.train = ab_args.options(nullptr);
      if (!ab_cell.empty()) o.only_cell = ab_cell;
      o.progress = &std::cerr;
      const auto cells = exp::ablation_cells(axis, parse_feature_kind(ab_kind));
      const auto table = exp::run_ablation(axis, cells, exp::manifest_sources(m), o);
      if (table.rows.empty()) throw InvalidConfig("no cell matches '" + ab_cell + "'");
      std::string stem = ab_axis;
      if (!ab_cell.empty()) {
        stem += "_" + ab_cell;
        for (char& c : stem)
          if (c == ';' || c == '=') c = '_';
      }
      write_text(fs::path(ab_out) / (stem + "_table.csv"), exp::table_csv(table));
      write_text(fs::path(ab_out) / (stem + "_curves.csv"), exp::curves_csv(table));
      std::cout << exp::table_csv(table);
    } else if (*baseline) {
      const DatasetManifest m = read_manifest(bl_manifest);
      const auto sources = exp::manifest_sources(m)(bl_features.spec());
      nlohmann::json j;
      if (bl_model == "dnn") {
        j = exp::to_json(exp::baseline_dnn(sources, bl_args.options(nullptr)));
      } else {
        exp::SvmOptions o;
        o.kernel = bl_model == "svm-rbf" ? exp::Kernel::Rbf : exp::Kernel::Linear;
        o.c = bl_c;
        o.gamma = bl_gamma;
        const auto r = exp::baseline_svm(sources, o);
        j = exp::to_json(r.report);
        j["converged"] = r.converged;
        j["support_vectors"] = r.support_vectors;
        if (!r.converged) std::cerr << "warning: SMO stopped before convergence (NonConvergence)\n";
      }
      const std::string text = j.dump(2) + "\n";
      if (bl_out.empty()) std::cout << text;
      else write_text(bl_out, text);
    } else if (*run) {
      std::signal(SIGINT, on_signal);
      std::signal(SIGTERM, on_signal);
      auto classifier = sentinel::WindowClassifier::from_checkpoint(sn_checkpoint);
      const auto endpoint = sentinel::apply_env_overrides(sn_endpoint);
      sn_opt.device_id = endpoint.device_id;
      auto transport = sentinel::make_transport(endpoint);
      std::unique_ptr<sentinel::AudioSource> source;
      if (sn_input == "mic") {
        source = std::make_unique<sentinel::PcmStreamSource>(std::cin);
        sn_opt.capture_overflow = sentinel::Overflow::DropOldest;
      } else if (sn_input.rfind("file:", 0) == 0) {
        source = std::make_unique<sentinel::FileSource>(fs::path(sn_input.substr(5)));
        if (sn_drop) sn_opt.capture_overflow = sentinel::Overflow::DropOldest;
      } else {
        throw InvalidConfig("--input must be mic or file:PATH");
      }
      const auto stats = sentinel::run_sentinel(*source, classifier, transport.get(), sn_opt, std::cout, &g_stop);
      std::cout << nlohmann::json{{"type", "summary"},
                                  {"windows", stats.windows.size()},
                                  {"sent", stats.sent},
                                  {"failed", stats.failed},
                                  {"suppressed", stats.suppressed},
                                  {"dropped_chunks", stats.dropped_chunks},
                                  {"underruns", stats.underruns}}
                       .dump()
                << '\n';
    }
  } catch (const falldet::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
