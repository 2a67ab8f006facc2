#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include "hakw/augment.hpp"
#include "hakw/config.hpp"
#include "hakw/corpus.hpp"
#include "hakw/dataset.hpp"
#include "hakw/deploy.hpp"
#include "hakw/error.hpp"
#include "hakw/features.hpp"
#include "hakw/nn.hpp"
#include "hakw/service.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace hakw;

namespace {

// Validation accuracies reported for the full-scale datasets, carried in eval reports for comparison.
const json kReferenceAccuracies = {
    {"mswc", 0.781}, {"local", 0.368}, {"combined", 0.718}, {"finetuned", 0.367}};

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  unsigned jobs = 1;
  std::string data_dir;
};

class UsageError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

PipelineConfig load_config(const Globals& g) {
  PipelineConfig cfg = g.config.empty() ? PipelineConfig{} : load_pipeline_config(g.config);
  if (g.seed) {
    cfg.train.seed = *g.seed;
    cfg.augment.seed = *g.seed;
  }
  return cfg;
}

fs::path data_root(const Globals& g) { return g.data_dir.empty() ? fs::path(".") : fs::path(g.data_dir); }

void emit_json(const json& j, const std::string& out) {
  if (out.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  const fs::path p(out);
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
  std::ofstream f(p);
  if (!f) throw Error(Errc::Io, "cannot write " + out);
  f << j.dump(2) << "\n";
}

json eval_json(const EvalReport& r) {
  return {{"accuracy", r.accuracy}, {"loss", r.loss}, {"total", r.total}, {"confusion", r.confusion}};
}

json train_report_json(const TrainReport& r, const ModelArtifact& a, std::size_t n_train, std::size_t n_val) {
  json history = json::array();
  for (const auto& e : r.history) {
    history.push_back({{"epoch", e.epoch},
                       {"train_loss", e.train_loss},
                       {"train_accuracy", e.train_accuracy},
                       {"val_loss", e.val_loss},
                       {"val_accuracy", e.val_accuracy}});
  }
  return {{"arch", std::string(to_string(a.model.arch))},
          {"feature_kind", std::string(to_string(a.model.feature_kind))},
          {"labels", a.labels},
          {"train_samples", n_train},
          {"val_samples", n_val},
          {"history", history},
          {"stopped_epoch", r.stopped_epoch},
          {"best_epoch", r.best_epoch},
          {"best_val_accuracy", r.best_val_accuracy},
          {"validation", eval_json(r.validation)}};
}

DatasetOptions dataset_options(const Globals& g, FeatureKind kind, const FeatureConfig& features,
                               const std::string& cache_dir) {
  DatasetOptions o;
  o.kind = kind;
  o.features = features;
  o.data_root = data_root(g);
  o.jobs = g.jobs;
  if (!cache_dir.empty()) o.cache_dir = fs::path(cache_dir);
  return o;
}

Split parse_split(const std::string& s) {
  const Split split = split_from_string(s);
  if (split != Split::Train && split != Split::Val && split != Split::Test) {
    throw UsageError("--split must be train, val or test");
  }
  return split;
}

Tensor calibration_batch(const LabeledFeatures& data, std::size_t limit) {
  const std::size_t n = std::min(limit, data.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i * data.size() / n;
  return data.batch(idx);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Kinyarwanda keyword-spotting toolkit"};
  app.require_subcommand(1);
  Globals g;
  if (const char* env = std::getenv("HAKW_DATA_DIR")) g.data_dir = env;
  app.add_option("--config", g.config, "Pipeline config (JSON); flags override it")->check(CLI::ExistingFile);
  app.add_option("--seed", g.seed, "Seed for every random choice");
  app.add_option("--jobs", g.jobs, "Worker thread cap")->check(CLI::Range(1u, 1024u));
  app.add_option("--data-dir", g.data_dir, "Data root for manifest paths (default: $HAKW_DATA_DIR or .)");

  // ingest
  auto* ingest_cmd = app.add_subcommand("ingest", "Build a manifest from an MSWC, GSC or local clip tree");
  std::string ingest_source, ingest_root, ingest_out;
  bool unmapped_as_unknown = false;
  ingest_cmd->add_option("--source", ingest_source, "Layout of the tree")
      ->required()
      ->check(CLI::IsMember({"mswc", "gsc", "local"}));
  ingest_cmd->add_option("--root", ingest_root, "Root of the clip tree")->required();
  ingest_cmd->add_option("--out", ingest_out, "Manifest to write")->required();
  ingest_cmd->add_flag("--unmapped-as-unknown", unmapped_as_unknown, "Label unmapped word folders _unknown_");

  // clean
  auto* clean_cmd = app.add_subcommand("clean", "Run QC on every clip and exclude flagged records");
  std::string clean_in, clean_out;
  bool clean_repair = false;
  clean_cmd->add_option("--manifest", clean_in, "Input manifest")->required();
  clean_cmd->add_option("--out", clean_out, "Output manifest")->required();
  clean_cmd->add_flag("--repair", clean_repair, "Rewrite WAVs whose RIFF preamble is damaged");

  // split
  auto* split_cmd = app.add_subcommand("split", "Speaker-disjoint train/val/test assignment");
  std::string split_in, split_out;
  std::vector<double> ratios{0.8, 0.1, 0.1};
  split_cmd->add_option("--manifest", split_in, "Input manifest")->required();
  split_cmd->add_option("--out", split_out, "Output manifest")->required();
  split_cmd->add_option("--ratios", ratios, "train val test fractions")->expected(3)->delimiter(',');

  // augment
  auto* augment_cmd = app.add_subcommand("augment", "Add augmented copies of train records");
  std::string augment_in, augment_out;
  std::optional<double> augment_fraction;
  bool no_materialize = false;
  augment_cmd->add_option("--manifest", augment_in, "Input manifest")->required();
  augment_cmd->add_option("--out", augment_out, "Output manifest")->required();
  augment_cmd->add_option("--fraction", augment_fraction, "Share of train records to augment (default 0.8)");
  augment_cmd->add_flag("--no-materialize", no_materialize, "Record augmentations without writing WAVs");

  // featurize
  auto* featurize_cmd = app.add_subcommand("featurize", "Compute and cache features for a manifest");
  std::string featurize_in, featurize_kind = "mfcc", featurize_cache, featurize_split;
  featurize_cmd->add_option("--manifest", featurize_in, "Input manifest")->required();
  featurize_cmd->add_option("--features", featurize_kind, "spectrogram, logmel or mfcc")
      ->check(CLI::IsMember({"spectrogram", "logmel", "mfcc"}));
  featurize_cmd->add_option("--cache-dir", featurize_cache, "Cache directory")->required();
  featurize_cmd->add_option("--split", featurize_split, "Only this split (train, val, test)");

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a CNN or LSTM classifier");
  std::string train_arch, train_features, train_manifest, train_out, train_report, train_cache;
  std::optional<int> train_epochs, train_patience;
  std::optional<std::size_t> train_batch, train_top_n;
  std::optional<double> train_lr;
  train_cmd->add_option("--arch", train_arch, "cnn or lstm")->check(CLI::IsMember({"cnn", "lstm"}));
  train_cmd->add_option("--features", train_features, "Front end (default: spectrogram for cnn, mfcc for lstm)")
      ->check(CLI::IsMember({"spectrogram", "logmel", "mfcc"}));
  train_cmd->add_option("--manifest", train_manifest, "Split manifest")->required();
  train_cmd->add_option("--out", train_out, "Model artifact to write")->required();
  train_cmd->add_option("--report", train_report, "Training report (JSON)");
  train_cmd->add_option("--cache-dir", train_cache, "Feature cache directory");
  train_cmd->add_option("--epochs", train_epochs, "Maximum epochs");
  train_cmd->add_option("--patience", train_patience, "Early-stopping patience");
  train_cmd->add_option("--batch-size", train_batch, "Mini-batch size");
  train_cmd->add_option("--lr", train_lr, "Adam learning rate");
  train_cmd->add_option("--top-n", train_top_n, "Train only on the n most frequent labels");

  // finetune
  auto* finetune_cmd = app.add_subcommand("finetune", "Continue training a pretrained model on new data");
  std::string ft_model, ft_manifest, ft_out, ft_report, ft_cache;
  std::optional<int> ft_epochs;
  std::optional<double> ft_lr;
  bool ft_freeze = false;
  finetune_cmd->add_option("--model", ft_model, "Pretrained artifact")->required();
  finetune_cmd->add_option("--manifest", ft_manifest, "Split manifest of the new data")->required();
  finetune_cmd->add_option("--out", ft_out, "Model artifact to write")->required();
  finetune_cmd->add_option("--report", ft_report, "Training report (JSON)");
  finetune_cmd->add_option("--cache-dir", ft_cache, "Feature cache directory");
  finetune_cmd->add_option("--epochs", ft_epochs, "Maximum epochs");
  finetune_cmd->add_option("--lr", ft_lr, "Fine-tune learning rate");
  finetune_cmd->add_flag("--freeze", ft_freeze, "Update only the output layer");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Accuracy and confusion matrix on one split");
  std::string eval_model, eval_manifest, eval_split = "val", eval_out, eval_cache;
  eval_cmd->add_option("--model", eval_model, "Model artifact (float or int8)")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Split manifest")->required();
  eval_cmd->add_option("--split", eval_split, "train, val or test");
  eval_cmd->add_option("--out", eval_out, "Report path (JSON; stdout when omitted)");
  eval_cmd->add_option("--cache-dir", eval_cache, "Feature cache directory");

  // quantize
  auto* quantize_cmd = app.add_subcommand("quantize", "Post-training int8 quantization");
  std::string q_model, q_manifest, q_out, q_report, q_cache;
  std::size_t q_calibration = 256;
  quantize_cmd->add_option("--model", q_model, "Float artifact")->required();
  quantize_cmd->add_option("--manifest", q_manifest, "Manifest whose train split calibrates activations")
      ->required();
  quantize_cmd->add_option("--out", q_out, "Quantized artifact to write")->required();
  quantize_cmd->add_option("--calibration", q_calibration, "Calibration clip count")->check(CLI::PositiveNumber);
  quantize_cmd->add_option("--report", q_report, "Size report (JSON)");
  quantize_cmd->add_option("--cache-dir", q_cache, "Feature cache directory");

  // listen
  auto* listen_cmd = app.add_subcommand("listen", "Streaming keyword detection over a WAV file or stdin PCM");
  std::string l_model, l_wav;
  std::optional<int> l_rate;
  std::optional<double> l_threshold, l_window, l_hop, l_refractory;
  std::optional<int> l_smooth;
  listen_cmd->add_option("--model", l_model, "Model artifact")->required();
  listen_cmd->add_option("--wav", l_wav, "WAV file; omit to read 16-bit LE mono PCM from stdin");
  listen_cmd->add_option("--rate", l_rate, "Sample rate of stdin PCM (default: model rate)");
  listen_cmd->add_option("--threshold", l_threshold, "Posterior threshold");
  listen_cmd->add_option("--window-ms", l_window, "Analysis window");
  listen_cmd->add_option("--hop-ms", l_hop, "Hop between evaluations");
  listen_cmd->add_option("--smooth-k", l_smooth, "Windows averaged");
  listen_cmd->add_option("--refractory-ms", l_refractory, "Minimum spacing of same-label events");

  // words
  auto* words_cmd = app.add_subcommand("words", "List the 23 keywords and the reserved labels");
  bool words_json = false;
  words_cmd->add_flag("--json", words_json, "Print JSON");

  // stats
  auto* stats_cmd = app.add_subcommand("stats", "Per-word counts of a manifest");
  std::string stats_manifest, stats_out;
  stats_cmd->add_option("--manifest", stats_manifest, "Manifest")->required();
  stats_cmd->add_option("--out", stats_out, "Report path (JSON; stdout when omitted)");

  // serve
  auto* serve_cmd = app.add_subcommand("serve", "Run the collection HTTP service");
  int serve_port = 8080;
  std::string serve_host = "127.0.0.1", serve_cors = "*";
  serve_cmd->add_option("--port", serve_port, "TCP port")->check(CLI::Range(0, 65535));
  serve_cmd->add_option("--host", serve_host, "Bind address");
  serve_cmd->add_option("--cors-origin", serve_cors, "Allowed browser origin");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    const PipelineConfig cfg = load_config(g);
    const fs::path root = data_root(g);

    if (ingest_cmd->parsed()) {
      IngestOptions opts;
      opts.unmapped_as_unknown = unmapped_as_unknown;
      opts.jobs = g.jobs;
      if (!g.data_dir.empty()) opts.data_root = root;
      const IngestReport r = ingest(ingest_root, source_from_string(ingest_source), builtin_labelset(), opts);
      write_manifest(ingest_out, r.manifest);
      emit_json({{"records", r.manifest.records.size()},
                 {"skipped_directories", r.skipped_directories},
                 {"skipped_names", r.skipped_names},
                 {"unreadable_files", r.unreadable_files}},
                "");
    } else if (clean_cmd->parsed()) {
      Manifest m = read_manifest(clean_in);
      std::map<std::string, std::size_t> flag_counts;
      std::size_t excluded = 0, repaired = 0;
      for (auto& r : m.records) {
        const fs::path path = root / r.path;
        Bytes bytes = read_file(path);
        AudioClip clip;
        try {
          clip = decode_wav(bytes);
        } catch (const Error& e) {
          if (e.code() != Errc::MalformedHeader) throw;
          bytes = repair_riff(bytes);
          clip = decode_wav(bytes);
          if (clean_repair) {
            write_file(path, bytes);
            r.checksum = sha256_hex(bytes);
            ++repaired;
          }
        }
        r.qc_flags = validate_record(clip, r.label, cfg.qc);
        r.duration_ms = clip.duration_ms();
        r.sample_rate = clip.sample_rate();
        for (QcFlag f : r.qc_flags) ++flag_counts[std::string(to_string(f))];
        const bool override_qc = r.extra.value("qc_override", false);
        if (!r.qc_flags.empty() && !override_qc && r.split != Split::Excluded) {
          r.split = Split::Excluded;
          ++excluded;
        }
      }
      write_manifest(clean_out, m);
      emit_json({{"records", m.records.size()}, {"newly_excluded", excluded}, {"repaired", repaired},
                 {"flags", flag_counts}},
                "");
    } else if (split_cmd->parsed()) {
      const SplitOutcome out =
          split_manifest(read_manifest(split_in), SplitRatios{ratios[0], ratios[1], ratios[2]}, cfg.train.seed);
      for (const auto& w : out.warnings) std::cerr << "warning: " << w << "\n";
      write_manifest(split_out, out.manifest);
      std::map<std::string, std::size_t> counts;
      for (const auto& r : out.manifest.records) ++counts[std::string(to_string(r.split))];
      emit_json({{"splits", counts}, {"warnings", out.warnings}}, "");
    } else if (augment_cmd->parsed()) {
      AugmentPolicy policy = cfg.augment;
      if (augment_fraction) policy.fraction = *augment_fraction;
      Manifest m = augment_manifest(read_manifest(augment_in), policy);
      const std::size_t written = no_materialize ? 0 : materialize_augmentations(m, root);
      write_manifest(augment_out, m);
      std::size_t added = 0;
      for (const auto& r : m.records) added += r.parent ? 1 : 0;
      emit_json({{"records", m.records.size()}, {"augmented", added}, {"files_written", written}}, "");
    } else if (featurize_cmd->parsed()) {
      const Manifest m = read_manifest(featurize_in);
      const DatasetOptions opts =
          dataset_options(g, feature_kind_from_string(featurize_kind), cfg.features, featurize_cache);
      const auto classes = class_list(m);
      std::size_t total = 0;
      for (Split s : {Split::Train, Split::Val, Split::Test}) {
        if (!featurize_split.empty() && parse_split(featurize_split) != s) continue;
        total += build_dataset(m, s, classes, opts).size();
      }
      emit_json({{"featurized", total}, {"cache_dir", featurize_cache}}, "");
    } else if (train_cmd->parsed()) {
      ModelConfig model = cfg.model;
      TrainConfig tc = cfg.train;
      if (!train_arch.empty()) {
        model.arch = arch_from_string(train_arch);
        if (train_features.empty()) {
          model.feature_kind = model.arch == Arch::Cnn ? FeatureKind::Spectrogram : FeatureKind::Mfcc;
        }
      }
      if (!train_features.empty()) model.feature_kind = feature_kind_from_string(train_features);
      if (train_epochs) tc.max_epochs = *train_epochs;
      if (train_patience) tc.early_stop_patience = *train_patience;
      if (train_batch) tc.batch_size = *train_batch;
      if (train_lr) tc.adam.lr = *train_lr;

      const Manifest m = read_manifest(train_manifest);
      Manifest train_only;
      for (const auto& r : m.records) {
        if (r.split == Split::Train) train_only.records.push_back(r);
      }
      const auto classes = class_list(train_only, train_top_n);
      if (classes.size() < 2) throw Error(Errc::EmptyClass, "train split has fewer than 2 labels");
      const auto [frames, coeffs] = feature_shape(model.feature_kind, cfg.features);
      model.input_frames = frames;
      model.input_coeffs = coeffs;
      model.classes = classes.size();
      const DatasetOptions opts = dataset_options(g, model.feature_kind, cfg.features, train_cache);
      const LabeledFeatures train_set = build_dataset(m, Split::Train, classes, opts);
      const LabeledFeatures val_set = build_dataset(m, Split::Val, classes, opts);
      const TrainResult result = train(model, tc, train_set, val_set, classes);
      save_model(result.artifact, train_out);
      const json report = train_report_json(result.report, result.artifact, train_set.size(), val_set.size());
      if (!train_report.empty()) emit_json(report, train_report);
      std::cerr << "stopped at epoch " << result.report.stopped_epoch << ", best epoch " << result.report.best_epoch
                << ", val accuracy " << result.report.best_val_accuracy << "\n";
    } else if (finetune_cmd->parsed()) {
      const ModelArtifact pre = load_model(ft_model);
      TrainConfig tc = cfg.train;
      tc.finetune.enabled = true;
      if (ft_epochs) tc.max_epochs = *ft_epochs;
      if (ft_lr) tc.finetune.lr = *ft_lr;
      if (ft_freeze) tc.finetune.freeze_feature_layers = true;
      const Manifest m = read_manifest(ft_manifest);
      Manifest train_only;
      for (const auto& r : m.records) {
        if (r.split == Split::Train) train_only.records.push_back(r);
      }
      const auto classes = class_list(train_only);
      const DatasetOptions opts = dataset_options(g, pre.model.feature_kind, pre.features, ft_cache);
      const LabeledFeatures train_set = build_dataset(m, Split::Train, classes, opts);
      const LabeledFeatures val_set = build_dataset(m, Split::Val, classes, opts);
      const TrainResult result = fine_tune(pre, tc, train_set, val_set, classes);
      save_model(result.artifact, ft_out);
      const json report = train_report_json(result.report, result.artifact, train_set.size(), val_set.size());
      if (!ft_report.empty()) emit_json(report, ft_report);
    } else if (eval_cmd->parsed()) {
      const Split split = parse_split(eval_split);
      const Classifier model(load_model(eval_model));
      const ModelArtifact& a = model.artifact();
      const Manifest m = read_manifest(eval_manifest);
      const DatasetOptions opts = dataset_options(g, a.model.feature_kind, a.features, eval_cache);
      const LabeledFeatures data = build_dataset(m, split, a.labels, opts);
      std::size_t skipped = 0;
      for (const auto& r : m.records) {
        if (r.split == split && std::find(a.labels.begin(), a.labels.end(), r.label) == a.labels.end()) ++skipped;
      }
      const EvalReport r = model.evaluate(data);
      json out = eval_json(r);
      out["split"] = eval_split;
      out["labels"] = a.labels;
      out["quantized"] = a.quantized;
      out["skipped_unknown_label"] = skipped;
      out["reference_accuracies"] = kReferenceAccuracies;
      emit_json(out, eval_out);
    } else if (quantize_cmd->parsed()) {
      const ModelArtifact a = load_model(q_model);
      const Manifest m = read_manifest(q_manifest);
      const DatasetOptions opts = dataset_options(g, a.model.feature_kind, a.features, q_cache);
      const LabeledFeatures data = build_dataset(m, Split::Train, a.labels, opts);
      const ModelArtifact q = quantize_int8(a, calibration_batch(data, q_calibration));
      save_model(q, q_out);
      const auto float_bytes = fs::file_size(q_model);
      const auto int8_bytes = fs::file_size(q_out);
      const json report = {{"float_bytes", float_bytes},
                           {"int8_bytes", int8_bytes},
                           {"ratio", static_cast<double>(float_bytes) / static_cast<double>(int8_bytes)},
                           {"calibration_samples", std::min(q_calibration, data.size())}};
      emit_json(report, q_report);
    } else if (listen_cmd->parsed()) {
      auto model = std::make_shared<const Classifier>(load_model(l_model));
      DetectorConfig dc = cfg.detector;
      if (l_threshold) dc.threshold = *l_threshold;
      if (l_window) dc.window_ms = *l_window;
      if (l_hop) dc.hop_ms = *l_hop;
      if (l_smooth) dc.smooth_k = *l_smooth;
      if (l_refractory) dc.refractory_ms = *l_refractory;
      auto print = [&](const std::vector<DetectionEvent>& events) {
        for (const auto& e : events) {
          std::cout << json{{"label", e.label},
                            {"time_ms", e.time_ms},
                            {"confidence", e.confidence},
                            {"wake", e.label == dc.wake_label}}
                           .dump()
                    << std::endl;
        }
      };
      if (!l_wav.empty()) {
        print(stream_detect(load_wav(l_wav), model, dc));
      } else {
        StreamDetector det(model, dc, l_rate.value_or(model->artifact().features.sample_rate));
        std::vector<char> buf(4096 * 2);
        std::vector<std::int16_t> pcm;
        std::string carry;
        while (std::cin.read(buf.data(), static_cast<std::streamsize>(buf.size())) || std::cin.gcount() > 0) {
          carry.append(buf.data(), static_cast<std::size_t>(std::cin.gcount()));
          const std::size_t n = carry.size() / 2;
          pcm.resize(n);
          for (std::size_t i = 0; i < n; ++i) {
            const auto lo = static_cast<std::uint8_t>(carry[2 * i]);
            const auto hi = static_cast<std::uint8_t>(carry[2 * i + 1]);
            pcm[i] = static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8)));
          }
          carry.erase(0, 2 * n);
          print(det.feed_pcm16(pcm));
        }
      }
    } else if (words_cmd->parsed()) {
      const LabelSet& ls = builtin_labelset();
      if (words_json) {
        json out = {{"keywords", json::array()}, {"reserved", ls.reserved()}};
        for (const auto& k : ls.keywords()) {
          out["keywords"].push_back({{"id", k.id}, {"english", k.english}, {"kinyarwanda", k.kinyarwanda},
                                     {"key", k.key}});
        }
        std::cout << out.dump(2) << "\n";
      } else {
        for (const auto& k : ls.keywords()) {
          std::cout << k.id << "\t" << k.english << "\t" << k.kinyarwanda << "\t" << k.key << "\n";
        }
        for (const auto& r : ls.reserved()) std::cout << "-\t-\t-\t" << r << "\n";
      }
    } else if (stats_cmd->parsed()) {
      const Manifest m = read_manifest(stats_manifest);
      std::set<std::string> speakers;
      std::map<std::string, std::size_t> splits;
      for (const auto& r : m.records) {
        ++splits[std::string(to_string(r.split))];
        if (r.split != Split::Excluded) speakers.insert(r.speaker);
      }
      emit_json({{"word_counts", word_counts(m)},
                 {"records", m.records.size()},
                 {"splits", splits},
                 {"speakers", speakers.size()}},
                stats_out);
    } else if (serve_cmd->parsed()) {
      ServiceOptions opts;
      opts.data_dir = root;
      opts.cors_origin = serve_cors;
      opts.qc = cfg.qc;
      CollectionService service(opts);
      int port = serve_port;
      if (port == 0) {
        port = service.bind_any(serve_host);
      } else if (!service.bind(serve_host, port)) {
        throw Error(Errc::Io, "cannot bind " + serve_host + ":" + std::to_string(port));
      }
      std::cerr << "serving " << root.string() << " on http://" << serve_host << ":" << port << std::endl;
      service.run();
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
