#include "hakw/config.hpp"

#include <fstream>
#include <set>

#include "hakw/error.hpp"

namespace hakw {

using nlohmann::json;

namespace {

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw Error(Errc::BadConfig, (path_.empty() ? "<root>" : path_) + ": expected an object");
  }

  void number(const char* key, double& out) {
    if (const json* v = take(key)) {
      if (!v->is_number()) fail(key, "expected a number");
      out = v->get<double>();
    }
  }
  void integer(const char* key, int& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer()) fail(key, "expected an integer");
      const auto x = v->get<std::int64_t>();
      if (x < INT32_MIN || x > INT32_MAX) fail(key, "out of range");
      out = static_cast<int>(x);
    }
  }
  void size(const char* key, std::size_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || v->get<std::int64_t>() < 0) fail(key, "expected a non-negative integer");
      out = v->get<std::size_t>();
    }
  }
  void u64(const char* key, std::uint64_t& out) {
    if (const json* v = take(key)) {
      if (!v->is_number_integer() || (!v->is_number_unsigned() && v->get<std::int64_t>() < 0)) {
        fail(key, "expected a non-negative integer");
      }
      out = v->get<std::uint64_t>();
    }
  }
  void boolean(const char* key, bool& out) {
    if (const json* v = take(key)) {
      if (!v->is_boolean()) fail(key, "expected true or false");
      out = v->get<bool>();
    }
  }
  void string(const char* key, std::string& out) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      out = v->get<std::string>();
    }
  }
  template <typename E, typename Parse>
  void enumeration(const char* key, E& out, Parse parse) {
    if (const json* v = take(key)) {
      if (!v->is_string()) fail(key, "expected a string");
      try {
        out = parse(v->get<std::string>());
      } catch (const Error& e) {
        fail(key, e.what());
      }
    }
  }
  template <typename T>
  void object(const char* key, T& out) {
    if (const json* v = take(key)) read_json(*v, out, join(path_, key));
  }

  // Rejects every key that no reader asked for.
  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it) {
      if (!seen_.contains(it.key())) fail(it.key().c_str(), "unknown key");
    }
  }

 private:
  const json* take(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }
  [[noreturn]] void fail(const char* key, const std::string& why) const {
    throw Error(Errc::BadConfig, join(path_, key) + ": " + why);
  }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace

void read_json(const json& j, QcPolicy& out, const std::string& path) {
  ObjectReader r(j, path);
  r.number("empty_rms", out.empty_rms);
  r.number("speech_rms", out.speech_rms);
  r.number("frame_ms", out.frame_ms);
  r.number("max_lead_ms", out.max_lead_ms);
  r.number("min_ms", out.min_ms);
  r.number("max_ms", out.max_ms);
  r.number("clip_level", out.clip_level);
  r.number("clip_fraction", out.clip_fraction);
  r.finish();
}

void read_json(const json& j, FeatureConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.integer("sample_rate", out.sample_rate);
  r.integer("frame_len", out.frame_len);
  r.integer("hop", out.hop);
  r.integer("fft_size", out.fft_size);
  r.integer("n_mels", out.n_mels);
  r.number("fmin", out.fmin);
  r.number("fmax", out.fmax);
  r.integer("n_mfcc", out.n_mfcc);
  r.number("log_floor", out.log_floor);
  r.enumeration("window", out.window, window_from_string);
  r.finish();
}

void read_json(const json& j, AugmentPolicy& out, const std::string& path) {
  ObjectReader r(j, path);
  r.number("fraction", out.fraction);
  r.number("shift_ms_min", out.shift_ms_min);
  r.number("shift_ms_max", out.shift_ms_max);
  r.number("speed_min", out.speed_min);
  r.number("speed_max", out.speed_max);
  r.number("gain_db_min", out.gain_db_min);
  r.number("gain_db_max", out.gain_db_max);
  r.number("pad_ms_min", out.pad_ms_min);
  r.number("pad_ms_max", out.pad_ms_max);
  r.u64("seed", out.seed);
  r.finish();
}

static void read_json(const json& j, CnnConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.integer("conv1_filters", out.conv1_filters);
  r.integer("conv2_filters", out.conv2_filters);
  r.integer("kernel", out.kernel);
  r.integer("pool", out.pool);
  r.number("dropout1", out.dropout1);
  r.integer("dense", out.dense);
  r.number("dropout2", out.dropout2);
  r.integer("resize_frames", out.resize_frames);
  r.integer("resize_coeffs", out.resize_coeffs);
  r.finish();
}

static void read_json(const json& j, LstmConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.integer("layers", out.layers);
  r.integer("hidden", out.hidden);
  r.finish();
}

static void read_json(const json& j, AdamConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.number("lr", out.lr);
  r.number("beta1", out.beta1);
  r.number("beta2", out.beta2);
  r.number("eps", out.eps);
  r.finish();
}

static void read_json(const json& j, FinetuneConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.boolean("enabled", out.enabled);
  r.number("lr", out.lr);
  r.boolean("freeze_feature_layers", out.freeze_feature_layers);
  r.finish();
}

void read_json(const json& j, ModelConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.enumeration("arch", out.arch, arch_from_string);
  r.size("input_frames", out.input_frames);
  r.size("input_coeffs", out.input_coeffs);
  r.size("classes", out.classes);
  r.enumeration("feature_kind", out.feature_kind, feature_kind_from_string);
  r.object("cnn", out.cnn);
  r.object("lstm", out.lstm);
  r.finish();
}

void read_json(const json& j, TrainConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.integer("max_epochs", out.max_epochs);
  r.integer("early_stop_patience", out.early_stop_patience);
  r.size("batch_size", out.batch_size);
  r.object("adam", out.adam);
  r.u64("seed", out.seed);
  r.object("finetune", out.finetune);
  r.finish();
}

void read_json(const json& j, DetectorConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.number("window_ms", out.window_ms);
  r.number("hop_ms", out.hop_ms);
  r.integer("smooth_k", out.smooth_k);
  r.number("threshold", out.threshold);
  r.number("refractory_ms", out.refractory_ms);
  r.string("wake_label", out.wake_label);
  r.finish();
}

void read_json(const json& j, PipelineConfig& out, const std::string& path) {
  ObjectReader r(j, path);
  r.object("qc", out.qc);
  r.object("features", out.features);
  r.object("augment", out.augment);
  r.object("model", out.model);
  r.object("train", out.train);
  r.object("detector", out.detector);
  r.finish();
}

json to_json(const QcPolicy& v) {
  return {{"empty_rms", v.empty_rms},     {"speech_rms", v.speech_rms}, {"frame_ms", v.frame_ms},
          {"max_lead_ms", v.max_lead_ms}, {"min_ms", v.min_ms},         {"max_ms", v.max_ms},
          {"clip_level", v.clip_level},   {"clip_fraction", v.clip_fraction}};
}

json to_json(const FeatureConfig& v) {
  return {{"sample_rate", v.sample_rate},
          {"frame_len", v.frame_len},
          {"hop", v.hop},
          {"fft_size", v.fft_size},
          {"n_mels", v.n_mels},
          {"fmin", v.fmin},
          {"fmax", v.fmax},
          {"n_mfcc", v.n_mfcc},
          {"log_floor", v.log_floor},
          {"window", std::string(to_string(v.window))}};
}

json to_json(const AugmentPolicy& v) {
  return {{"fraction", v.fraction},       {"shift_ms_min", v.shift_ms_min}, {"shift_ms_max", v.shift_ms_max},
          {"speed_min", v.speed_min},     {"speed_max", v.speed_max},       {"gain_db_min", v.gain_db_min},
          {"gain_db_max", v.gain_db_max}, {"pad_ms_min", v.pad_ms_min},     {"pad_ms_max", v.pad_ms_max},
          {"seed", v.seed}};
}

json to_json(const ModelConfig& v) {
  return {{"arch", std::string(to_string(v.arch))},
          {"input_frames", v.input_frames},
          {"input_coeffs", v.input_coeffs},
          {"classes", v.classes},
          {"feature_kind", std::string(to_string(v.feature_kind))},
          {"cnn",
           {{"conv1_filters", v.cnn.conv1_filters},
            {"conv2_filters", v.cnn.conv2_filters},
            {"kernel", v.cnn.kernel},
            {"pool", v.cnn.pool},
            {"dropout1", v.cnn.dropout1},
            {"dense", v.cnn.dense},
            {"dropout2", v.cnn.dropout2},
            {"resize_frames", v.cnn.resize_frames},
            {"resize_coeffs", v.cnn.resize_coeffs}}},
          {"lstm", {{"layers", v.lstm.layers}, {"hidden", v.lstm.hidden}}}};
}

json to_json(const TrainConfig& v) {
  return {{"max_epochs", v.max_epochs},
          {"early_stop_patience", v.early_stop_patience},
          {"batch_size", v.batch_size},
          {"adam", {{"lr", v.adam.lr}, {"beta1", v.adam.beta1}, {"beta2", v.adam.beta2}, {"eps", v.adam.eps}}},
          {"seed", v.seed},
          {"finetune",
           {{"enabled", v.finetune.enabled},
            {"lr", v.finetune.lr},
            {"freeze_feature_layers", v.finetune.freeze_feature_layers}}}};
}

json to_json(const DetectorConfig& v) {
  return {{"window_ms", v.window_ms}, {"hop_ms", v.hop_ms},   {"smooth_k", v.smooth_k},
          {"threshold", v.threshold}, {"refractory_ms", v.refractory_ms}, {"wake_label", v.wake_label}};
}

json to_json(const PipelineConfig& v) {
  return {{"qc", to_json(v.qc)},       {"features", to_json(v.features)}, {"augment", to_json(v.augment)},
          {"model", to_json(v.model)}, {"train", to_json(v.train)},       {"detector", to_json(v.detector)}};
}

PipelineConfig parse_pipeline_config(const json& j) {
  PipelineConfig cfg;
  read_json(j, cfg);
  cfg.features.validate();
  cfg.augment.validate();
  cfg.train.validate();
  cfg.detector.validate();
  return cfg;
}

PipelineConfig load_pipeline_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(Errc::Io, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw Error(Errc::BadConfig, path.string() + ": " + e.what());
  }
  return parse_pipeline_config(j);
}

}  // namespace hakw
