#pragma once

#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "hakw/augment.hpp"
#include "hakw/corpus.hpp"
#include "hakw/deploy.hpp"
#include "hakw/features.hpp"
#include "hakw/nn.hpp"

namespace hakw {

struct PipelineConfig {
  QcPolicy qc;
  FeatureConfig features;
  AugmentPolicy augment;
  ModelConfig model;
  TrainConfig train;
  DetectorConfig detector;
};

// Strict readers: every field is optional, unknown keys and wrong types raise BadConfig with
// the dotted path of the offending key. `path` prefixes error locations.
void read_json(const nlohmann::json& j, QcPolicy& out, const std::string& path = "qc");
void read_json(const nlohmann::json& j, FeatureConfig& out, const std::string& path = "features");
void read_json(const nlohmann::json& j, AugmentPolicy& out, const std::string& path = "augment");
void read_json(const nlohmann::json& j, ModelConfig& out, const std::string& path = "model");
void read_json(const nlohmann::json& j, TrainConfig& out, const std::string& path = "train");
void read_json(const nlohmann::json& j, DetectorConfig& out, const std::string& path = "detector");
void read_json(const nlohmann::json& j, PipelineConfig& out, const std::string& path = "");

nlohmann::json to_json(const QcPolicy& v);
nlohmann::json to_json(const FeatureConfig& v);
nlohmann::json to_json(const AugmentPolicy& v);
nlohmann::json to_json(const ModelConfig& v);
nlohmann::json to_json(const TrainConfig& v);
nlohmann::json to_json(const DetectorConfig& v);
nlohmann::json to_json(const PipelineConfig& v);

PipelineConfig parse_pipeline_config(const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

}  // namespace hakw
