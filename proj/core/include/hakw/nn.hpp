#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "hakw/features.hpp"
#include "hakw/random.hpp"
#include "hakw/tensor.hpp"

namespace hakw {

enum class Arch { Cnn, Lstm };
std::string_view to_string(Arch a) noexcept;
Arch arch_from_string(std::string_view s);

struct CnnConfig {
  int conv1_filters = 32;
  int conv2_filters = 64;
  int kernel = 3;
  int pool = 2;
  double dropout1 = 0.25;
  int dense = 128;
  double dropout2 = 0.5;
  // Area-resize of the input grid before the first convolution; 0 keeps the native size.
  int resize_frames = 32;
  int resize_coeffs = 32;
  friend bool operator==(const CnnConfig&, const CnnConfig&) = default;
};

struct LstmConfig {
  int layers = 1;
  int hidden = 128;
  friend bool operator==(const LstmConfig&, const LstmConfig&) = default;
};

struct ModelConfig {
  Arch arch = Arch::Lstm;
  std::size_t input_frames = 98;
  std::size_t input_coeffs = 13;
  std::size_t classes = 2;
  FeatureKind feature_kind = FeatureKind::Mfcc;
  CnnConfig cnn;
  LstmConfig lstm;

  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct FinetuneConfig {
  bool enabled = false;
  double lr = 1e-4;
  bool freeze_feature_layers = false;
};

struct TrainConfig {
  int max_epochs = 150;
  int early_stop_patience = 10;
  std::size_t batch_size = 64;
  AdamConfig adam;
  std::uint64_t seed = 0;
  FinetuneConfig finetune;

  void validate() const;
};

// ---------------------------------------------------------------------------
// Portable model artifact (serialized by the deploy module).

enum class DType { F32, I8 };

struct NamedTensor {
  std::string name;
  Shape shape;
  DType dtype = DType::F32;
  std::vector<float> f32;
  std::vector<std::int8_t> i8;
  float scale = 1.0f;
  std::int32_t zero_point = 0;

  friend bool operator==(const NamedTensor&, const NamedTensor&) = default;
};

struct ActivationRange {
  float min = 0.0f;
  float max = 0.0f;
  friend bool operator==(const ActivationRange&, const ActivationRange&) = default;
};

struct ModelArtifact {
  ModelConfig model;
  FeatureConfig features;
  std::vector<std::string> labels;
  bool quantized = false;
  std::vector<NamedTensor> tensors;
  // Input ranges of every weight-bearing layer, recorded at quantization time.
  std::map<std::string, ActivationRange> activation_ranges;

  const NamedTensor* find(std::string_view name) const;
  friend bool operator==(const ModelArtifact&, const ModelArtifact&) = default;
};

// ---------------------------------------------------------------------------
// Layers

struct Param {
  std::string name;
  Tensor value;
  bool trainable = true;
};

struct ForwardContext {
  bool training = false;
  Rng* dropout_rng = nullptr;
  // Called with each weight-bearing layer's input before it runs.
  std::function<void(std::string_view layer, const Tensor& input)> observe;
};

// Per-layer scratch kept between forward and backward.
struct LayerCache {
  std::vector<Tensor> tensors;
  std::vector<std::size_t> indices;
};

enum class LayerKind { Conv2D, Relu, MaxPool, Dropout, Flatten, Dense, Lstm, LastStep };

class Layer {
 public:
  virtual ~Layer() = default;
  virtual LayerKind kind() const noexcept = 0;
  virtual const std::string& name() const noexcept { return name_; }
  virtual Tensor forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                         const ForwardContext& ctx) const = 0;
  // Accumulates into grads (parallel to params) and returns d(loss)/d(input).
  virtual Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                          std::span<Tensor> grads) const = 0;

 protected:
  explicit Layer(std::string name) : name_(std::move(name)) {}

 private:
  std::string name_;
};

// 'valid' 2-D convolution, stride 1. Input (N, Cin, H, W).
class Conv2D final : public Layer {
 public:
  Conv2D(std::string name, std::size_t weight, std::size_t bias, std::size_t in_ch, std::size_t out_ch,
         std::size_t kernel);
  LayerKind kind() const noexcept override { return LayerKind::Conv2D; }
  Tensor forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                 const ForwardContext& ctx) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                  std::span<Tensor> grads) const override;

  std::size_t weight_index() const noexcept { return weight_; }
  std::size_t bias_index() const noexcept { return bias_; }
  std::size_t in_channels() const noexcept { return in_ch_; }
  std::size_t out_channels() const noexcept { return out_ch_; }
  std::size_t kernel() const noexcept { return kernel_; }

 private:
  std::size_t weight_, bias_, in_ch_, out_ch_, kernel_;
};

class Relu final : public Layer {
 public:
  explicit Relu(std::string name) : Layer(std::move(name)) {}
  LayerKind kind() const noexcept override { return LayerKind::Relu; }
  Tensor forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                  std::span<Tensor>) const override;
};

// Non-overlapping max pooling over the last two axes; ties resolve to the first index.
class MaxPool final : public Layer {
 public:
  MaxPool(std::string name, std::size_t size) : Layer(std::move(name)), size_(size) {}
  LayerKind kind() const noexcept override { return LayerKind::MaxPool; }
  Tensor forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                  std::span<Tensor>) const override;

 private:
  std::size_t size_;
};

// Inverted dropout; identity outside training.
class Dropout final : public Layer {
 public:
  Dropout(std::string name, double rate) : Layer(std::move(name)), rate_(rate) {}
  LayerKind kind() const noexcept override { return LayerKind::Dropout; }
  Tensor forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext& ctx) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                  std::span<Tensor>) const override;

 private:
  double rate_;
};

class Flatten final : public Layer {
 public:
  explicit Flatten(std::string name) : Layer(std::move(name)) {}
  LayerKind kind() const noexcept override { return LayerKind::Flatten; }
  Tensor forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                  std::span<Tensor>) const override;
};

// y = x W^T + b with W of shape (out, in).
class Dense final : public Layer {
 public:
  Dense(std::string name, std::size_t weight, std::size_t bias, std::size_t in, std::size_t out);
  LayerKind kind() const noexcept override { return LayerKind::Dense; }
  Tensor forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                 const ForwardContext& ctx) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                  std::span<Tensor> grads) const override;

  std::size_t weight_index() const noexcept { return weight_; }
  std::size_t bias_index() const noexcept { return bias_; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }

 private:
  std::size_t weight_, bias_, in_, out_;
};

// Single LSTM layer over (N, T, F) returning the full hidden sequence (N, T, H).
// Gate order in the stacked weights: input, forget, candidate, output.
class Lstm final : public Layer {
 public:
  Lstm(std::string name, std::size_t w_x, std::size_t w_h, std::size_t bias, std::size_t in, std::size_t hidden);
  LayerKind kind() const noexcept override { return LayerKind::Lstm; }
  Tensor forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                 const ForwardContext& ctx) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                  std::span<Tensor> grads) const override;

  std::size_t input_weight_index() const noexcept { return w_x_; }
  std::size_t recurrent_weight_index() const noexcept { return w_h_; }
  std::size_t bias_index() const noexcept { return bias_; }
  std::size_t in_features() const noexcept { return in_; }
  std::size_t hidden() const noexcept { return hidden_; }

 private:
  std::size_t w_x_, w_h_, bias_, in_, hidden_;
};

// (N, T, H) -> (N, H) taking the final time step.
class LastStep final : public Layer {
 public:
  explicit LastStep(std::string name) : Layer(std::move(name)) {}
  LayerKind kind() const noexcept override { return LayerKind::LastStep; }
  Tensor forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const override;
  Tensor backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                  std::span<Tensor>) const override;
};

// ---------------------------------------------------------------------------
// Network

Tensor softmax_rows(const Tensor& logits);

// Mean cross-entropy and its gradient w.r.t. the logits.
double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad_logits);

struct LabeledFeatures;

class Network {
 public:
  Network(const ModelConfig& cfg, std::uint64_t init_seed);
  static Network from_artifact(const ModelArtifact& artifact);

  ModelArtifact to_artifact(const FeatureConfig& features, const std::vector<std::string>& labels) const;

  const ModelConfig& config() const noexcept { return config_; }
  const std::vector<Param>& params() const noexcept { return params_; }
  std::vector<Param>& params() noexcept { return params_; }
  const std::vector<std::shared_ptr<const Layer>>& layers() const noexcept { return layers_; }
  std::optional<std::size_t> param_index(std::string_view name) const;
  std::size_t parameter_count() const;

  // Resize (CNN) and per-coefficient standardization. Input (N, frames, coeffs).
  Tensor prepare_input(const Tensor& batch) const;
  // Recomputes the standardization statistics from training features.
  void fit_input_normalization(const LabeledFeatures& data);

  Tensor logits(const Tensor& batch, const ForwardContext& ctx = {}) const;
  Tensor predict_proba(const Tensor& batch) const { return softmax_rows(logits(batch)); }

  // Forward in training mode with the given dropout stream, backward into grads.
  double loss_and_gradients(const Tensor& batch, std::span<const int> labels, Rng& dropout_rng,
                            std::vector<Tensor>& grads, Tensor* logits_out = nullptr) const;

  // Replaces the output layer with a freshly initialized one of the given width.
  void reset_output_layer(std::size_t classes, std::uint64_t seed);

 private:
  void build(std::uint64_t init_seed, bool initialize);
  void check_batch(const Tensor& batch) const;

  ModelConfig config_;
  std::vector<Param> params_;
  std::vector<std::shared_ptr<const Layer>> layers_;
};

// Area (box-average) resize of a (frames, coeffs) grid.
std::vector<double> area_resize(std::span<const double> grid, std::size_t rows, std::size_t cols,
                                std::size_t out_rows, std::size_t out_cols);

// ---------------------------------------------------------------------------
// Datasets, training, evaluation

struct LabeledFeatures {
  FeatureKind kind = FeatureKind::Mfcc;
  FeatureConfig config;
  std::size_t frames = 0;
  std::size_t coeffs = 0;
  std::vector<double> data;  // N x frames x coeffs
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  void append(const FeatureMatrix& m, int label);
  Tensor batch(std::span<const std::size_t> indices) const;
  Tensor all() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct EvalReport {
  double accuracy = 0.0;
  double loss = 0.0;
  std::size_t total = 0;
  std::vector<std::vector<std::size_t>> confusion;  // [true][predicted]
};

struct TrainReport {
  std::vector<EpochStats> history;
  int stopped_epoch = 0;
  int best_epoch = 0;
  double best_val_accuracy = 0.0;
  EvalReport validation;  // of the returned (best) weights
};

// Stops once `patience` consecutive epochs have passed after the best epoch without a new best.
class EarlyStopping {
 public:
  explicit EarlyStopping(int patience) : patience_(patience) {}
  // Returns true when training should stop after this epoch.
  bool update(int epoch, double val_loss);
  bool improved() const noexcept { return improved_; }
  int best_epoch() const noexcept { return best_epoch_; }
  double best_loss() const noexcept { return best_loss_; }

 private:
  int patience_;
  int best_epoch_ = 0;
  double best_loss_ = 0.0;
  bool improved_ = false;
};

// Argmax with ties to the lowest index.
std::size_t argmax(std::span<const double> row);

EvalReport evaluate_probabilities(const Tensor& probabilities, std::span<const int> labels, std::size_t classes);
EvalReport evaluate(const Network& net, const LabeledFeatures& data, std::size_t batch_size = 256);

struct TrainResult {
  ModelArtifact artifact;
  TrainReport report;
};

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LabeledFeatures& train_set,
                  const LabeledFeatures& val_set, const std::vector<std::string>& labels);

// Continues training a pretrained artifact on new data. The output layer is reinitialized when
// the label lists differ; with freeze_feature_layers only the output layer is updated.
TrainResult fine_tune(const ModelArtifact& pretrained, const TrainConfig& train_cfg, const LabeledFeatures& train_set,
                      const LabeledFeatures& val_set, const std::vector<std::string>& labels);

}  // namespace hakw
