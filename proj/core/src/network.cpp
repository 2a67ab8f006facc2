#include <algorithm>
#include <cmath>

#include "hakw/error.hpp"
#include "hakw/nn.hpp"

namespace hakw {

std::string_view to_string(Arch a) noexcept { return a == Arch::Cnn ? "cnn" : "lstm"; }

Arch arch_from_string(std::string_view s) {
  if (s == "cnn") return Arch::Cnn;
  if (s == "lstm") return Arch::Lstm;
  throw Error(Errc::BadConfig, "unknown architecture '" + std::string(s) + "'");
}

namespace {

struct CnnGeometry {
  std::size_t rows, cols;        // after resize
  std::size_t c1h, c1w, p1h, p1w;
  std::size_t c2h, c2w, p2h, p2w;
  std::size_t flat;
};

CnnGeometry cnn_geometry(const ModelConfig& cfg) {
  const auto& c = cfg.cnn;
  CnnGeometry g{};
  g.rows = c.resize_frames > 0 ? static_cast<std::size_t>(c.resize_frames) : cfg.input_frames;
  g.cols = c.resize_coeffs > 0 ? static_cast<std::size_t>(c.resize_coeffs) : cfg.input_coeffs;
  const auto k = static_cast<std::size_t>(c.kernel);
  const auto p = static_cast<std::size_t>(c.pool);
  auto conv = [k](std::size_t n) { return n >= k ? n - k + 1 : 0; };
  g.c1h = conv(g.rows);
  g.c1w = conv(g.cols);
  g.p1h = g.c1h / p;
  g.p1w = g.c1w / p;
  g.c2h = conv(g.p1h);
  g.c2w = conv(g.p1w);
  g.p2h = g.c2h / p;
  g.p2w = g.c2w / p;
  g.flat = static_cast<std::size_t>(c.conv2_filters) * g.p2h * g.p2w;
  return g;
}

std::size_t input_columns(const ModelConfig& cfg) {
  if (cfg.arch == Arch::Cnn) return cnn_geometry(cfg).cols;
  return cfg.input_coeffs;
}

void glorot(Tensor& t, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  for (double& v : t.data) v = rng.uniform(-limit, limit);
}

}  // namespace

void ModelConfig::validate() const {
  if (classes < 2) throw Error(Errc::BadConfig, "model needs at least 2 classes");
  if (input_frames == 0 || input_coeffs == 0) throw Error(Errc::BadConfig, "empty input shape");
  if (arch == Arch::Cnn) {
    if (cnn.conv1_filters <= 0 || cnn.conv2_filters <= 0 || cnn.dense <= 0 || cnn.kernel <= 0 || cnn.pool <= 0) {
      throw Error(Errc::BadConfig, "CNN layer sizes must be positive");
    }
    if (cnn.dropout1 < 0 || cnn.dropout1 >= 1 || cnn.dropout2 < 0 || cnn.dropout2 >= 1) {
      throw Error(Errc::BadConfig, "dropout rates must be in [0, 1)");
    }
    if (cnn.resize_frames < 0 || cnn.resize_coeffs < 0) throw Error(Errc::BadConfig, "resize must be >= 0");
    if (cnn_geometry(*this).flat == 0) throw Error(Errc::BadConfig, "CNN input too small for two conv+pool stages");
  } else {
    if (lstm.layers < 1 || lstm.hidden < 1) throw Error(Errc::BadConfig, "LSTM needs >= 1 layer and hidden >= 1");
  }
}

const NamedTensor* ModelArtifact::find(std::string_view name) const {
  for (const auto& t : tensors) {
    if (t.name == name) return &t;
  }
  return nullptr;
}

// ---------------------------------------------------------------------------

Network::Network(const ModelConfig& cfg, std::uint64_t init_seed) : config_(cfg) {
  config_.validate();
  build(init_seed, true);
}

void Network::build(std::uint64_t init_seed, bool initialize) {
  params_.clear();
  layers_.clear();
  Rng rng(init_seed);
  auto add = [&](std::string name, Shape shape, bool trainable = true) {
    params_.push_back(Param{std::move(name), Tensor(std::move(shape)), trainable});
    return params_.size() - 1;
  };

  const std::size_t cols = input_columns(config_);
  add("input.mean", {cols}, false);
  const std::size_t inv_std = add("input.inv_std", {cols}, false);
  std::fill(params_[inv_std].value.data.begin(), params_[inv_std].value.data.end(), 1.0);

  std::size_t last_width = 0;
  if (config_.arch == Arch::Cnn) {
    const auto& c = config_.cnn;
    const auto g = cnn_geometry(config_);
    const auto k = static_cast<std::size_t>(c.kernel);
    const auto f1 = static_cast<std::size_t>(c.conv1_filters);
    const auto f2 = static_cast<std::size_t>(c.conv2_filters);
    const auto dense = static_cast<std::size_t>(c.dense);

    const std::size_t w1 = add("conv1.weight", {f1, 1, k, k});
    const std::size_t b1 = add("conv1.bias", {f1});
    const std::size_t w2 = add("conv2.weight", {f2, f1, k, k});
    const std::size_t b2 = add("conv2.bias", {f2});
    const std::size_t w3 = add("fc1.weight", {dense, g.flat});
    const std::size_t b3 = add("fc1.bias", {dense});
    if (initialize) {
      glorot(params_[w1].value, k * k, f1 * k * k, rng);
      glorot(params_[w2].value, f1 * k * k, f2 * k * k, rng);
      glorot(params_[w3].value, g.flat, dense, rng);
    }
    layers_.push_back(std::make_shared<Conv2D>("conv1", w1, b1, 1, f1, k));
    layers_.push_back(std::make_shared<Relu>("relu1"));
    layers_.push_back(std::make_shared<MaxPool>("pool1", static_cast<std::size_t>(c.pool)));
    layers_.push_back(std::make_shared<Conv2D>("conv2", w2, b2, f1, f2, k));
    layers_.push_back(std::make_shared<Relu>("relu2"));
    layers_.push_back(std::make_shared<MaxPool>("pool2", static_cast<std::size_t>(c.pool)));
    layers_.push_back(std::make_shared<Dropout>("dropout1", c.dropout1));
    layers_.push_back(std::make_shared<Flatten>("flatten"));
    layers_.push_back(std::make_shared<Dense>("fc1", w3, b3, g.flat, dense));
    layers_.push_back(std::make_shared<Relu>("relu3"));
    layers_.push_back(std::make_shared<Dropout>("dropout2", c.dropout2));
    last_width = dense;
  } else {
    const auto hidden = static_cast<std::size_t>(config_.lstm.hidden);
    std::size_t in = config_.input_coeffs;
    for (int l = 1; l <= config_.lstm.layers; ++l) {
      const std::string prefix = "lstm" + std::to_string(l);
      const std::size_t wx = add(prefix + ".w_x", {4 * hidden, in});
      const std::size_t wh = add(prefix + ".w_h", {4 * hidden, hidden});
      const std::size_t b = add(prefix + ".bias", {4 * hidden});
      if (initialize) {
        glorot(params_[wx].value, in, 4 * hidden, rng);
        glorot(params_[wh].value, hidden, 4 * hidden, rng);
        // Forget-gate bias starts at 1.
        for (std::size_t j = hidden; j < 2 * hidden; ++j) params_[b].value.data[j] = 1.0;
      }
      layers_.push_back(std::make_shared<Lstm>(prefix, wx, wh, b, in, hidden));
      in = hidden;
    }
    layers_.push_back(std::make_shared<LastStep>("last_step"));
    last_width = hidden;
  }

  const std::size_t wo = add("out.weight", {config_.classes, last_width});
  const std::size_t bo = add("out.bias", {config_.classes});
  if (initialize) glorot(params_[wo].value, last_width, config_.classes, rng);
  layers_.push_back(std::make_shared<Dense>("out", wo, bo, last_width, config_.classes));
}

Network Network::from_artifact(const ModelArtifact& artifact) {
  if (artifact.quantized) throw Error(Errc::BadConfig, "cannot load a quantized artifact as a float network");
  Network net(artifact.model, 0);
  if (artifact.labels.size() != artifact.model.classes) {
    throw Error(Errc::CorruptDirectory, "label list length does not match class count");
  }
  for (auto& p : net.params_) {
    const NamedTensor* t = artifact.find(p.name);
    if (!t) throw Error(Errc::CorruptDirectory, "artifact is missing tensor " + p.name);
    if (t->shape != p.value.shape || t->dtype != DType::F32 || t->f32.size() != p.value.size()) {
      throw Error(Errc::CorruptDirectory, "tensor " + p.name + " has shape " + shape_string(t->shape) +
                                              ", expected " + shape_string(p.value.shape));
    }
    std::copy(t->f32.begin(), t->f32.end(), p.value.data.begin());
  }
  return net;
}

ModelArtifact Network::to_artifact(const FeatureConfig& features, const std::vector<std::string>& labels) const {
  if (labels.size() != config_.classes) throw Error(Errc::BadConfig, "label list length must equal class count");
  ModelArtifact a;
  a.model = config_;
  a.features = features;
  a.labels = labels;
  for (const auto& p : params_) {
    NamedTensor t;
    t.name = p.name;
    t.shape = p.value.shape;
    t.dtype = DType::F32;
    t.f32.assign(p.value.data.begin(), p.value.data.end());
    a.tensors.push_back(std::move(t));
  }
  return a;
}

std::optional<std::size_t> Network::param_index(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

void Network::check_batch(const Tensor& batch) const {
  if (batch.rank() != 3 || batch.dim(1) != config_.input_frames || batch.dim(2) != config_.input_coeffs) {
    throw Error(Errc::ShapeMismatch, "batch " + shape_string(batch.shape) + " does not match input (N, " +
                                         std::to_string(config_.input_frames) + ", " +
                                         std::to_string(config_.input_coeffs) + ")");
  }
}

std::vector<double> area_resize(std::span<const double> grid, std::size_t rows, std::size_t cols,
                                std::size_t out_rows, std::size_t out_cols) {
  auto bounds = [](std::size_t i, std::size_t in, std::size_t out) {
    std::size_t lo = i * in / out;
    std::size_t hi = (i + 1) * in / out;
    lo = std::min(lo, in - 1);
    hi = std::clamp(hi, lo + 1, in);
    return std::pair{lo, hi};
  };
  std::vector<double> out(out_rows * out_cols);
  for (std::size_t r = 0; r < out_rows; ++r) {
    const auto [r0, r1] = bounds(r, rows, out_rows);
    for (std::size_t c = 0; c < out_cols; ++c) {
      const auto [c0, c1] = bounds(c, cols, out_cols);
      double acc = 0.0;
      for (std::size_t y = r0; y < r1; ++y) {
        for (std::size_t x = c0; x < c1; ++x) acc += grid[y * cols + x];
      }
      out[r * out_cols + c] = acc / static_cast<double>((r1 - r0) * (c1 - c0));
    }
  }
  return out;
}

Tensor Network::prepare_input(const Tensor& batch) const {
  check_batch(batch);
  const std::size_t n = batch.dim(0);
  const auto& mean = params_[0].value.data;
  const auto& inv_std = params_[1].value.data;
  if (config_.arch == Arch::Cnn) {
    const auto g = cnn_geometry(config_);
    Tensor out({n, 1, g.rows, g.cols});
    const std::size_t in_cells = config_.input_frames * config_.input_coeffs;
    for (std::size_t s = 0; s < n; ++s) {
      const std::span<const double> grid(batch.ptr() + s * in_cells, in_cells);
      double* dst = out.ptr() + s * g.rows * g.cols;
      if (g.rows == config_.input_frames && g.cols == config_.input_coeffs) {
        std::copy(grid.begin(), grid.end(), dst);
      } else {
        const auto resized = area_resize(grid, config_.input_frames, config_.input_coeffs, g.rows, g.cols);
        std::copy(resized.begin(), resized.end(), dst);
      }
      for (std::size_t i = 0; i < g.rows * g.cols; ++i) {
        const std::size_t c = i % g.cols;
        dst[i] = (dst[i] - mean[c]) * inv_std[c];
      }
    }
    return out;
  }
  Tensor out = batch;
  const std::size_t cols = config_.input_coeffs;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const std::size_t c = i % cols;
    out.data[i] = (out.data[i] - mean[c]) * inv_std[c];
  }
  return out;
}

void Network::fit_input_normalization(const LabeledFeatures& data) {
  const std::size_t cols = input_columns(config_);
  std::vector<double> sum(cols, 0.0), sq(cols, 0.0);
  std::size_t count = 0;
  // Statistics are taken on the grid the first layer sees (post-resize for the CNN).
  auto& mean = params_[0].value.data;
  auto& inv_std = params_[1].value.data;
  std::fill(mean.begin(), mean.end(), 0.0);
  std::fill(inv_std.begin(), inv_std.end(), 1.0);
  for (std::size_t s = 0; s < data.size(); ++s) {
    const std::size_t idx[] = {s};
    const Tensor x = prepare_input(data.batch(idx));
    const std::size_t rows = x.size() / cols;
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < cols; ++c) {
        const double v = x.data[r * cols + c];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
    count += rows;
  }
  if (count == 0) return;
  for (std::size_t c = 0; c < cols; ++c) {
    const double m = sum[c] / static_cast<double>(count);
    const double var = std::max(0.0, sq[c] / static_cast<double>(count) - m * m);
    mean[c] = m;
    inv_std[c] = var > 1e-12 ? 1.0 / std::sqrt(var) : 1.0;
  }
}

Tensor Network::logits(const Tensor& batch, const ForwardContext& ctx) const {
  Tensor x = prepare_input(batch);
  for (const auto& layer : layers_) {
    const auto kind = layer->kind();
    if (ctx.observe && (kind == LayerKind::Conv2D || kind == LayerKind::Dense || kind == LayerKind::Lstm)) {
      ctx.observe(layer->name(), x);
    }
    x = layer->forward(x, params_, nullptr, ctx);
  }
  return x;
}

double Network::loss_and_gradients(const Tensor& batch, std::span<const int> labels, Rng& dropout_rng,
                                   std::vector<Tensor>& grads, Tensor* logits_out) const {
  if (labels.size() != batch.dim(0)) throw Error(Errc::ShapeMismatch, "label count does not match batch");
  grads.resize(params_.size());
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i].shape != params_[i].value.shape) {
      grads[i] = Tensor(params_[i].value.shape);
    } else {
      grads[i].zero();
    }
  }
  ForwardContext ctx;
  ctx.training = true;
  ctx.dropout_rng = &dropout_rng;
  std::vector<LayerCache> caches(layers_.size());
  Tensor x = prepare_input(batch);
  for (std::size_t i = 0; i < layers_.size(); ++i) x = layers_[i]->forward(x, params_, &caches[i], ctx);

  Tensor grad;
  const double loss = softmax_cross_entropy(x, labels, &grad);
  if (logits_out) *logits_out = x;
  for (std::size_t i = layers_.size(); i-- > 0;) {
    grad = layers_[i]->backward(caches[i], grad, params_, grads);
  }
  return loss;
}

void Network::reset_output_layer(std::size_t classes, std::uint64_t seed) {
  std::vector<Param> saved = params_;
  config_.classes = classes;
  config_.validate();
  build(0, false);
  for (auto& p : params_) {
    if (p.name.starts_with("out.")) continue;
    for (const auto& s : saved) {
      if (s.name == p.name) p.value = s.value;
    }
  }
  Rng rng(seed);
  auto& w = params_[*param_index("out.weight")].value;
  glorot(w, w.dim(1), w.dim(0), rng);
}

// ---------------------------------------------------------------------------

Tensor softmax_rows(const Tensor& logits) {
  if (logits.rank() != 2) throw Error(Errc::ShapeMismatch, "softmax expects (N, K)");
  Tensor p = logits;
  const std::size_t k = logits.dim(1);
  for (std::size_t r = 0; r < logits.dim(0); ++r) {
    double* row = p.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < k; ++j) row[j] /= sum;
  }
  return p;
}

double softmax_cross_entropy(const Tensor& logits, std::span<const int> labels, Tensor* grad_logits) {
  const Tensor p = softmax_rows(logits);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (labels.size() != n) throw Error(Errc::ShapeMismatch, "label count does not match logits");
  double loss = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const int y = labels[r];
    if (y < 0 || static_cast<std::size_t>(y) >= k) throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y));
    // log-softmax directly from logits for accuracy near p = 1.
    const double* row = logits.ptr() + r * k;
    const double mx = *std::max_element(row, row + k);
    double sum = 0.0;
    for (std::size_t j = 0; j < k; ++j) sum += std::exp(row[j] - mx);
    loss += -(row[y] - mx - std::log(sum));
  }
  loss /= static_cast<double>(n);
  if (grad_logits) {
    *grad_logits = p;
    for (std::size_t r = 0; r < n; ++r) {
      grad_logits->data[r * k + static_cast<std::size_t>(labels[r])] -= 1.0;
    }
    for (double& g : grad_logits->data) g /= static_cast<double>(n);
  }
  return loss;
}

}  // namespace hakw
