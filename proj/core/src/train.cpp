#include <algorithm>
#include <cmath>
#include <numeric>

#include "hakw/error.hpp"
#include "hakw/nn.hpp"

namespace hakw {

void TrainConfig::validate() const {
  if (max_epochs < 1) throw Error(Errc::BadConfig, "max_epochs must be >= 1");
  if (early_stop_patience < 1) throw Error(Errc::BadConfig, "early_stop_patience must be >= 1");
  if (batch_size < 1) throw Error(Errc::BadConfig, "batch_size must be >= 1");
  if (!(adam.lr > 0) || !(finetune.lr > 0)) throw Error(Errc::BadConfig, "learning rates must be positive");
}

void LabeledFeatures::append(const FeatureMatrix& m, int label) {
  if (labels.empty() && data.empty()) {
    kind = m.kind;
    config = m.config;
    frames = m.frames;
    coeffs = m.coeffs;
  } else if (m.frames != frames || m.coeffs != coeffs || m.kind != kind) {
    throw Error(Errc::ShapeMismatch, "feature matrix " + std::to_string(m.frames) + "x" + std::to_string(m.coeffs) +
                                         " does not match dataset " + std::to_string(frames) + "x" +
                                         std::to_string(coeffs));
  }
  data.insert(data.end(), m.data.begin(), m.data.end());
  labels.push_back(label);
}

Tensor LabeledFeatures::batch(std::span<const std::size_t> indices) const {
  const std::size_t cells = frames * coeffs;
  Tensor t({indices.size(), frames, coeffs});
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(indices[i] * cells), cells, t.ptr() + i * cells);
  }
  return t;
}

Tensor LabeledFeatures::all() const { return Tensor({size(), frames, coeffs}, data); }

bool EarlyStopping::update(int epoch, double val_loss) {
  improved_ = best_epoch_ == 0 || val_loss < best_loss_;
  if (improved_) {
    best_epoch_ = epoch;
    best_loss_ = val_loss;
    return false;
  }
  return epoch - best_epoch_ > patience_;
}

std::size_t argmax(std::span<const double> row) {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

EvalReport evaluate_probabilities(const Tensor& probabilities, std::span<const int> labels, std::size_t classes) {
  if (probabilities.rank() != 2 || probabilities.dim(0) != labels.size() || probabilities.dim(1) != classes) {
    throw Error(Errc::ShapeMismatch, "probabilities do not match labels/classes");
  }
  EvalReport r;
  r.total = labels.size();
  r.confusion.assign(classes, std::vector<std::size_t>(classes, 0));
  std::size_t correct = 0;
  double loss = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const int y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw Error(Errc::LabelOutOfRange, "label " + std::to_string(y) + " outside " + std::to_string(classes) +
                                             " classes");
    }
    const std::span<const double> row(probabilities.ptr() + i * classes, classes);
    const std::size_t pred = argmax(row);
    ++r.confusion[static_cast<std::size_t>(y)][pred];
    if (pred == static_cast<std::size_t>(y)) ++correct;
    loss += -std::log(std::max(row[static_cast<std::size_t>(y)], 1e-300));
  }
  if (r.total > 0) {
    r.accuracy = static_cast<double>(correct) / static_cast<double>(r.total);
    r.loss = loss / static_cast<double>(r.total);
  }
  return r;
}

EvalReport evaluate(const Network& net, const LabeledFeatures& data, std::size_t batch_size) {
  const std::size_t classes = net.config().classes;
  Tensor probs({data.size(), classes});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor p = net.predict_proba(data.batch(idx));
    std::copy(p.data.begin(), p.data.end(), probs.ptr() + start * classes);
  }
  return evaluate_probabilities(probs, data.labels, classes);
}

namespace {

void check_dataset(const Network& net, const LabeledFeatures& set, const char* which) {
  const auto& cfg = net.config();
  if (set.size() == 0) return;
  if (set.frames != cfg.input_frames || set.coeffs != cfg.input_coeffs) {
    throw Error(Errc::ShapeMismatch, std::string(which) + " features are " + std::to_string(set.frames) + "x" +
                                         std::to_string(set.coeffs) + ", model expects " +
                                         std::to_string(cfg.input_frames) + "x" + std::to_string(cfg.input_coeffs));
  }
  if (set.kind != cfg.feature_kind) {
    throw Error(Errc::FeatureConfigMismatch, std::string(which) + " features are " + std::string(to_string(set.kind)) +
                                                 ", model expects " + std::string(to_string(cfg.feature_kind)));
  }
  for (int y : set.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= cfg.classes) {
      throw Error(Errc::LabelOutOfRange, std::string(which) + " label " + std::to_string(y));
    }
  }
}

void check_every_class_present(const LabeledFeatures& set, std::size_t classes,
                               const std::vector<std::string>& labels) {
  std::vector<std::size_t> counts(classes, 0);
  for (int y : set.labels) ++counts[static_cast<std::size_t>(y)];
  for (std::size_t c = 0; c < classes; ++c) {
    if (counts[c] == 0) throw Error(Errc::EmptyClass, "no training samples for class '" + labels[c] + "'");
  }
}

// Shared epoch loop. `lr` and `frozen` differ between training from scratch and fine-tuning.
TrainReport run_training(Network& net, const TrainConfig& cfg, const LabeledFeatures& train_set,
                         const LabeledFeatures& val_set, double lr, const std::vector<bool>& frozen,
                         int max_epochs) {
  auto& params = net.params();
  std::vector<Tensor> m(params.size()), v(params.size()), grads;
  for (std::size_t i = 0; i < params.size(); ++i) {
    m[i] = Tensor(params[i].value.shape);
    v[i] = Tensor(params[i].value.shape);
  }

  Rng order_rng(cfg.seed ^ 0x5DEECE66Dull);
  Rng dropout_rng(cfg.seed + 0x9E3779B97F4A7C15ull);
  EarlyStopping stopper(cfg.early_stop_patience);
  std::vector<Tensor> best;
  for (const auto& p : params) best.push_back(p.value);

  TrainReport report;
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), 0);
  std::vector<int> batch_labels;
  std::uint64_t step = 0;
  for (int epoch = 1; epoch <= max_epochs; ++epoch) {
    order_rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    std::size_t correct = 0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      batch_labels.clear();
      for (std::size_t i : idx) batch_labels.push_back(train_set.labels[i]);
      Tensor logits;
      const double loss = net.loss_and_gradients(train_set.batch(idx), batch_labels, dropout_rng, grads, &logits);
      if (!std::isfinite(loss)) {
        throw Error(Errc::NanLoss, "non-finite loss at epoch " + std::to_string(epoch) + ", batch starting " +
                                       std::to_string(start));
      }
      loss_sum += loss * static_cast<double>(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const std::span<const double> row(logits.ptr() + r * logits.dim(1), logits.dim(1));
        if (argmax(row) == static_cast<std::size_t>(batch_labels[r])) ++correct;
      }

      ++step;
      const double c1 = 1.0 - std::pow(cfg.adam.beta1, static_cast<double>(step));
      const double c2 = 1.0 - std::pow(cfg.adam.beta2, static_cast<double>(step));
      for (std::size_t p = 0; p < params.size(); ++p) {
        if (!params[p].trainable || frozen[p]) continue;
        auto& w = params[p].value.data;
        auto& mp = m[p].data;
        auto& vp = v[p].data;
        const auto& g = grads[p].data;
        for (std::size_t j = 0; j < w.size(); ++j) {
          mp[j] = cfg.adam.beta1 * mp[j] + (1.0 - cfg.adam.beta1) * g[j];
          vp[j] = cfg.adam.beta2 * vp[j] + (1.0 - cfg.adam.beta2) * g[j] * g[j];
          w[j] -= lr * (mp[j] / c1) / (std::sqrt(vp[j] / c2) + cfg.adam.eps);
        }
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(train_set.size());
    stats.train_accuracy = static_cast<double>(correct) / static_cast<double>(train_set.size());
    if (val_set.size() > 0) {
      const EvalReport val = evaluate(net, val_set);
      stats.val_loss = val.loss;
      stats.val_accuracy = val.accuracy;
    } else {
      stats.val_loss = stats.train_loss;
      stats.val_accuracy = stats.train_accuracy;
    }
    report.history.push_back(stats);
    report.stopped_epoch = epoch;

    const bool stop = stopper.update(epoch, stats.val_loss);
    if (stopper.improved()) {
      for (std::size_t i = 0; i < params.size(); ++i) best[i] = params[i].value;
      report.best_val_accuracy = stats.val_accuracy;
    }
    if (stop) break;
  }

  for (std::size_t i = 0; i < params.size(); ++i) params[i].value = best[i];
  report.best_epoch = stopper.best_epoch();
  if (val_set.size() > 0) {
    report.validation = evaluate(net, val_set);
    report.best_val_accuracy = report.validation.accuracy;
  }
  return report;
}

}  // namespace

TrainResult train(const ModelConfig& model_cfg, const TrainConfig& train_cfg, const LabeledFeatures& train_set,
                  const LabeledFeatures& val_set, const std::vector<std::string>& labels) {
  train_cfg.validate();
  Network net(model_cfg, train_cfg.seed);
  if (labels.size() != model_cfg.classes) throw Error(Errc::BadConfig, "label list length must equal class count");
  if (train_set.size() == 0) throw Error(Errc::EmptyClass, "empty training set");
  check_dataset(net, train_set, "train");
  check_dataset(net, val_set, "val");
  if (val_set.size() > 0 && !(val_set.config == train_set.config)) {
    throw Error(Errc::FeatureConfigMismatch, "train and val features were computed with different configs");
  }
  check_every_class_present(train_set, model_cfg.classes, labels);

  net.fit_input_normalization(train_set);
  const std::vector<bool> frozen(net.params().size(), false);
  TrainResult result;
  result.report = run_training(net, train_cfg, train_set, val_set, train_cfg.adam.lr, frozen, train_cfg.max_epochs);
  result.artifact = net.to_artifact(train_set.config, labels);
  return result;
}

TrainResult fine_tune(const ModelArtifact& pretrained, const TrainConfig& train_cfg, const LabeledFeatures& train_set,
                      const LabeledFeatures& val_set, const std::vector<std::string>& labels) {
  if (train_cfg.max_epochs < 0 || train_cfg.early_stop_patience < 1 || train_cfg.batch_size < 1 ||
      !(train_cfg.finetune.lr > 0)) {
    throw Error(Errc::BadConfig, "invalid fine-tune configuration");
  }
  if (train_set.size() > 0 && !(train_set.config == pretrained.features)) {
    throw Error(Errc::FeatureConfigMismatch, "new data was featurized with a different config than the model");
  }
  if (val_set.size() > 0 && !(val_set.config == pretrained.features)) {
    throw Error(Errc::FeatureConfigMismatch, "validation data was featurized with a different config");
  }

  Network net = Network::from_artifact(pretrained);
  if (labels != pretrained.labels) net.reset_output_layer(labels.size(), train_cfg.seed);
  check_dataset(net, train_set, "train");
  check_dataset(net, val_set, "val");
  if (train_cfg.max_epochs > 0) check_every_class_present(train_set, labels.size(), labels);

  std::vector<bool> frozen(net.params().size(), false);
  if (train_cfg.finetune.freeze_feature_layers) {
    for (std::size_t i = 0; i < frozen.size(); ++i) frozen[i] = !net.params()[i].name.starts_with("out.");
  }
  TrainResult result;
  result.report =
      run_training(net, train_cfg, train_set, val_set, train_cfg.finetune.lr, frozen, train_cfg.max_epochs);
  result.artifact = net.to_artifact(pretrained.features, labels);
  return result;
}

}  // namespace hakw
