#include "hakw/deploy.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <limits>
#include <numeric>
#include <set>

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include "hakw/config.hpp"
#include "hakw/error.hpp"

namespace hakw {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'H', 'A', 'K', 'W'};

void put_u32(Bytes& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
void put_u64(Bytes& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}
std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}
std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
  return v;
}

std::size_t element_bytes(DType d) { return d == DType::F32 ? 4 : 1; }
const char* dtype_name(DType d) { return d == DType::F32 ? "f32" : "i8"; }

[[noreturn]] void corrupt(const std::string& why) { throw Error(Errc::CorruptDirectory, why); }

}  // namespace

Bytes serialize_model(const ModelArtifact& a) {
  if (a.labels.size() != a.model.classes) throw Error(Errc::BadConfig, "label list length must equal class count");
  json dir = json::array();
  std::uint64_t offset = 0;
  for (const auto& t : a.tensors) {
    const std::size_t n = shape_size(t.shape);
    const std::size_t stored = t.dtype == DType::F32 ? t.f32.size() : t.i8.size();
    if (stored != n) throw Error(Errc::ShapeMismatch, "tensor " + t.name + " holds " + std::to_string(stored) +
                                                          " values for shape " + shape_string(t.shape));
    json e = {{"name", t.name},
              {"shape", t.shape},
              {"dtype", dtype_name(t.dtype)},
              {"offset", offset},
              {"length", n * element_bytes(t.dtype)}};
    if (t.dtype == DType::I8) {
      e["scale"] = t.scale;
      e["zero_point"] = t.zero_point;
    }
    dir.push_back(std::move(e));
    offset += n * element_bytes(t.dtype);
  }
  json ranges = json::object();
  for (const auto& [name, r] : a.activation_ranges) ranges[name] = {r.min, r.max};
  const json header = {{"model", to_json(a.model)},
                       {"features", to_json(a.features)},
                       {"labels", a.labels},
                       {"quantized", a.quantized},
                       {"tensors", std::move(dir)},
                       {"activation_ranges", std::move(ranges)}};
  const std::string text = header.dump();

  Bytes out;
  out.reserve(16 + text.size() + offset);
  out.insert(out.end(), std::begin(kMagic), std::end(kMagic));
  put_u32(out, kArtifactVersion);
  put_u64(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& t : a.tensors) {
    if (t.dtype == DType::F32) {
      for (float v : t.f32) put_u32(out, std::bit_cast<std::uint32_t>(v));
    } else {
      for (std::int8_t v : t.i8) out.push_back(static_cast<std::uint8_t>(v));
    }
  }
  return out;
}

ModelArtifact deserialize_model(std::span<const std::uint8_t> bytes) {
  if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic, 4) != 0) {
    throw Error(Errc::BadMagic, "not a model artifact (magic mismatch)");
  }
  if (bytes.size() < 16) corrupt("file shorter than the fixed preamble");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kArtifactVersion) {
    throw Error(Errc::VersionUnsupported, "artifact version " + std::to_string(version) + ", this build reads " +
                                              std::to_string(kArtifactVersion));
  }
  const std::uint64_t header_len = get_u64(bytes.data() + 8);
  if (header_len > bytes.size() - 16) corrupt("header length exceeds file size");
  const std::span<const std::uint8_t> blob = bytes.subspan(16 + header_len);

  ModelArtifact a;
  try {
    const json h = json::parse(bytes.begin() + 16, bytes.begin() + 16 + static_cast<std::ptrdiff_t>(header_len));
    read_json(h.at("model"), a.model);
    read_json(h.at("features"), a.features);
    a.labels = h.at("labels").get<std::vector<std::string>>();
    a.quantized = h.at("quantized").get<bool>();
    for (const auto& [name, r] : h.at("activation_ranges").items()) {
      a.activation_ranges[name] = ActivationRange{r.at(0).get<float>(), r.at(1).get<float>()};
    }

    std::uint64_t expected_offset = 0;
    std::set<std::string> names;
    for (const auto& e : h.at("tensors")) {
      NamedTensor t;
      t.name = e.at("name").get<std::string>();
      if (!names.insert(t.name).second) corrupt("duplicate tensor " + t.name);
      t.shape = e.at("shape").get<Shape>();
      const auto dtype = e.at("dtype").get<std::string>();
      if (dtype == "f32") {
        t.dtype = DType::F32;
      } else if (dtype == "i8") {
        t.dtype = DType::I8;
        t.scale = e.at("scale").get<float>();
        t.zero_point = e.at("zero_point").get<std::int32_t>();
        if (!(t.scale > 0) || t.zero_point < -128 || t.zero_point > 127) corrupt("bad quantization of " + t.name);
      } else {
        corrupt("tensor " + t.name + " has unknown dtype " + dtype);
      }
      const std::uint64_t offset = e.at("offset").get<std::uint64_t>();
      const std::uint64_t length = e.at("length").get<std::uint64_t>();
      const std::size_t n = shape_size(t.shape);
      if (offset != expected_offset || length != n * element_bytes(t.dtype)) {
        corrupt("tensor " + t.name + " directory entry does not match the blob layout");
      }
      if (offset + length > blob.size()) corrupt("blob section truncated inside tensor " + t.name);
      const std::uint8_t* p = blob.data() + offset;
      if (t.dtype == DType::F32) {
        t.f32.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.f32[i] = std::bit_cast<float>(get_u32(p + 4 * i));
      } else {
        t.i8.resize(n);
        for (std::size_t i = 0; i < n; ++i) t.i8[i] = static_cast<std::int8_t>(p[i]);
      }
      expected_offset += length;
      a.tensors.push_back(std::move(t));
    }
    if (expected_offset != blob.size()) corrupt("blob section has " + std::to_string(blob.size()) +
                                                " bytes, directory describes " + std::to_string(expected_offset));
  } catch (const json::exception& e) {
    corrupt(std::string("unreadable header: ") + e.what());
  } catch (const Error& e) {
    if (e.code() == Errc::CorruptDirectory) throw;
    corrupt(std::string("invalid header: ") + e.what());
  }
  if (a.labels.size() != a.model.classes) corrupt("label list length does not match class count");
  return a;
}

void save_model(const ModelArtifact& artifact, const std::filesystem::path& path) {
  write_file(path, serialize_model(artifact));
}

ModelArtifact load_model(const std::filesystem::path& path) { return deserialize_model(read_file(path)); }

// ---------------------------------------------------------------------------
// Quantization

QuantParams choose_quant_params(float min, float max) {
  if (!std::isfinite(min) || !std::isfinite(max) || min > max) {
    throw Error(Errc::BadConfig, "invalid quantization range");
  }
  double lo = std::min(0.0, static_cast<double>(min));
  double hi = std::max(0.0, static_cast<double>(max));
  if (hi - lo < kQuantEpsilon) {
    lo = -static_cast<double>(kQuantEpsilon);
    hi = static_cast<double>(kQuantEpsilon);
  }
  float scale = static_cast<float>((hi - lo) / 255.0);
  // The float scale must still span the range, otherwise the top end clamps past scale/2.
  while (255.0 * static_cast<double>(scale) < hi - lo) scale = std::nextafter(scale, std::numeric_limits<float>::max());
  const double zp = std::round(-lo / static_cast<double>(scale)) - 128.0;
  return QuantParams{scale, static_cast<std::int32_t>(std::clamp(zp, -128.0, 127.0))};
}

std::int8_t quantize_value(double v, QuantParams q) noexcept {
  const double r = std::round(v / static_cast<double>(q.scale)) + q.zero_point;
  return static_cast<std::int8_t>(std::clamp(r, -128.0, 127.0));
}

NamedTensor quantize_tensor(const NamedTensor& t) {
  if (t.dtype == DType::I8) return t;
  NamedTensor q;
  q.name = t.name;
  q.shape = t.shape;
  q.dtype = DType::I8;
  float lo = 0.0f, hi = 0.0f;
  if (!t.f32.empty()) {
    const auto [mn, mx] = std::minmax_element(t.f32.begin(), t.f32.end());
    lo = *mn;
    hi = *mx;
  }
  const QuantParams p = choose_quant_params(lo, hi);
  q.scale = p.scale;
  q.zero_point = p.zero_point;
  q.i8.resize(t.f32.size());
  for (std::size_t i = 0; i < t.f32.size(); ++i) q.i8[i] = quantize_value(t.f32[i], p);
  return q;
}

std::vector<double> tensor_values(const NamedTensor& t) {
  if (t.dtype == DType::F32) return {t.f32.begin(), t.f32.end()};
  const QuantParams p{t.scale, t.zero_point};
  std::vector<double> out(t.i8.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = dequantize_value(t.i8[i], p);
  return out;
}

namespace {

bool weight_bearing(LayerKind k) { return k == LayerKind::Conv2D || k == LayerKind::Dense || k == LayerKind::Lstm; }

// The hidden state fed back into an LSTM is o * tanh(c), always inside (-1, 1).
std::string hidden_range_name(const std::string& layer) { return layer + ".h"; }

ModelArtifact dequantized(const ModelArtifact& a) {
  ModelArtifact f = a;
  f.quantized = false;
  f.activation_ranges.clear();
  for (auto& t : f.tensors) {
    if (t.dtype == DType::I8) {
      const auto values = tensor_values(t);
      t.f32.assign(values.begin(), values.end());
      t.i8.clear();
      t.dtype = DType::F32;
      t.scale = 1.0f;
      t.zero_point = 0;
    }
  }
  return f;
}

}  // namespace

ModelArtifact quantize_int8(const ModelArtifact& float_artifact, const Tensor& calibration) {
  if (float_artifact.quantized) throw Error(Errc::BadConfig, "artifact is already quantized");
  if (calibration.rank() != 3 || calibration.dim(0) == 0) {
    throw Error(Errc::EmptyCalibration, "calibration batch is empty");
  }
  const Network net = Network::from_artifact(float_artifact);

  std::map<std::string, ActivationRange> ranges;
  ForwardContext ctx;
  ctx.observe = [&](std::string_view layer, const Tensor& input) {
    if (input.data.empty()) return;
    const auto [mn, mx] = std::minmax_element(input.data.begin(), input.data.end());
    auto [it, fresh] = ranges.try_emplace(std::string(layer), ActivationRange{static_cast<float>(*mn),
                                                                              static_cast<float>(*mx)});
    if (!fresh) {
      it->second.min = std::min(it->second.min, static_cast<float>(*mn));
      it->second.max = std::max(it->second.max, static_cast<float>(*mx));
    }
  };
  const std::size_t n = calibration.dim(0), cells = calibration.dim(1) * calibration.dim(2);
  constexpr std::size_t kBatch = 256;
  for (std::size_t start = 0; start < n; start += kBatch) {
    const std::size_t end = std::min(n, start + kBatch);
    Tensor chunk({end - start, calibration.dim(1), calibration.dim(2)});
    std::copy_n(calibration.ptr() + start * cells, (end - start) * cells, chunk.ptr());
    net.logits(chunk, ctx);
  }
  for (const auto& layer : net.layers()) {
    if (layer->kind() == LayerKind::Lstm) ranges[hidden_range_name(layer->name())] = ActivationRange{-1.0f, 1.0f};
  }

  ModelArtifact q = float_artifact;
  q.quantized = true;
  q.activation_ranges = std::move(ranges);
  for (auto& t : q.tensors) {
    if (!t.name.starts_with("input.")) t = quantize_tensor(t);
  }
  return q;
}

// ---------------------------------------------------------------------------
// Classifier

namespace {

using IMat = Eigen::Matrix<std::int32_t, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using DMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct QWeight {
  IMat centered;  // q - zero_point
  double scale = 1.0;
};

QWeight load_qweight(const NamedTensor& t, Eigen::Index rows, Eigen::Index cols) {
  QWeight w;
  w.scale = t.scale;
  w.centered.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows * cols; ++i) {
    w.centered.data()[i] = static_cast<std::int32_t>(t.i8[static_cast<std::size_t>(i)]) - t.zero_point;
  }
  return w;
}

void quantize_centered(const double* src, std::size_t n, QuantParams q, std::int32_t* dst) {
  for (std::size_t i = 0; i < n; ++i) dst[i] = static_cast<std::int32_t>(quantize_value(src[i], q)) - q.zero_point;
}

struct QLayer {
  QuantParams input;
  QWeight w;
  QWeight w_h;  // LSTM recurrent weights
  QuantParams hidden;
  std::vector<double> bias;
};

}  // namespace

struct Classifier::Impl {
  ModelArtifact artifact;
  Network net;
  std::map<std::string, QLayer> qlayers;

  explicit Impl(ModelArtifact a) : artifact(std::move(a)), net(Network::from_artifact(dequantized(artifact))) {
    if (!artifact.quantized) return;
    for (const auto& layer : net.layers()) {
      if (!weight_bearing(layer->kind())) continue;
      const std::string& name = layer->name();
      const auto range = artifact.activation_ranges.find(name);
      if (range == artifact.activation_ranges.end()) corrupt("quantized artifact lacks activation range for " + name);
      QLayer ql;
      ql.input = choose_quant_params(range->second.min, range->second.max);
      auto tensor = [&](std::size_t index) -> const NamedTensor& {
        const NamedTensor* t = artifact.find(net.params()[index].name);
        if (!t || t->dtype != DType::I8) corrupt("tensor " + net.params()[index].name + " is not int8");
        return *t;
      };
      auto bias_of = [&](std::size_t index) { return tensor_values(tensor(index)); };
      if (const auto* c = dynamic_cast<const Conv2D*>(layer.get())) {
        const auto rows = static_cast<Eigen::Index>(c->out_channels());
        const auto cols = static_cast<Eigen::Index>(c->in_channels() * c->kernel() * c->kernel());
        ql.w = load_qweight(tensor(c->weight_index()), rows, cols);
        ql.bias = bias_of(c->bias_index());
      } else if (const auto* d = dynamic_cast<const Dense*>(layer.get())) {
        ql.w = load_qweight(tensor(d->weight_index()), static_cast<Eigen::Index>(d->out_features()),
                            static_cast<Eigen::Index>(d->in_features()));
        ql.bias = bias_of(d->bias_index());
      } else if (const auto* l = dynamic_cast<const Lstm*>(layer.get())) {
        const auto g = static_cast<Eigen::Index>(4 * l->hidden());
        ql.w = load_qweight(tensor(l->input_weight_index()), g, static_cast<Eigen::Index>(l->in_features()));
        ql.w_h = load_qweight(tensor(l->recurrent_weight_index()), g, static_cast<Eigen::Index>(l->hidden()));
        ql.bias = bias_of(l->bias_index());
        const auto h = artifact.activation_ranges.find(hidden_range_name(name));
        ql.hidden = h == artifact.activation_ranges.end() ? choose_quant_params(-1.0f, 1.0f)
                                                          : choose_quant_params(h->second.min, h->second.max);
      }
      qlayers.emplace(name, std::move(ql));
    }
  }

  Tensor conv(const Conv2D& c, const QLayer& q, const Tensor& x) const {
    const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3), k = c.kernel();
    if (ch != c.in_channels() || h < k || w < k) throw Error(Errc::ShapeMismatch, c.name() + ": bad input");
    const std::size_t ho = h - k + 1, wo = w - k + 1, rows = ch * k * k, cols = ho * wo, out_ch = c.out_channels();
    std::vector<std::int32_t> xq(x.size());
    quantize_centered(x.ptr(), x.size(), q.input, xq.data());
    const double scale = static_cast<double>(q.input.scale) * q.w.scale;
    Tensor y({n, out_ch, ho, wo});
    IMat col(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    IMat acc;
    for (std::size_t s = 0; s < n; ++s) {
      const std::int32_t* in = xq.data() + s * ch * h * w;
      for (std::size_t c0 = 0; c0 < ch; ++c0) {
        for (std::size_t ky = 0; ky < k; ++ky) {
          for (std::size_t kx = 0; kx < k; ++kx) {
            std::int32_t* dst = col.data() + ((c0 * k + ky) * k + kx) * cols;
            for (std::size_t oy = 0; oy < ho; ++oy) std::copy_n(in + (c0 * h + oy + ky) * w + kx, wo, dst + oy * wo);
          }
        }
      }
      acc.noalias() = q.w.centered * col;
      double* out = y.ptr() + s * out_ch * cols;
      for (std::size_t o = 0; o < out_ch; ++o) {
        for (std::size_t j = 0; j < cols; ++j) {
          out[o * cols + j] = scale * acc(static_cast<Eigen::Index>(o), static_cast<Eigen::Index>(j)) + q.bias[o];
        }
      }
    }
    return y;
  }

  Tensor dense(const Dense& d, const QLayer& q, const Tensor& x) const {
    const std::size_t n = x.dim(0), in = d.in_features(), out = d.out_features();
    if (x.rank() != 2 || x.dim(1) != in) throw Error(Errc::ShapeMismatch, d.name() + ": bad input");
    IMat xq(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(in));
    quantize_centered(x.ptr(), x.size(), q.input, xq.data());
    const IMat acc = xq * q.w.centered.transpose();
    const double scale = static_cast<double>(q.input.scale) * q.w.scale;
    Tensor y({n, out});
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t o = 0; o < out; ++o) {
        y.data[r * out + o] = scale * acc(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(o)) + q.bias[o];
      }
    }
    return y;
  }

  Tensor lstm(const Lstm& l, const QLayer& q, const Tensor& x) const {
    const std::size_t n = x.dim(0), steps = x.dim(1), in = l.in_features(), hd = l.hidden(), g4 = 4 * hd;
    if (x.rank() != 3 || x.dim(2) != in) throw Error(Errc::ShapeMismatch, l.name() + ": bad input");
    const auto N = static_cast<Eigen::Index>(n), H = static_cast<Eigen::Index>(hd);
    IMat xq(static_cast<Eigen::Index>(n * steps), static_cast<Eigen::Index>(in));
    quantize_centered(x.ptr(), x.size(), q.input, xq.data());
    const IMat xw = xq * q.w.centered.transpose();  // row s*T + t
    const double sx = static_cast<double>(q.input.scale) * q.w.scale;
    const double sh = static_cast<double>(q.hidden.scale) * q.w_h.scale;

    Tensor y({n, steps, hd});
    DMat h = DMat::Zero(N, H), c = DMat::Zero(N, H);
    IMat hq(N, H), hw;
    auto sigmoid = [](double v) { return 1.0 / (1.0 + std::exp(-v)); };
    for (std::size_t t = 0; t < steps; ++t) {
      quantize_centered(h.data(), n * hd, q.hidden, hq.data());
      hw.noalias() = hq * q.w_h.centered.transpose();
      for (std::size_t s = 0; s < n; ++s) {
        const std::int32_t* ax = xw.data() + (s * steps + t) * g4;
        const std::int32_t* ah = hw.data() + s * g4;
        auto z = [&](std::size_t j) { return sx * ax[j] + sh * ah[j] + q.bias[j]; };
        for (std::size_t j = 0; j < hd; ++j) {
          const double ig = sigmoid(z(j));
          const double fg = sigmoid(z(hd + j));
          const double gg = std::tanh(z(2 * hd + j));
          const double og = sigmoid(z(3 * hd + j));
          const auto si = static_cast<Eigen::Index>(s), ji = static_cast<Eigen::Index>(j);
          c(si, ji) = fg * c(si, ji) + ig * gg;
          h(si, ji) = og * std::tanh(c(si, ji));
          y.data[(s * steps + t) * hd + j] = h(si, ji);
        }
      }
    }
    return y;
  }

  Tensor logits(const Tensor& batch) const {
    if (!artifact.quantized) return net.logits(batch);
    Tensor x = net.prepare_input(batch);
    for (const auto& layer : net.layers()) {
      const auto it = qlayers.find(layer->name());
      if (it == qlayers.end()) {
        x = layer->forward(x, net.params(), nullptr, ForwardContext{});
      } else if (const auto* c = dynamic_cast<const Conv2D*>(layer.get())) {
        x = conv(*c, it->second, x);
      } else if (const auto* d = dynamic_cast<const Dense*>(layer.get())) {
        x = dense(*d, it->second, x);
      } else {
        x = lstm(static_cast<const Lstm&>(*layer), it->second, x);
      }
    }
    return x;
  }
};

Classifier::Classifier(ModelArtifact artifact) : impl_(std::make_unique<Impl>(std::move(artifact))) {}
Classifier::~Classifier() = default;
Classifier::Classifier(Classifier&&) noexcept = default;
Classifier& Classifier::operator=(Classifier&&) noexcept = default;

const ModelArtifact& Classifier::artifact() const noexcept { return impl_->artifact; }

Tensor Classifier::logits(const Tensor& batch) const { return impl_->logits(batch); }

Tensor Classifier::predict_proba(const Tensor& batch) const { return softmax_rows(logits(batch)); }

FeatureMatrix Classifier::features(const AudioClip& clip) const {
  const auto& fc = impl_->artifact.features;
  const auto& mc = impl_->artifact.model;
  if (clip.sample_rate() != fc.sample_rate) {
    throw Error(Errc::RateMismatch, "clip is " + std::to_string(clip.sample_rate()) + " Hz, model expects " +
                                        std::to_string(fc.sample_rate) + " Hz");
  }
  if (fc.frames_for(clip.size()) == mc.input_frames) return compute_features(clip, mc.feature_kind, fc);
  const std::size_t len = (mc.input_frames - 1) * static_cast<std::size_t>(fc.hop) + static_cast<std::size_t>(fc.frame_len);
  return compute_features(pad_or_trim(clip, len), mc.feature_kind, fc);
}

EvalReport Classifier::evaluate(const LabeledFeatures& data, std::size_t batch_size) const {
  const std::size_t classes = impl_->artifact.model.classes;
  Tensor probs({data.size(), classes});
  std::vector<std::size_t> idx;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t end = std::min(data.size(), start + batch_size);
    idx.resize(end - start);
    std::iota(idx.begin(), idx.end(), start);
    const Tensor p = predict_proba(data.batch(idx));
    std::copy(p.data.begin(), p.data.end(), probs.ptr() + start * classes);
  }
  return evaluate_probabilities(probs, data.labels, classes);
}

// ---------------------------------------------------------------------------
// Streaming detector

void DetectorConfig::validate() const {
  if (!(window_ms > 0) || !(hop_ms > 0) || hop_ms > window_ms) {
    throw Error(Errc::BadConfig, "detector needs 0 < hop_ms <= window_ms");
  }
  if (!(threshold > 0 && threshold < 1)) throw Error(Errc::BadConfig, "detector threshold must be in (0, 1)");
  if (smooth_k < 1) throw Error(Errc::BadConfig, "smooth_k must be >= 1");
  if (refractory_ms < 0) throw Error(Errc::BadConfig, "refractory_ms must be >= 0");
}

StreamDetector::StreamDetector(std::shared_ptr<const Classifier> model, DetectorConfig cfg, int stream_rate)
    : model_(std::move(model)), cfg_(std::move(cfg)), rate_(stream_rate) {
  cfg_.validate();
  if (!model_) throw Error(Errc::BadConfig, "detector needs a model");
  if (stream_rate != model_->artifact().features.sample_rate) {
    throw Error(Errc::RateMismatch, "stream is " + std::to_string(stream_rate) + " Hz, model expects " +
                                        std::to_string(model_->artifact().features.sample_rate) + " Hz");
  }
  window_ = static_cast<std::size_t>(std::llround(cfg_.window_ms * rate_ / 1000.0));
  hop_ = std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(cfg_.hop_ms * rate_ / 1000.0)));
  ring_.assign(window_, 0.0);
  next_hop_at_ = static_cast<std::int64_t>(window_);
  const auto& labels = model_->labels();
  last_event_ms_.assign(labels.size(), std::numeric_limits<std::int64_t>::min());
  emits_.resize(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) emits_[i] = labels[i] != kUnknownLabel && labels[i] != kSilenceLabel;
}

std::vector<DetectionEvent> StreamDetector::feed(std::span<const double> samples) {
  std::vector<DetectionEvent> events;
  std::size_t i = 0;
  while (i < samples.size()) {
    const auto room = static_cast<std::size_t>(next_hop_at_ - total_);
    const std::size_t take = std::min(room, samples.size() - i);
    for (std::size_t j = 0; j < take; ++j) {
      ring_[ring_pos_] = std::clamp(samples[i + j], -1.0, 1.0);
      ring_pos_ = ring_pos_ + 1 == window_ ? 0 : ring_pos_ + 1;
    }
    i += take;
    total_ += static_cast<std::int64_t>(take);
    if (total_ == next_hop_at_) {
      auto fired = run_hop();
      events.insert(events.end(), fired.begin(), fired.end());
      next_hop_at_ += static_cast<std::int64_t>(hop_);
    }
  }
  return events;
}

std::vector<DetectionEvent> StreamDetector::feed_pcm16(std::span<const std::int16_t> samples) {
  std::vector<double> converted(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) converted[i] = samples[i] / 32768.0;
  return feed(converted);
}

std::vector<DetectionEvent> StreamDetector::run_hop() {
  std::vector<double> window(window_);
  std::copy(ring_.begin() + static_cast<std::ptrdiff_t>(ring_pos_), ring_.end(), window.begin());
  std::copy(ring_.begin(), ring_.begin() + static_cast<std::ptrdiff_t>(ring_pos_),
            window.begin() + static_cast<std::ptrdiff_t>(window_ - ring_pos_));
  const FeatureMatrix f = model_->features(AudioClip(std::move(window), rate_));
  const Tensor p = model_->predict_proba(Tensor({1, f.frames, f.coeffs}, f.data));

  history_.emplace_back(p.data);
  if (history_.size() > static_cast<std::size_t>(cfg_.smooth_k)) history_.erase(history_.begin());
  last_smoothed_.assign(p.data.size(), 0.0);
  for (const auto& h : history_) {
    for (std::size_t c = 0; c < h.size(); ++c) last_smoothed_[c] += h[c];
  }
  for (double& v : last_smoothed_) v /= static_cast<double>(history_.size());

  const std::int64_t now_ms = total_ * 1000 / rate_;
  std::vector<DetectionEvent> events;
  for (std::size_t c = 0; c < last_smoothed_.size(); ++c) {
    if (!emits_[c] || last_smoothed_[c] < cfg_.threshold) continue;
    const std::int64_t last = last_event_ms_[c];
    if (last != std::numeric_limits<std::int64_t>::min() && static_cast<double>(now_ms - last) < cfg_.refractory_ms) {
      continue;
    }
    last_event_ms_[c] = now_ms;
    events.push_back(DetectionEvent{model_->labels()[c], now_ms, last_smoothed_[c]});
  }
  return events;
}

std::vector<DetectionEvent> stream_detect(const AudioClip& clip, std::shared_ptr<const Classifier> model,
                                          const DetectorConfig& cfg) {
  StreamDetector det(std::move(model), cfg, clip.sample_rate());
  const auto samples = clip.view();
  const std::size_t chunk = std::max<std::size_t>(1, static_cast<std::size_t>(cfg.hop_ms * clip.sample_rate() / 1000.0));
  std::vector<DetectionEvent> events;
  for (std::size_t start = 0; start < samples.size(); start += chunk) {
    const std::size_t n = std::min(chunk, samples.size() - start);
    auto fired = det.feed(samples.subspan(start, n));
    events.insert(events.end(), fired.begin(), fired.end());
  }
  return events;
}

}  // namespace hakw
