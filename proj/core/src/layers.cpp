#include <algorithm>
#include <cmath>

#include <Eigen/Core>

#include "hakw/error.hpp"
#include "hakw/nn.hpp"

namespace hakw {

namespace {

using MatRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Map = Eigen::Map<MatRM>;
using CMap = Eigen::Map<const MatRM>;
using VecMap = Eigen::Map<Eigen::RowVectorXd>;
using CVecMap = Eigen::Map<const Eigen::RowVectorXd>;

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

void expect_rank(const Tensor& x, std::size_t rank, const std::string& who) {
  if (x.rank() != rank) {
    throw Error(Errc::ShapeMismatch, who + " expects rank " + std::to_string(rank) + ", got " + shape_string(x.shape));
  }
}

}  // namespace

// ---------------------------------------------------------------------------
// Conv2D

Conv2D::Conv2D(std::string name, std::size_t weight, std::size_t bias, std::size_t in_ch, std::size_t out_ch,
               std::size_t kernel)
    : Layer(std::move(name)), weight_(weight), bias_(bias), in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel) {}

Tensor Conv2D::forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                       const ForwardContext&) const {
  expect_rank(x, 4, name());
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3), k = kernel_;
  if (c != in_ch_ || h < k || w < k) throw Error(Errc::ShapeMismatch, name() + ": bad input " + shape_string(x.shape));
  const std::size_t ho = h - k + 1, wo = w - k + 1, rows = c * k * k, cols = ho * wo;

  const CMap weight(params[weight_].value.ptr(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
  const CVecMap bias(params[bias_].value.ptr(), static_cast<Eigen::Index>(out_ch_));

  Tensor y({n, out_ch_, ho, wo});
  Tensor col_store;
  if (cache) col_store = Tensor({n, rows, cols});
  MatRM local(rows, cols);
  for (std::size_t s = 0; s < n; ++s) {
    double* col = cache ? col_store.ptr() + s * rows * cols : local.data();
    const double* in = x.ptr() + s * c * h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          double* dst = col + ((ch * k + ky) * k + kx) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            const double* src = in + (ch * h + oy + ky) * w + kx;
            std::copy_n(src, wo, dst + oy * wo);
          }
        }
      }
    }
    const CMap colm(col, static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    Map out(y.ptr() + s * out_ch_ * cols, static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(cols));
    out.noalias() = weight * colm;
    out.colwise() += bias.transpose();
  }
  if (cache) {
    cache->tensors = {std::move(col_store)};
    cache->indices = {n, c, h, w};
  }
  return y;
}

Tensor Conv2D::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                        std::span<Tensor> grads) const {
  const std::size_t n = cache.indices[0], c = cache.indices[1], h = cache.indices[2], w = cache.indices[3];
  const std::size_t k = kernel_, ho = h - k + 1, wo = w - k + 1, rows = c * k * k, cols = ho * wo;
  const Tensor& col_store = cache.tensors[0];

  const CMap weight(params[weight_].value.ptr(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
  Map dweight(grads[weight_].ptr(), static_cast<Eigen::Index>(out_ch_), static_cast<Eigen::Index>(rows));
  VecMap dbias(grads[bias_].ptr(), static_cast<Eigen::Index>(out_ch_));

  Tensor dx({n, c, h, w});
  MatRM dcol(rows, cols);
  for (std::size_t s = 0; s < n; ++s) {
    const CMap dout(grad_out.ptr() + s * out_ch_ * cols, static_cast<Eigen::Index>(out_ch_),
                    static_cast<Eigen::Index>(cols));
    const CMap colm(col_store.ptr() + s * rows * cols, static_cast<Eigen::Index>(rows),
                    static_cast<Eigen::Index>(cols));
    dweight.noalias() += dout * colm.transpose();
    dbias += dout.rowwise().sum().transpose();
    dcol.noalias() = weight.transpose() * dout;
    double* in = dx.ptr() + s * c * h * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        for (std::size_t kx = 0; kx < k; ++kx) {
          const double* src = dcol.data() + ((ch * k + ky) * k + kx) * cols;
          for (std::size_t oy = 0; oy < ho; ++oy) {
            double* dst = in + (ch * h + oy + ky) * w + kx;
            for (std::size_t ox = 0; ox < wo; ++ox) dst[ox] += src[oy * wo + ox];
          }
        }
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------
// ReLU

Tensor Relu::forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const {
  Tensor y = x;
  for (double& v : y.data) v = v > 0.0 ? v : 0.0;
  if (cache) cache->tensors = {y};
  return y;
}

Tensor Relu::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                      std::span<Tensor>) const {
  Tensor dx = grad_out;
  const auto& y = cache.tensors[0].data;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (!(y[i] > 0.0)) dx.data[i] = 0.0;
  }
  return dx;
}

// ---------------------------------------------------------------------------
// MaxPool

Tensor MaxPool::forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const {
  expect_rank(x, 4, name());
  const std::size_t n = x.dim(0), c = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t ho = h / size_, wo = w / size_;
  if (ho == 0 || wo == 0) throw Error(Errc::ShapeMismatch, name() + ": input smaller than pool");
  Tensor y({n, c, ho, wo});
  std::vector<std::size_t> arg(y.size());
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const double* in = x.ptr() + plane * h * w;
    for (std::size_t oy = 0; oy < ho; ++oy) {
      for (std::size_t ox = 0; ox < wo; ++ox) {
        std::size_t best = (oy * size_) * w + ox * size_;
        for (std::size_t dy = 0; dy < size_; ++dy) {
          for (std::size_t dx = 0; dx < size_; ++dx) {
            const std::size_t idx = (oy * size_ + dy) * w + ox * size_ + dx;
            if (in[idx] > in[best]) best = idx;  // strict: first index wins ties
          }
        }
        const std::size_t o = (plane * ho + oy) * wo + ox;
        y.data[o] = in[best];
        arg[o] = plane * h * w + best;
      }
    }
  }
  if (cache) {
    cache->indices = std::move(arg);
    Tensor shape_only;
    shape_only.shape = x.shape;
    cache->tensors = {std::move(shape_only)};
  }
  return y;
}

Tensor MaxPool::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                         std::span<Tensor>) const {
  Tensor dx(cache.tensors[0].shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) dx.data[cache.indices[o]] += grad_out.data[o];
  return dx;
}

// ---------------------------------------------------------------------------
// Dropout

Tensor Dropout::forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext& ctx) const {
  if (!ctx.training || rate_ <= 0.0) {
    if (cache) cache->tensors.clear();
    return x;
  }
  if (!ctx.dropout_rng) throw Error(Errc::BadConfig, name() + ": training forward needs a dropout generator");
  Tensor mask(x.shape);
  const double keep = 1.0 - rate_;
  for (double& m : mask.data) m = ctx.dropout_rng->uniform() < keep ? 1.0 / keep : 0.0;
  Tensor y = x;
  for (std::size_t i = 0; i < y.size(); ++i) y.data[i] *= mask.data[i];
  if (cache) cache->tensors = {std::move(mask)};
  return y;
}

Tensor Dropout::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                         std::span<Tensor>) const {
  if (cache.tensors.empty()) return grad_out;
  Tensor dx = grad_out;
  const auto& mask = cache.tensors[0].data;
  for (std::size_t i = 0; i < dx.size(); ++i) dx.data[i] *= mask[i];
  return dx;
}

// ---------------------------------------------------------------------------
// Flatten

Tensor Flatten::forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const {
  if (x.rank() < 2) throw Error(Errc::ShapeMismatch, name() + ": needs a batch axis");
  if (cache) cache->indices = x.shape;
  return x.reshaped({x.dim(0), x.size() / x.dim(0)});
}

Tensor Flatten::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                         std::span<Tensor>) const {
  return grad_out.reshaped(cache.indices);
}

// ---------------------------------------------------------------------------
// Dense

Dense::Dense(std::string name, std::size_t weight, std::size_t bias, std::size_t in, std::size_t out)
    : Layer(std::move(name)), weight_(weight), bias_(bias), in_(in), out_(out) {}

Tensor Dense::forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                      const ForwardContext&) const {
  expect_rank(x, 2, name());
  if (x.dim(1) != in_) throw Error(Errc::ShapeMismatch, name() + ": expected " + std::to_string(in_) + " features");
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const CMap in(x.ptr(), n, static_cast<Eigen::Index>(in_));
  const CMap weight(params[weight_].value.ptr(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  const CVecMap bias(params[bias_].value.ptr(), static_cast<Eigen::Index>(out_));
  Tensor y({x.dim(0), out_});
  Map out(y.ptr(), n, static_cast<Eigen::Index>(out_));
  out.noalias() = in * weight.transpose();
  out.rowwise() += bias;
  if (cache) cache->tensors = {x};
  return y;
}

Tensor Dense::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                       std::span<Tensor> grads) const {
  const Tensor& x = cache.tensors[0];
  const auto n = static_cast<Eigen::Index>(x.dim(0));
  const CMap in(x.ptr(), n, static_cast<Eigen::Index>(in_));
  const CMap dout(grad_out.ptr(), n, static_cast<Eigen::Index>(out_));
  const CMap weight(params[weight_].value.ptr(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  Map dweight(grads[weight_].ptr(), static_cast<Eigen::Index>(out_), static_cast<Eigen::Index>(in_));
  VecMap dbias(grads[bias_].ptr(), static_cast<Eigen::Index>(out_));
  dweight.noalias() += dout.transpose() * in;
  dbias += dout.colwise().sum();
  Tensor dx({x.dim(0), in_});
  Map din(dx.ptr(), n, static_cast<Eigen::Index>(in_));
  din.noalias() = dout * weight;
  return dx;
}

// ---------------------------------------------------------------------------
// LSTM

Lstm::Lstm(std::string name, std::size_t w_x, std::size_t w_h, std::size_t bias, std::size_t in, std::size_t hidden)
    : Layer(std::move(name)), w_x_(w_x), w_h_(w_h), bias_(bias), in_(in), hidden_(hidden) {}

// Cache layout: tensors = {x (N,T,F), gates (T,N,4H) post-activation, cells (T+1,N,H), hiddens (T+1,N,H)}.
Tensor Lstm::forward(const Tensor& x, std::span<const Param> params, LayerCache* cache,
                     const ForwardContext&) const {
  expect_rank(x, 3, name());
  if (x.dim(2) != in_) throw Error(Errc::ShapeMismatch, name() + ": expected " + std::to_string(in_) + " features");
  const std::size_t n = x.dim(0), steps = x.dim(1), hd = hidden_, g4 = 4 * hidden_;
  const auto N = static_cast<Eigen::Index>(n), H = static_cast<Eigen::Index>(hd), G = static_cast<Eigen::Index>(g4);

  const CMap w_x(params[w_x_].value.ptr(), G, static_cast<Eigen::Index>(in_));
  const CMap w_h(params[w_h_].value.ptr(), G, H);
  const CVecMap bias(params[bias_].value.ptr(), G);

  // Input projections for every (sample, step) at once: row n*T + t.
  MatRM xw = CMap(x.ptr(), static_cast<Eigen::Index>(n * steps), static_cast<Eigen::Index>(in_)) * w_x.transpose();

  Tensor gates({steps, n, g4});
  Tensor cells({steps + 1, n, hd});
  Tensor hiddens({steps + 1, n, hd});
  Tensor y({n, steps, hd});
  MatRM z(N, G);
  for (std::size_t t = 0; t < steps; ++t) {
    const Eigen::Map<const MatRM, 0, Eigen::OuterStride<>> xw_t(xw.data() + t * g4, N, G,
                                                                Eigen::OuterStride<>(static_cast<Eigen::Index>(steps * g4)));
    const CMap h_prev(hiddens.ptr() + t * n * hd, N, H);
    z.noalias() = h_prev * w_h.transpose();
    z += xw_t;
    z.rowwise() += bias;

    double* gt = gates.ptr() + t * n * g4;
    const double* c_prev = cells.ptr() + t * n * hd;
    double* c_next = cells.ptr() + (t + 1) * n * hd;
    double* h_next = hiddens.ptr() + (t + 1) * n * hd;
    for (std::size_t s = 0; s < n; ++s) {
      const double* zr = z.data() + s * g4;
      double* gr = gt + s * g4;
      for (std::size_t j = 0; j < hd; ++j) {
        const double i = sigmoid(zr[j]);
        const double f = sigmoid(zr[hd + j]);
        const double g = std::tanh(zr[2 * hd + j]);
        const double o = sigmoid(zr[3 * hd + j]);
        gr[j] = i;
        gr[hd + j] = f;
        gr[2 * hd + j] = g;
        gr[3 * hd + j] = o;
        const double c = f * c_prev[s * hd + j] + i * g;
        c_next[s * hd + j] = c;
        const double h = o * std::tanh(c);
        h_next[s * hd + j] = h;
        y.data[(s * steps + t) * hd + j] = h;
      }
    }
  }
  if (cache) cache->tensors = {x, std::move(gates), std::move(cells), std::move(hiddens)};
  return y;
}

Tensor Lstm::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param> params,
                      std::span<Tensor> grads) const {
  const Tensor& x = cache.tensors[0];
  const Tensor& gates = cache.tensors[1];
  const Tensor& cells = cache.tensors[2];
  const Tensor& hiddens = cache.tensors[3];
  const std::size_t n = x.dim(0), steps = x.dim(1), hd = hidden_, g4 = 4 * hidden_;
  const auto N = static_cast<Eigen::Index>(n), H = static_cast<Eigen::Index>(hd), G = static_cast<Eigen::Index>(g4);
  const auto F = static_cast<Eigen::Index>(in_);

  const CMap w_x(params[w_x_].value.ptr(), G, F);
  const CMap w_h(params[w_h_].value.ptr(), G, H);
  Map dw_x(grads[w_x_].ptr(), G, F);
  Map dw_h(grads[w_h_].ptr(), G, H);
  VecMap dbias(grads[bias_].ptr(), G);

  MatRM dz_all(static_cast<Eigen::Index>(n * steps), G);  // row n*T + t
  MatRM dh_next = MatRM::Zero(N, H);
  MatRM dc_next = MatRM::Zero(N, H);
  MatRM dz(N, G);
  for (std::size_t t = steps; t-- > 0;) {
    const double* gt = gates.ptr() + t * n * g4;
    const double* c_prev = cells.ptr() + t * n * hd;
    const double* c_cur = cells.ptr() + (t + 1) * n * hd;
    for (std::size_t s = 0; s < n; ++s) {
      const double* gr = gt + s * g4;
      double* dzr = dz.data() + s * g4;
      for (std::size_t j = 0; j < hd; ++j) {
        const double i = gr[j], f = gr[hd + j], g = gr[2 * hd + j], o = gr[3 * hd + j];
        const double tc = std::tanh(c_cur[s * hd + j]);
        const double dh = grad_out.data[(s * steps + t) * hd + j] + dh_next(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
        const double dc = dh * o * (1.0 - tc * tc) + dc_next(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j));
        dzr[j] = dc * g * i * (1.0 - i);
        dzr[hd + j] = dc * c_prev[s * hd + j] * f * (1.0 - f);
        dzr[2 * hd + j] = dc * i * (1.0 - g * g);
        dzr[3 * hd + j] = dh * tc * o * (1.0 - o);
        dc_next(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(j)) = dc * f;
      }
    }
    const CMap h_prev(hiddens.ptr() + t * n * hd, N, H);
    dw_h.noalias() += dz.transpose() * h_prev;
    dh_next.noalias() = dz * w_h;
    for (std::size_t s = 0; s < n; ++s) {
      dz_all.row(static_cast<Eigen::Index>(s * steps + t)) = dz.row(static_cast<Eigen::Index>(s));
    }
  }
  const CMap xin(x.ptr(), static_cast<Eigen::Index>(n * steps), F);
  dw_x.noalias() += dz_all.transpose() * xin;
  dbias += dz_all.colwise().sum();
  Tensor dx(x.shape);
  Map(dx.ptr(), static_cast<Eigen::Index>(n * steps), F).noalias() = dz_all * w_x;
  return dx;
}

// ---------------------------------------------------------------------------
// LastStep

Tensor LastStep::forward(const Tensor& x, std::span<const Param>, LayerCache* cache, const ForwardContext&) const {
  expect_rank(x, 3, name());
  const std::size_t n = x.dim(0), steps = x.dim(1), hd = x.dim(2);
  Tensor y({n, hd});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(x.ptr() + (s * steps + steps - 1) * hd, hd, y.ptr() + s * hd);
  }
  if (cache) cache->indices = x.shape;
  return y;
}

Tensor LastStep::backward(const LayerCache& cache, const Tensor& grad_out, std::span<const Param>,
                          std::span<Tensor>) const {
  const std::size_t n = cache.indices[0], steps = cache.indices[1], hd = cache.indices[2];
  Tensor dx({n, steps, hd});
  for (std::size_t s = 0; s < n; ++s) {
    std::copy_n(grad_out.ptr() + s * hd, hd, dx.ptr() + (s * steps + steps - 1) * hd);
  }
  return dx;
}

}  // namespace hakw
