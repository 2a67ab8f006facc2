#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <numbers>

namespace hakw::testkit {

namespace {

constexpr double kPi = std::numbers::pi;

double mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
double hz(double m) { return 700.0 * (std::pow(10.0, m / 2595.0) - 1.0); }

}  // namespace

std::vector<std::vector<double>> naive_power_spectrum(const std::vector<double>& x, const FeatureConfig& cfg) {
  const std::size_t L = static_cast<std::size_t>(cfg.frame_len), N = static_cast<std::size_t>(cfg.fft_size);
  const std::size_t hop = static_cast<std::size_t>(cfg.hop);
  std::vector<std::vector<double>> out;
  for (std::size_t start = 0; start + L <= x.size(); start += hop) {
    std::vector<double> row(N / 2 + 1);
    for (std::size_t k = 0; k <= N / 2; ++k) {
      double re = 0.0, im = 0.0;
      for (std::size_t n = 0; n < L; ++n) {
        const double w = cfg.window == WindowKind::Hann ? 0.5 * (1.0 - std::cos(2.0 * kPi * n / L)) : 1.0;
        const double angle = 2.0 * kPi * static_cast<double>((k * n) % N) / static_cast<double>(N);
        re += x[start + n] * w * std::cos(angle);
        im -= x[start + n] * w * std::sin(angle);
      }
      row[k] = re * re + im * im;
    }
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<double>> naive_log_mel(const std::vector<double>& x, const FeatureConfig& cfg) {
  const auto power = naive_power_spectrum(x, cfg);
  const int M = cfg.n_mels;
  std::vector<std::vector<double>> out;
  for (const auto& row : power) {
    std::vector<double> energies(static_cast<std::size_t>(M));
    for (int m = 0; m < M; ++m) {
      // Triangle m spans mel points m, m+1, m+2 of M+2 equally spaced points.
      const double step = (mel(cfg.fmax) - mel(cfg.fmin)) / (M + 1);
      const double lo = hz(mel(cfg.fmin) + step * m);
      const double mid = hz(mel(cfg.fmin) + step * (m + 1));
      const double hi = hz(mel(cfg.fmin) + step * (m + 2));
      double e = 0.0;
      for (std::size_t k = 0; k < row.size(); ++k) {
        const double f = static_cast<double>(k) * cfg.sample_rate / cfg.fft_size;
        double w = 0.0;
        if (f > lo && f <= mid) w = (f - lo) / (mid - lo);
        if (f > mid && f < hi) w = (hi - f) / (hi - mid);
        e += w * row[k];
      }
      energies[static_cast<std::size_t>(m)] = std::log(std::max(e, cfg.log_floor));
    }
    out.push_back(std::move(energies));
  }
  return out;
}

std::vector<std::vector<double>> naive_mfcc(const std::vector<double>& x, const FeatureConfig& cfg) {
  const auto logmel = naive_log_mel(x, cfg);
  const int M = cfg.n_mels;
  std::vector<std::vector<double>> out;
  for (const auto& row : logmel) {
    std::vector<double> c(static_cast<std::size_t>(cfg.n_mfcc));
    for (int k = 0; k < cfg.n_mfcc; ++k) {
      double acc = 0.0;
      for (int m = 0; m < M; ++m) acc += row[static_cast<std::size_t>(m)] * std::cos(kPi * k * (m + 0.5) / M);
      c[static_cast<std::size_t>(k)] = acc * std::sqrt((k == 0 ? 1.0 : 2.0) / M);
    }
    out.push_back(std::move(c));
  }
  return out;
}

double rel_error(double a, double b) { return std::abs(a - b) / std::max({1e-6, std::abs(a), std::abs(b)}); }

GradCheck check_network_gradients(Network& net, const Tensor& batch, const std::vector<int>& labels,
                                  std::uint64_t dropout_seed, double h) {
  std::vector<Tensor> grads;
  {
    Rng rng(dropout_seed);
    net.loss_and_gradients(batch, labels, rng, grads);
  }
  auto loss_at = [&] {
    Rng rng(dropout_seed);
    std::vector<Tensor> scratch;
    return net.loss_and_gradients(batch, labels, rng, scratch);
  };
  GradCheck result;
  auto& params = net.params();
  for (std::size_t p = 0; p < params.size(); ++p) {
    if (!params[p].trainable) continue;
    auto& w = params[p].value.data;
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double saved = w[i];
      w[i] = saved + h;
      const double up = loss_at();
      w[i] = saved - h;
      const double down = loss_at();
      w[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(numeric, grads[p].data[i]);
      ++result.checked;
      if (err > result.max_rel_error) {
        result.max_rel_error = err;
        char buf[96];
        std::snprintf(buf, sizeof buf, " analytic %.6g numeric %.6g", grads[p].data[i], numeric);
        result.worst = params[p].name + "[" + std::to_string(i) + "]" + buf;
      }
    }
  }
  return result;
}

std::optional<std::size_t> naive_first_speech(const std::vector<double>& x, int rate, double frame_ms,
                                              double speech_rms) {
  const auto frame = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(frame_ms * rate / 1000.0)), 1,
                                             x.size());
  for (std::size_t start = 0; start + frame <= x.size(); ++start) {
    double e = 0.0;
    for (std::size_t i = start; i < start + frame; ++i) e += x[i] * x[i];
    if (std::sqrt(e / static_cast<double>(frame)) >= speech_rms) return start;
  }
  return std::nullopt;
}

}  // namespace hakw::testkit
