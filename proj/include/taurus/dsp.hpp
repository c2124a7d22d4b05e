#pragma once

#include "common.hpp"

#include <fftw3.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <map>
#include <memory>
#include <mutex>

namespace taurus {

using Cx = std::complex<double>;

namespace detail {

// FFTW planning is not thread-safe; execution with fresh aligned buffers is.
class FFTPlans
{
public:
  static auto instance() -> FFTPlans &
  {
    static FFTPlans p;
    return p;
  }

  auto get(int n, int sign) -> fftw_plan
  {
    std::lock_guard lock{mutex_};
    auto            key = std::make_pair(n, sign);
    if (auto it = plans_.find(key); it != plans_.end()) { return it->second; }
    auto *in = fftw_alloc_complex(static_cast<size_t>(n));
    auto *out = fftw_alloc_complex(static_cast<size_t>(n));
    auto  plan = fftw_plan_dft_1d(n, in, out, sign, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(key, plan);
    return plan;
  }

  ~FFTPlans()
  {
    for (auto &kv : plans_) { fftw_destroy_plan(kv.second); }
  }

private:
  FFTPlans() = default;
  std::mutex                               mutex_;
  std::map<std::pair<int, int>, fftw_plan> plans_;
};

struct FFTWBuffer
{
  explicit FFTWBuffer(size_t n)
    : data{fftw_alloc_complex(n)}
  {
  }
  ~FFTWBuffer() { fftw_free(data); }
  FFTWBuffer(FFTWBuffer const &) = delete;
  auto operator=(FFTWBuffer const &) -> FFTWBuffer & = delete;
  fftw_complex *data;
};

inline auto transform(std::span<Cx const> x, int sign) -> std::vector<Cx>
{
  auto const n = x.size();
  if (n == 0) { return {}; }
  auto       plan = FFTPlans::instance().get(static_cast<int>(n), sign);
  FFTWBuffer in{n}, out{n};
  std::copy(x.begin(), x.end(), reinterpret_cast<Cx *>(in.data));
  fftw_execute_dft(plan, in.data, out.data);
  auto const *o = reinterpret_cast<Cx const *>(out.data);
  return {o, o + n};
}

} // namespace detail

/// Forward DFT, X[k] = Σ x[n] e^{-i2πkn/N}.
inline auto fft(std::span<Cx const> x) -> std::vector<Cx> { return detail::transform(x, FFTW_FORWARD); }

inline auto fft(std::span<double const> x) -> std::vector<Cx>
{
  std::vector<Cx> c(x.begin(), x.end());
  return fft(std::span<Cx const>{c});
}

/// Inverse DFT including the 1/N normalisation.
inline auto ifft(std::span<Cx const> x) -> std::vector<Cx>
{
  auto         y = detail::transform(x, FFTW_BACKWARD);
  double const s = 1.0 / static_cast<double>(x.size());
  for (auto &v : y) { v *= s; }
  return y;
}

/// Signed frequency of DFT bin k for an N-point transform at `rate`.
inline auto bin_frequency(Index k, Index n, double rate) -> double
{
  Index const kk = (2 * k > n) ? k - n : k;
  return static_cast<double>(kk) * rate / static_cast<double>(n);
}

/// Index into a sequence of length n with whole-sample symmetric reflection at both ends.
inline auto reflect_index(Index i, Index n) -> Index
{
  if (n == 1) { return 0; }
  Index const p = 2 * (n - 1);
  i %= p;
  if (i < 0) { i += p; }
  return i < n ? i : p - i;
}

// ---------------------------------------------------------------------------------------------
// FIR design

/// Kaiser window parameters for a stopband attenuation in dB.
inline auto kaiser_beta(double atten_db) -> double
{
  if (atten_db > 50.0) { return 0.1102 * (atten_db - 8.7); }
  if (atten_db >= 21.0) { return 0.5842 * std::pow(atten_db - 21.0, 0.4) + 0.07886 * (atten_db - 21.0); }
  return 0.0;
}

inline auto kaiser_window(Index n, double beta) -> std::vector<double>
{
  std::vector<double> w(static_cast<size_t>(n));
  double const        norm = std::cyl_bessel_i(0.0, beta);
  double const        half = 0.5 * static_cast<double>(n - 1);
  for (Index i = 0; i < n; i++) {
    double const r = half > 0 ? (static_cast<double>(i) - half) / half : 0.0;
    w[i] = std::cyl_bessel_i(0.0, beta * std::sqrt(std::max(0.0, 1.0 - r * r))) / norm;
  }
  return w;
}

inline auto sinc(double x) -> double
{
  if (std::abs(x) < 1e-12) { return 1.0; }
  double const px = std::numbers::pi * x;
  return std::sin(px) / px;
}

struct FirDesign
{
  double cutoff;        // Hz, -6 dB point
  double transition;    // Hz, full transition width
  double attenuation;   // dB
};

/// Odd-length, symmetric (zero-phase when centred) Kaiser-windowed-sinc low-pass.
inline auto design_lowpass(FirDesign const &d, double rate) -> std::vector<double>
{
  if (!(d.cutoff > 0.0 && d.cutoff < 0.5 * rate)) { throw ValidationError("FIR: cutoff must lie in (0, fs/2)"); }
  if (!(d.transition > 0.0)) { throw ValidationError("FIR: transition width must be positive"); }
  double const dw = kTwoPi * d.transition / rate;
  auto         n = static_cast<Index>(std::ceil((d.attenuation - 7.95) / (2.285 * dw))) + 1;
  if (n % 2 == 0) { n++; }
  n = std::max<Index>(n, 3);
  auto const   w = kaiser_window(n, kaiser_beta(d.attenuation));
  double const fc = d.cutoff / rate;
  Index const  m = n / 2;
  std::vector<double> h(static_cast<size_t>(n));
  for (Index i = 0; i < n; i++) {
    h[i] = 2.0 * fc * sinc(2.0 * fc * static_cast<double>(i - m)) * w[i];
  }
  return h;
}

/// Spectral inversion of the matching low-pass.
inline auto design_highpass(FirDesign const &d, double rate) -> std::vector<double>
{
  auto        h = design_lowpass(d, rate);
  Index const m = static_cast<Index>(h.size()) / 2;
  for (auto &v : h) { v = -v; }
  h[m] += 1.0;
  return h;
}

/// Magnitude response of a centred symmetric FIR at frequency f.
inline auto fir_response(std::span<double const> h, double f, double rate) -> double
{
  Index const  m = static_cast<Index>(h.size()) / 2;
  double       acc = 0.0;
  double const w = kTwoPi * f / rate;
  for (Index i = 0; i < static_cast<Index>(h.size()); i++) { acc += h[i] * std::cos(w * static_cast<double>(i - m)); }
  return std::abs(acc);
}

/// Centred convolution with an odd-length symmetric kernel, symmetric padding at the edges.
inline auto filter_zero_phase(std::span<double const> x, std::span<double const> h) -> std::vector<double>
{
  Index const n = static_cast<Index>(x.size());
  Index const m = static_cast<Index>(h.size()) / 2;
  std::vector<double> y(x.size(), 0.0);
  if (n == 0) { return y; }
  std::vector<double> padded(static_cast<size_t>(n + 2 * m));
  for (Index i = 0; i < n + 2 * m; i++) { padded[i] = x[reflect_index(i - m, n)]; }
  Index const nh = static_cast<Index>(h.size());
  for (Index i = 0; i < n; i++) {
    double const *p = padded.data() + i;
    double        acc = 0.0;
    for (Index k = 0; k < nh; k++) { acc += h[k] * p[nh - 1 - k]; }
    y[i] = acc;
  }
  return y;
}

/// Zero-phase anti-alias filtering followed by keeping every `factor`-th sample.
inline auto decimate(std::span<double const> x, Index factor, std::span<double const> h) -> std::vector<double>
{
  Index const n = static_cast<Index>(x.size());
  Index const m = static_cast<Index>(h.size()) / 2;
  Index const nh = static_cast<Index>(h.size());
  Index const out = (n + factor - 1) / factor;
  std::vector<double> y(static_cast<size_t>(out));
  for (Index j = 0; j < out; j++) {
    Index const c = j * factor;
    double      acc = 0.0;
    if (c - m >= 0 && c + m < n) {
      double const *p = x.data() + (c - m);
      for (Index k = 0; k < nh; k++) { acc += h[k] * p[nh - 1 - k]; }
    } else {
      for (Index k = 0; k < nh; k++) { acc += h[k] * x[reflect_index(c + m - k, n)]; }
    }
    y[j] = acc;
  }
  return y;
}

// ---------------------------------------------------------------------------------------------
// Band-limited interpolation

/// Kaiser-windowed sinc interpolator for signals band-limited well below Nyquist.
class SincInterpolator
{
public:
  explicit SincInterpolator(Index half_width = 32, double beta = 9.0)
    : half_{half_width}
    , beta_{beta}
    , norm_{std::cyl_bessel_i(0.0, beta)}
  {
  }

  /// Value of x at fractional sample position u (reflecting at the edges).
  auto operator()(std::span<double const> x, double u) const -> double
  {
    Index const n = static_cast<Index>(x.size());
    auto const  base = static_cast<Index>(std::floor(u));
    double const frac = u - static_cast<double>(base);
    if (std::abs(frac) < 1e-12) { return x[reflect_index(base, n)]; }
    double acc = 0.0;
    for (Index j = base - half_ + 1; j <= base + half_; j++) {
      double const d = u - static_cast<double>(j);
      double const r = d / static_cast<double>(half_);
      if (std::abs(r) >= 1.0) { continue; }
      double const w = std::cyl_bessel_i(0.0, beta_ * std::sqrt(1.0 - r * r)) / norm_;
      acc += x[reflect_index(j, n)] * sinc(d) * w;
    }
    return acc;
  }

  /// x(u0 + n) for n in [0, count). All outputs share one fractional offset, hence one tap set.
  auto run(std::span<double const> x, double u0, Index count) const -> std::vector<double>
  {
    Index const         n = static_cast<Index>(x.size());
    std::vector<double> y(static_cast<size_t>(count));
    auto const          whole = static_cast<Index>(std::floor(u0));
    double const        frac = u0 - static_cast<double>(whole);
    if (std::abs(frac) < 1e-12) {
      for (Index i = 0; i < count; i++) { y[i] = x[reflect_index(i + whole, n)]; }
      return y;
    }
    std::vector<double> taps;
    for (Index j = -half_ + 1; j <= half_; j++) {
      double const d = frac - static_cast<double>(j);
      double const r = d / static_cast<double>(half_);
      taps.push_back(std::abs(r) >= 1.0 ? 0.0 : sinc(d) * std::cyl_bessel_i(0.0, beta_ * std::sqrt(1.0 - r * r)) / norm_);
    }
    Index const nt = static_cast<Index>(taps.size());
    for (Index i = 0; i < count; i++) {
      Index const c = i + whole - half_ + 1;
      double      acc = 0.0;
      if (c >= 0 && c + nt <= n) {
        double const *p = x.data() + c;
        for (Index t = 0; t < nt; t++) { acc += taps[t] * p[t]; }
      } else {
        for (Index t = 0; t < nt; t++) { acc += taps[t] * x[reflect_index(c + t, n)]; }
      }
      y[i] = acc;
    }
    return y;
  }

  /// y[n] = x(n + shift), i.e. advances the signal by `shift` samples.
  auto shift(std::span<double const> x, double shift) const -> std::vector<double>
  {
    return run(x, shift, static_cast<Index>(x.size()));
  }

private:
  Index  half_;
  double beta_;
  double norm_;
};

/// Band-limited resampling by an integer factor through zero-padding the spectrum.
inline auto upsample_fft(std::span<double const> x, Index factor) -> std::vector<double>
{
  Index const n = static_cast<Index>(x.size());
  Index const m = n * factor;
  auto        X = fft(x);
  std::vector<Cx> Y(static_cast<size_t>(m), Cx{});
  Index const half = n / 2;
  for (Index k = 0; k <= half; k++) { Y[k] = X[k]; }
  for (Index k = 1; k < n - half; k++) { Y[m - k] = X[n - k]; }
  if (n % 2 == 0) {
    Y[half] *= 0.5;
    Y[m - half] = Y[half];
  }
  auto                y = ifft(Y);
  std::vector<double> out(static_cast<size_t>(m));
  for (Index i = 0; i < m; i++) { out[i] = y[i].real() * static_cast<double>(factor); }
  return out;
}

/// Linear cross-correlation c[lag] = Σ a[n + lag] b[n] for lag in [-max_lag, max_lag].
inline auto cross_correlation(std::span<double const> a, std::span<double const> b, Index max_lag) -> std::vector<double>
{
  Index const n = static_cast<Index>(std::max(a.size(), b.size()));
  Index       len = 1;
  while (len < 2 * n) { len *= 2; }
  std::vector<Cx> A(static_cast<size_t>(len)), B(static_cast<size_t>(len));
  std::copy(a.begin(), a.end(), A.begin());
  std::copy(b.begin(), b.end(), B.begin());
  auto FA = fft(std::span<Cx const>{A});
  auto FB = fft(std::span<Cx const>{B});
  for (Index k = 0; k < len; k++) { FA[k] *= std::conj(FB[k]); }
  auto                c = ifft(FA);
  std::vector<double> out(static_cast<size_t>(2 * max_lag + 1));
  for (Index l = -max_lag; l <= max_lag; l++) { out[l + max_lag] = c[(l + len) % len].real(); }
  return out;
}

/// Anti-alias filter and decimator fed in chunks, so the oversampled signal never has to be
/// held in memory. Output j is the centred FIR response at input j·factor with symmetric
/// padding at both ends of a stream of known total length.
class StreamingDecimator
{
public:
  StreamingDecimator(std::vector<double> taps, Index factor, Index total)
    : h_{std::move(taps)}
    , q_{factor}
    , m_{static_cast<Index>(h_.size()) / 2}
    , total_{total}
  {
    if (q_ < 1 || total_ < 1) { throw ValidationError("decimator: factor and length must be >= 1"); }
    out_.reserve(static_cast<size_t>((total_ + q_ - 1) / q_));
  }

  void push(std::span<double const> x)
  {
    if (pushed_ + static_cast<Index>(x.size()) > total_) { throw ValidationError("decimator: more samples than declared"); }
    buf_.insert(buf_.end(), x.begin(), x.end());
    pushed_ += static_cast<Index>(x.size());
    emit(false);
  }

  auto finish() -> std::vector<double>
  {
    if (pushed_ != total_) { throw ValidationError("decimator: stream ended early"); }
    emit(true);
    return std::move(out_);
  }

private:
  auto at(Index i) const -> double { return buf_[static_cast<size_t>(reflect_index(i, total_) - base_)]; }

  void emit(bool final)
  {
    Index const nh = static_cast<Index>(h_.size());
    while (next_ * q_ < total_ && (final || next_ * q_ + m_ < pushed_)) {
      Index const c = next_ * q_;
      double      acc = 0.0;
      if (c - m_ >= base_ && c + m_ < pushed_) {
        double const *p = buf_.data() + (c - m_ - base_);
        for (Index k = 0; k < nh; k++) { acc += h_[k] * p[nh - 1 - k]; }
      } else {
        for (Index k = 0; k < nh; k++) { acc += h_[k] * at(c + m_ - k); }
      }
      out_.push_back(acc);
      next_++;
    }
    Index const keep = std::max<Index>(0, next_ * q_ - m_);
    if (keep - base_ > 1 << 16 && keep - base_ > static_cast<Index>(buf_.size()) / 2) {
      buf_.erase(buf_.begin(), buf_.begin() + (keep - base_));
      base_ = keep;
    }
  }

  std::vector<double> h_;
  Index               q_, m_, total_;
  std::vector<double> buf_, out_;
  Index               base_ = 0, pushed_ = 0, next_ = 0;
};

} // namespace taurus
