#pragma once

// Audio feature ingestion: STFX feature files, 16-bit PCM WAV input, a
// mel-cepstral fallback extractor and frame-rate alignment.

#include "scantalk/common.hpp"

#include <fftw3.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <numbers>

namespace scantalk {

struct FeatureSequence {
  Matrix data;  // T x D
  double source_rate = 0;  // frames per second

  Eigen::Index frames() const { return data.rows(); }
  Eigen::Index dim() const { return data.cols(); }
  double duration() const { return source_rate > 0 ? static_cast<double>(frames()) / source_rate : 0.0; }
};

inline void check_features(const FeatureSequence& f, const std::string& what = "features") {
  if (f.frames() < 1 || f.dim() < 1) throw_data(what, ": empty feature matrix");
  for (Eigen::Index t = 0; t < f.frames(); ++t)
    for (Eigen::Index d = 0; d < f.dim(); ++d)
      if (!std::isfinite(f.data(t, d))) throw_data(what, ": non-finite value at frame ", t, ", dim ", d);
}

// ---------------------------------------------------------------------------
// STFX: "STFX" | u32 version | u32 T | u32 D | f32 source_rate | f32[T*D] row-major

inline constexpr std::uint32_t kStfxVersion = 1;

inline void save_features(const FeatureSequence& f, const std::filesystem::path& path) {
  check_features(f, path.string());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data(path.string(), ": cannot open for writing");
  BinaryWriter w(os);
  w.magic("STFX");
  w.u32(kStfxVersion);
  w.u32(static_cast<std::uint32_t>(f.frames()));
  w.u32(static_cast<std::uint32_t>(f.dim()));
  w.f32(static_cast<float>(f.source_rate));
  std::vector<float> row(static_cast<std::size_t>(f.dim()));
  for (Eigen::Index t = 0; t < f.frames(); ++t) {
    for (Eigen::Index d = 0; d < f.dim(); ++d) row[static_cast<std::size_t>(d)] = static_cast<float>(f.data(t, d));
    w.bytes(row.data(), row.size() * sizeof(float));
  }
}

inline FeatureSequence load_features(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data(path.string(), ": cannot open");
  BinaryReader r(is, path.string());
  r.expect_magic("STFX");
  if (const auto v = r.u32(); v != kStfxVersion)
    throw_data(path.string(), ": version mismatch (file ", v, ", expected ", kStfxVersion, ")");
  const auto T = r.u32(), D = r.u32();
  if (T == 0 || D == 0) throw_data(path.string(), ": empty feature matrix (T=", T, ", D=", D, ")");
  FeatureSequence f;
  f.source_rate = r.f32();
  std::vector<float> payload(static_cast<std::size_t>(T) * D);
  r.bytes(payload.data(), payload.size() * sizeof(float));
  f.data.resize(T, D);
  for (std::uint32_t t = 0; t < T; ++t)
    for (std::uint32_t d = 0; d < D; ++d) {
      const float v = payload[static_cast<std::size_t>(t) * D + d];
      if (!std::isfinite(v)) throw_data(path.string(), ": non-finite value at frame ", t, ", dim ", d);
      f.data(t, d) = v;
    }
  return f;
}

// ---------------------------------------------------------------------------
// WAV (RIFF, PCM 16-bit, mono).

struct PcmAudio {
  std::vector<double> samples;  // [-1, 1)
  int sample_rate = 0;
};

inline PcmAudio load_wav(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw_data(path.string(), ": cannot open");
  BinaryReader r(is, path.string());
  r.expect_magic("RIFF");
  r.u32();
  r.expect_magic("WAVE");
  PcmAudio out;
  bool have_fmt = false;
  for (;;) {
    char id[4];
    r.bytes(id, 4);
    const std::uint32_t size = r.u32();
    const std::string chunk(id, 4);
    if (chunk == "fmt ") {
      if (size < 16) throw_data(path.string(), ": malformed fmt chunk");
      std::vector<char> fmt(size);
      r.bytes(fmt.data(), size);
      std::uint16_t format, channels, bits;
      std::uint32_t rate;
      std::memcpy(&format, fmt.data(), 2);
      std::memcpy(&channels, fmt.data() + 2, 2);
      std::memcpy(&rate, fmt.data() + 4, 4);
      std::memcpy(&bits, fmt.data() + 14, 2);
      if (format != 1 || bits != 16) throw_data(path.string(), ": unsupported sample layout (PCM 16-bit only)");
      if (channels != 1) throw_data(path.string(), ": unsupported sample layout (mono only, got ", channels, " channels)");
      out.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (chunk == "data") {
      if (!have_fmt) throw_data(path.string(), ": data chunk before fmt chunk");
      std::vector<std::int16_t> pcm(size / 2);
      r.bytes(pcm.data(), pcm.size() * 2);
      out.samples.reserve(pcm.size());
      for (auto s : pcm) out.samples.push_back(static_cast<double>(s) / 32768.0);
      return out;
    } else {
      std::vector<char> skip(size + (size & 1));
      r.bytes(skip.data(), skip.size());
    }
  }
}

inline void save_wav(const PcmAudio& audio, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw_data(path.string(), ": cannot open for writing");
  BinaryWriter w(os);
  const auto n = static_cast<std::uint32_t>(audio.samples.size());
  w.magic("RIFF");
  w.u32(36 + 2 * n);
  w.magic("WAVE");
  w.magic("fmt ");
  w.u32(16);
  const std::uint16_t fmt[2] = {1, 1};
  w.bytes(fmt, 4);
  w.u32(static_cast<std::uint32_t>(audio.sample_rate));
  w.u32(static_cast<std::uint32_t>(audio.sample_rate) * 2);
  const std::uint16_t align[2] = {2, 16};
  w.bytes(align, 4);
  w.magic("data");
  w.u32(2 * n);
  for (double s : audio.samples) {
    const auto q = static_cast<std::int16_t>(std::clamp(std::lround(s * 32768.0), -32768L, 32767L));
    w.bytes(&q, 2);
  }
}

// ---------------------------------------------------------------------------
// Mel-cepstral features.

struct MfccConfig {
  double window_ms = 25.0;
  double hop_ms = 10.0;
  double preemphasis = 0.97;
  int mel_filters = 26;
  int cepstra = 13;
  double log_floor = 1e-10;
  int delta_window = 2;
};

inline double hz_to_mel(double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); }
inline double mel_to_hz(double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); }

// Triangular filters evenly spaced on the mel scale over [0, sr/2].
inline Matrix mel_filterbank(int filters, int fft_size, int sample_rate) {
  const int bins = fft_size / 2 + 1;
  const double top = hz_to_mel(sample_rate / 2.0);
  std::vector<double> edges(static_cast<std::size_t>(filters) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) edges[i] = mel_to_hz(top * static_cast<double>(i) / (filters + 1));
  Matrix fb = Matrix::Zero(filters, bins);
  for (int m = 0; m < filters; ++m) {
    const double lo = edges[static_cast<std::size_t>(m)], mid = edges[static_cast<std::size_t>(m) + 1],
                 hi = edges[static_cast<std::size_t>(m) + 2];
    for (int b = 0; b < bins; ++b) {
      const double f = static_cast<double>(b) * sample_rate / fft_size;
      if (f > lo && f <= mid)
        fb(m, b) = (f - lo) / (mid - lo);
      else if (f > mid && f < hi)
        fb(m, b) = (hi - f) / (hi - mid);
    }
  }
  return fb;
}

inline double mel_band_center_hz(int band, int filters, int sample_rate) {
  return mel_to_hz(hz_to_mel(sample_rate / 2.0) * (band + 1) / (filters + 1));
}

struct MfccFrames {
  Matrix mel_energy;  // T x filters, power (before log)
  Matrix log_mel;     // T x filters
  FeatureSequence features;  // T x 2*cepstra: cepstra then deltas
};

inline Eigen::Index mfcc_frame_count(std::size_t samples, int window, int hop) {
  if (samples < static_cast<std::size_t>(window)) return 0;
  return static_cast<Eigen::Index>((samples - static_cast<std::size_t>(window)) / static_cast<std::size_t>(hop) + 1);
}

namespace detail {
// FFTW planning is not thread-safe; execution with new-array functions is.
inline std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}
}  // namespace detail

inline MfccFrames mfcc_analyze(const PcmAudio& audio, const MfccConfig& cfg = {}) {
  if (audio.sample_rate < 8000) throw_data("mfcc: sample rate ", audio.sample_rate, " Hz is below 8 kHz");
  if (audio.samples.empty()) throw_data("mfcc: empty signal");
  const int window = static_cast<int>(std::lround(cfg.window_ms * audio.sample_rate / 1000.0));
  const int hop = static_cast<int>(std::lround(cfg.hop_ms * audio.sample_rate / 1000.0));
  if (window < 2 || hop < 1) throw_data("mfcc: window/hop too small");
  const Eigen::Index T = mfcc_frame_count(audio.samples.size(), window, hop);
  if (T < 1) throw_data("mfcc: signal shorter than one analysis window");
  int fft_size = 1;
  while (fft_size < window) fft_size *= 2;
  const int bins = fft_size / 2 + 1;

  std::vector<double> emph(audio.samples.size());
  emph[0] = audio.samples[0];
  for (std::size_t i = 1; i < emph.size(); ++i) emph[i] = audio.samples[i] - cfg.preemphasis * audio.samples[i - 1];

  std::vector<double> hann(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i) hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * i / (window - 1));

  double* in = fftw_alloc_real(static_cast<std::size_t>(fft_size));
  fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(bins));
  fftw_plan plan;
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    plan = fftw_plan_dft_r2c_1d(fft_size, in, out, FFTW_ESTIMATE);
  }
  const Matrix fb = mel_filterbank(cfg.mel_filters, fft_size, audio.sample_rate);
  MfccFrames res;
  res.mel_energy.resize(T, cfg.mel_filters);
  Eigen::RowVectorXd power(bins);
  for (Eigen::Index t = 0; t < T; ++t) {
    std::fill(in, in + fft_size, 0.0);
    for (int i = 0; i < window; ++i)
      in[i] = emph[static_cast<std::size_t>(t * hop + i)] * hann[static_cast<std::size_t>(i)];
    fftw_execute(plan);
    for (int b = 0; b < bins; ++b) power[b] = (out[b][0] * out[b][0] + out[b][1] * out[b][1]) / fft_size;
    res.mel_energy.row(t) = power * fb.transpose();
  }
  {
    std::lock_guard lock(detail::fftw_planner_mutex());
    fftw_destroy_plan(plan);
  }
  fftw_free(in);
  fftw_free(out);

  res.log_mel = res.mel_energy.cwiseMax(cfg.log_floor).array().log().matrix();

  // Orthonormal DCT-II over the mel axis.
  const int M = cfg.mel_filters;
  Matrix dct(cfg.cepstra, M);
  for (int c = 0; c < cfg.cepstra; ++c)
    for (int m = 0; m < M; ++m)
      dct(c, m) = std::sqrt((c == 0 ? 1.0 : 2.0) / M) * std::cos(std::numbers::pi * c * (m + 0.5) / M);
  const Matrix cep = res.log_mel * dct.transpose();

  // Regression deltas with edge replication.
  const int N = cfg.delta_window;
  double denom = 0;
  for (int n = 1; n <= N; ++n) denom += 2.0 * n * n;
  Matrix delta = Matrix::Zero(T, cfg.cepstra);
  for (Eigen::Index t = 0; t < T; ++t)
    for (int n = 1; n <= N; ++n) {
      const auto ahead = std::min<Eigen::Index>(T - 1, t + n);
      const auto behind = std::max<Eigen::Index>(0, t - n);
      delta.row(t) += n * (cep.row(ahead) - cep.row(behind));
    }
  delta /= denom;

  res.features.data.resize(T, 2 * cfg.cepstra);
  res.features.data << cep, delta;
  res.features.source_rate = 1000.0 / cfg.hop_ms;
  return res;
}

inline FeatureSequence mfcc_extract(const PcmAudio& audio, const MfccConfig& cfg = {}) {
  return mfcc_analyze(audio, cfg).features;
}

// ---------------------------------------------------------------------------

// Per-dimension linear interpolation on the normalized time axis [0, 1].
inline FeatureSequence resample_features(const FeatureSequence& f, Eigen::Index target_frames) {
  if (target_frames < 1) throw_data("resample: target frame count must be at least 1");
  if (f.frames() < 1) throw_data("resample: empty input");
  FeatureSequence out;
  out.source_rate = f.source_rate * static_cast<double>(target_frames) / static_cast<double>(f.frames());
  const Eigen::Index T = f.frames();
  if (target_frames == T) {
    out.data = f.data;
    return out;
  }
  out.data.resize(target_frames, f.dim());
  if (T == 1) {
    out.data.rowwise() = f.data.row(0);
    return out;
  }
  for (Eigen::Index i = 0; i < target_frames; ++i) {
    if (i == 0) {
      out.data.row(i) = f.data.row(0);
      continue;
    }
    if (i == target_frames - 1) {
      out.data.row(i) = f.data.row(T - 1);
      continue;
    }
    const double pos = static_cast<double>(i) * static_cast<double>(T - 1) / static_cast<double>(target_frames - 1);
    const auto lo = std::min<Eigen::Index>(static_cast<Eigen::Index>(std::floor(pos)), T - 2);
    const double w = pos - static_cast<double>(lo);
    out.data.row(i) = (1.0 - w) * f.data.row(lo) + w * f.data.row(lo + 1);
  }
  return out;
}

// Frame count for an animation of the audio at `fps`.
inline Eigen::Index target_frame_count(const FeatureSequence& f, double fps) {
  if (!(fps > 0)) throw_data("fps must be positive");
  if (!(f.source_rate > 0)) throw_data("feature source rate must be positive");
  return std::max<Eigen::Index>(1, static_cast<Eigen::Index>(std::llround(f.duration() * fps)));
}

}  // namespace scantalk
