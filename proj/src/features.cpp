// Copyright 2026 The hdisen Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "hdisen/features.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <mutex>
#include <numbers>

namespace hdisen {

static_assert(std::endian::native == std::endian::little,
              "feature and audio files are little-endian");

namespace {

// The FFTW planner is not thread-safe; plan execution with new-array
// execute functions is.
std::mutex& fftw_planner_mutex() {
  static std::mutex m;
  return m;
}

class RealFft {
 public:
  explicit RealFft(int n) : n_(n) {
    in_ = fftw_alloc_real(n);
    out_ = fftw_alloc_complex(n / 2 + 1);
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    plan_ = fftw_plan_dft_r2c_1d(n, in_, out_, FFTW_ESTIMATE);
  }
  ~RealFft() {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(plan_);
    fftw_free(in_);
    fftw_free(out_);
  }
  RealFft(const RealFft&) = delete;
  RealFft& operator=(const RealFft&) = delete;

  double* input() { return in_; }
  const fftw_complex* output() const { return out_; }
  void execute() { fftw_execute(plan_); }
  int size() const { return n_; }

 private:
  int n_;
  double* in_;
  fftw_complex* out_;
  fftw_plan plan_;
};

template <typename U>
U read_le(const unsigned char* p) {
  U v;
  std::memcpy(&v, p, sizeof(U));
  return v;
}

}  // namespace

int LogMelOptions::hop_length() const {
  if (frame_rate <= 0 || sample_rate % frame_rate != 0) {
    throw ParameterError("frame_rate must divide sample_rate, got " +
                         std::to_string(frame_rate) + " for " + std::to_string(sample_rate) + " Hz");
  }
  return sample_rate / frame_rate;
}

int LogMelOptions::window_length() const {
  return static_cast<int>(std::lround(window_ms * 1e-3 * sample_rate));
}

// ---------------------------------------------------------------------------
// WAV

Waveform read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestError("cannot open audio file " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw IngestError("not a RIFF/WAVE file: " + path.string());
  }

  int format = 0, channels = 0, rate = 0, bits = 0;
  const unsigned char* data = nullptr;
  std::size_t data_size = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const unsigned char* chunk = bytes.data() + pos;
    auto size = read_le<std::uint32_t>(chunk + 4);
    std::size_t body = pos + 8;
    if (body + size > bytes.size()) size = static_cast<std::uint32_t>(bytes.size() - body);
    if (std::memcmp(chunk, "fmt ", 4) == 0 && size >= 16) {
      format = read_le<std::uint16_t>(chunk + 8);
      channels = read_le<std::uint16_t>(chunk + 10);
      rate = static_cast<int>(read_le<std::uint32_t>(chunk + 12));
      bits = read_le<std::uint16_t>(chunk + 22);
      if (format == 0xFFFE && size >= 26) format = read_le<std::uint16_t>(chunk + 32);
    } else if (std::memcmp(chunk, "data", 4) == 0) {
      data = bytes.data() + body;
      data_size = size;
    }
    pos = body + size + (size & 1u);
  }
  if (channels <= 0 || rate <= 0 || data == nullptr) {
    throw IngestError("missing fmt or data chunk in " + path.string());
  }
  const bool is_float = format == 3;
  if (!(format == 1 || is_float) || (is_float && bits != 32 && bits != 64) ||
      (!is_float && bits != 8 && bits != 16 && bits != 24 && bits != 32)) {
    throw IngestError("unsupported WAV encoding (format " + std::to_string(format) + ", " +
                      std::to_string(bits) + " bits) in " + path.string());
  }

  const std::size_t bytes_per_sample = static_cast<std::size_t>(bits) / 8;
  const std::size_t n_frames = data_size / (bytes_per_sample * channels);
  Waveform w;
  w.sample_rate = rate;
  w.samples.resize(n_frames);
  for (std::size_t i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (i * channels + c) * bytes_per_sample;
      double v = 0.0;
      if (is_float) {
        v = bits == 32 ? read_le<float>(p) : read_le<double>(p);
      } else if (bits == 8) {
        v = (static_cast<int>(p[0]) - 128) / 128.0;
      } else if (bits == 16) {
        v = read_le<std::int16_t>(p) / 32768.0;
      } else if (bits == 24) {
        std::int32_t s = (p[0] << 8) | (p[1] << 16) | (p[2] << 24);
        v = (s >> 8) / 8388608.0;
      } else {
        v = read_le<std::int32_t>(p) / 2147483648.0;
      }
      acc += v;
    }
    w.samples[i] = static_cast<float>(acc / channels);
  }
  return w;
}

void write_wav(const std::filesystem::path& path, const Waveform& w) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IngestError("cannot write audio file " + path.string());
  auto put32 = [&](std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); };
  auto put16 = [&](std::uint16_t v) { out.write(reinterpret_cast<const char*>(&v), 2); };
  const auto data_bytes = static_cast<std::uint32_t>(w.samples.size() * sizeof(float));
  out.write("RIFF", 4);
  put32(36 + data_bytes);
  out.write("WAVEfmt ", 8);
  put32(16);
  put16(3);  // IEEE float
  put16(1);
  put32(static_cast<std::uint32_t>(w.sample_rate));
  put32(static_cast<std::uint32_t>(w.sample_rate * sizeof(float)));
  put16(sizeof(float));
  put16(32);
  out.write("data", 4);
  put32(data_bytes);
  out.write(reinterpret_cast<const char*>(w.samples.data()), data_bytes);
}

Waveform resample(const Waveform& w, int target_rate) {
  if (target_rate <= 0 || w.sample_rate <= 0) throw ParameterError("sample rates must be positive");
  if (target_rate == w.sample_rate) return w;

  // Windowed-sinc interpolation with the cutoff at the lower Nyquist rate.
  const double ratio = static_cast<double>(target_rate) / w.sample_rate;
  const double cutoff = std::min(1.0, ratio);
  const int half_width = static_cast<int>(std::ceil(16.0 / cutoff));
  const auto n_in = static_cast<std::ptrdiff_t>(w.samples.size());
  const auto n_out = static_cast<std::size_t>(std::llround(n_in * ratio));

  Waveform out;
  out.sample_rate = target_rate;
  out.samples.resize(n_out);
  for (std::size_t n = 0; n < n_out; ++n) {
    const double t = n / ratio;
    const auto centre = static_cast<std::ptrdiff_t>(std::floor(t));
    double acc = 0.0;
    for (std::ptrdiff_t k = centre - half_width + 1; k <= centre + half_width; ++k) {
      if (k < 0 || k >= n_in) continue;
      const double d = t - static_cast<double>(k);
      const double x = std::numbers::pi * cutoff * d;
      const double sinc = std::abs(x) < 1e-12 ? 1.0 : std::sin(x) / x;
      const double win = 0.5 + 0.5 * std::cos(std::numbers::pi * d / half_width);
      acc += w.samples[static_cast<std::size_t>(k)] * cutoff * sinc * win;
    }
    out.samples[n] = static_cast<float>(acc);
  }
  return out;
}

Waveform ingest(const std::filesystem::path& path, int target_rate) {
  if (!std::filesystem::exists(path)) throw IngestError("no such audio file: " + path.string());
  Waveform w = read_wav(path);
  if (w.samples.empty()) throw EmptyInputError("zero-length audio in " + path.string());
  w = resample(w, target_rate);
  for (float& s : w.samples) {
    if (!std::isfinite(s)) throw IngestError("non-finite sample in " + path.string());
  }
  return w;
}

// ---------------------------------------------------------------------------
// Spectral features

Eigen::Index frame_count(std::size_t n_samples, int window, int hop) {
  if (hop <= 0 || window <= 0) throw ParameterError("window and hop must be positive");
  if (n_samples < static_cast<std::size_t>(window)) return 0;
  return static_cast<Eigen::Index>(n_samples / static_cast<std::size_t>(hop));
}

MatrixD power_spectrogram(const Waveform& w, const LogMelOptions& opts) {
  const int hop = opts.hop_length();
  const int window = opts.window_length();
  if (w.sample_rate != opts.sample_rate) {
    throw ParameterError("waveform rate " + std::to_string(w.sample_rate) +
                         " Hz does not match feature rate " + std::to_string(opts.sample_rate));
  }
  if (opts.n_fft < window) throw ParameterError("n_fft shorter than the analysis window");
  const Eigen::Index n_frames = frame_count(w.samples.size(), window, hop);
  if (n_frames < 1) {
    throw EmptyInputError("waveform of " + std::to_string(w.samples.size()) +
                          " samples is shorter than one " + std::to_string(window) + "-sample window");
  }

  std::vector<double> hann(static_cast<std::size_t>(window));
  for (int i = 0; i < window; ++i) {
    hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / window);
  }

  const int n_bins = opts.n_fft / 2 + 1;
  MatrixD power(n_frames, n_bins);
  RealFft fft(opts.n_fft);
  const auto n = static_cast<std::ptrdiff_t>(w.samples.size());
  for (Eigen::Index f = 0; f < n_frames; ++f) {
    const std::ptrdiff_t start = f * hop + hop / 2 - window / 2;
    double* buf = fft.input();
    std::fill(buf, buf + opts.n_fft, 0.0);
    for (int i = 0; i < window; ++i) {
      const std::ptrdiff_t idx = start + i;
      if (idx >= 0 && idx < n) buf[i] = w.samples[static_cast<std::size_t>(idx)] * hann[static_cast<std::size_t>(i)];
    }
    fft.execute();
    const fftw_complex* spec = fft.output();
    for (int k = 0; k < n_bins; ++k) {
      power(f, k) = spec[k][0] * spec[k][0] + spec[k][1] * spec[k][1];
    }
  }
  return power;
}

MatrixD mel_filterbank(int n_mels, int n_fft, int sample_rate, double f_min, double f_max) {
  if (n_mels < 1) throw ParameterError("n_mels must be >= 1");
  if (f_max <= 0.0) f_max = sample_rate / 2.0;
  if (f_min < 0.0 || f_min >= f_max) throw ParameterError("invalid mel frequency range");
  auto to_mel = [](double hz) { return 2595.0 * std::log10(1.0 + hz / 700.0); };
  auto to_hz = [](double mel) { return 700.0 * (std::pow(10.0, mel / 2595.0) - 1.0); };

  const int n_bins = n_fft / 2 + 1;
  const double mel_lo = to_mel(f_min);
  const double mel_hi = to_mel(f_max);
  std::vector<double> edges(static_cast<std::size_t>(n_mels) + 2);
  for (std::size_t i = 0; i < edges.size(); ++i) {
    edges[i] = to_hz(mel_lo + (mel_hi - mel_lo) * static_cast<double>(i) / (n_mels + 1));
  }
  MatrixD fb = MatrixD::Zero(n_bins, n_mels);
  for (int k = 0; k < n_bins; ++k) {
    const double hz = static_cast<double>(k) * sample_rate / n_fft;
    for (int m = 0; m < n_mels; ++m) {
      const double lo = edges[static_cast<std::size_t>(m)];
      const double mid = edges[static_cast<std::size_t>(m) + 1];
      const double hi = edges[static_cast<std::size_t>(m) + 2];
      if (hz > lo && hz < hi) {
        fb(k, m) = hz <= mid ? (hz - lo) / (mid - lo) : (hi - hz) / (hi - mid);
      }
    }
  }
  return fb;
}

FeatureSequence logmel(const Waveform& w, const LogMelOptions& opts) {
  MatrixD power = power_spectrogram(w, opts);
  if (opts.vtlp_alpha != 1.0) power = vtlp(power, opts.vtlp_alpha);
  const MatrixD fb = mel_filterbank(opts.n_mels, opts.n_fft, opts.sample_rate, opts.f_min, opts.f_max);
  const MatrixD mel = power * fb;
  FeatureSequence out;
  out.frame_rate = opts.frame_rate;
  out.values = mel.unaryExpr([floor = opts.power_floor](double p) {
                    return std::log(std::max(p, floor));
                  }).cast<float>();
  return out;
}

FeatureSequence logmel(const Waveform& w, int n_mels, int frame_rate) {
  LogMelOptions opts;
  opts.sample_rate = w.sample_rate;
  opts.n_mels = n_mels;
  opts.frame_rate = frame_rate;
  return logmel(w, opts);
}

// ---------------------------------------------------------------------------
// VTLP and instance normalisation

namespace {
constexpr double kVtlpKnee = 0.8;
}

double vtlp_source_position(double bin, double alpha, Eigen::Index n_bins) {
  const double top = static_cast<double>(n_bins - 1);
  if (top <= 0.0) return 0.0;
  const double knee = kVtlpKnee * top / std::max(alpha, 1.0);
  double src;
  if (bin <= knee) {
    src = alpha * bin;
  } else {
    const double knee_src = alpha * knee;
    src = knee_src + (bin - knee) * (top - knee_src) / (top - knee);
  }
  return std::clamp(src, 0.0, top);
}

template <typename T>
Matrix<T> vtlp(const Matrix<T>& x, double alpha) {
  if (!(alpha > 0.0)) throw ParameterError("vtlp warp factor must be positive");
  if (!all_finite(x)) throw ParameterError("vtlp input contains non-finite values");
  if (alpha == 1.0) return x;
  const Eigen::Index n_bins = x.cols();
  Matrix<T> out(x.rows(), n_bins);
  for (Eigen::Index j = 0; j < n_bins; ++j) {
    const double src = vtlp_source_position(static_cast<double>(j), alpha, n_bins);
    const auto lo = static_cast<Eigen::Index>(std::floor(src));
    const Eigen::Index hi = std::min(lo + 1, n_bins - 1);
    const T frac = static_cast<T>(src - static_cast<double>(lo));
    out.col(j) = (T(1) - frac) * x.col(lo) + frac * x.col(hi);
  }
  return out;
}

template MatrixF vtlp(const MatrixF&, double);
template MatrixD vtlp(const MatrixD&, double);

FeatureSequence vtlp(const FeatureSequence& x, double alpha) {
  return {vtlp(x.values, alpha), x.frame_rate};
}

template <typename T>
Matrix<T> instance_normalize(const Matrix<T>& x, double eps) {
  if (x.rows() < 1) throw EmptyInputError("instance_normalize needs at least one frame");
  const MatrixD xd = x.template cast<double>();
  const RowVector<double> mean = xd.colwise().mean();
  const MatrixD centred = xd.rowwise() - mean;
  const RowVector<double> var = centred.array().square().colwise().mean();
  const RowVector<double> inv = (var.array() + eps).rsqrt();
  return (centred.array().rowwise() * inv.array()).matrix().template cast<T>();
}

template MatrixF instance_normalize(const MatrixF&, double);
template MatrixD instance_normalize(const MatrixD&, double);

FeatureSequence instance_normalize(const FeatureSequence& x, double eps) {
  return {instance_normalize(x.values, eps), x.frame_rate};
}

// ---------------------------------------------------------------------------
// RIR convolution

Waveform convolve_rir(const Waveform& w, const Rir& r) {
  if (w.sample_rate != r.sample_rate) {
    throw ParameterError("RIR rate " + std::to_string(r.sample_rate) + " Hz differs from waveform rate " +
                         std::to_string(w.sample_rate) + " Hz");
  }
  if (r.taps.empty() || std::all_of(r.taps.begin(), r.taps.end(), [](float t) { return t == 0.0f; })) {
    throw ParameterError("RIR must contain at least one nonzero tap");
  }
  const std::size_t n = w.samples.size();
  Waveform out;
  out.sample_rate = w.sample_rate;
  out.samples.assign(n, 0.0f);
  if (n == 0) return out;

  const std::size_t k = r.taps.size();
  const std::size_t full = n + k - 1;
  int size = 1;
  while (static_cast<std::size_t>(size) < full) size <<= 1;
  const int n_freq = size / 2 + 1;

  std::vector<double> a(static_cast<std::size_t>(size), 0.0), b(static_cast<std::size_t>(size), 0.0);
  std::copy(w.samples.begin(), w.samples.end(), a.begin());
  std::copy(r.taps.begin(), r.taps.end(), b.begin());
  fftw_complex* fa = fftw_alloc_complex(static_cast<std::size_t>(n_freq));
  fftw_complex* fb = fftw_alloc_complex(static_cast<std::size_t>(n_freq));
  fftw_plan pa, pb, inv;
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    pa = fftw_plan_dft_r2c_1d(size, a.data(), fa, FFTW_ESTIMATE);
    pb = fftw_plan_dft_r2c_1d(size, b.data(), fb, FFTW_ESTIMATE);
    inv = fftw_plan_dft_c2r_1d(size, fa, a.data(), FFTW_ESTIMATE);
  }
  fftw_execute(pa);
  fftw_execute(pb);
  for (int i = 0; i < n_freq; ++i) {
    const double re = fa[i][0] * fb[i][0] - fa[i][1] * fb[i][1];
    const double im = fa[i][0] * fb[i][1] + fa[i][1] * fb[i][0];
    fa[i][0] = re;
    fa[i][1] = im;
  }
  fftw_execute(inv);
  {
    std::lock_guard<std::mutex> lock(fftw_planner_mutex());
    fftw_destroy_plan(pa);
    fftw_destroy_plan(pb);
    fftw_destroy_plan(inv);
  }
  fftw_free(fa);
  fftw_free(fb);

  double in_peak = 0.0, out_peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    a[i] /= size;
    in_peak = std::max(in_peak, static_cast<double>(std::abs(w.samples[i])));
    out_peak = std::max(out_peak, std::abs(a[i]));
  }
  const double scale = out_peak > 0.0 ? in_peak / out_peak : 1.0;
  for (std::size_t i = 0; i < n; ++i) out.samples[i] = static_cast<float>(a[i] * scale);
  return out;
}

// ---------------------------------------------------------------------------
// Feature files

void write_features(const std::filesystem::path& path, const FeatureSequence& x) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write feature file " + path.string());
  const std::uint32_t header[3] = {static_cast<std::uint32_t>(x.frames()),
                                   static_cast<std::uint32_t>(x.bins()),
                                   static_cast<std::uint32_t>(x.frame_rate)};
  out.write("DSF1", 4);
  out.write(reinterpret_cast<const char*>(header), sizeof(header));
  out.write(reinterpret_cast<const char*>(x.values.data()),
            static_cast<std::streamsize>(x.values.size() * sizeof(float)));
  if (!out) throw DataError("short write on feature file " + path.string());
}

FeatureSequence read_features(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open feature file " + path.string());
  char magic[4];
  std::uint32_t header[3];
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(header), sizeof(header));
  if (!in || std::memcmp(magic, "DSF1", 4) != 0) {
    throw DataError("bad feature file header in " + path.string());
  }
  FeatureSequence x;
  x.frame_rate = static_cast<int>(header[2]);
  x.values.resize(header[0], header[1]);
  in.read(reinterpret_cast<char*>(x.values.data()),
          static_cast<std::streamsize>(x.values.size() * sizeof(float)));
  if (!in) throw DataError("truncated feature file " + path.string());
  if (!all_finite(x.values)) throw DataError("non-finite values in feature file " + path.string());
  return x;
}

}  // namespace hdisen
