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

#include <doctest.h>

#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "hdisen/features.hpp"
#include "test_util.hpp"

using namespace hdisen;
using hdisen::testing::random_matrix;
using hdisen::testing::scratch_dir;

namespace {

Waveform tone(double hz, double seconds, int rate = 16000, double amp = 0.5) {
  Waveform w;
  w.sample_rate = rate;
  const auto n = static_cast<std::size_t>(seconds * rate);
  for (std::size_t i = 0; i < n; ++i) {
    w.samples.push_back(static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * hz * i / rate)));
  }
  return w;
}

// Direct O(N^2) DFT power of one windowed frame.
std::vector<double> dft_power(const std::vector<double>& frame, int n_fft) {
  std::vector<double> p(static_cast<std::size_t>(n_fft / 2 + 1));
  for (int k = 0; k <= n_fft / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (std::size_t i = 0; i < frame.size(); ++i) {
      acc += frame[i] * std::polar(1.0, -2.0 * std::numbers::pi * k * static_cast<double>(i) / n_fft);
    }
    p[static_cast<std::size_t>(k)] = std::norm(acc);
  }
  return p;
}

}  // namespace

TEST_CASE("one second at 80 frames per second gives 80 x 80 log-mel frames") {
  const FeatureSequence f = logmel(tone(300.0, 1.0), 80, 80);
  CHECK(f.frames() == 80);
  CHECK(f.bins() == 80);
  CHECK(f.frame_rate == 80);
  CHECK(all_finite(f.values));
}

TEST_CASE("frame count is a deterministic function of length") {
  CHECK(frame_count(16000, 400, 200) == 80);
  CHECK(frame_count(16199, 400, 200) == 80);
  CHECK(frame_count(16200, 400, 200) == 81);
  CHECK(frame_count(399, 400, 200) == 0);
}

TEST_CASE("silence maps every entry to the log floor") {
  Waveform w;
  w.samples.assign(8000, 0.0f);
  const FeatureSequence f = logmel(w, 80, 80);
  const float floor_value = static_cast<float>(std::log(1e-10));
  CHECK((f.values.array() == floor_value).all());
}

TEST_CASE("waveform shorter than one window is rejected") {
  Waveform w;
  w.samples.assign(399, 0.1f);
  CHECK_THROWS_AS(logmel(w, 80, 80), EmptyInputError);
}

TEST_CASE("frame rate must divide the sample rate") {
  LogMelOptions o;
  o.frame_rate = 7;
  CHECK_THROWS_AS(o.hop_length(), ParameterError);
}

TEST_CASE("power spectrogram matches a direct DFT") {
  Rng rng(11);
  std::normal_distribution<float> g(0.0f, 0.3f);
  Waveform w;
  for (int i = 0; i < 4000; ++i) w.samples.push_back(g(rng));
  LogMelOptions o;
  const MatrixD p = power_spectrogram(w, o);
  const int hop = o.hop_length(), win = o.window_length();
  for (Eigen::Index f : {Eigen::Index{0}, Eigen::Index{7}, p.rows() - 1}) {
    std::vector<double> frame(static_cast<std::size_t>(win), 0.0);
    const long start = static_cast<long>(f) * hop + hop / 2 - win / 2;
    for (int i = 0; i < win; ++i) {
      const long idx = start + i;
      const double h = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / win);
      if (idx >= 0 && idx < static_cast<long>(w.samples.size())) frame[static_cast<std::size_t>(i)] = w.samples[static_cast<std::size_t>(idx)] * h;
    }
    const std::vector<double> ref = dft_power(frame, o.n_fft);
    double worst = 0.0, scale = 0.0;
    for (std::size_t k = 0; k < ref.size(); ++k) {
      worst = std::max(worst, std::abs(ref[k] - p(f, static_cast<Eigen::Index>(k))));
      scale = std::max(scale, ref[k]);
    }
    CHECK(worst <= 1e-9 * scale);
  }
}

TEST_CASE("steady tone gives time-constant frames after warm-up") {
  const FeatureSequence f = logmel(tone(440.0, 1.0), 80, 80);
  const double range = f.values.maxCoeff() - f.values.minCoeff();
  const MatrixF inner = f.values.middleRows(2, f.frames() - 4);
  double worst = 0.0;
  for (Eigen::Index t = 1; t < inner.rows(); ++t) {
    worst = std::max(worst, static_cast<double>((inner.row(t) - inner.row(0)).cwiseAbs().maxCoeff()));
  }
  CHECK(worst < 1e-3 * range);
}

TEST_CASE("vtlp") {
  Rng rng(5);
  SUBCASE("alpha 1 is the exact identity") {
    const MatrixD x = random_matrix(10, 80, rng);
    CHECK((vtlp(x, 1.0).array() == x.array()).all());
  }
  SUBCASE("impulse moves to the neighbours of k / alpha") {
    MatrixD x = MatrixD::Zero(1, 80);
    x(0, 40) = 1.0;
    const MatrixD y = vtlp(x, 1.1);
    const double target = 40.0 / 1.1;  // 36.36
    for (Eigen::Index j = 0; j < 80; ++j) {
      if (std::abs(static_cast<double>(j) - target) >= 1.0) CHECK(y(0, j) == 0.0);
    }
    // Hand evaluation: bin 36 reads source 39.6, bin 37 reads 40.7.
    CHECK(y(0, 36) == doctest::Approx(0.6).epsilon(1e-9));
    CHECK(y(0, 37) == doctest::Approx(0.3).epsilon(1e-9));
  }
  SUBCASE("constant spectrum stays constant and shape is preserved") {
    const MatrixD x = MatrixD::Constant(6, 80, -3.25);
    for (double a : {0.9, 0.95, 1.05, 1.1}) {
      const MatrixD y = vtlp(x, a);
      CHECK(y.rows() == 6);
      CHECK(y.cols() == 80);
      CHECK((y.array() + 3.25).abs().maxCoeff() < 1e-6);
    }
  }
  SUBCASE("highest bin maps to itself") {
    for (double a : {0.9, 1.1}) CHECK(vtlp_source_position(79.0, a, 80) == doctest::Approx(79.0));
  }
  SUBCASE("non-positive alpha is rejected") {
    CHECK_THROWS_AS(vtlp(MatrixD::Ones(2, 4).eval(), 0.0), ParameterError);
    CHECK_THROWS_AS(vtlp(MatrixD::Ones(2, 4).eval(), -1.0), ParameterError);
  }
}

TEST_CASE("instance normalization") {
  Rng rng(6);
  SUBCASE("constant channel becomes zero") {
    MatrixD x = random_matrix(20, 4, rng);
    x.col(2).setConstant(7.5);
    CHECK((instance_normalize(x).col(2).array() == 0.0).all());
  }
  SUBCASE("per-channel affine invariance") {
    const MatrixD x = random_matrix(50, 8, rng, 2.0);
    MatrixD y = x;
    for (Eigen::Index c = 0; c < 8; ++c) y.col(c) = y.col(c) * (0.5 + c) + MatrixD::Constant(50, 1, c - 3.0).col(0);
    CHECK((instance_normalize(x, 1e-12) - instance_normalize(y, 1e-12)).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("hand example [1, 3] -> [-1, 1]") {
    MatrixD x(2, 1);
    x << 1.0, 3.0;
    const MatrixD y = instance_normalize(x);
    CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
    CHECK(y(1, 0) == doctest::Approx(1.0).epsilon(1e-5));
  }
  SUBCASE("idempotent up to epsilon") {
    const MatrixD y = instance_normalize(random_matrix(40, 10, rng, 3.0), 1e-12);
    CHECK((instance_normalize(y, 1e-12) - y).cwiseAbs().maxCoeff() < 1e-9);
  }
  SUBCASE("empty input") { CHECK_THROWS_AS(instance_normalize(MatrixD(0, 3)), EmptyInputError); }
}

TEST_CASE("RIR convolution") {
  Rng rng(7);
  std::normal_distribution<float> g(0.0f, 0.4f);
  Waveform w;
  for (int i = 0; i < 64; ++i) w.samples.push_back(g(rng));

  SUBCASE("unit impulse is the identity") {
    const Waveform y = convolve_rir(w, {{1.0f}, 16000, "dirac"});
    for (std::size_t i = 0; i < w.samples.size(); ++i) CHECK(y.samples[i] == doctest::Approx(w.samples[i]).epsilon(1e-6));
  }
  SUBCASE("delayed impulse shifts the signal") {
    const std::size_t d = 5;
    std::vector<float> taps(d + 1, 0.0f);
    taps[d] = 0.5f;
    const Waveform y = convolve_rir(w, {taps, 16000, "delay"});
    // Peak normalisation rescales by the ratio of input to output peaks.
    float in_peak = 0.0f, out_peak = 0.0f;
    for (std::size_t i = 0; i < w.samples.size(); ++i) {
      in_peak = std::max(in_peak, std::abs(w.samples[i]));
      if (i + d < w.samples.size()) out_peak = std::max(out_peak, std::abs(w.samples[i]));
    }
    const double scale = in_peak / out_peak;
    for (std::size_t i = 0; i < d; ++i) CHECK(std::abs(y.samples[i]) < 1e-6);
    for (std::size_t i = d; i < w.samples.size(); ++i) {
      CHECK(y.samples[i] == doctest::Approx(scale * w.samples[i - d]).epsilon(1e-5));
    }
  }
  SUBCASE("16-tap kernel matches direct convolution") {
    Rir r{{}, 16000, "rand"};
    for (int i = 0; i < 16; ++i) r.taps.push_back(g(rng));
    const Waveform y = convolve_rir(w, r);
    std::vector<double> ref(64, 0.0);
    double in_peak = 0.0, out_peak = 0.0;
    for (std::size_t i = 0; i < 64; ++i) {
      for (std::size_t j = 0; j < 16 && j <= i; ++j) ref[i] += static_cast<double>(w.samples[i - j]) * r.taps[j];
      in_peak = std::max(in_peak, std::abs(static_cast<double>(w.samples[i])));
      out_peak = std::max(out_peak, std::abs(ref[i]));
    }
    for (std::size_t i = 0; i < 64; ++i) CHECK(std::abs(ref[i] * in_peak / out_peak - y.samples[i]) < 1e-6);
  }
  SUBCASE("sample rate mismatch") { CHECK_THROWS_AS(convolve_rir(w, {{1.0f}, 8000, "x"}), ParameterError); }
}

TEST_CASE("audio ingestion") {
  const auto dir = scratch_dir("ingest");
  SUBCASE("silence at the target rate passes through") {
    Waveform w;
    w.samples.assign(16000, 0.0f);
    write_wav(dir / "sil.wav", w);
    const Waveform r = ingest(dir / "sil.wav", 16000);
    CHECK(r.samples.size() == 16000);
    CHECK(r.sample_rate == 16000);
    CHECK(std::all_of(r.samples.begin(), r.samples.end(), [](float s) { return s == 0.0f; }));
  }
  SUBCASE("8 kHz input is resampled to 16000 samples per second") {
    write_wav(dir / "t8k.wav", tone(200.0, 1.0, 8000));
    CHECK(ingest(dir / "t8k.wav", 16000).samples.size() == 16000);
  }
  SUBCASE("unit impulse keeps its peak bounded") {
    Waveform w;
    w.samples.assign(1600, 0.0f);
    w.samples[800] = 1.0f;
    write_wav(dir / "imp.wav", w);
    const Waveform r = ingest(dir / "imp.wav", 16000);
    float peak = 0.0f;
    for (float s : r.samples) peak = std::max(peak, std::abs(s));
    CHECK(peak <= 1.0f);
    CHECK(peak == 1.0f);
  }
  SUBCASE("16-bit PCM stereo is downmixed") {
    std::ofstream f(dir / "pcm.wav", std::ios::binary);
    auto u32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
    auto u16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
    f.write("RIFF", 4);
    u32(36 + 8);
    f.write("WAVEfmt ", 8);
    u32(16);
    u16(1);
    u16(2);
    u32(16000);
    u32(16000 * 4);
    u16(4);
    u16(16);
    f.write("data", 4);
    u32(8);
    for (std::int16_t s : {16384, 0, -16384, -16384}) f.write(reinterpret_cast<const char*>(&s), 2);
    f.close();
    const Waveform r = read_wav(dir / "pcm.wav");
    REQUIRE(r.samples.size() == 2);
    CHECK(r.samples[0] == doctest::Approx(0.25));
    CHECK(r.samples[1] == doctest::Approx(-0.5));
  }
  SUBCASE("errors") {
    CHECK_THROWS_AS(ingest(dir / "missing.wav", 16000), IngestError);
    std::ofstream(dir / "junk.wav") << "not audio";
    CHECK_THROWS_AS(ingest(dir / "junk.wav", 16000), IngestError);
    write_wav(dir / "empty.wav", Waveform{});
    CHECK_THROWS_AS(ingest(dir / "empty.wav", 16000), EmptyInputError);
  }
}

TEST_CASE("feature files round-trip with a 16-byte DSF1 header") {
  const auto dir = scratch_dir("dsf");
  Rng rng(9);
  FeatureSequence x{random_matrix(13, 80, rng).cast<float>(), 80};
  write_features(dir / "a.dsf", x);
  CHECK(std::filesystem::file_size(dir / "a.dsf") == 16 + 13 * 80 * 4);
  std::ifstream in(dir / "a.dsf", std::ios::binary);
  char magic[4];
  in.read(magic, 4);
  CHECK(std::string(magic, 4) == "DSF1");
  const FeatureSequence y = read_features(dir / "a.dsf");
  CHECK(y.frame_rate == 80);
  CHECK((y.values.array() == x.values.array()).all());
  std::ofstream(dir / "bad.dsf") << "XXXX";
  CHECK_THROWS_AS(read_features(dir / "bad.dsf"), DataError);
}
