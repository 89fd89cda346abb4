#include <gtest/gtest.h>

#include <cmath>
#include <complex>
#include <numbers>

#include "skb/error.hpp"
#include "skb/random.hpp"
#include "skb/spectro.hpp"

using namespace skb;

namespace {

AudioClip sine(double freq, int fs, double seconds, double amp = 0.5) {
  AudioClip c;
  c.sample_rate_hz = fs;
  c.samples.resize(static_cast<std::size_t>(seconds * fs));
  for (std::size_t i = 0; i < c.samples.size(); ++i) {
    c.samples[i] = static_cast<float>(amp * std::sin(2.0 * std::numbers::pi * freq * i / fs));
  }
  return c;
}

// Direct O(N^2) DFT of one Hann-windowed frame.
std::vector<double> brute_force_frame_db(const AudioClip& clip, int start, int n, double floor_db) {
  std::vector<double> out(static_cast<std::size_t>(n / 2 + 1));
  for (int k = 0; k <= n / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double w = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
      const double x = static_cast<double>(clip.samples[static_cast<std::size_t>(start + i)]) * w;
      acc += x * std::polar(1.0, -2.0 * std::numbers::pi * k * i / n);
    }
    const double mag = std::abs(acc);
    out[static_cast<std::size_t>(k)] = mag > 0.0 ? std::max(20.0 * std::log10(mag), floor_db) : floor_db;
  }
  return out;
}

}  // namespace

TEST(Spectro, MatchesBruteForceDft) {
  Rng rng(5);
  AudioClip clip;
  clip.sample_rate_hz = 8000;
  clip.samples.resize(600);
  for (auto& s : clip.samples) s = static_cast<float>(rng.uniform(-0.9, 0.9));
  StftConfig cfg;
  cfg.window_len = 64;
  cfg.hop_len = 48;
  const auto m = compute_spectrogram(clip, cfg);
  ASSERT_EQ(m.bins(), 33);
  ASSERT_EQ(m.frames(), (600 - 64) / 48 + 1);
  for (int t = 0; t < m.frames(); ++t) {
    const auto ref = brute_force_frame_db(clip, t * cfg.hop_len, cfg.window_len, cfg.log_floor_db);
    for (int k = 0; k < m.bins(); ++k) EXPECT_NEAR(m.at(k, t), ref[static_cast<std::size_t>(k)], 1e-8);
  }
  EXPECT_DOUBLE_EQ(m.freq_resolution_hz(), 125.0);
  EXPECT_DOUBLE_EQ(m.time_resolution_s(), 48.0 / 8000.0);
}

TEST(Spectro, SinePeaksAtExpectedBin) {
  StftConfig cfg;
  cfg.window_len = 512;
  cfg.hop_len = 128;
  const auto m = compute_spectrogram(sine(1000.0, 16000, 1.0), cfg);
  for (int t = 1; t + 1 < m.frames(); ++t) {
    int best = 0;
    for (int k = 1; k < m.bins(); ++k) {
      if (m.at(k, t) > m.at(best, t)) best = k;
    }
    EXPECT_EQ(best, 32) << "frame " << t;
  }
}

TEST(Spectro, SilenceIsUniformFloor) {
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.assign(4096, 0.0f);
  const auto m = compute_spectrogram(clip);
  for (double v : m.values()) EXPECT_EQ(v, -80.0);
  const auto img = render_spectrogram(m, 32, 16);
  for (auto p : img.pixels) EXPECT_EQ(p, 128);
}

TEST(Spectro, ParallelMatchesSerial) {
  Rng rng(11);
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.resize(16000 * 3);
  for (auto& s : clip.samples) s = static_cast<float>(0.3 * rng.normal());
  const auto a = compute_spectrogram(clip);
  const auto b = compute_spectrogram_serial(clip);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.digest(), b.digest());
}

TEST(Spectro, TruncatesLongClips) {
  StftConfig cfg;
  cfg.max_duration_s = 1.0;
  const auto m = compute_spectrogram(sine(440.0, 8000, 3.0), cfg);
  EXPECT_EQ(m.frames(), (8000 - 1024) / 256 + 1);
}

TEST(Spectro, RejectsBadInput) {
  StftConfig cfg;
  cfg.window_len = 1000;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = StftConfig{};
  cfg.hop_len = 2048;
  EXPECT_THROW(cfg.validate(), ConfigError);
  AudioClip tiny;
  tiny.sample_rate_hz = 16000;
  tiny.samples.assign(100, 0.1f);
  try {
    compute_spectrogram(tiny);
    FAIL() << "expected too_short";
  } catch (const AudioError& e) {
    EXPECT_EQ(e.kind(), AudioError::Kind::too_short);
  }
}

TEST(Spectro, NonFiniteSamplesAreZeroed) {
  auto clip = sine(1000.0, 16000, 0.5);
  auto clean = clip;
  clip.samples[3000] = std::numeric_limits<float>::quiet_NaN();
  clean.samples[3000] = 0.0f;
  EXPECT_EQ(compute_spectrogram(clip), compute_spectrogram(clean));
}

TEST(Wav, RoundTripsSixteenBitPcm) {
  const auto clip = sine(300.0, 22050, 0.2, 0.7);
  const auto bytes = encode_wav(clip.samples, clip.sample_rate_hz);
  const auto back = decode_wav(bytes);
  ASSERT_EQ(back.samples.size(), clip.samples.size());
  EXPECT_EQ(back.sample_rate_hz, 22050);
  for (std::size_t i = 0; i < clip.samples.size(); ++i) {
    EXPECT_NEAR(back.samples[i], clip.samples[i], 1.0 / 32768.0 + 1e-7);
  }
}

TEST(Wav, RejectsGarbageAndOtherEncodings) {
  const std::vector<std::uint8_t> junk(64, 7);
  try {
    decode_wav(junk);
    FAIL();
  } catch (const AudioError& e) {
    EXPECT_EQ(e.kind(), AudioError::Kind::unsupported_encoding);
  }
  auto bytes = encode_wav(std::vector<float>(100, 0.0f), 8000);
  bytes[34] = 8;  // bits per sample
  try {
    decode_wav(bytes);
    FAIL();
  } catch (const AudioError& e) {
    EXPECT_EQ(e.kind(), AudioError::Kind::unsupported_encoding);
  }
  auto cut = encode_wav(std::vector<float>(100, 0.0f), 8000);
  cut.resize(30);
  EXPECT_THROW(decode_wav(cut), AudioError);
  EXPECT_THROW(load_audio("/nonexistent/clip.wav"), AudioError);
}

TEST(Render, HighFrequenciesAtTheTop) {
  SpectrogramMatrix m(4, 2, 100.0, 0.01, 800, -80.0, -80.0);
  m.at(3, 0) = 0.0;  // loudest cell: top bin, first frame
  const auto img = render_spectrogram(m, 2, 4);
  EXPECT_EQ(img.pixels[0], 255);
  EXPECT_EQ(img.pixels[1], 0);
  EXPECT_EQ(img.pixels[6], 0);
  EXPECT_DOUBLE_EQ(img.freq_span_hz, 400.0);
  EXPECT_DOUBLE_EQ(img.time_span_s, 0.02);
}

TEST(Render, PngRoundTripAndDeterminism) {
  const auto m = compute_spectrogram(sine(2000.0, 16000, 1.0));
  const auto a = render_spectrogram(m, 64, 48);
  const auto b = render_spectrogram(m, 64, 48);
  EXPECT_EQ(a.png, b.png);
  const auto d = decode_png_gray(a.png);
  EXPECT_EQ(d.width, 64);
  EXPECT_EQ(d.height, 48);
  EXPECT_EQ(d.pixels, a.pixels);
  EXPECT_THROW(decode_png_gray(std::vector<std::uint8_t>(20, 1)), Error);
}

TEST(Render, LegendLetsViewersRecoverLevels) {
  const auto m = compute_spectrogram(sine(2000.0, 16000, 1.0));
  const auto img = render_spectrogram(m, m.frames(), m.bins());
  auto stripped = img;
  stripped.pixels.clear();
  const auto back = image_to_matrix(stripped);
  ASSERT_EQ(back.bins(), m.bins());
  ASSERT_EQ(back.frames(), m.frames());
  const double step = (img.db_max - img.db_min) / 255.0;
  for (int k = 0; k < m.bins(); ++k) {
    for (int t = 0; t < m.frames(); ++t) EXPECT_NEAR(back.at(k, t), m.at(k, t), step / 2 + 1e-9);
  }
}

namespace {

void put16(std::vector<std::uint8_t>& b, std::uint16_t v) {
  b.push_back(static_cast<std::uint8_t>(v & 0xFF));
  b.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) b.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xFF));
}

std::vector<std::uint8_t> pcm16_wav(int channels, int rate, const std::vector<std::int16_t>& interleaved) {
  std::vector<std::uint8_t> b;
  const auto data_bytes = static_cast<std::uint32_t>(interleaved.size() * 2);
  for (char c : std::string("RIFF")) b.push_back(static_cast<std::uint8_t>(c));
  put32(b, 36 + data_bytes);
  for (char c : std::string("WAVEfmt ")) b.push_back(static_cast<std::uint8_t>(c));
  put32(b, 16);
  put16(b, 1);
  put16(b, static_cast<std::uint16_t>(channels));
  put32(b, static_cast<std::uint32_t>(rate));
  put32(b, static_cast<std::uint32_t>(rate * channels * 2));
  put16(b, static_cast<std::uint16_t>(channels * 2));
  put16(b, 16);
  for (char c : std::string("data")) b.push_back(static_cast<std::uint8_t>(c));
  put32(b, data_bytes);
  for (auto s : interleaved) put16(b, static_cast<std::uint16_t>(s));
  return b;
}

}  // namespace

TEST(Wav, SampleCountAndScaling) {
  const auto clip = decode_wav(pcm16_wav(1, 44100, std::vector<std::int16_t>(44100, 16384)));
  EXPECT_EQ(clip.samples.size(), 44100u);
  EXPECT_DOUBLE_EQ(clip.duration_s(), 1.0);
  for (float s : clip.samples) EXPECT_EQ(s, 0.5f);
}

TEST(Wav, StereoKeepsFirstChannel) {
  std::vector<std::int16_t> inter;
  for (int i = 0; i < 1000; ++i) {
    inter.push_back(static_cast<std::int16_t>(i));
    inter.push_back(-1000);
  }
  const auto clip = decode_wav(pcm16_wav(2, 8000, inter));
  ASSERT_EQ(clip.samples.size(), 1000u);
  for (int i = 0; i < 1000; ++i) EXPECT_EQ(clip.samples[static_cast<std::size_t>(i)], i / 32768.0f);
}

TEST(Spectro, DcConcentratesInBinZero) {
  AudioClip clip;
  clip.sample_rate_hz = 16000;
  clip.samples.assign(8192, 0.5f);
  const auto m = compute_spectrogram(clip);
  for (int t = 0; t < m.frames(); ++t) {
    int best = 0;
    for (int k = 1; k < m.bins(); ++k) {
      if (m.at(k, t) > m.at(best, t)) best = k;
    }
    EXPECT_EQ(best, 0);
  }
}

TEST(Spectro, RandomClipsStayFinite) {
  Rng rng(99);
  for (int trial = 0; trial < 5; ++trial) {
    AudioClip clip;
    clip.sample_rate_hz = 16000;
    clip.samples.resize(4000 + rng.uniform_index(4000));
    const double scale = std::pow(10.0, rng.uniform(-6.0, 0.0));
    for (auto& s : clip.samples) s = static_cast<float>(scale * rng.uniform(-1.0, 1.0));
    const auto m = compute_spectrogram(clip);
    for (double v : m.values()) {
      ASSERT_TRUE(std::isfinite(v));
      ASSERT_GE(v, -80.0);
    }
  }
}

TEST(Render, NearestNeighbourUpscaleMakesBlocks) {
  SpectrogramMatrix m(64, 64, 1.0, 1.0, 128, -80.0, -80.0);
  Rng rng(3);
  for (int k = 0; k < 64; ++k) {
    for (int t = 0; t < 64; ++t) m.at(k, t) = rng.uniform(-80.0, 0.0);
  }
  const auto img = render_spectrogram(m, 128, 128);
  for (int y = 0; y < 128; y += 2) {
    for (int x = 0; x < 128; x += 2) {
      const auto p = img.pixels[static_cast<std::size_t>(y * 128 + x)];
      EXPECT_EQ(img.pixels[static_cast<std::size_t>(y * 128 + x + 1)], p);
      EXPECT_EQ(img.pixels[static_cast<std::size_t>((y + 1) * 128 + x)], p);
      EXPECT_EQ(img.pixels[static_cast<std::size_t>((y + 1) * 128 + x + 1)], p);
    }
  }
}

TEST(Render, SingleMaximalCellGivesOneBrightRegion) {
  SpectrogramMatrix m(8, 8, 1.0, 1.0, 16, -80.0, -80.0);
  m.at(2, 5) = -10.0;
  const auto img = render_spectrogram(m, 16, 16);
  int bright = 0;
  for (auto p : img.pixels) bright += p == 255 ? 1 : 0;
  EXPECT_EQ(bright, 4);
}
