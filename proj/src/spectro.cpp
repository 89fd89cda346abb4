#include "skb/spectro.hpp"

#include <fftw3.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <map>
#include <memory>
#include <mutex>
#include <numbers>

#include "skb/digest.hpp"
#include "skb/error.hpp"

namespace skb {

void StftConfig::validate() const {
  if (window_len <= 1 || !std::has_single_bit(static_cast<unsigned>(window_len))) {
    throw ConfigError("window_len must be a power of two > 1");
  }
  if (hop_len <= 0 || hop_len > window_len) {
    throw ConfigError("hop_len must satisfy 0 < hop_len <= window_len");
  }
  if (!std::isfinite(log_floor_db)) throw ConfigError("log_floor_db must be finite");
  if (!(max_duration_s > 0.0)) throw ConfigError("max_duration_s must be positive");
}

SpectrogramMatrix::SpectrogramMatrix(int bins, int frames, double freq_resolution_hz,
                                     double time_resolution_s, int sample_rate_hz,
                                     double floor_db, double fill)
    : bins_(bins),
      frames_(frames),
      freq_resolution_hz_(freq_resolution_hz),
      time_resolution_s_(time_resolution_s),
      sample_rate_hz_(sample_rate_hz),
      floor_db_(floor_db),
      values_(static_cast<std::size_t>(bins) * static_cast<std::size_t>(frames), fill) {
  if (bins <= 0 || frames <= 0) throw ValidationError("spectrogram must have bins and frames");
}

std::string SpectrogramMatrix::digest() const {
  std::vector<std::uint8_t> buf;
  auto put = [&buf](const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    buf.insert(buf.end(), b, b + n);
  };
  put(&bins_, sizeof bins_);
  put(&frames_, sizeof frames_);
  put(&freq_resolution_hz_, sizeof freq_resolution_hz_);
  put(&time_resolution_s_, sizeof time_resolution_s_);
  put(&sample_rate_hz_, sizeof sample_rate_hz_);
  put(values_.data(), values_.size() * sizeof(double));
  return sha256_hex(buf);
}

std::string SpectrogramImage::digest() const { return sha256_hex(png); }

// ---------------------------------------------------------------------------
// WAV

namespace {

std::uint32_t read_u32(const std::uint8_t* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

std::uint16_t read_u16(const std::uint8_t* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xFF));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

constexpr std::uint16_t kFormatPcm = 1;
constexpr std::uint16_t kFormatExtensible = 0xFFFE;

}  // namespace

AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_path) {
  using K = AudioError::Kind;
  if (bytes.size() < 12 || std::memcmp(bytes.data(), "RIFF", 4) != 0 ||
      std::memcmp(bytes.data() + 8, "WAVE", 4) != 0) {
    throw AudioError(K::unsupported_encoding, "not a RIFF/WAVE file: " + source_path);
  }
  std::size_t pos = 12;
  bool have_fmt = false;
  std::uint16_t channels = 0;
  std::uint16_t bits = 0;
  std::uint32_t rate = 0;
  while (pos + 8 <= bytes.size()) {
    const std::uint8_t* hdr = bytes.data() + pos;
    const std::uint32_t size = read_u32(hdr + 4);
    const std::size_t body = pos + 8;
    if (body + size > bytes.size() && std::memcmp(hdr, "data", 4) != 0) {
      throw AudioError(K::malformed, "truncated chunk in " + source_path);
    }
    if (std::memcmp(hdr, "fmt ", 4) == 0) {
      if (size < 16) throw AudioError(K::malformed, "short fmt chunk in " + source_path);
      const std::uint8_t* f = bytes.data() + body;
      std::uint16_t format = read_u16(f);
      channels = read_u16(f + 2);
      rate = read_u32(f + 4);
      bits = read_u16(f + 14);
      if (format == kFormatExtensible && size >= 40) format = read_u16(f + 24);
      if (format != kFormatPcm || bits != 16) {
        throw AudioError(K::unsupported_encoding,
                         "only 16-bit PCM WAV is supported (transcode first): " + source_path);
      }
      if (channels == 0 || rate == 0) throw AudioError(K::malformed, "bad fmt chunk");
      have_fmt = true;
    } else if (std::memcmp(hdr, "data", 4) == 0) {
      if (!have_fmt) throw AudioError(K::malformed, "data chunk before fmt in " + source_path);
      // Tolerate writers that leave the size field oversized.
      const std::size_t avail = std::min<std::size_t>(size, bytes.size() - body);
      const std::size_t frame_bytes = static_cast<std::size_t>(channels) * 2;
      const std::size_t frames = avail / frame_bytes;
      if (frames == 0) throw AudioError(K::malformed, "no audio frames in " + source_path);
      AudioClip clip;
      clip.sample_rate_hz = static_cast<int>(rate);
      clip.source_path = std::move(source_path);
      clip.samples.resize(frames);
      const std::uint8_t* d = bytes.data() + body;
      for (std::size_t i = 0; i < frames; ++i) {
        const auto v = static_cast<std::int16_t>(read_u16(d + i * frame_bytes));
        clip.samples[i] = static_cast<float>(v) / 32768.0f;
      }
      return clip;
    }
    pos = body + size + (size & 1U);
  }
  throw AudioError(K::malformed, "no data chunk in " + source_path);
}

AudioClip load_audio(const std::filesystem::path& path, std::optional<std::int64_t> recorded_at) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw AudioError(AudioError::Kind::unreadable, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  AudioClip clip = decode_wav(bytes, path.string());
  clip.recorded_at = recorded_at;
  return clip;
}

std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate_hz) {
  const auto data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  std::vector<std::uint8_t> out;
  out.reserve(44 + data_bytes);
  out.insert(out.end(), {'R', 'I', 'F', 'F'});
  put_u32(out, 36 + data_bytes);
  out.insert(out.end(), {'W', 'A', 'V', 'E', 'f', 'm', 't', ' '});
  put_u32(out, 16);
  put_u16(out, kFormatPcm);
  put_u16(out, 1);
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz));
  put_u32(out, static_cast<std::uint32_t>(sample_rate_hz) * 2);
  put_u16(out, 2);
  put_u16(out, 16);
  out.insert(out.end(), {'d', 'a', 't', 'a'});
  put_u32(out, data_bytes);
  for (float s : samples) {
    const long q = std::lround(static_cast<double>(s) * 32768.0);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(std::clamp(q, -32768L, 32767L))));
  }
  return out;
}

void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate_hz) {
  const auto bytes = encode_wav(samples, sample_rate_hz);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

// ---------------------------------------------------------------------------
// STFT

std::vector<double> hann_window(int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    w[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / n);
  }
  return w;
}

namespace {

// FFTW planning is not thread-safe; execution of an existing plan on
// caller-owned buffers is.
class PlanCache {
 public:
  fftw_plan get(int n) {
    std::lock_guard lock(mutex_);
    auto it = plans_.find(n);
    if (it != plans_.end()) return it->second;
    double* in = fftw_alloc_real(static_cast<std::size_t>(n));
    fftw_complex* out = fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1));
    fftw_plan plan = fftw_plan_dft_r2c_1d(n, in, out, FFTW_ESTIMATE);
    fftw_free(in);
    fftw_free(out);
    plans_.emplace(n, plan);
    return plan;
  }

 private:
  std::mutex mutex_;
  std::map<int, fftw_plan> plans_;
};

PlanCache& plan_cache() {
  static PlanCache cache;
  return cache;
}

struct FftBuffers {
  explicit FftBuffers(int n)
      : in(fftw_alloc_real(static_cast<std::size_t>(n))),
        out(fftw_alloc_complex(static_cast<std::size_t>(n / 2 + 1))) {}
  ~FftBuffers() {
    fftw_free(in);
    fftw_free(out);
  }
  FftBuffers(const FftBuffers&) = delete;
  FftBuffers& operator=(const FftBuffers&) = delete;
  double* in;
  fftw_complex* out;
};

struct StftPlan {
  int frames;
  int bins;
  std::size_t usable;
  std::vector<double> window;
  fftw_plan plan;
};

StftPlan prepare(const AudioClip& clip, const StftConfig& cfg) {
  cfg.validate();
  if (clip.sample_rate_hz <= 0) throw ValidationError("sample_rate_hz must be positive");
  const auto max_samples =
      static_cast<std::size_t>(std::floor(cfg.max_duration_s * clip.sample_rate_hz));
  const std::size_t usable = std::min(clip.samples.size(), max_samples);
  if (usable < static_cast<std::size_t>(cfg.window_len)) {
    throw AudioError(AudioError::Kind::too_short, "clip shorter than one STFT window");
  }
  StftPlan p;
  p.usable = usable;
  p.frames = static_cast<int>((usable - static_cast<std::size_t>(cfg.window_len)) /
                              static_cast<std::size_t>(cfg.hop_len)) + 1;
  p.bins = cfg.window_len / 2 + 1;
  p.window = hann_window(cfg.window_len);
  p.plan = plan_cache().get(cfg.window_len);
  return p;
}

void transform_frame(const AudioClip& clip, const StftConfig& cfg, const StftPlan& p, int frame,
                     FftBuffers& buf, SpectrogramMatrix& out) {
  const std::size_t start = static_cast<std::size_t>(frame) * static_cast<std::size_t>(cfg.hop_len);
  for (int i = 0; i < cfg.window_len; ++i) {
    const auto s = static_cast<double>(clip.samples[start + static_cast<std::size_t>(i)]);
    buf.in[i] = std::isfinite(s) ? s * p.window[static_cast<std::size_t>(i)] : 0.0;
  }
  fftw_execute_dft_r2c(p.plan, buf.in, buf.out);
  for (int k = 0; k < p.bins; ++k) {
    const double mag = std::hypot(buf.out[k][0], buf.out[k][1]);
    const double db = mag > 0.0 ? 20.0 * std::log10(mag) : cfg.log_floor_db;
    out.at(k, frame) = std::isfinite(db) ? std::max(db, cfg.log_floor_db) : cfg.log_floor_db;
  }
}

SpectrogramMatrix empty_like(const AudioClip& clip, const StftConfig& cfg, const StftPlan& p) {
  return SpectrogramMatrix(p.bins, p.frames,
                           static_cast<double>(clip.sample_rate_hz) / cfg.window_len,
                           static_cast<double>(cfg.hop_len) / clip.sample_rate_hz,
                           clip.sample_rate_hz, cfg.log_floor_db, cfg.log_floor_db);
}

}  // namespace

SpectrogramMatrix compute_spectrogram(const AudioClip& clip, const StftConfig& cfg) {
  const StftPlan p = prepare(clip, cfg);
  SpectrogramMatrix out = empty_like(clip, cfg, p);
#pragma omp parallel
  {
    FftBuffers buf(cfg.window_len);
#pragma omp for schedule(static)
    for (int t = 0; t < p.frames; ++t) transform_frame(clip, cfg, p, t, buf, out);
  }
  return out;
}

SpectrogramMatrix compute_spectrogram_serial(const AudioClip& clip, const StftConfig& cfg) {
  const StftPlan p = prepare(clip, cfg);
  SpectrogramMatrix out = empty_like(clip, cfg, p);
  FftBuffers buf(cfg.window_len);
  for (int t = 0; t < p.frames; ++t) transform_frame(clip, cfg, p, t, buf, out);
  return out;
}

// ---------------------------------------------------------------------------
// Rendering

SpectrogramImage render_spectrogram(const SpectrogramMatrix& matrix, int width, int height) {
  if (width <= 0 || height <= 0) throw ValidationError("image size must be positive");
  const auto vals = matrix.values();
  const auto [mn_it, mx_it] = std::minmax_element(vals.begin(), vals.end());
  const double mn = *mn_it;
  const double mx = *mx_it;
  const bool degenerate = !(mx > mn);

  SpectrogramImage img;
  img.width = width;
  img.height = height;
  img.pixels.resize(static_cast<std::size_t>(width) * static_cast<std::size_t>(height));
  img.db_min = mn;
  img.db_max = mx;
  img.freq_span_hz = matrix.bins() * matrix.freq_resolution_hz();
  img.time_span_s = matrix.frames() * matrix.time_resolution_s();
  img.source_matrix_digest = matrix.digest();

  std::vector<int> col_frame(static_cast<std::size_t>(width));
  for (int x = 0; x < width; ++x) {
    col_frame[static_cast<std::size_t>(x)] = static_cast<int>(
        static_cast<std::int64_t>(x) * matrix.frames() / width);
  }
  for (int y = 0; y < height; ++y) {
    const int from_bottom = height - 1 - y;
    const int bin = static_cast<int>(static_cast<std::int64_t>(from_bottom) * matrix.bins() / height);
    std::uint8_t* row = img.pixels.data() + static_cast<std::size_t>(y) * static_cast<std::size_t>(width);
    for (int x = 0; x < width; ++x) {
      if (degenerate) {
        row[x] = 128;
        continue;
      }
      const double v = matrix.at(bin, col_frame[static_cast<std::size_t>(x)]);
      row[x] = static_cast<std::uint8_t>(std::lround((v - mn) / (mx - mn) * 255.0));
    }
  }
  img.png = encode_png_gray(width, height, img.pixels);
  return img;
}

SpectrogramMatrix image_to_matrix(const SpectrogramImage& image) {
  std::vector<std::uint8_t> decoded;
  std::span<const std::uint8_t> pixels = image.pixels;
  if (pixels.empty()) {
    auto d = decode_png_gray(image.png);
    if (d.width != image.width || d.height != image.height) {
      throw ValidationError("PNG dimensions disagree with image metadata");
    }
    decoded = std::move(d.pixels);
    pixels = decoded;
  }
  if (image.width <= 0 || image.height <= 0 ||
      pixels.size() != static_cast<std::size_t>(image.width) * static_cast<std::size_t>(image.height)) {
    throw ValidationError("image has no pixel data");
  }
  const double fres = image.freq_span_hz / image.height;
  const double tres = image.time_span_s / image.width;
  const double floor = std::min(image.db_min, image.db_max);
  SpectrogramMatrix m(image.height, image.width, fres, tres,
                      static_cast<int>(std::lround(image.freq_span_hz * 2.0)), floor, floor);
  const double scale = (image.db_max - image.db_min) / 255.0;
  for (int y = 0; y < image.height; ++y) {
    const int bin = image.height - 1 - y;
    for (int x = 0; x < image.width; ++x) {
      const auto p = pixels[static_cast<std::size_t>(y) * static_cast<std::size_t>(image.width) +
                            static_cast<std::size_t>(x)];
      m.at(bin, x) = image.db_min + scale * p;
    }
  }
  return m;
}

}  // namespace skb
