#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace skb {

struct AudioClip {
  std::vector<float> samples;  // [-1, 1]
  int sample_rate_hz = 0;
  std::string source_path;
  std::optional<std::int64_t> recorded_at;  // seconds since epoch

  double duration_s() const {
    return sample_rate_hz > 0 ? static_cast<double>(samples.size()) / sample_rate_hz : 0.0;
  }
};

enum class WindowKind { hann };

struct StftConfig {
  int window_len = 1024;  // power of two
  int hop_len = 256;
  WindowKind window_kind = WindowKind::hann;
  double log_floor_db = -80.0;
  double max_duration_s = 30.0;  // longer clips are truncated before the STFT

  void validate() const;
  bool operator==(const StftConfig&) const = default;
};

/// Log-magnitude grid, stored bin-major: value(bin, frame).
class SpectrogramMatrix {
 public:
  SpectrogramMatrix() = default;
  SpectrogramMatrix(int bins, int frames, double freq_resolution_hz, double time_resolution_s,
                    int sample_rate_hz, double floor_db, double fill);

  int bins() const { return bins_; }
  int frames() const { return frames_; }
  double freq_resolution_hz() const { return freq_resolution_hz_; }
  double time_resolution_s() const { return time_resolution_s_; }
  int sample_rate_hz() const { return sample_rate_hz_; }
  double floor_db() const { return floor_db_; }

  double& at(int bin, int frame) { return values_[index(bin, frame)]; }
  double at(int bin, int frame) const { return values_[index(bin, frame)]; }
  std::span<const double> values() const { return values_; }
  std::span<double> values() { return values_; }

  std::string digest() const;

  bool operator==(const SpectrogramMatrix&) const = default;

 private:
  std::size_t index(int bin, int frame) const {
    return static_cast<std::size_t>(bin) * static_cast<std::size_t>(frames_) +
           static_cast<std::size_t>(frame);
  }

  int bins_ = 0;
  int frames_ = 0;
  double freq_resolution_hz_ = 0.0;
  double time_resolution_s_ = 0.0;
  int sample_rate_hz_ = 0;
  double floor_db_ = -80.0;
  std::vector<double> values_;
};

/// Rendered spectrogram plus the axis legend a viewer needs to read it.
struct SpectrogramImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major, row 0 = top = highest frequency
  std::vector<std::uint8_t> png;
  std::string source_matrix_digest;
  double freq_span_hz = 0.0;  // bottom edge 0 Hz, top edge freq_span_hz
  double time_span_s = 0.0;
  double db_min = 0.0;  // value mapped to pixel 0
  double db_max = 0.0;  // value mapped to pixel 255

  std::string digest() const;
};

struct DecodedImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;
};

// WAV I/O ------------------------------------------------------------------

/// Reads 16-bit PCM WAV; multi-channel files keep channel 0 only.
AudioClip load_audio(const std::filesystem::path& path,
                     std::optional<std::int64_t> recorded_at = std::nullopt);
AudioClip decode_wav(std::span<const std::uint8_t> bytes, std::string source_path = {});

std::vector<std::uint8_t> encode_wav(std::span<const float> samples, int sample_rate_hz);
void write_wav(const std::filesystem::path& path, std::span<const float> samples,
               int sample_rate_hz);

// STFT kernels -----------------------------------------------------------

/// OpenMP-parallel over frames.
SpectrogramMatrix compute_spectrogram(const AudioClip& clip, const StftConfig& cfg = {});

/// Single-threaded reference for the parallel kernel; results are bit-identical.
SpectrogramMatrix compute_spectrogram_serial(const AudioClip& clip, const StftConfig& cfg = {});

std::vector<double> hann_window(int n);

// Rendering --------------------------------------------------------------

SpectrogramImage render_spectrogram(const SpectrogramMatrix& matrix, int width = 512,
                                    int height = 512);

std::vector<std::uint8_t> encode_png_gray(int width, int height,
                                          std::span<const std::uint8_t> pixels);
DecodedImage decode_png_gray(std::span<const std::uint8_t> png);

/// Approximate inverse of render_spectrogram using the image's axis legend.
SpectrogramMatrix image_to_matrix(const SpectrogramImage& image);

}  // namespace skb
