#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace skb {

struct DatasetEntry {
  std::filesystem::path audio_path;  // absolute, or relative to the working directory
  std::string species;
  std::int64_t recorded_at = 0;  // seconds since epoch

  bool operator==(const DatasetEntry&) const = default;
};

/// Accepts YYYY-MM-DD, YYYY-MM-DDTHH:MM[:SS[.fff]] with optional Z or +HH:MM.
std::int64_t parse_iso8601(std::string_view text);
std::string format_iso8601(std::int64_t epoch_seconds);

/// CSV with header audio_path,species,recorded_at. Relative audio paths
/// resolve against the manifest's directory.
std::vector<DatasetEntry> load_manifest(const std::filesystem::path& path,
                                        bool check_files = true);
std::vector<DatasetEntry> parse_manifest(std::string_view csv,
                                         const std::filesystem::path& base_dir,
                                         bool check_files = true);
void write_manifest(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries);

struct DataSplit {
  std::vector<DatasetEntry> train;
  std::vector<DatasetEntry> test;
  std::vector<std::string> warnings;
};

/// Per species: chronological order (ties by path), earliest ceil(f * n) to train.
DataSplit split_time_based(std::vector<DatasetEntry> entries, double train_fraction = 0.7);

std::vector<std::string> species_of(const std::vector<DatasetEntry>& entries);

}  // namespace skb
