#include "skb/dataset.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <sstream>

#include "skb/error.hpp"
#include "skb/io.hpp"

namespace skb {

namespace {

int parse_int(std::string_view s, std::size_t pos, std::size_t len, std::string_view whole) {
  if (pos + len > s.size()) throw ManifestError("unparseable timestamp '" + std::string(whole) + "'");
  int v = 0;
  for (std::size_t i = pos; i < pos + len; ++i) {
    if (s[i] < '0' || s[i] > '9') throw ManifestError("unparseable timestamp '" + std::string(whole) + "'");
    v = v * 10 + (s[i] - '0');
  }
  return v;
}

}  // namespace

std::int64_t parse_iso8601(std::string_view raw) {
  using namespace std::chrono;
  const std::string_view s = trim(raw);
  auto bad = [&] { return ManifestError("unparseable timestamp '" + std::string(s) + "'"); };
  if (s.size() < 10 || s[4] != '-' || s[7] != '-') throw bad();
  const int y = parse_int(s, 0, 4, s);
  const int mo = parse_int(s, 5, 2, s);
  const int d = parse_int(s, 8, 2, s);
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) throw bad();
  std::int64_t secs = sys_days(ymd).time_since_epoch().count() * 86400LL;
  std::size_t pos = 10;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != ' ') throw bad();
    const int hh = parse_int(s, pos + 1, 2, s);
    if (pos + 3 >= s.size() || s[pos + 3] != ':') throw bad();
    const int mm = parse_int(s, pos + 4, 2, s);
    int ss = 0;
    pos += 6;
    if (pos < s.size() && s[pos] == ':') {
      ss = parse_int(s, pos + 1, 2, s);
      pos += 3;
      if (pos < s.size() && s[pos] == '.') {
        ++pos;
        while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
      }
    }
    if (hh > 23 || mm > 59 || ss > 60) throw bad();
    secs += hh * 3600LL + mm * 60LL + ss;
    if (pos < s.size()) {
      if (s[pos] == 'Z' && pos + 1 == s.size()) {
        // UTC
      } else if ((s[pos] == '+' || s[pos] == '-') && s.size() == pos + 6 && s[pos + 3] == ':') {
        const int oh = parse_int(s, pos + 1, 2, s);
        const int om = parse_int(s, pos + 4, 2, s);
        const std::int64_t off = oh * 3600LL + om * 60LL;
        secs += s[pos] == '+' ? -off : off;
      } else {
        throw bad();
      }
    }
  }
  return secs;
}

std::string format_iso8601(std::int64_t epoch_seconds) {
  using namespace std::chrono;
  const auto days = static_cast<int>(std::floor(static_cast<double>(epoch_seconds) / 86400.0));
  const year_month_day ymd{sys_days{std::chrono::days{days}}};
  const std::int64_t rem = epoch_seconds - static_cast<std::int64_t>(days) * 86400LL;
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(rem / 3600), static_cast<int>((rem / 60) % 60),
                static_cast<int>(rem % 60));
  return buf;
}

namespace {

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur.push_back('"');
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else {
      cur.push_back(c);
    }
  }
  if (quoted) throw ManifestError("unterminated quote in manifest line");
  out.push_back(std::move(cur));
  for (auto& f : out) f = std::string(trim(f));
  return out;
}

std::string csv_field(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string o = "\"";
  for (char c : s) {
    if (c == '"') o.push_back('"');
    o.push_back(c);
  }
  return o + "\"";
}

}  // namespace

std::vector<DatasetEntry> parse_manifest(std::string_view csv, const std::filesystem::path& base_dir,
                                         bool check_files) {
  std::istringstream in{std::string(csv)};
  std::string line;
  if (!std::getline(in, line)) throw ManifestError("manifest is empty");
  if (line.size() >= 3 && line.compare(0, 3, "\xEF\xBB\xBF") == 0) line.erase(0, 3);
  const auto header = split_csv_line(line);
  auto column = [&](const std::string& name) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ManifestError("manifest is missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
  };
  const std::size_t c_path = column("audio_path");
  const std::size_t c_species = column("species");
  const std::size_t c_time = column("recorded_at");

  std::vector<DatasetEntry> out;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() < header.size()) {
      throw ManifestError("manifest line " + std::to_string(lineno) + " has too few fields");
    }
    DatasetEntry e;
    e.audio_path = f[c_path];
    if (e.audio_path.is_relative()) e.audio_path = base_dir / e.audio_path;
    e.species = f[c_species];
    if (e.species.empty()) throw ManifestError("manifest line " + std::to_string(lineno) + " has no species");
    e.recorded_at = parse_iso8601(f[c_time]);
    if (check_files && !std::filesystem::exists(e.audio_path)) {
      throw ManifestError("audio file not found: " + e.audio_path.string());
    }
    out.push_back(std::move(e));
  }
  return out;
}

std::vector<DatasetEntry> load_manifest(const std::filesystem::path& path, bool check_files) {
  if (!std::filesystem::exists(path)) throw ManifestError("manifest not found: " + path.string());
  return parse_manifest(read_text_file(path), path.parent_path(), check_files);
}

void write_manifest(const std::filesystem::path& path, const std::vector<DatasetEntry>& entries) {
  std::ostringstream out;
  out << "audio_path,species,recorded_at\n";
  const auto base = std::filesystem::absolute(path.parent_path()).lexically_normal();
  for (const auto& e : entries) {
    const auto abs = std::filesystem::absolute(e.audio_path).lexically_normal();
    auto p = abs.lexically_relative(base);
    if (p.empty() || *p.begin() == "..") p = abs;
    out << csv_field(p.generic_string()) << ',' << csv_field(e.species) << ','
        << format_iso8601(e.recorded_at) << '\n';
  }
  atomic_write_file(path, out.str());
}

DataSplit split_time_based(std::vector<DatasetEntry> entries, double train_fraction) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0)) {
    throw ConfigError("split fraction must lie in (0, 1)");
  }
  std::sort(entries.begin(), entries.end(), [](const DatasetEntry& a, const DatasetEntry& b) {
    if (a.recorded_at != b.recorded_at) return a.recorded_at < b.recorded_at;
    if (a.audio_path != b.audio_path) return a.audio_path < b.audio_path;
    return a.species < b.species;
  });
  std::map<std::string, std::vector<DatasetEntry>> by_species;
  for (auto& e : entries) by_species[e.species].push_back(std::move(e));
  DataSplit split;
  for (auto& [species, list] : by_species) {
    if (list.size() < 2) {
      split.warnings.push_back("species '" + species + "' has fewer than 2 entries; train only");
      for (auto& e : list) split.train.push_back(std::move(e));
      continue;
    }
    auto n_train = static_cast<std::size_t>(std::ceil(train_fraction * static_cast<double>(list.size()) - 1e-9));
    n_train = std::clamp<std::size_t>(n_train, 1, list.size() - 1);
    for (std::size_t i = 0; i < list.size(); ++i) {
      (i < n_train ? split.train : split.test).push_back(std::move(list[i]));
    }
  }
  return split;
}

std::vector<std::string> species_of(const std::vector<DatasetEntry>& entries) {
  std::set<std::string> s;
  for (const auto& e : entries) s.insert(e.species);
  return {s.begin(), s.end()};
}

}  // namespace skb
