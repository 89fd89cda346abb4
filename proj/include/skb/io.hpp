#pragma once

#include <filesystem>
#include <string>
#include <string_view>

namespace skb {

std::string read_text_file(const std::filesystem::path& path);

/// Writes `content` to a temporary sibling, fsyncs it, then renames it over
/// `path`, so readers see either the old or the new file.
void atomic_write_file(const std::filesystem::path& path, std::string_view content);

/// Strips ASCII whitespace from both ends.
std::string_view trim(std::string_view s);

}  // namespace skb
