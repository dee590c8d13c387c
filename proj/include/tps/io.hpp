#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

namespace tps::io {

/// Writes to "<path>.tmp" and renames over `path`, so readers never observe a
/// partially written file. Creates parent directories.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

std::string read_file(const std::filesystem::path& path);

nlohmann::json read_json_file(const std::filesystem::path& path);

/// JSON text for result files: sorted keys, two-space indent, trailing newline.
std::string dump_json(const nlohmann::json& doc);

}  // namespace tps::io
