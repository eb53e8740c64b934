#pragma once

#include <filesystem>
#include <functional>
#include <string>
#include <string_view>

#include "json.hpp"

namespace lmar {

using Json = nlohmann::ordered_json;

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view contents);

/// Calls fn(line_number, parsed) for every non-blank line. Throws
/// MalformedRecord with the 1-based line number on bad JSON.
void for_each_jsonl(const std::filesystem::path& path,
                    const std::function<void(std::size_t, const Json&)>& fn);

/// One compact JSON value per line, '\n'-terminated.
std::string to_jsonl_line(const Json& value);

/// Lowercase hex SHA-256.
std::string sha256_hex(std::string_view bytes);
std::string sha256_file(const std::filesystem::path& path);

}  // namespace lmar
