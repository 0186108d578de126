#pragma once

#include "smartalert/errors.hpp"

#include <json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace smartalert {

using Json = nlohmann::json;

Json read_json_file(const std::filesystem::path& path);
std::string read_text_file(const std::filesystem::path& path);

/// Writes through a sibling temp file and renames, so readers never see a torn file.
void write_text_file(const std::filesystem::path& path, std::string_view contents);
void write_json_file(const std::filesystem::path& path, const Json& value, int indent = 2);

std::uint64_t fnv1a64(std::string_view bytes);
std::string hex64(std::uint64_t value);

/// Required-field accessor that reports the missing key and context on failure.
template <typename T>
T require(const Json& obj, const char* key, std::string_view context) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        throw ParseError(std::string(context) + ": missing field '" + key + "'");
    }
    return it->template get<T>();
}

template <typename T>
T value_or(const Json& obj, const char* key, T fallback) {
    auto it = obj.find(key);
    if (it == obj.end() || it->is_null()) {
        return fallback;
    }
    return it->template get<T>();
}

/// Minimal leveled logger writing to stderr. Level comes from SMARTALERT_LOG
/// (error, warn, info, debug); default warn.
enum class LogLevel { error = 0, warn = 1, info = 2, debug = 3 };
void log(LogLevel level, std::string_view message);
bool log_enabled(LogLevel level);

} // namespace smartalert
