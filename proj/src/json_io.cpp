#include "smartalert/json_io.hpp"

#include "smartalert/errors.hpp"

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>

namespace smartalert {

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw ConfigError("cannot open '" + path.string() + "'");
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

Json read_json_file(const std::filesystem::path& path) {
    const std::string text = read_text_file(path);
    try {
        return Json::parse(text);
    } catch (const Json::parse_error& e) {
        throw ParseError("'" + path.string() + "' is not valid JSON: " + e.what());
    }
}

void write_text_file(const std::filesystem::path& path, std::string_view contents) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::filesystem::path tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw TransportError("cannot write '" + tmp.string() + "'");
        }
        out.write(contents.data(), static_cast<std::streamsize>(contents.size()));
        if (!out) {
            throw TransportError("short write to '" + tmp.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path);
}

void write_json_file(const std::filesystem::path& path, const Json& value, int indent) {
    write_text_file(path, value.dump(indent) + "\n");
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t value) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(value));
    return buf;
}

namespace {

LogLevel configured_level() {
    static const LogLevel level = [] {
        const char* env = std::getenv("SMARTALERT_LOG");
        if (env == nullptr) return LogLevel::warn;
        const std::string v = env;
        if (v == "error") return LogLevel::error;
        if (v == "info") return LogLevel::info;
        if (v == "debug") return LogLevel::debug;
        return LogLevel::warn;
    }();
    return level;
}

} // namespace

bool log_enabled(LogLevel level) { return level <= configured_level(); }

void log(LogLevel level, std::string_view message) {
    if (!log_enabled(level)) {
        return;
    }
    static std::mutex mu;
    static constexpr const char* names[] = {"error", "warn", "info", "debug"};
    std::lock_guard lock(mu);
    std::cerr << "[smartalert " << names[static_cast<int>(level)] << "] " << message << '\n';
}

} // namespace smartalert
