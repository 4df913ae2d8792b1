#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <string>
#include <system_error>
#include <vector>

#include "afc/errors.hpp"

namespace afc {

/// Shortest round-trip decimal form; keeps artifacts byte-stable across runs.
inline std::string fmt_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline std::uint64_t fnv1a64(const std::string& s) {
    std::uint64_t h = 1469598103934665603ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<std::size_t>(i)] = digits[v & 0xF];
        v >>= 4;
    }
    return out;
}

inline void write_text_file(const std::filesystem::path& path, const std::string& content) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw runtime_failure("cannot write " + path.string());
    out << content;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw config_error("cannot read " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

/// Minimal CSV emitter; numbers are written in round-trip form. An optional
/// leading `# key=value` comment stamps the file with run provenance.
class CsvWriter {
public:
    explicit CsvWriter(const std::filesystem::path& path, const std::string& header,
                       const std::string& comment = {}) {
        if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
        out_.open(path, std::ios::binary);
        if (!out_) throw runtime_failure("cannot write " + path.string());
        if (!comment.empty()) out_ << "# " << comment << "\n";
        out_ << header << "\n";
    }

    class Row {
    public:
        explicit Row(std::ofstream& out) : out_(out) {}
        Row& operator<<(double v) { return put(fmt_double(v)); }
        Row& operator<<(int v) { return put(std::to_string(v)); }
        Row& operator<<(std::size_t v) { return put(std::to_string(v)); }
        Row& operator<<(const std::string& v) { return put(v); }
        ~Row() { out_ << "\n"; }

    private:
        Row& put(const std::string& s) {
            if (!first_) out_ << ",";
            first_ = false;
            out_ << s;
            return *this;
        }
        std::ofstream& out_;
        bool first_ = true;
    };

    Row row() { return Row(out_); }

private:
    std::ofstream out_;
};

}  // namespace afc
