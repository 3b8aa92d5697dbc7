#pragma once

#include <cstdint>
#include <cstdio>
#include <initializer_list>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace gesched {

/// Shortest round-trip-safe text for a double (17 significant digits).
inline std::string format_double(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

/// FNV-1a 64-bit; used for config fingerprints in output metadata.
inline std::uint64_t fnv1a64(std::string_view text) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ull;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[20];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct CsvMeta {
    std::string config_hash;
    std::uint64_t seed = 0;
};

/// Minimal CSV emitter: one `# config_hash=... seed=...` comment line, then a
/// header row, then data rows. Cells are written as given; doubles go through
/// format_double.
class CsvWriter {
public:
    CsvWriter(std::ostream& out, const CsvMeta& meta, std::initializer_list<std::string_view> header)
        : out_(out) {
        out_ << "# config_hash=" << meta.config_hash << " seed=" << meta.seed << '\n';
        bool first = true;
        for (auto h : header) {
            if (!first) out_ << ',';
            out_ << h;
            first = false;
        }
        out_ << '\n';
        columns_ = header.size();
    }

    CsvWriter& cell(double x) { return raw(format_double(x)); }
    CsvWriter& cell(long long x) { return raw(std::to_string(x)); }
    CsvWriter& cell(int x) { return raw(std::to_string(x)); }
    CsvWriter& cell(std::size_t x) { return raw(std::to_string(x)); }
    CsvWriter& cell(std::string_view s) { return raw(std::string(s)); }
    CsvWriter& cell(const char* s) { return raw(std::string(s)); }

    void end_row() {
        out_ << '\n';
        in_row_ = 0;
    }

    std::size_t columns() const noexcept { return columns_; }

private:
    CsvWriter& raw(const std::string& s) {
        if (in_row_++ > 0) out_ << ',';
        out_ << s;
        return *this;
    }

    std::ostream& out_;
    std::size_t columns_ = 0;
    std::size_t in_row_ = 0;
};

/// Parses CSV text produced by CsvWriter: skips '#' lines, returns header and
/// rows split on commas (no quoting is ever emitted).
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

inline std::vector<std::string> split_csv_line(std::string_view line) {
    std::vector<std::string> cells;
    std::size_t start = 0;
    while (true) {
        auto pos = line.find(',', start);
        cells.emplace_back(line.substr(start, pos == std::string_view::npos ? pos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return cells;
}

template <typename LineSource>
CsvTable read_csv(LineSource&& next_line) {
    CsvTable table;
    std::string line;
    bool have_header = false;
    while (next_line(line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line.front() == '#') continue;
        if (!have_header) {
            table.header = split_csv_line(line);
            have_header = true;
        } else {
            table.rows.push_back(split_csv_line(line));
        }
    }
    return table;
}

} // namespace gesched
