#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "error.hpp"
#include "util.hpp"

namespace ontoprobe {

using json = nlohmann::json;

/// A line-delimited record file: one header object, then one record per line.
struct RecordFile {
    json header = json::object();
    std::vector<json> records;
};

inline std::string dump_records(const RecordFile& f) {
    std::string out = json{{"header", f.header}}.dump();
    out += '\n';
    for (const auto& r : f.records) {
        out += r.dump();
        out += '\n';
    }
    return out;
}

inline void write_records(const std::string& path, const RecordFile& f) { write_file(path, dump_records(f)); }

inline RecordFile parse_records(std::string_view text, const std::string& source) {
    RecordFile f;
    std::size_t line_no = 0;
    bool have_header = false;
    for (const auto& line : split(text, '\n')) {
        ++line_no;
        if (trim(line).empty()) continue;
        json j;
        try {
            j = json::parse(line);
        } catch (const json::parse_error& e) {
            throw ParseError(source, line_no, e.what());
        }
        if (!have_header) {
            if (!j.is_object() || !j.contains("header")) throw ParseError(source, line_no, "missing header line");
            f.header = j["header"];
            have_header = true;
            continue;
        }
        f.records.push_back(std::move(j));
    }
    if (!have_header) throw ParseError(source, 1, "empty record file");
    return f;
}

inline RecordFile read_records(const std::string& path) { return parse_records(read_file(path), path); }

} // namespace ontoprobe
