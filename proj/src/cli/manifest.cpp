#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "asca/cli.hpp"
#include "asca/errors.hpp"

namespace asca::cli {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Splits one CSV line; fields may be double-quoted with "" as an escaped quote.
std::vector<std::string> split_csv(const std::string& line, std::size_t line_no) {
    std::vector<std::string> fields;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (quoted) throw ParseError("manifest line " + std::to_string(line_no) + ": unterminated quote");
    fields.push_back(cur);
    return fields;
}

std::vector<std::string> split_words(const std::string& s) {
    std::istringstream is(s);
    std::vector<std::string> out;
    for (std::string w; is >> w;) out.push_back(w);
    return out;
}

std::string read_text(const std::filesystem::path& path, const char* what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(std::string("cannot open ") + what + " " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

DatasetManifest parse_manifest(const std::string& csv, const std::vector<std::string>& classes) {
    std::istringstream in(csv);
    std::string line;
    std::size_t line_no = 0;
    bool header = false;
    std::vector<std::pair<std::string, std::vector<std::string>>> raw;
    std::vector<std::size_t> raw_lines;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        auto fields = split_csv(line, line_no);
        if (!header) {
            if (fields.size() != 2 || trim(fields[0]) != "path" || trim(fields[1]) != "labels") {
                throw ParseError("manifest line " + std::to_string(line_no) + ": expected header 'path,labels'");
            }
            header = true;
            continue;
        }
        if (fields.size() != 2) {
            throw ParseError("manifest line " + std::to_string(line_no) + ": expected 2 fields, got " +
                             std::to_string(fields.size()));
        }
        const auto path = trim(fields[0]);
        if (path.empty()) throw ParseError("manifest line " + std::to_string(line_no) + ": empty path");
        raw.emplace_back(path, split_words(fields[1]));
        raw_lines.push_back(line_no);
    }
    if (!header) throw ParseError("manifest line 1: empty file");
    if (raw.empty()) throw ParseError("manifest line " + std::to_string(line_no + 1) + ": no rows after header");

    DatasetManifest m;
    if (classes.empty()) {
        std::set<std::string> names;
        for (const auto& r : raw) names.insert(r.second.begin(), r.second.end());
        m.classes.assign(names.begin(), names.end());
    } else {
        m.classes = classes;
    }
    std::map<std::string, int> index;
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        if (!index.emplace(m.classes[i], static_cast<int>(i)).second) {
            throw ParseError("classes: duplicate class '" + m.classes[i] + "'");
        }
    }
    std::set<std::string> seen;
    for (std::size_t r = 0; r < raw.size(); ++r) {
        const auto row_no = std::to_string(raw_lines[r]);
        if (!seen.insert(raw[r].first).second) {
            throw ParseError("manifest line " + row_no + ": duplicate path '" + raw[r].first + "'");
        }
        ManifestRow row;
        row.path = raw[r].first;
        for (const auto& name : raw[r].second) {
            auto it = index.find(name);
            if (it == index.end()) throw ParseError("manifest line " + row_no + ": unknown class '" + name + "'");
            if (std::find(row.labels.begin(), row.labels.end(), it->second) == row.labels.end()) {
                row.labels.push_back(it->second);
            }
        }
        std::sort(row.labels.begin(), row.labels.end());
        m.rows.push_back(std::move(row));
    }
    return m;
}

DatasetManifest load_manifest(const std::filesystem::path& path) {
    const auto csv = read_text(path, "manifest");
    std::vector<std::string> classes;
    const auto classes_file = path.parent_path() / "classes.txt";
    if (std::filesystem::exists(classes_file)) {
        std::istringstream in(read_text(classes_file, "classes file"));
        for (std::string line; std::getline(in, line);) {
            const auto name = trim(line);
            if (!name.empty()) classes.push_back(name);
        }
        if (classes.empty()) throw ParseError("classes file " + classes_file.string() + " is empty");
    }
    return parse_manifest(csv, classes);
}

}  // namespace asca::cli
