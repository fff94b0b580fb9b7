#pragma once

#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "dewarp/common.hpp"

namespace dewarp {

enum class LineKind : std::uint8_t { TextMidline = 0, RulingLine = 1 };

// Polyline in continuous pixel coordinates of its host raster.
struct LineElement {
    LineKind kind = LineKind::TextMidline;
    std::vector<Vec2> points;

    void validate() const {
        if (points.size() < 2)
            throw invalid_argument("LineElement: needs at least 2 points");
        for (std::size_t i = 1; i < points.size(); ++i) {
            if ((points[i] - points[i - 1]).norm2() == 0.0)
                throw invalid_argument("LineElement: consecutive points must be distinct");
        }
    }

    double arc_length() const {
        double s = 0.0;
        for (std::size_t i = 1; i < points.size(); ++i)
            s += (points[i] - points[i - 1]).norm();
        return s;
    }
};

// Points sampled along one line, pixel units.
struct ControlPointSet {
    std::vector<Vec2> points;
    int source_line = -1;
    double interval = 0.0;
};

inline const char* line_kind_name(LineKind k) {
    return k == LineKind::TextMidline ? "text" : "rule";
}

inline LineKind line_kind_from_name(const std::string& s) {
    if (s == "text") return LineKind::TextMidline;
    if (s == "rule") return LineKind::RulingLine;
    throw data_error("unknown line kind '" + s + "'");
}

// JSONL: one object per line, {"kind":"text"|"rule","points":[[x,y],...]}.
inline std::string encode_lines_jsonl(const std::vector<LineElement>& lines) {
    std::string out;
    for (const LineElement& line : lines) {
        nlohmann::ordered_json j;
        j["kind"] = line_kind_name(line.kind);
        auto& pts = j["points"] = nlohmann::ordered_json::array();
        for (const Vec2& p : line.points) pts.push_back({p.x, p.y});
        out += j.dump();
        out += '\n';
    }
    return out;
}

inline void save_lines(const std::string& path, const std::vector<LineElement>& lines) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw data_error("save_lines: cannot open " + path);
    std::string bytes = encode_lines_jsonl(lines);
    os.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!os) throw data_error("save_lines: write failed for " + path);
}

inline std::vector<LineElement> load_lines(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw data_error("load_lines: cannot open " + path);
    std::vector<LineElement> out;
    std::string row;
    while (std::getline(is, row)) {
        if (row.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(row);
        } catch (const nlohmann::json::exception& e) {
            throw data_error("load_lines: bad JSON in " + path + ": " + e.what());
        }
        if (!j.contains("kind") || !j.contains("points"))
            throw data_error("load_lines: missing keys in " + path);
        LineElement line;
        line.kind = line_kind_from_name(j["kind"].get<std::string>());
        for (const auto& p : j["points"]) {
            if (!p.is_array() || p.size() != 2)
                throw data_error("load_lines: bad point in " + path);
            line.points.push_back(Vec2(p[0].get<double>(), p[1].get<double>()));
        }
        try {
            line.validate();
        } catch (const invalid_argument& e) {
            throw data_error("load_lines: " + path + ": " + e.what());
        }
        out.push_back(std::move(line));
    }
    return out;
}

}  // namespace dewarp
