#pragma once

// Curve CSV files, key=value score files and standalone SVG plots.

#include <aftn/data.hpp>
#include <aftn/error.hpp>
#include <aftn/track.hpp>

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace aftn {

/// Frame rate usually taken as the bar for real-time tracking.
inline constexpr double kRealTimeFps = 25.0;

inline void write_curve_csv(const Curve& curve, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << "threshold,value\n";
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
        out << format_real(curve.thresholds[i]) << ',' << format_real(curve.values[i]) << '\n';
    if (!out) throw IoError("failed writing " + path.string());
}

inline Curve read_curve_csv(const fs::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    Curve curve;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty() || line == "threshold,value") continue;
        const auto comma = line.find(',');
        if (comma == std::string::npos) throw ParseError(path.string(), line_no, "expected threshold,value");
        double t = 0.0, v = 0.0;
        const auto r1 = std::from_chars(line.data(), line.data() + comma, t);
        const auto r2 = std::from_chars(line.data() + comma + 1, line.data() + line.size(), v);
        if (r1.ec != std::errc() || r2.ec != std::errc() || r2.ptr != line.data() + line.size())
            throw ParseError(path.string(), line_no, "malformed number");
        curve.thresholds.push_back(t);
        curve.values.push_back(v);
    }
    return curve;
}

inline void write_key_values(const std::vector<std::pair<std::string, std::string>>& entries, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    for (const auto& [k, v] : entries) out << k << '=' << v << '\n';
}

inline std::vector<std::pair<std::string, std::string>> score_entries(const Scores& s) {
    return {{"accuracy", format_real(s.accuracy)},
            {"robustness", format_real(s.robustness)},
            {"overall", format_real(s.overall)},
            {"fps", format_real(s.fps)}};
}

struct SvgReferenceLine {
    double y;
    std::string label;
};

struct SvgPlotStyle {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<SvgReferenceLine> references;
};

inline std::string xml_escape(const std::string& s) {
    std::string out;
    for (char c : s) {
        switch (c) {
        case '&': out += "&amp;"; break;
        case '<': out += "&lt;"; break;
        case '>': out += "&gt;"; break;
        case '"': out += "&quot;"; break;
        default: out += c;
        }
    }
    return out;
}

/// Line plot of a curve on the unit square.
inline std::string render_curve_svg(const Curve& curve, const SvgPlotStyle& style) {
    constexpr double width = 480, height = 400, margin_left = 60, margin_right = 20, margin_top = 40, margin_bottom = 50;
    const double plot_w = width - margin_left - margin_right;
    const double plot_h = height - margin_top - margin_bottom;
    auto px = [&](double x) { return margin_left + std::clamp(x, 0.0, 1.0) * plot_w; };
    auto py = [&](double y) { return margin_top + (1.0 - std::clamp(y, 0.0, 1.0)) * plot_h; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
        << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
        << "  <text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"16\">" << xml_escape(style.title) << "</text>\n";
    for (int i = 0; i <= 10; ++i) {
        const double t = i / 10.0;
        svg << "  <line x1=\"" << num(px(t)) << "\" y1=\"" << num(py(0)) << "\" x2=\"" << num(px(t)) << "\" y2=\""
            << num(py(1)) << "\" stroke=\"#e0e0e0\"/>\n"
            << "  <line x1=\"" << num(px(0)) << "\" y1=\"" << num(py(t)) << "\" x2=\"" << num(px(1)) << "\" y2=\""
            << num(py(t)) << "\" stroke=\"#e0e0e0\"/>\n"
            << "  <text x=\"" << num(px(t)) << "\" y=\"" << num(py(0) + 16) << "\" text-anchor=\"middle\" "
            << "font-family=\"sans-serif\" font-size=\"10\">" << num(t).substr(0, 3) << "</text>\n"
            << "  <text x=\"" << num(px(0) - 6) << "\" y=\"" << num(py(t) + 3) << "\" text-anchor=\"end\" "
            << "font-family=\"sans-serif\" font-size=\"10\">" << num(t).substr(0, 3) << "</text>\n";
    }
    svg << "  <rect x=\"" << num(px(0)) << "\" y=\"" << num(py(1)) << "\" width=\"" << num(plot_w) << "\" height=\""
        << num(plot_h) << "\" fill=\"none\" stroke=\"black\"/>\n";
    for (const auto& ref : style.references) {
        svg << "  <line x1=\"" << num(px(0)) << "\" y1=\"" << num(py(ref.y)) << "\" x2=\"" << num(px(1))
            << "\" y2=\"" << num(py(ref.y)) << "\" stroke=\"#c03030\" stroke-dasharray=\"6,4\"/>\n"
            << "  <text x=\"" << num(px(1) - 4) << "\" y=\"" << num(py(ref.y) - 4) << "\" text-anchor=\"end\" "
            << "font-family=\"sans-serif\" font-size=\"10\" fill=\"#c03030\">" << xml_escape(ref.label)
            << "</text>\n";
    }
    svg << "  <polyline fill=\"none\" stroke=\"#1f5fbf\" stroke-width=\"2\" points=\"";
    for (std::size_t i = 0; i < curve.thresholds.size(); ++i)
        svg << (i ? " " : "") << num(px(curve.thresholds[i])) << ',' << num(py(curve.values[i]));
    svg << "\"/>\n"
        << "  <text x=\"" << num(margin_left + plot_w / 2) << "\" y=\"" << num(height - 12)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(style.x_label)
        << "</text>\n"
        << "  <text x=\"16\" y=\"" << num(margin_top + plot_h / 2) << "\" text-anchor=\"middle\" "
        << "font-family=\"sans-serif\" font-size=\"12\" transform=\"rotate(-90 16 " << num(margin_top + plot_h / 2)
        << ")\">" << xml_escape(style.y_label) << "</text>\n"
        << "</svg>\n";
    return svg.str();
}

/// Single horizontal bar for a measured FPS with a dashed reference line.
inline std::string render_fps_svg(double fps, double reference_fps) {
    constexpr double width = 480, height = 160, left = 60, right = 20, bar_y = 60, bar_h = 40;
    const double top_fps = std::max({fps, reference_fps, 1.0}) * 1.1;
    const double plot_w = width - left - right;
    auto px = [&](double v) { return left + std::clamp(v, 0.0, top_fps) / top_fps * plot_w; };
    auto num = [](double v) {
        char buf[32];
        std::snprintf(buf, sizeof buf, "%.2f", v);
        return std::string(buf);
    };
    std::ostringstream svg;
    svg << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
        << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
        << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n"
        << "  <rect x=\"0\" y=\"0\" width=\"" << width << "\" height=\"" << height << "\" fill=\"white\"/>\n"
        << "  <text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" "
        << "font-size=\"16\">Tracking speed (FPS)</text>\n"
        << "  <rect x=\"" << num(left) << "\" y=\"" << num(bar_y) << "\" width=\"" << num(px(fps) - left)
        << "\" height=\"" << num(bar_h) << "\" fill=\"#1f5fbf\"/>\n"
        << "  <text x=\"" << num(px(fps) + 4) << "\" y=\"" << num(bar_y + bar_h / 2 + 4)
        << "\" font-family=\"sans-serif\" font-size=\"12\">" << num(fps) << "</text>\n"
        << "  <line x1=\"" << num(px(reference_fps)) << "\" y1=\"" << num(bar_y - 15) << "\" x2=\""
        << num(px(reference_fps)) << "\" y2=\"" << num(bar_y + bar_h + 15)
        << "\" stroke=\"#c03030\" stroke-dasharray=\"6,4\"/>\n"
        << "  <text x=\"" << num(px(reference_fps)) << "\" y=\"" << num(bar_y + bar_h + 30)
        << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#c03030\">real-time "
        << num(reference_fps) << " FPS</text>\n"
        << "  <line x1=\"" << num(left) << "\" y1=\"" << num(bar_y - 20) << "\" x2=\"" << num(left) << "\" y2=\""
        << num(bar_y + bar_h + 20) << "\" stroke=\"black\"/>\n"
        << "</svg>\n";
    return svg.str();
}

inline void write_text(const std::string& text, const fs::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out << text;
    if (!out) throw IoError("failed writing " + path.string());
}

inline const SvgPlotStyle& tp_rot_style() {
    static const SvgPlotStyle style{"TP vs. ROT", "region overlap threshold", "true positive rate", {}};
    return style;
}

inline const SvgPlotStyle& fr_rt_style() {
    static const SvgPlotStyle style{"FR vs. RT", "reinitialization threshold", "failure rate", {}};
    return style;
}

/// Regenerates both SVGs from the CSVs in `dir`.
inline void render_plots(const fs::path& dir) {
    write_text(render_curve_svg(read_curve_csv(dir / "tp_rot.csv"), tp_rot_style()), dir / "tp_rot.svg");
    write_text(render_curve_svg(read_curve_csv(dir / "fr_rt.csv"), fr_rt_style()), dir / "fr_rt.svg");
}

/// tp_rot.csv, fr_rt.csv, scores.txt and one SVG per curve.
inline void export_curves(const Curve& tp_rot, const Curve& fr_rt, const Scores& scores, const fs::path& out_dir) {
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    write_curve_csv(tp_rot, out_dir / "tp_rot.csv");
    write_curve_csv(fr_rt, out_dir / "fr_rt.csv");
    write_key_values(score_entries(scores), out_dir / "scores.txt");
    render_plots(out_dir);
}

} // namespace aftn
