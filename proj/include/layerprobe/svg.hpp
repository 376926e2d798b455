#ifndef LAYERPROBE_SVG_HPP
#define LAYERPROBE_SVG_HPP

// Minimal deterministic SVG charts: layer-index line plots with an optional
// logarithmic y axis and fitted line, and 2-D scatter plots.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace layerprobe::svg {

inline constexpr const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd",
                                           "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf"};
inline constexpr std::size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

inline std::string fmt(const char* f, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, f, v);
    return buf;
}

inline std::string escape(const std::string& s) {
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

struct Series {
    std::string name;
    std::vector<std::pair<double, double>> points;
    /// Straight line in plot space: y = intercept + slope * x, with y in
    /// natural-log units when the axis is logarithmic.
    std::optional<std::pair<double, double>> fit;
};

struct Range {
    double lo = 0.0;
    double hi = 1.0;
};

struct Frame {
    double width = 640;
    double height = 420;
    double left = 80;
    double right = 20;
    double top = 40;
    double bottom = 60;
    [[nodiscard]] double pw() const { return width - left - right; }
    [[nodiscard]] double ph() const { return height - top - bottom; }
};

namespace detail {

inline Range pad(Range r, double frac) {
    if (r.hi <= r.lo) {
        const double c = r.lo;
        const double h = std::max(std::abs(c) * 0.1, 0.5);
        return {c - h, c + h};
    }
    const double p = (r.hi - r.lo) * frac;
    return {r.lo - p, r.hi + p};
}

inline std::vector<double> linear_ticks(Range r) {
    const double span = r.hi - r.lo;
    const double raw = span / 6.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        step = m * mag;
        if (step >= raw) break;
    }
    std::vector<double> out;
    for (double v = std::ceil(r.lo / step) * step; v <= r.hi + 1e-9 * step; v += step) out.push_back(v);
    return out;
}

/// Ticks for a log10 range: 1-2-5 per decade, or 5 even ticks when the
/// range spans too little for that.
inline std::vector<double> log_ticks(Range r) {
    std::vector<double> out;
    for (int e = static_cast<int>(std::floor(r.lo)) - 1; e <= static_cast<int>(std::ceil(r.hi)); ++e) {
        for (double m : {1.0, 2.0, 5.0}) {
            const double v = std::log10(m) + e;
            if (v >= r.lo && v <= r.hi) out.push_back(v);
        }
    }
    if (out.size() >= 3) return out;
    out.clear();
    for (int i = 0; i <= 4; ++i) out.push_back(r.lo + (r.hi - r.lo) * i / 4.0);
    return out;
}

} // namespace detail

/// Data range of a set of series in plot space (log10 of y when log_y).
inline std::pair<Range, Range> data_ranges(const std::vector<Series>& series, bool log_y) {
    Range x{std::numeric_limits<double>::infinity(), -std::numeric_limits<double>::infinity()};
    Range y = x;
    for (const auto& s : series) {
        for (auto [px, py] : s.points) {
            if (log_y && !(py > 0.0)) continue;
            const double vy = log_y ? std::log10(py) : py;
            x.lo = std::min(x.lo, px);
            x.hi = std::max(x.hi, px);
            y.lo = std::min(y.lo, vy);
            y.hi = std::max(y.hi, vy);
        }
    }
    if (!std::isfinite(x.lo)) x = {0, 1};
    if (!std::isfinite(y.lo)) y = {0, 1};
    return {x, y};
}

/// Line chart against layer index. `ranges` fixes the axes (plot space),
/// which lets several charts share scales.
inline std::string line_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                             const std::vector<Series>& series, bool log_y,
                             std::optional<std::pair<Range, Range>> ranges = std::nullopt) {
    const Frame f;
    auto [xr, yr] = ranges.value_or(data_ranges(series, log_y));
    xr = detail::pad(xr, 0.04);
    yr = detail::pad(yr, 0.06);
    auto sx = [&](double x) { return f.left + (x - xr.lo) / (xr.hi - xr.lo) * f.pw(); };
    auto sy = [&](double y) { return f.top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * f.ph(); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", f.width) + "\" height=\"" +
         fmt("%.0f", f.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt("%.1f", f.width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(title) + "</text>\n";
    s += "<rect x=\"" + fmt("%.1f", f.left) + "\" y=\"" + fmt("%.1f", f.top) + "\" width=\"" + fmt("%.1f", f.pw()) +
         "\" height=\"" + fmt("%.1f", f.ph()) + "\" fill=\"none\" stroke=\"black\"/>\n";

    for (double t : detail::linear_ticks(xr)) {
        const double px = sx(t);
        s += "<line x1=\"" + fmt("%.1f", px) + "\" y1=\"" + fmt("%.1f", f.top + f.ph()) + "\" x2=\"" +
             fmt("%.1f", px) + "\" y2=\"" + fmt("%.1f", f.top + f.ph() + 5) + "\" stroke=\"black\"/>\n";
        s += "<text x=\"" + fmt("%.1f", px) + "\" y=\"" + fmt("%.1f", f.top + f.ph() + 18) +
             "\" text-anchor=\"middle\">" + fmt("%g", t) + "</text>\n";
    }
    const auto yt = log_y ? detail::log_ticks(yr) : detail::linear_ticks(yr);
    for (double t : yt) {
        const double py = sy(t);
        s += "<line x1=\"" + fmt("%.1f", f.left - 5) + "\" y1=\"" + fmt("%.1f", py) + "\" x2=\"" +
             fmt("%.1f", f.left) + "\" y2=\"" + fmt("%.1f", py) + "\" stroke=\"black\"/>\n";
        s += "<line x1=\"" + fmt("%.1f", f.left) + "\" y1=\"" + fmt("%.1f", py) + "\" x2=\"" +
             fmt("%.1f", f.left + f.pw()) + "\" y2=\"" + fmt("%.1f", py) + "\" stroke=\"#e0e0e0\"/>\n";
        s += "<text x=\"" + fmt("%.1f", f.left - 8) + "\" y=\"" + fmt("%.1f", py + 4) + "\" text-anchor=\"end\">" +
             fmt("%.3g", log_y ? std::pow(10.0, t) : t) + "</text>\n";
    }
    s += "<text x=\"" + fmt("%.1f", f.left + f.pw() / 2) + "\" y=\"" + fmt("%.1f", f.height - 15) +
         "\" text-anchor=\"middle\">" + escape(x_label) + "</text>\n";
    s += "<text transform=\"translate(18," + fmt("%.1f", f.top + f.ph() / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">" + escape(y_label) + (log_y ? " (log scale)" : "") + "</text>\n";

    for (std::size_t i = 0; i < series.size(); ++i) {
        const auto& ser = series[i];
        const char* color = kPalette[i % kPaletteSize];
        std::string pts;
        for (auto [x, y] : ser.points) {
            if (log_y && !(y > 0.0)) continue;
            const double vy = log_y ? std::log10(y) : y;
            if (!pts.empty()) pts += ' ';
            pts += fmt("%.2f", sx(x)) + "," + fmt("%.2f", sy(vy));
            s += "<circle cx=\"" + fmt("%.2f", sx(x)) + "\" cy=\"" + fmt("%.2f", sy(vy)) + "\" r=\"3\" fill=\"" +
                 color + "\"/>\n";
        }
        if (!pts.empty())
            s += "<polyline points=\"" + pts + "\" fill=\"none\" stroke=\"" + color + "\" stroke-width=\"1.5\"/>\n";
        if (ser.fit && !ser.points.empty()) {
            const auto [a, b] = *ser.fit;
            double x0 = ser.points.front().first;
            double x1 = x0;
            for (auto [x, y] : ser.points) {
                x0 = std::min(x0, x);
                x1 = std::max(x1, x);
            }
            auto fy = [&](double x) {
                const double v = a + b * x;
                return log_y ? v / std::log(10.0) : v;
            };
            s += "<line x1=\"" + fmt("%.2f", sx(x0)) + "\" y1=\"" + fmt("%.2f", sy(fy(x0))) + "\" x2=\"" +
                 fmt("%.2f", sx(x1)) + "\" y2=\"" + fmt("%.2f", sy(fy(x1))) + "\" stroke=\"" + color +
                 "\" stroke-dasharray=\"6,4\" stroke-width=\"1\"/>\n";
        }
        const double ly = f.top + 16 + 16 * static_cast<double>(i);
        s += "<rect x=\"" + fmt("%.1f", f.left + f.pw() - 150) + "\" y=\"" + fmt("%.1f", ly - 9) +
             "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        s += "<text x=\"" + fmt("%.1f", f.left + f.pw() - 135) + "\" y=\"" + fmt("%.1f", ly) + "\">" +
             escape(ser.name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

struct ScatterGroup {
    std::string name;
    std::vector<std::pair<double, double>> points;
};

inline std::string scatter_plot(const std::string& title, const std::vector<ScatterGroup>& groups) {
    std::vector<Series> as_series;
    for (const auto& g : groups) as_series.push_back({g.name, g.points, std::nullopt});
    const Frame f;
    auto [xr, yr] = data_ranges(as_series, false);
    xr = detail::pad(xr, 0.05);
    yr = detail::pad(yr, 0.05);
    auto sx = [&](double x) { return f.left + (x - xr.lo) / (xr.hi - xr.lo) * f.pw(); };
    auto sy = [&](double y) { return f.top + (1.0 - (y - yr.lo) / (yr.hi - yr.lo)) * f.ph(); };

    std::string s;
    s += "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" + fmt("%.0f", f.width) + "\" height=\"" +
         fmt("%.0f", f.height) + "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    s += "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    s += "<text x=\"" + fmt("%.1f", f.width / 2) + "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" +
         escape(title) + "</text>\n";
    s += "<rect x=\"" + fmt("%.1f", f.left) + "\" y=\"" + fmt("%.1f", f.top) + "\" width=\"" + fmt("%.1f", f.pw()) +
         "\" height=\"" + fmt("%.1f", f.ph()) + "\" fill=\"none\" stroke=\"black\"/>\n";
    for (double t : detail::linear_ticks(xr)) {
        s += "<text x=\"" + fmt("%.1f", sx(t)) + "\" y=\"" + fmt("%.1f", f.top + f.ph() + 18) +
             "\" text-anchor=\"middle\">" + fmt("%.3g", t) + "</text>\n";
    }
    for (double t : detail::linear_ticks(yr)) {
        s += "<text x=\"" + fmt("%.1f", f.left - 8) + "\" y=\"" + fmt("%.1f", sy(t) + 4) + "\" text-anchor=\"end\">" +
             fmt("%.3g", t) + "</text>\n";
    }
    s += "<text x=\"" + fmt("%.1f", f.left + f.pw() / 2) + "\" y=\"" + fmt("%.1f", f.height - 15) +
         "\" text-anchor=\"middle\">PC1</text>\n";
    s += "<text transform=\"translate(18," + fmt("%.1f", f.top + f.ph() / 2) +
         ") rotate(-90)\" text-anchor=\"middle\">PC2</text>\n";
    for (std::size_t i = 0; i < groups.size(); ++i) {
        const char* color = kPalette[i % kPaletteSize];
        for (auto [x, y] : groups[i].points) {
            s += "<circle cx=\"" + fmt("%.2f", sx(x)) + "\" cy=\"" + fmt("%.2f", sy(y)) + "\" r=\"2\" fill=\"" +
                 color + "\" fill-opacity=\"0.6\"/>\n";
        }
        const double ly = f.top + 16 + 16 * static_cast<double>(i);
        s += "<rect x=\"" + fmt("%.1f", f.left + f.pw() - 120) + "\" y=\"" + fmt("%.1f", ly - 9) +
             "\" width=\"10\" height=\"10\" fill=\"" + color + "\"/>\n";
        s += "<text x=\"" + fmt("%.1f", f.left + f.pw() - 105) + "\" y=\"" + fmt("%.1f", ly) + "\">" +
             escape(groups[i].name) + "</text>\n";
    }
    s += "</svg>\n";
    return s;
}

} // namespace layerprobe::svg

#endif
