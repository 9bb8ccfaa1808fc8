#ifndef M3VB_PLOT_HPP
#define M3VB_PLOT_HPP

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

// Self-contained deterministic SVG emitters: line plots of per-x medians with
// interquartile bands, and box plots with 1.5*IQR whiskers and outlier dots.
// No external renderer; byte-identical output for identical input.

namespace m3vb {

/// Quantile with linear interpolation between order statistics (the
/// documented rule for every quartile drawn here): q(p) interpolates the
/// values at fractional rank (N-1)p.
inline double quantile_linear(std::vector<double> values, double prob) {
    if (values.empty()) throw std::invalid_argument("quantile_linear: empty input");
    if (prob < 0.0 || prob > 1.0) throw std::invalid_argument("quantile_linear: prob outside [0,1]");
    std::sort(values.begin(), values.end());
    const double pos = prob * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] * (1.0 - frac) + values[hi] * frac;
}

namespace plotdetail {

inline std::string fmt(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.6g", v);
    return buf;
}

inline const char* palette(std::size_t i) {
    static const char* colors[] = {"#1b6ca8", "#c23b22", "#2e8b57", "#8e5ba6",
                                   "#b8860b", "#3d3d3d", "#dc6f9d", "#14867d"};
    return colors[i % 8];
}

struct Axis {
    double lo = 0.0, hi = 1.0;
    bool log_scale = false;

    double place(double v, double px_lo, double px_hi) const {
        double t;
        if (log_scale)
            t = (std::log(v) - std::log(lo)) / (std::log(hi) - std::log(lo));
        else
            t = (v - lo) / (hi - lo);
        return px_lo + t * (px_hi - px_lo);
    }

    std::vector<double> ticks(int want = 5) const {
        std::vector<double> out;
        if (log_scale) {
            const int e0 = static_cast<int>(std::floor(std::log10(lo)));
            const int e1 = static_cast<int>(std::ceil(std::log10(hi)));
            for (int e = e0; e <= e1; ++e) {
                const double v = std::pow(10.0, e);
                if (v >= lo * 0.999 && v <= hi * 1.001) out.push_back(v);
            }
            if (out.size() >= 2) return out;
        }
        const double span = hi - lo;
        if (span <= 0.0) return {lo};
        const double raw = span / want;
        const double mag = std::pow(10.0, std::floor(std::log10(raw)));
        double step = mag;
        for (double mult : {1.0, 2.0, 5.0, 10.0}) {
            if (mag * mult >= raw) {
                step = mag * mult;
                break;
            }
        }
        double v = std::ceil(lo / step) * step;
        for (; v <= hi + 1e-12 * span; v += step) out.push_back(v);
        return out;
    }
};

inline void expand(double& lo, double& hi) {
    if (lo == hi) {
        lo -= 0.5;
        hi += 0.5;
    } else {
        const double pad = 0.05 * (hi - lo);
        lo -= pad;
        hi += pad;
    }
}

}  // namespace plotdetail

struct LineSeries {
    std::string label;
    // one entry per x position: all replicate values observed there
    std::vector<std::pair<double, std::vector<double>>> groups;
};

/// Line plot of medians with an interquartile band per series.
inline void emit_lineplot_svg(const std::vector<LineSeries>& series, const std::string& x_label,
                              const std::string& y_label, const std::string& path,
                              bool log_x = false) {
    if (series.empty()) throw std::invalid_argument("emit_lineplot_svg: no series");
    const double w = 800, h = 500, ml = 70, mr = 170, mt = 30, mb = 55;
    plotdetail::Axis xa, ya;
    xa.log_scale = log_x;
    double xlo = 1e300, xhi = -1e300, ylo = 1e300, yhi = -1e300;
    for (const auto& s : series) {
        for (const auto& [x, vals] : s.groups) {
            if (vals.empty()) continue;
            xlo = std::min(xlo, x);
            xhi = std::max(xhi, x);
            ylo = std::min(ylo, quantile_linear(vals, 0.25));
            yhi = std::max(yhi, quantile_linear(vals, 0.75));
        }
    }
    if (xlo > xhi) throw std::invalid_argument("emit_lineplot_svg: no data points");
    if (!log_x) plotdetail::expand(xlo, xhi);
    plotdetail::expand(ylo, yhi);
    xa.lo = xlo;
    xa.hi = xhi;
    ya.lo = ylo;
    ya.hi = yhi;

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    auto px = [&](double v) { return xa.place(v, ml, w - mr); };
    auto py = [&](double v) { return ya.place(v, h - mb, mt); };

    for (double t : xa.ticks()) {
        out << "<line x1=\"" << plotdetail::fmt(px(t)) << "\" y1=\"" << h - mb << "\" x2=\""
            << plotdetail::fmt(px(t)) << "\" y2=\"" << h - mb + 5 << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << plotdetail::fmt(px(t)) << "\" y=\"" << h - mb + 20
            << "\" font-size=\"12\" text-anchor=\"middle\">" << plotdetail::fmt(t) << "</text>\n";
    }
    for (double t : ya.ticks()) {
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << plotdetail::fmt(py(t)) << "\" x2=\"" << ml
            << "\" y2=\"" << plotdetail::fmt(py(t)) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << plotdetail::fmt(py(t) + 4)
            << "\" font-size=\"12\" text-anchor=\"end\">" << plotdetail::fmt(t) << "</text>\n";
    }
    out << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n"
        << "<text x=\"" << (ml + w - mr) / 2 << "\" y=\"" << h - 12
        << "\" font-size=\"13\" text-anchor=\"middle\">" << x_label << "</text>\n"
        << "<text x=\"18\" y=\"" << (mt + h - mb) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

    for (std::size_t si = 0; si < series.size(); ++si) {
        auto groups = series[si].groups;
        std::sort(groups.begin(), groups.end(),
                  [](const auto& a, const auto& b) { return a.first < b.first; });
        std::string band_top, band_bot, median_line;
        for (const auto& [x, vals] : groups) {
            if (vals.empty()) continue;
            band_top += plotdetail::fmt(px(x)) + "," + plotdetail::fmt(py(quantile_linear(vals, 0.75))) + " ";
            band_bot = plotdetail::fmt(px(x)) + "," + plotdetail::fmt(py(quantile_linear(vals, 0.25))) + " " + band_bot;
            median_line += plotdetail::fmt(px(x)) + "," + plotdetail::fmt(py(quantile_linear(vals, 0.5))) + " ";
        }
        const char* color = plotdetail::palette(si);
        if (!band_top.empty())
            out << "<polygon points=\"" << band_top << band_bot << "\" fill=\"" << color
                << "\" opacity=\"0.15\" stroke=\"none\"/>\n";
        out << "<polyline points=\"" << median_line << "\" fill=\"none\" stroke=\"" << color
            << "\" stroke-width=\"2\"/>\n";
        out << "<rect x=\"" << w - mr + 15 << "\" y=\"" << mt + 18 * si << "\" width=\"12\" height=\"12\" fill=\""
            << color << "\"/>\n"
            << "<text x=\"" << w - mr + 32 << "\" y=\"" << mt + 18 * si + 10
            << "\" font-size=\"12\">" << series[si].label << "</text>\n";
    }
    out << "</svg>\n";

    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("emit_lineplot_svg: cannot write '" + path + "'");
    file << out.str();
}

struct BoxGroup {
    std::string label;
    std::vector<double> values;
};

/// Box plot: median, quartiles by the linear-interpolation rule, whiskers at
/// the most extreme points within 1.5*IQR, outliers as dots. Empty groups are
/// skipped with a note in the plot margin.
inline void emit_boxplot_svg(const std::vector<BoxGroup>& groups, const std::string& y_label,
                             const std::string& path) {
    if (groups.empty()) throw std::invalid_argument("emit_boxplot_svg: no groups");
    const double w = 800, h = 500, ml = 70, mr = 40, mt = 30, mb = 70;
    double ylo = 1e300, yhi = -1e300;
    bool any = false;
    for (const auto& g : groups) {
        for (double v : g.values) {
            ylo = std::min(ylo, v);
            yhi = std::max(yhi, v);
            any = true;
        }
    }
    if (!any) throw std::invalid_argument("emit_boxplot_svg: all groups empty");
    plotdetail::expand(ylo, yhi);
    plotdetail::Axis ya{ylo, yhi, false};
    auto py = [&](double v) { return ya.place(v, h - mb, mt); };

    std::ostringstream out;
    out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << w << "\" height=\"" << h
        << "\" viewBox=\"0 0 " << w << " " << h << "\">\n"
        << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    for (double t : ya.ticks()) {
        out << "<line x1=\"" << ml - 5 << "\" y1=\"" << plotdetail::fmt(py(t)) << "\" x2=\"" << ml
            << "\" y2=\"" << plotdetail::fmt(py(t)) << "\" stroke=\"black\"/>\n"
            << "<text x=\"" << ml - 8 << "\" y=\"" << plotdetail::fmt(py(t) + 4)
            << "\" font-size=\"12\" text-anchor=\"end\">" << plotdetail::fmt(t) << "</text>\n";
    }
    out << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << h - mb
        << "\" stroke=\"black\"/>\n"
        << "<line x1=\"" << ml << "\" y1=\"" << h - mb << "\" x2=\"" << w - mr << "\" y2=\""
        << h - mb << "\" stroke=\"black\"/>\n"
        << "<text x=\"18\" y=\"" << (mt + h - mb) / 2
        << "\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 "
        << (mt + h - mb) / 2 << ")\">" << y_label << "</text>\n";

    const double slot = (w - ml - mr) / static_cast<double>(groups.size());
    std::size_t skipped = 0;
    for (std::size_t gi = 0; gi < groups.size(); ++gi) {
        const auto& g = groups[gi];
        const double cx = ml + slot * (static_cast<double>(gi) + 0.5);
        out << "<text x=\"" << plotdetail::fmt(cx) << "\" y=\"" << h - mb + 20
            << "\" font-size=\"12\" text-anchor=\"middle\">" << g.label << "</text>\n";
        if (g.values.empty()) {
            ++skipped;
            out << "<text x=\"" << plotdetail::fmt(cx) << "\" y=\"" << h - mb + 36
                << "\" font-size=\"10\" text-anchor=\"middle\" fill=\"#a00\">(empty)</text>\n";
            continue;
        }
        const double q1 = quantile_linear(g.values, 0.25);
        const double q2 = quantile_linear(g.values, 0.5);
        const double q3 = quantile_linear(g.values, 0.75);
        const double iqr = q3 - q1;
        double wlo = q1, whi = q3;
        for (double v : g.values) {
            if (v >= q1 - 1.5 * iqr) wlo = std::min(wlo, v);
            if (v <= q3 + 1.5 * iqr) whi = std::max(whi, v);
        }
        const double bw = slot * 0.35;
        const char* color = plotdetail::palette(gi);
        out << "<line x1=\"" << plotdetail::fmt(cx) << "\" y1=\"" << plotdetail::fmt(py(wlo))
            << "\" x2=\"" << plotdetail::fmt(cx) << "\" y2=\"" << plotdetail::fmt(py(whi))
            << "\" stroke=\"black\"/>\n";
        for (double cap : {wlo, whi})
            out << "<line x1=\"" << plotdetail::fmt(cx - bw / 2) << "\" y1=\""
                << plotdetail::fmt(py(cap)) << "\" x2=\"" << plotdetail::fmt(cx + bw / 2)
                << "\" y2=\"" << plotdetail::fmt(py(cap)) << "\" stroke=\"black\"/>\n";
        out << "<rect x=\"" << plotdetail::fmt(cx - bw) << "\" y=\"" << plotdetail::fmt(py(q3))
            << "\" width=\"" << plotdetail::fmt(2 * bw) << "\" height=\""
            << plotdetail::fmt(py(q1) - py(q3)) << "\" fill=\"" << color
            << "\" opacity=\"0.35\" stroke=\"black\"/>\n"
            << "<line x1=\"" << plotdetail::fmt(cx - bw) << "\" y1=\"" << plotdetail::fmt(py(q2))
            << "\" x2=\"" << plotdetail::fmt(cx + bw) << "\" y2=\"" << plotdetail::fmt(py(q2))
            << "\" stroke=\"black\" stroke-width=\"2\"/>\n";
        for (double v : g.values)
            if (v < q1 - 1.5 * iqr || v > q3 + 1.5 * iqr)
                out << "<circle cx=\"" << plotdetail::fmt(cx) << "\" cy=\"" << plotdetail::fmt(py(v))
                    << "\" r=\"2.5\" fill=\"none\" stroke=\"" << color << "\"/>\n";
    }
    if (skipped > 0)
        out << "<text x=\"" << w - mr << "\" y=\"" << mt - 12
            << "\" font-size=\"11\" text-anchor=\"end\" fill=\"#a00\">warning: " << skipped
            << " empty group(s) skipped</text>\n";
    out << "</svg>\n";

    std::ofstream file(path, std::ios::binary);
    if (!file) throw std::runtime_error("emit_boxplot_svg: cannot write '" + path + "'");
    file << out.str();
}

}  // namespace m3vb

#endif  // M3VB_PLOT_HPP
