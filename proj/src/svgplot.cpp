// SPDX-License-Identifier: Apache-2.0

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "wxlab/svgplot.hpp"

namespace wxlab {

namespace {

constexpr double kWidth = 760.0, kHeight = 480.0;
constexpr double kLeft = 70.0, kRight = 24.0, kTop = 48.0, kBottom = 56.0;

const char* kPalette[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e",
                          "#8c564b", "#17becf", "#7f7f7f"};
constexpr size_t kPaletteSize = sizeof(kPalette) / sizeof(kPalette[0]);

std::string xml_escape(const std::string& s) {
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

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(6);
    os << v;
    return os.str();
}

struct Range {
    double lo = 0.0, hi = 1.0;

    void widen(double v) {
        if (!std::isfinite(v)) return;
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
};

// Round tick spacing to a 1/2/5 decade multiple covering the range.
std::vector<double> nice_ticks(double lo, double hi) {
    if (!(hi > lo)) {
        hi = lo + 1.0;
        lo = lo - 1.0;
    }
    const double raw = (hi - lo) / 5.0;
    const double mag = std::pow(10.0, std::floor(std::log10(raw)));
    double step = mag;
    for (double m : {1.0, 2.0, 5.0, 10.0}) {
        if (mag * m >= raw) {
            step = mag * m;
            break;
        }
    }
    std::vector<double> ticks;
    for (double t = std::ceil(lo / step) * step; t <= hi + step * 1e-9; t += step) {
        ticks.push_back(std::abs(t) < step * 1e-9 ? 0.0 : t);
    }
    return ticks;
}

void open_svg(std::ostringstream& os, const std::string& title) {
    os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kWidth << "\" height=\""
       << kHeight << "\" viewBox=\"0 0 " << kWidth << " " << kHeight << "\">\n"
       << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
       << "<text x=\"" << kWidth / 2 << "\" y=\"26\" text-anchor=\"middle\" "
          "font-family=\"sans-serif\" font-size=\"16\">"
       << xml_escape(title) << "</text>\n";
}

void axis_labels(std::ostringstream& os, const std::string& x_label, const std::string& y_label) {
    os << "<text x=\"" << (kLeft + (kWidth - kLeft - kRight) / 2) << "\" y=\"" << (kHeight - 12)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">"
       << xml_escape(x_label) << "</text>\n";
    os << "<text x=\"18\" y=\"" << (kTop + (kHeight - kTop - kBottom) / 2)
       << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" "
          "transform=\"rotate(-90 18 "
       << (kTop + (kHeight - kTop - kBottom) / 2) << ")\">" << xml_escape(y_label) << "</text>\n";
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open plot file for writing: " + path);
    f << content;
    if (!f) throw std::runtime_error("short write on plot file: " + path);
}

}  // namespace

void write_line_plot(const std::string& path, const LinePlot& plot) {
    if (plot.curves.empty()) throw std::invalid_argument("line plot needs at least one curve");

    bool any_point = false;
    Range rx{1e300, -1e300}, ry{1e300, -1e300};
    for (const auto& c : plot.curves) {
        if (c.x.size() != c.y.size()) {
            throw std::invalid_argument("curve '" + c.label + "' has mismatched x/y lengths");
        }
        for (size_t i = 0; i < c.x.size(); ++i) {
            if (!std::isfinite(c.y[i])) continue;
            rx.widen(c.x[i]);
            ry.widen(c.y[i]);
            any_point = true;
        }
    }
    if (!any_point) throw std::invalid_argument("line plot has no finite points");
    if (rx.hi == rx.lo) {
        rx.lo -= 0.5;
        rx.hi += 0.5;
    }
    if (ry.hi == ry.lo) {
        ry.lo -= 0.5;
        ry.hi += 0.5;
    }
    const double pad = (ry.hi - ry.lo) * 0.06;
    ry.lo -= pad;
    ry.hi += pad;

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sx = [&](double v) { return kLeft + (v - rx.lo) / (rx.hi - rx.lo) * pw; };
    auto sy = [&](double v) { return kTop + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };

    std::ostringstream os;
    open_svg(os, plot.title);

    for (double t : nice_ticks(ry.lo, ry.hi)) {
        const double y = sy(t);
        os << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << (kWidth - kRight)
           << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << (kLeft - 8) << "\" y=\"" << (y + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
           << "</text>\n";
    }
    for (double t : nice_ticks(rx.lo, rx.hi)) {
        const double x = sx(t);
        os << "<line x1=\"" << x << "\" y1=\"" << (kTop + ph) << "\" x2=\"" << x << "\" y2=\""
           << (kTop + ph + 5) << "\" stroke=\"#444444\"/>\n";
        os << "<text x=\"" << x << "\" y=\"" << (kTop + ph + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
           << "</text>\n";
    }
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444444\"/>\n";

    for (size_t ci = 0; ci < plot.curves.size(); ++ci) {
        const auto& c = plot.curves[ci];
        const char* color = kPalette[ci % kPaletteSize];
        std::ostringstream pts;
        bool in_segment = false;
        auto flush = [&]() {
            const std::string s = pts.str();
            if (!s.empty()) {
                os << "<polyline fill=\"none\" stroke=\"" << color
                   << "\" stroke-width=\"2\" points=\"" << s << "\"/>\n";
            }
            pts.str("");
            in_segment = false;
        };
        for (size_t i = 0; i < c.x.size(); ++i) {
            if (!std::isfinite(c.y[i])) {
                flush();
                continue;
            }
            pts << sx(c.x[i]) << "," << sy(c.y[i]) << " ";
            in_segment = true;
            os << "<circle cx=\"" << sx(c.x[i]) << "\" cy=\"" << sy(c.y[i])
               << "\" r=\"3\" fill=\"" << color << "\"/>\n";
        }
        (void)in_segment;
        flush();
    }

    // Legend, top-right inside the plot frame.
    const double lx = kLeft + pw - 170.0, ly0 = kTop + 10.0;
    os << "<rect x=\"" << (lx - 8) << "\" y=\"" << (ly0 - 4) << "\" width=\"174\" height=\""
       << (plot.curves.size() * 18 + 8) << "\" fill=\"white\" fill-opacity=\"0.85\" "
          "stroke=\"#bbbbbb\"/>\n";
    for (size_t ci = 0; ci < plot.curves.size(); ++ci) {
        const double ly = ly0 + 13 + 18.0 * static_cast<double>(ci);
        os << "<line x1=\"" << lx << "\" y1=\"" << (ly - 4) << "\" x2=\"" << (lx + 22)
           << "\" y2=\"" << (ly - 4) << "\" stroke=\"" << kPalette[ci % kPaletteSize]
           << "\" stroke-width=\"2\"/>\n";
        os << "<text x=\"" << (lx + 28) << "\" y=\"" << ly
           << "\" font-family=\"sans-serif\" font-size=\"12\">" << xml_escape(plot.curves[ci].label)
           << "</text>\n";
    }

    axis_labels(os, plot.x_label, plot.y_label);
    os << "</svg>\n";
    write_file(path, os.str());
}

void write_bar_chart(const std::string& path, const BarChart& chart) {
    if (chart.bars.empty()) throw std::invalid_argument("bar chart needs at least one bar");

    Range ry{0.0, 0.0};
    for (const auto& b : chart.bars) ry.widen(b.value);
    if (ry.hi == ry.lo) ry.hi = ry.lo + 1.0;
    const double pad = (ry.hi - ry.lo) * 0.08;
    ry.lo -= pad;
    ry.hi += pad;

    const double pw = kWidth - kLeft - kRight, ph = kHeight - kTop - kBottom;
    auto sy = [&](double v) { return kTop + ph - (v - ry.lo) / (ry.hi - ry.lo) * ph; };
    const double n = static_cast<double>(chart.bars.size());
    const double slot = pw / n;
    const double bw = slot * 0.6;

    std::ostringstream os;
    open_svg(os, chart.title);
    for (double t : nice_ticks(ry.lo, ry.hi)) {
        const double y = sy(t);
        os << "<line x1=\"" << kLeft << "\" y1=\"" << y << "\" x2=\"" << (kWidth - kRight)
           << "\" y2=\"" << y << "\" stroke=\"#dddddd\"/>\n";
        os << "<text x=\"" << (kLeft - 8) << "\" y=\"" << (y + 4)
           << "\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">" << fmt(t)
           << "</text>\n";
    }
    const double zero_y = sy(std::max(0.0, ry.lo));
    for (size_t i = 0; i < chart.bars.size(); ++i) {
        const double cx = kLeft + slot * (static_cast<double>(i) + 0.5);
        const double vy = sy(chart.bars[i].value);
        const double top = std::min(vy, zero_y), hgt = std::abs(vy - zero_y);
        os << "<rect x=\"" << (cx - bw / 2) << "\" y=\"" << top << "\" width=\"" << bw
           << "\" height=\"" << std::max(hgt, 0.5) << "\" fill=\""
           << kPalette[i % kPaletteSize] << "\"/>\n";
        os << "<text x=\"" << cx << "\" y=\"" << (kTop + ph + 18)
           << "\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">"
           << xml_escape(chart.bars[i].label) << "</text>\n";
    }
    os << "<rect x=\"" << kLeft << "\" y=\"" << kTop << "\" width=\"" << pw << "\" height=\"" << ph
       << "\" fill=\"none\" stroke=\"#444444\"/>\n";
    axis_labels(os, "", chart.y_label);
    os << "</svg>\n";
    write_file(path, os.str());
}

}  // namespace wxlab
