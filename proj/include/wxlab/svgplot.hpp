// SPDX-License-Identifier: Apache-2.0
//
// Minimal SVG emission for the comparison figures: line plots (metric vs.
// forecast horizon, one curve per run) and bar charts (marginal differences
// against a designated default run). No plotting dependency, just shapes.

#pragma once

#include <string>
#include <vector>

namespace wxlab {

struct PlotCurve {
    std::string label;
    std::vector<double> x;
    std::vector<double> y;  // NaN entries break the line
};

struct LinePlot {
    std::string title;
    std::string x_label;
    std::string y_label;
    std::vector<PlotCurve> curves;
};

struct PlotBar {
    std::string label;
    double value = 0.0;
};

struct BarChart {
    std::string title;
    std::string y_label;
    std::vector<PlotBar> bars;
};

// Writes a self-contained SVG file. Throws on IO failure or when nothing
// drawable was supplied.
void write_line_plot(const std::string& path, const LinePlot& plot);
void write_bar_chart(const std::string& path, const BarChart& chart);

}  // namespace wxlab
