// CSV tables and static SVG charts; byte-deterministic for identical inputs.
#pragma once

#include <array>

#include "selfcolor/analysis.hpp"

namespace selfcolor {

void write_correlation_csv(const CorrelationReport& report, const std::string& path);
void write_correlation_svg(const CorrelationReport& report, const std::string& path);
void write_top_activations_csv(const TopActivationSet& set, const std::string& path);

// points are (epoch, loss); drop markers draw dashed verticals.
void write_loss_curve_svg(const std::vector<std::array<double, 2>>& points,
                          const std::vector<double>& drop_epochs, const std::string& path);

// Correlation CSV + SVG and a JSON header describing the probe configuration.
// Errors out before touching any file when the report is empty.
void emit_report(const CorrelationReport& report, const std::string& out_dir);

}  // namespace selfcolor
