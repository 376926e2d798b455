#ifndef LAYERPROBE_LAWFIT_HPP
#define LAYERPROBE_LAWFIT_HPP

// Geometric decay fit of a per-layer PR series: log PR_l = a + m*l by
// ordinary least squares, rho = exp(m).

#include <algorithm>
#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "layerprobe/error.hpp"
#include "layerprobe/probe.hpp"

namespace layerprobe {

struct LayerValue {
    int layer = 0;
    double value = 0.0;
};

struct LawFit {
    double rho = 0.0;            ///< per-layer decay ratio
    double log_intercept = 0.0;  ///< fitted log PR at layer 1
    double pearson_r = 0.0;      ///< correlation of (layer, log PR)
    double overall_decay = 0.0;  ///< PR at last layer / PR at first layer
    double first_pr = 0.0;
    double last_pr = 0.0;
    int num_layers = 0;
};

inline LawFit fit_law(std::vector<LayerValue> series) {
    if (series.size() < 3)
        fail_validation("TooFewLayers", "law fit needs at least 3 layers, got " + std::to_string(series.size()));
    for (const auto& p : series) {
        if (!(p.value > 0.0) || !std::isfinite(p.value))
            fail_degenerate("NonPositivePR", "PR at layer " + std::to_string(p.layer) + " is not positive");
    }
    std::sort(series.begin(), series.end(), [](const auto& a, const auto& b) { return a.layer < b.layer; });
    for (std::size_t i = 1; i < series.size(); ++i) {
        if (series[i].layer == series[i - 1].layer)
            fail_validation("DuplicateLayer", "layer " + std::to_string(series[i].layer) + " appears twice");
    }

    const auto n = static_cast<double>(series.size());
    double mx = 0.0;
    double my = 0.0;
    for (const auto& p : series) {
        mx += p.layer;
        my += std::log(p.value);
    }
    mx /= n;
    my /= n;
    double sxx = 0.0;
    double syy = 0.0;
    double sxy = 0.0;
    for (const auto& p : series) {
        const double dx = p.layer - mx;
        const double dy = std::log(p.value) - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    const double slope = sxy / sxx;

    LawFit fit;
    fit.rho = std::exp(slope);
    fit.log_intercept = my + slope * (1.0 - mx);
    // A flat series has no defined correlation; report 0.
    fit.pearson_r = syy > 0.0 ? std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0) : 0.0;
    fit.first_pr = series.front().value;
    fit.last_pr = series.back().value;
    fit.overall_decay = fit.last_pr / fit.first_pr;
    fit.num_layers = static_cast<int>(series.size());
    return fit;
}

inline std::vector<LayerValue> pr_series(const ProbeResult& r) {
    std::vector<LayerValue> out;
    out.reserve(r.layers.size());
    for (const auto& l : r.layers) out.push_back({l.layer, l.pr});
    return out;
}

inline LawFit fit_law(const ProbeResult& r) { return fit_law(pr_series(r)); }

struct SeriesRow {
    std::string name;
    LawFit fit;
};

/// One row per named series, in the order given: the first/last PR, decay
/// ratio and overall decay used to compare models of different size.
inline std::vector<SeriesRow> summarize_series(const std::vector<std::pair<std::string, ProbeResult>>& results) {
    std::vector<SeriesRow> table;
    table.reserve(results.size());
    for (const auto& [name, r] : results) {
        try {
            table.push_back({name, fit_law(r)});
        } catch (const Error& e) {
            rethrow_annotated(e, "series '" + name + "': ");
        }
    }
    return table;
}

} // namespace layerprobe

#endif
