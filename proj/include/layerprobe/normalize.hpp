#ifndef LAYERPROBE_NORMALIZE_HPP
#define LAYERPROBE_NORMALIZE_HPP

#include <cmath>
#include <optional>
#include <vector>

#include "layerprobe/hsd.hpp"

namespace layerprobe {

inline constexpr double kDefaultNormEpsilon = 1e-5;

/// Probe-time normalization. Gain and bias are the default initialization
/// (1 and 0), so layernorm_default and standardize compute the same thing.
struct NormPolicy {
    NormKind kind = NormKind::None;
    bool apply_to_last_layer = false;
    double epsilon = kDefaultNormEpsilon;
};

/// Normalization decision for layers 1..L (element l-1 is layer l).
///
/// Without an override, pre-LN dumps normalize every layer but the last with
/// the manifest's kind, since the model already normalizes its final hidden
/// state. Other dumps are left as is. An override replaces the kind for
/// layers 1..L-1 and also for layer L when apply_to_last_layer is set.
inline std::vector<NormKind> resolve_policy(const DumpManifest& manifest,
                                            const std::optional<NormPolicy>& override_policy = std::nullopt) {
    const auto n = static_cast<std::size_t>(std::max(manifest.num_layers, 0));
    std::vector<NormKind> out(n, NormKind::None);
    if (n == 0) return out;
    if (override_policy) {
        std::fill(out.begin(), out.end() - 1, override_policy->kind);
        out.back() = override_policy->apply_to_last_layer ? override_policy->kind : NormKind::None;
    } else if (manifest.prelast_norm_rule) {
        std::fill(out.begin(), out.end() - 1, manifest.norm_kind);
    }
    return out;
}

/// Normalizes one row in place, accumulating in double.
inline void normalize_row(std::span<float> row, NormKind kind, double epsilon) {
    if (kind == NormKind::None || row.empty()) return;
    const auto d = static_cast<double>(row.size());
    if (kind == NormKind::RmsNorm) {
        double ss = 0.0;
        for (float v : row) ss += static_cast<double>(v) * v;
        const double inv = 1.0 / std::sqrt(ss / d + epsilon);
        for (float& v : row) v = static_cast<float>(v * inv);
        return;
    }
    double mean = 0.0;
    for (float v : row) mean += v;
    mean /= d;
    double var = 0.0;
    for (float v : row) {
        const double c = v - mean;
        var += c * c;
    }
    var /= d;
    const double inv = 1.0 / std::sqrt(var + epsilon);
    for (float& v : row) v = static_cast<float>((v - mean) * inv);
}

inline LayerBatch normalize_batch(const LayerBatch& batch, NormKind kind, double epsilon = kDefaultNormEpsilon) {
    if (kind == NormKind::None) return batch;
    std::vector<float> data(batch.data().begin(), batch.data().end());
    const std::size_t d = batch.dim();
    for (std::size_t r = 0; r < batch.rows(); ++r) normalize_row(std::span<float>(data).subspan(r * d, d), kind, epsilon);
    return LayerBatch(batch.layer(), batch.row_begin(), d, std::move(data));
}

} // namespace layerprobe

#endif
