#ifndef LAYERPROBE_PCA_HPP
#define LAYERPROBE_PCA_HPP

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <set>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/error.hpp"
#include "layerprobe/hsd.hpp"
#include "layerprobe/normalize.hpp"
#include "layerprobe/probe.hpp"

namespace layerprobe {

struct PcaPoint {
    double x = 0.0;
    double y = 0.0;
    std::uint32_t token = 0;
    std::size_t row = 0;  ///< dump row index
};

struct PcaProjection {
    int layer = 0;
    std::vector<std::uint32_t> token_filter;
    Eigen::VectorXd mean;
    Eigen::MatrixXd components;  ///< 2 x d, orthonormal rows
    std::array<double, 2> explained_variance{};
    double total_variance = 0.0;
    std::vector<PcaPoint> coords;
};

/// Top-2 principal components of the rows of `data` (n x d) through the
/// eigendecomposition of the d x d sample covariance. Each component is
/// signed so its largest-magnitude entry is positive.
inline PcaProjection principal_plane(const Eigen::MatrixXd& data) {
    const Eigen::Index n = data.rows();
    const Eigen::Index d = data.cols();
    if (n < 3) fail_validation("TooFewRows", "PCA needs at least 3 rows, got " + std::to_string(n));
    if (d < 2) fail_validation("DimTooSmall", "PCA onto a plane needs hidden_dim >= 2");

    PcaProjection out;
    out.mean = data.colwise().mean().transpose();
    const Eigen::MatrixXd centered = data.rowwise() - out.mean.transpose();
    const Eigen::MatrixXd cov = (centered.transpose() * centered) / static_cast<double>(n - 1);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
    if (eig.info() != Eigen::Success) fail_degenerate("EigenFailure", "covariance eigendecomposition failed");

    // Eigen sorts eigenvalues ascending.
    const auto& values = eig.eigenvalues();
    const double top = values(d - 1);
    if (!(top > 1e-24 * std::max(out.mean.squaredNorm(), 1e-300)) || !(top > 0.0))
        fail_degenerate("RankDeficient", "selected rows are all identical");

    out.components.resize(2, d);
    for (int k = 0; k < 2; ++k) {
        Eigen::VectorXd v = eig.eigenvectors().col(d - 1 - k);
        Eigen::Index arg = 0;
        v.cwiseAbs().maxCoeff(&arg);
        if (v(arg) < 0.0) v = -v;
        out.components.row(k) = v.transpose();
        // Below the rounding floor of the covariance an eigenvalue is reported as 0.
        const double floor = 64.0 * std::numeric_limits<double>::epsilon() * static_cast<double>(d) * top;
        const double value = values(d - 1 - k);
        out.explained_variance[static_cast<std::size_t>(k)] = value > floor ? value : 0.0;
    }
    out.total_variance = cov.trace();

    const Eigen::MatrixXd proj = centered * out.components.transpose();
    out.coords.resize(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) {
        auto& p = out.coords[static_cast<std::size_t>(i)];
        p.x = proj(i, 0);
        p.y = proj(i, 1);
        p.row = static_cast<std::size_t>(i);
    }
    return out;
}

struct PcaConfig {
    std::optional<NormPolicy> norm_override;
    double epsilon = kDefaultNormEpsilon;
    std::size_t batch_rows = 4096;
};

/// Projects the layer-`layer` embeddings of every row whose own token is in
/// `token_filter`. The plane is fitted on those rows only.
inline PcaProjection project_tokens(const Dump& dump, int layer, const std::vector<std::uint32_t>& token_filter,
                                    const PcaConfig& cfg = {}) {
    if (token_filter.empty()) fail_validation("EmptyFilter", "token filter is empty");
    const auto& m = dump.manifest();
    if (layer < 1 || layer > m.num_layers)
        fail_validation("LayerOutOfRange", "layer index " + std::to_string(layer) + " outside 1.." +
                                               std::to_string(m.num_layers));
    const std::set<std::uint32_t> wanted(token_filter.begin(), token_filter.end());
    const auto tokens = dump.read_tokens();
    const auto rows = m.rows();

    std::vector<std::size_t> selected;
    std::vector<std::uint32_t> selected_tokens;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto id = tokens[rows[i].sequence][rows[i].position - 1];
        if (wanted.contains(id)) {
            selected.push_back(i);
            selected_tokens.push_back(id);
        }
    }
    if (selected.empty()) fail_validation("NoMatchingRows", "no rows carry any of the requested tokens");

    const auto d = static_cast<Eigen::Index>(m.hidden_dim);
    Eigen::MatrixXd data(static_cast<Eigen::Index>(selected.size()), d);
    const auto norms = resolve_policy(m, cfg.norm_override);
    std::size_t next = 0;
    for_each_normalized_batch(dump, layer, norms[layer - 1], cfg.epsilon, cfg.batch_rows, 0, m.num_rows,
                              [&](const LayerBatch& b) {
                                  while (next < selected.size() && selected[next] < b.row_end()) {
                                      const auto row = b.row(selected[next] - b.row_begin());
                                      for (Eigen::Index j = 0; j < d; ++j)
                                          data(static_cast<Eigen::Index>(next), j) = row[static_cast<std::size_t>(j)];
                                      ++next;
                                  }
                              });

    auto out = principal_plane(data);
    out.layer = layer;
    out.token_filter.assign(wanted.begin(), wanted.end());
    for (std::size_t i = 0; i < out.coords.size(); ++i) {
        out.coords[i].row = selected[i];
        out.coords[i].token = selected_tokens[i];
    }
    return out;
}

} // namespace layerprobe

#endif
