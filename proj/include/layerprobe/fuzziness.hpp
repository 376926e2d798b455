#ifndef LAYERPROBE_FUZZINESS_HPP
#define LAYERPROBE_FUZZINESS_HPP

// Separation fuzziness Tr(Sigma_W Sigma_B^+) with the predicted token id as
// the class label. Sigma_W = S_W / N is the pooled within-class covariance,
// Sigma_B = sum_c (n_c / N)(mu_c - mu)(mu_c - mu)^T the count-weighted
// between-class covariance. Singleton classes add nothing to S_W.

#include <cmath>
#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/error.hpp"
#include "layerprobe/hsd.hpp"
#include "layerprobe/lawfit.hpp"
#include "layerprobe/probe.hpp"

namespace layerprobe {

inline constexpr double kPinvTruncation = 1e-10;

/// Two-pass class statistics. Pass 1 (Means) accumulates per-class counts
/// and sums; begin_scatter_pass() freezes the class means; pass 2 (Scatter)
/// accumulates S_W around those means. Both passes must see the same rows.
class ClassStats {
public:
    enum class Pass { Means, Scatter };

    explicit ClassStats(std::size_t dim) : dim_(dim), scatter_(Eigen::MatrixXd::Zero(dim, dim)) {}

    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] Pass pass() const noexcept { return pass_; }
    [[nodiscard]] std::uint64_t count() const noexcept { return total_; }
    [[nodiscard]] std::size_t num_classes() const noexcept { return counts_.size(); }
    [[nodiscard]] const Eigen::MatrixXd& within_scatter() const noexcept { return scatter_; }
    [[nodiscard]] std::uint64_t class_count(std::size_t c) const { return counts_.at(c); }
    /// Class sums in pass 1, class means in pass 2.
    [[nodiscard]] const Eigen::VectorXd& class_vector(std::size_t c) const { return vectors_.at(c); }
    [[nodiscard]] const std::map<std::uint64_t, std::size_t>& labels() const noexcept { return index_; }

    void accumulate(const LayerBatch& batch, std::span<const RowTarget> labels) {
        if (batch.rows() == 0) return;
        if (batch.dim() != dim_) fail_validation("DimMismatch", "batch dimension differs from class statistics");
        add_rows(batch.rows(), labels, [&](std::size_t i, std::size_t j) { return double{batch.row(i)[j]}; });
    }

    /// Same, for in-memory double-precision rows (m x d).
    void accumulate(const Eigen::Ref<const Eigen::MatrixXd>& x, std::span<const RowTarget> labels) {
        if (x.rows() == 0) return;
        if (static_cast<std::size_t>(x.cols()) != dim_)
            fail_validation("DimMismatch", "row dimension differs from class statistics");
        add_rows(static_cast<std::size_t>(x.rows()), labels, [&](std::size_t i, std::size_t j) {
            return x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
        });
    }

    /// Converts class sums to means and switches to the scatter pass.
    void begin_scatter_pass() {
        if (pass_ != Pass::Means) fail_validation("PassOrder", "scatter pass already started");
        for (std::size_t c = 0; c < counts_.size(); ++c) vectors_[c] /= static_cast<double>(counts_[c]);
        pass_ = Pass::Scatter;
    }

    /// Addition of statistics from disjoint row shards. In pass 1 class
    /// tables are unioned; in pass 2 both sides must share the same means.
    friend ClassStats merge(const ClassStats& a, const ClassStats& b) {
        if (a.dim_ != b.dim_) fail_validation("DimMismatch", "cannot merge class statistics of different dimension");
        if (a.pass_ != b.pass_) fail_validation("PassOrder", "cannot merge statistics from different passes");
        ClassStats out = a;
        if (a.pass_ == Pass::Means) {
            for (const auto& [label, bi] : b.index_) {
                const std::size_t c = out.class_slot(label, true);
                out.vectors_[c] += b.vectors_[bi];
                out.counts_[c] += b.counts_[bi];
            }
            out.total_ += b.total_;
            return out;
        }
        if (a.index_ != b.index_) fail_validation("PassOrder", "scatter-pass merge with different class tables");
        out.scatter_ += b.scatter_;
        out.scatter_rows_ += b.scatter_rows_;
        return out;
    }

    /// True when pass 2 covered exactly the rows of pass 1.
    [[nodiscard]] bool scatter_complete() const noexcept { return pass_ == Pass::Scatter && scatter_rows_ == total_; }

private:
    template <typename At>
    void add_rows(std::size_t rows, std::span<const RowTarget> labels, At at) {
        if (labels.size() != rows) fail_validation("DimMismatch", "labels not aligned with batch rows");
        if (pass_ == Pass::Means) {
            for (std::size_t i = 0; i < rows; ++i) {
                if (!labels[i].valid) continue;
                const std::size_t c = class_slot(to_label(labels[i].y), true);
                auto& sum = vectors_[c];
                for (std::size_t j = 0; j < dim_; ++j) sum(static_cast<Eigen::Index>(j)) += at(i, j);
                ++counts_[c];
                ++total_;
            }
            return;
        }
        std::size_t m = 0;
        for (const auto& l : labels) m += l.valid;
        if (m == 0) return;
        Eigen::MatrixXd centered(m, dim_);
        std::size_t k = 0;
        for (std::size_t i = 0; i < rows; ++i) {
            if (!labels[i].valid) continue;
            const auto& mean = vectors_[class_slot(to_label(labels[i].y), false)];
            for (std::size_t j = 0; j < dim_; ++j)
                centered(static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(j)) =
                    at(i, j) - mean(static_cast<Eigen::Index>(j));
            ++k;
        }
        scatter_.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
        scatter_.triangularView<Eigen::StrictlyUpper>() = scatter_.transpose();
        scatter_rows_ += m;
    }

    static std::uint64_t to_label(double y) {
        if (!(y >= 0.0) || y != std::floor(y) || y > 1.8e19)
            fail_validation("BadLabel", "class labels must be non-negative integers");
        return static_cast<std::uint64_t>(y);
    }

    std::size_t class_slot(std::uint64_t label, bool create) {
        if (auto it = index_.find(label); it != index_.end()) return it->second;
        if (!create)
            fail_validation("PassOrder", "label " + std::to_string(label) + " not seen in the means pass");
        const std::size_t c = counts_.size();
        index_.emplace(label, c);
        counts_.push_back(0);
        vectors_.push_back(Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim_)));
        return c;
    }

    std::size_t dim_;
    Pass pass_ = Pass::Means;
    std::map<std::uint64_t, std::size_t> index_;
    std::vector<std::uint64_t> counts_;
    std::vector<Eigen::VectorXd> vectors_;
    std::uint64_t total_ = 0;
    std::uint64_t scatter_rows_ = 0;
    Eigen::MatrixXd scatter_;
};

inline double compute_fuzziness(const ClassStats& stats, double truncation = kPinvTruncation) {
    if (!stats.scatter_complete())
        fail_validation("PassOrder", "fuzziness needs a completed scatter pass over the same rows");
    if (stats.count() < 2) fail_degenerate("TooFewRows", "fuzziness needs at least 2 rows");
    const auto d = static_cast<Eigen::Index>(stats.dim());
    const double n = static_cast<double>(stats.count());

    Eigen::VectorXd mu = Eigen::VectorXd::Zero(d);
    for (std::size_t c = 0; c < stats.num_classes(); ++c)
        mu += static_cast<double>(stats.class_count(c)) * stats.class_vector(c);
    mu /= n;
    Eigen::MatrixXd centered_means(d, static_cast<Eigen::Index>(stats.num_classes()));
    for (std::size_t c = 0; c < stats.num_classes(); ++c)
        centered_means.col(static_cast<Eigen::Index>(c)) =
            std::sqrt(static_cast<double>(stats.class_count(c)) / n) * (stats.class_vector(c) - mu);
    const Eigen::MatrixXd between = centered_means * centered_means.transpose();
    const Eigen::MatrixXd within = stats.within_scatter() / n;

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(between);
    if (eig.info() != Eigen::Success) fail_degenerate("EigenFailure", "eigendecomposition of between-class scatter failed");
    const double lmax = eig.eigenvalues().maxCoeff();
    const double scale = std::max(mu.squaredNorm(), within.trace());
    if (!(lmax > 1e-24 * scale) || !(lmax > 0.0))
        fail_degenerate("DegenerateBetweenScatter", "all class means coincide; between-class scatter is zero");

    double trace = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
        const double li = eig.eigenvalues()(i);
        if (li <= truncation * lmax) continue;
        const auto v = eig.eigenvectors().col(i);
        trace += v.dot(within * v) / li;
    }
    return std::max(trace, 0.0);
}

struct FuzzinessConfig {
    std::optional<NormPolicy> norm_override;
    double epsilon = kDefaultNormEpsilon;
    TargetSpec target;
    std::optional<std::pair<int, int>> layers;
    std::size_t batch_rows = 4096;
    std::size_t workers = 0;
};

/// Fuzziness per layer, labelling each row by its target token.
inline std::vector<LayerValue> fuzziness_all_layers(const Dump& dump, const FuzzinessConfig& cfg) {
    const auto& m = dump.manifest();
    if (auto v = m.check(); !v.empty()) fail_validation("BadManifest", "manifest: " + v.front());
    const auto [first, last] = layer_range(m, cfg.layers);
    const auto norms = resolve_policy(m, cfg.norm_override);
    const auto labels = dump_targets(dump, cfg.target);
    const std::size_t n = m.num_rows;
    const std::size_t count = static_cast<std::size_t>(last - first + 1);
    std::vector<LayerValue> out(count);
    parallel_for(count, cfg.workers == 0 ? default_workers() : cfg.workers, [&](std::size_t i) {
        const int layer = first + static_cast<int>(i);
        try {
            ClassStats stats(static_cast<std::size_t>(m.hidden_dim));
            auto feed = [&](const LayerBatch& b) {
                stats.accumulate(b, std::span<const RowTarget>(labels).subspan(b.row_begin(), b.rows()));
            };
            for_each_normalized_batch(dump, layer, norms[layer - 1], cfg.epsilon, cfg.batch_rows, 0, n, feed);
            stats.begin_scatter_pass();
            for_each_normalized_batch(dump, layer, norms[layer - 1], cfg.epsilon, cfg.batch_rows, 0, n, feed);
            out[i] = {layer, compute_fuzziness(stats)};
        } catch (const Error& e) {
            rethrow_annotated(e, "layer " + std::to_string(layer) + ": ");
        }
    });
    return out;
}

} // namespace layerprobe

#endif
