#ifndef LAYERPROBE_PROBE_HPP
#define LAYERPROBE_PROBE_HPP

// Prediction residual: the fraction of target variance left unexplained by
// the least-squares fit y ~ w.h + b of a token index y on an embedding h.
// Fits are accumulated as sufficient statistics so a layer can be streamed
// in batches and split into shards that merge by addition.

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "layerprobe/error.hpp"
#include "layerprobe/hsd.hpp"
#include "layerprobe/normalize.hpp"
#include "layerprobe/parallel.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

struct TargetSpec {
    /// Auto picks Explicit for explicit_targets dumps and Offset otherwise.
    enum class Mode { Auto, Offset, Explicit };
    Mode mode = Mode::Auto;
    /// Row (s, t) predicts the token at t + offset; +1 is next-token prediction.
    int offset = 1;
    /// When set, token ids pass through a seeded bijection of [0, V) first.
    std::optional<std::uint64_t> permutation_seed;
};

struct RowTarget {
    bool valid = false;
    double y = 0.0;
};

inline TargetSpec resolve_target_spec(TargetSpec spec, const DumpManifest& m) {
    if (spec.mode == TargetSpec::Mode::Auto)
        spec.mode = m.task_kind == TaskKind::ExplicitTargets ? TargetSpec::Mode::Explicit : TargetSpec::Mode::Offset;
    return spec;
}

/// Regression target per dump row, aligned with the manifest's row table.
/// `explicit_targets` is required in explicit mode and ignored otherwise.
inline std::vector<RowTarget> build_targets(const TokenTable& tokens, std::span<const RowIndex> rows,
                                            const TargetSpec& spec, std::uint32_t vocab_size,
                                            std::optional<std::span<const double>> explicit_targets = std::nullopt) {
    std::vector<RowTarget> out(rows.size());
    if (spec.mode == TargetSpec::Mode::Explicit) {
        if (!explicit_targets)
            fail_validation("MissingTargets", "explicit target mode requires targets.bin in the dump");
        if (explicit_targets->size() != rows.size())
            fail_validation("RowCountMismatch", "row count mismatch between targets and rows");
        for (std::size_t i = 0; i < rows.size(); ++i) out[i] = {true, (*explicit_targets)[i]};
        return out;
    }
    std::vector<std::uint32_t> perm;
    if (spec.permutation_seed) perm = random_permutation(vocab_size, *spec.permutation_seed);
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const auto& r = rows[i];
        const auto& seq = tokens.at(r.sequence);
        const std::int64_t t = static_cast<std::int64_t>(r.position) + spec.offset;
        if (t < 1 || t > static_cast<std::int64_t>(seq.size())) continue;
        std::uint32_t id = seq[static_cast<std::size_t>(t - 1)];
        if (!perm.empty()) {
            if (id >= perm.size()) fail_validation("BadTokens", "token id out of range");
            id = perm[id];
        }
        out[i] = {true, static_cast<double>(id)};
    }
    return out;
}

/// Sufficient statistics of one layer's least-squares fit, in double.
///
/// Stored as the row count, the mean of [x; y] and the centered co-moment
/// matrix M = sum ([x; y] - mean)([x; y] - mean)^T, combined across batches
/// and shards with the pairwise mean/co-moment update. The raw moments
/// gram = sum [x;1][x;1]^T, cross = sum [x;1] y, sum y and sum y^2 are
/// available from the accessors.
class RegressionAccumulator {
public:
    explicit RegressionAccumulator(std::size_t dim)
        : dim_(dim), mean_(Eigen::VectorXd::Zero(dim + 1)), comoment_(Eigen::MatrixXd::Zero(dim + 1, dim + 1)) {}

    [[nodiscard]] std::size_t dim() const noexcept { return dim_; }
    [[nodiscard]] std::uint64_t count() const noexcept { return n_; }
    /// Mean of [x; y].
    [[nodiscard]] const Eigen::VectorXd& mean() const noexcept { return mean_; }
    /// Centered co-moments of [x; y]; the last row and column belong to y.
    [[nodiscard]] const Eigen::MatrixXd& comoment() const noexcept { return comoment_; }

    [[nodiscard]] Eigen::MatrixXd gram() const {
        const auto d = static_cast<Eigen::Index>(dim_);
        const double n = static_cast<double>(n_);
        const auto mx = mean_.head(d);
        Eigen::MatrixXd g(d + 1, d + 1);
        g.topLeftCorner(d, d) = comoment_.topLeftCorner(d, d) + n * mx * mx.transpose();
        g.col(d).head(d) = n * mx;
        g.row(d).head(d) = n * mx.transpose();
        g(d, d) = n;
        return g;
    }
    [[nodiscard]] Eigen::VectorXd cross() const {
        const auto d = static_cast<Eigen::Index>(dim_);
        const double n = static_cast<double>(n_);
        Eigen::VectorXd c(d + 1);
        c.head(d) = comoment_.col(d).head(d) + n * mean_(d) * mean_.head(d);
        c(d) = n * mean_(d);
        return c;
    }
    [[nodiscard]] double sum_y() const noexcept { return static_cast<double>(n_) * mean_(static_cast<Eigen::Index>(dim_)); }
    [[nodiscard]] double sum_yy() const noexcept {
        const auto d = static_cast<Eigen::Index>(dim_);
        return comoment_(d, d) + static_cast<double>(n_) * mean_(d) * mean_(d);
    }

    /// Adds every valid row of `batch`; `targets` is aligned with the batch rows.
    void accumulate(const LayerBatch& batch, std::span<const RowTarget> targets) {
        if (batch.rows() == 0) return;
        if (batch.dim() != dim_)
            fail_validation("DimMismatch", "batch dimension " + std::to_string(batch.dim()) +
                                               " differs from accumulator dimension " + std::to_string(dim_));
        if (targets.size() != batch.rows())
            fail_validation("DimMismatch", "target slice not aligned with batch rows");
        std::size_t m = 0;
        for (const auto& t : targets) m += t.valid;
        if (m == 0) return;

        Eigen::MatrixXd z(m, dim_ + 1);
        std::size_t k = 0;
        for (std::size_t i = 0; i < batch.rows(); ++i) {
            if (!targets[i].valid) continue;
            const auto row = batch.row(i);
            for (std::size_t j = 0; j < dim_; ++j) z(k, j) = row[j];
            z(k, dim_) = targets[i].y;
            ++k;
        }
        add(z);
    }

    /// Adds in-memory double-precision rows x (m x d), all valid.
    void accumulate(const Eigen::Ref<const Eigen::MatrixXd>& x, const Eigen::Ref<const Eigen::VectorXd>& y) {
        if (x.rows() == 0) return;
        if (static_cast<std::size_t>(x.cols()) != dim_)
            fail_validation("DimMismatch", "row dimension " + std::to_string(x.cols()) +
                                               " differs from accumulator dimension " + std::to_string(dim_));
        if (x.rows() != y.size()) fail_validation("DimMismatch", "targets not aligned with rows");
        Eigen::MatrixXd z(x.rows(), x.cols() + 1);
        z.leftCols(x.cols()) = x;
        z.col(x.cols()) = y;
        add(z);
    }

    /// Statistics of the union of both row sets. Symmetric in a and b, and
    /// an empty side returns the other unchanged.
    friend RegressionAccumulator merge(const RegressionAccumulator& a, const RegressionAccumulator& b) {
        if (a.dim_ != b.dim_) fail_validation("DimMismatch", "cannot merge accumulators of different dimension");
        if (b.n_ == 0) return a;
        if (a.n_ == 0) return b;
        RegressionAccumulator out(a.dim_);
        out.n_ = a.n_ + b.n_;
        const double na = static_cast<double>(a.n_);
        const double nb = static_cast<double>(b.n_);
        const double n = static_cast<double>(out.n_);
        out.mean_ = (na * a.mean_ + nb * b.mean_) / n;
        const Eigen::VectorXd delta = b.mean_ - a.mean_;
        out.comoment_ = a.comoment_ + b.comoment_;
        out.comoment_.selfadjointView<Eigen::Lower>().rankUpdate(delta, na * nb / n);
        out.comoment_.triangularView<Eigen::StrictlyUpper>() = out.comoment_.transpose();
        return out;
    }

private:
    void add(const Eigen::MatrixXd& z) {
        RegressionAccumulator part(dim_);
        part.n_ = static_cast<std::uint64_t>(z.rows());
        part.mean_ = z.colwise().mean().transpose();
        const Eigen::MatrixXd centered = z.rowwise() - part.mean_.transpose();
        part.comoment_.selfadjointView<Eigen::Lower>().rankUpdate(centered.transpose());
        part.comoment_.triangularView<Eigen::StrictlyUpper>() = part.comoment_.transpose();
        *this = merge(*this, part);
    }

    std::size_t dim_;
    std::uint64_t n_ = 0;
    Eigen::VectorXd mean_;
    Eigen::MatrixXd comoment_;
};

/// Merges shards pairwise by index, (0,1) (2,3) ... per level, so the
/// floating-point summation order depends only on the shard count.
inline RegressionAccumulator tree_merge(std::vector<RegressionAccumulator> parts) {
    if (parts.empty()) fail_validation("EmptyMerge", "no accumulators to merge");
    while (parts.size() > 1) {
        std::vector<RegressionAccumulator> next;
        next.reserve((parts.size() + 1) / 2);
        for (std::size_t i = 0; i + 1 < parts.size(); i += 2) next.push_back(merge(parts[i], parts[i + 1]));
        if (parts.size() % 2 == 1) next.push_back(std::move(parts.back()));
        parts = std::move(next);
    }
    return std::move(parts.front());
}

struct SolveResult {
    double pr = 0.0;
    double ridge_used = 0.0;
    double rss = 0.0;
    double tss = 0.0;
    Eigen::VectorXd coef;  ///< [w; b]
};

/// {0, e, 10e, ..., 1e4 e} with e = 1e-10 * mean diagonal of the feature block.
inline std::vector<double> default_ridge_schedule(const RegressionAccumulator& acc) {
    const auto d = static_cast<Eigen::Index>(acc.dim());
    double scale = 0.0;
    if (d > 0) {
        scale = (acc.comoment().topLeftCorner(d, d).trace() +
                 static_cast<double>(acc.count()) * acc.mean().head(d).squaredNorm()) /
                static_cast<double>(d);
    }
    if (!(scale > 0.0)) scale = 1.0;
    const double base = 1e-10 * scale;
    std::vector<double> out{0.0};
    for (double f = 1.0; f <= 1e4; f *= 10.0) out.push_back(base * f);
    return out;
}

namespace detail {

/// Cholesky of `a` that also rejects pivots at or below 1e-12 of their
/// diagonal entry, i.e. columns numerically dependent on earlier ones.
inline std::optional<Eigen::LLT<Eigen::MatrixXd>> cholesky_checked(const Eigen::MatrixXd& a) {
    constexpr double kRelPivot = 1e-12;
    Eigen::LLT<Eigen::MatrixXd> llt(a);
    if (llt.info() != Eigen::Success) return std::nullopt;
    const auto& l = llt.matrixLLT();
    for (Eigen::Index j = 0; j < a.rows(); ++j) {
        const double pivot = l(j, j) * l(j, j);
        if (!std::isfinite(pivot) || !(pivot > kRelPivot * std::abs(a(j, j)))) return std::nullopt;
    }
    return llt;
}

} // namespace detail

/// Least squares of y on [x, 1] with the intercept left unpenalized:
/// (G + lambda diag(I_d, 0)) beta = c, for the first lambda in
/// `ridge_schedule` whose factorization succeeds. Solved in centered form,
/// (C_xx + lambda I) w = C_xy and b = mean_y - w.mean_x, which has the same
/// solution. PR = RSS / TSS with RSS = C_yy - 2 w.C_xy + w^T C_xx w
/// (clamped at 0) and TSS = C_yy.
inline SolveResult solve_pr(const RegressionAccumulator& acc,
                            std::optional<std::span<const double>> ridge_schedule = std::nullopt) {
    if (acc.count() < 2)
        fail_degenerate("TooFewRows", "need at least 2 rows to fit, have " + std::to_string(acc.count()));
    const auto d = static_cast<Eigen::Index>(acc.dim());
    const auto& m = acc.comoment();
    const double tss = m(d, d);
    // Centering a constant target leaves at most rounding noise of order eps^2 sum y^2.
    constexpr double eps = std::numeric_limits<double>::epsilon();
    if (!(tss > 64.0 * eps * eps * acc.sum_yy()) || !(tss > 0.0))
        fail_degenerate("DegenerateTarget", "target has zero variance; prediction residual undefined");

    std::vector<double> owned;
    if (!ridge_schedule) {
        owned = default_ridge_schedule(acc);
        ridge_schedule = std::span<const double>(owned);
    }
    const Eigen::MatrixXd cxx = m.topLeftCorner(d, d);
    const Eigen::VectorXd cxy = m.col(d).head(d);
    for (double lambda : *ridge_schedule) {
        if (lambda < 0.0) fail_validation("BadRidge", "ridge values must be non-negative");
        Eigen::VectorXd w = Eigen::VectorXd::Zero(d);
        if (d > 0) {
            Eigen::MatrixXd a = cxx;
            a.diagonal().array() += lambda;
            const auto llt = detail::cholesky_checked(a);
            if (!llt) continue;
            w = llt->solve(cxy);
        }
        const double rss = std::max(tss - 2.0 * w.dot(cxy) + w.dot(cxx * w), 0.0);
        const double pr = rss / tss;
        if (!std::isfinite(pr)) continue;
        Eigen::VectorXd coef(d + 1);
        coef.head(d) = w;
        coef(d) = acc.mean()(d) - w.dot(acc.mean().head(d));
        return {pr, lambda, rss, tss, std::move(coef)};
    }
    fail_degenerate("SolveFailure", "least-squares system singular for every ridge level");
}

struct ProbeConfig {
    std::optional<NormPolicy> norm_override;
    double epsilon = kDefaultNormEpsilon;
    TargetSpec target;
    /// Inclusive layer range; empty means 1..L.
    std::optional<std::pair<int, int>> layers;
    std::size_t batch_rows = 4096;
    std::size_t shards = 1;
    std::optional<std::vector<double>> ridge;
    /// Thread count; 0 means default_workers(). Results do not depend on it.
    std::size_t workers = 0;
};

struct LayerPr {
    int layer = 0;
    double pr = 0.0;
    std::uint64_t n_rows = 0;
    double ridge_used = 0.0;
    NormKind norm = NormKind::None;
};

struct ProbeResult {
    std::vector<LayerPr> layers;
    TargetSpec target;
    double epsilon = kDefaultNormEpsilon;
};

/// Resolves the layer range of a config against a dump.
inline std::pair<int, int> layer_range(const DumpManifest& m, const std::optional<std::pair<int, int>>& range) {
    if (!range) return {1, m.num_layers};
    const auto [a, b] = *range;
    if (a < 1 || b > m.num_layers || a > b)
        fail_validation("LayerOutOfRange", "layer range " + std::to_string(a) + ".." + std::to_string(b) +
                                               " outside 1.." + std::to_string(m.num_layers));
    return *range;
}

/// Streams rows [row_begin, row_end) of one layer, normalizing each batch
/// before handing it to fn(batch).
template <typename Fn>
void for_each_normalized_batch(const Dump& dump, int layer, NormKind kind, double epsilon, std::size_t batch_rows,
                               std::size_t row_begin, std::size_t row_end, Fn&& fn) {
    LayerStream stream(dump, layer, batch_rows, row_begin, row_end);
    while (auto batch = stream.next()) {
        if (kind == NormKind::None) fn(*batch);
        else fn(normalize_batch(*batch, kind, epsilon));
    }
}

inline std::pair<std::size_t, std::size_t> shard_range(std::size_t n, std::size_t shards, std::size_t k) {
    return {k * n / shards, (k + 1) * n / shards};
}

/// Targets for a dump under `spec`, loading targets.bin when needed.
inline std::vector<RowTarget> dump_targets(const Dump& dump, TargetSpec spec) {
    const auto& m = dump.manifest();
    spec = resolve_target_spec(spec, m);
    const auto tokens = dump.read_tokens();
    const auto rows = m.rows();
    if (spec.mode == TargetSpec::Mode::Explicit) {
        if (!dump.has_targets())
            fail_validation("MissingTargets", "explicit target mode requires targets.bin in the dump");
        const auto explicit_targets = dump.read_targets();
        return build_targets(tokens, rows, spec, m.vocab_size, std::span<const double>(explicit_targets));
    }
    return build_targets(tokens, rows, spec, m.vocab_size);
}

/// PR for every layer in the configured range. The raw input embedding
/// layer (layer 0) is not part of a dump and is never probed.
inline ProbeResult probe_all_layers(const Dump& dump, const ProbeConfig& cfg) {
    const auto& m = dump.manifest();
    if (auto v = m.check(); !v.empty()) fail_validation("BadManifest", "manifest: " + v.front());
    if (cfg.batch_rows < 1) fail_validation("BadBatchRows", "batch_rows must be >= 1");
    if (cfg.shards < 1) fail_validation("BadShards", "shards must be >= 1");
    const auto [first, last] = layer_range(m, cfg.layers);
    const auto norms = resolve_policy(m, cfg.norm_override);
    const auto targets = dump_targets(dump, cfg.target);
    const std::size_t n = m.num_rows;
    const std::size_t d = static_cast<std::size_t>(m.hidden_dim);
    const std::size_t num_layers = static_cast<std::size_t>(last - first + 1);
    const std::size_t shards = std::min(cfg.shards, std::max<std::size_t>(n, 1));

    std::vector<RegressionAccumulator> parts(num_layers * shards, RegressionAccumulator(d));
    const std::size_t workers = cfg.workers == 0 ? default_workers() : cfg.workers;
    parallel_for(parts.size(), workers, [&](std::size_t task) {
        const int layer = first + static_cast<int>(task / shards);
        const auto [lo, hi] = shard_range(n, shards, task % shards);
        auto& acc = parts[task];
        try {
            for_each_normalized_batch(dump, layer, norms[layer - 1], cfg.epsilon, cfg.batch_rows, lo, hi,
                                      [&](const LayerBatch& b) {
                                          acc.accumulate(b, std::span<const RowTarget>(targets).subspan(
                                                                b.row_begin(), b.rows()));
                                      });
        } catch (const Error& e) {
            rethrow_annotated(e, "layer " + std::to_string(layer) + ": ");
        }
    });

    ProbeResult result;
    result.target = resolve_target_spec(cfg.target, m);
    result.epsilon = cfg.epsilon;
    for (std::size_t li = 0; li < num_layers; ++li) {
        const int layer = first + static_cast<int>(li);
        std::vector<RegressionAccumulator> layer_parts(parts.begin() + static_cast<std::ptrdiff_t>(li * shards),
                                                       parts.begin() + static_cast<std::ptrdiff_t>((li + 1) * shards));
        const auto acc = tree_merge(std::move(layer_parts));
        try {
            std::optional<std::span<const double>> schedule;
            if (cfg.ridge) schedule = std::span<const double>(*cfg.ridge);
            const auto sol = solve_pr(acc, schedule);
            result.layers.push_back({layer, sol.pr, acc.count(), sol.ridge_used, norms[layer - 1]});
        } catch (const Error& e) {
            rethrow_annotated(e, "layer " + std::to_string(layer) + ": ");
        }
    }
    return result;
}

} // namespace layerprobe

#endif
