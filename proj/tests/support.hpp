#ifndef LAYERPROBE_TESTS_SUPPORT_HPP
#define LAYERPROBE_TESTS_SUPPORT_HPP

// Test-only helpers: scratch directories, in-memory dump construction and
// brute-force oracles that share no code path with the library.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <unistd.h>

#include <Eigen/Dense>

#include "layerprobe/hsd.hpp"
#include "layerprobe/probe.hpp"
#include "layerprobe/random.hpp"

namespace lpt {

namespace fs = std::filesystem;
namespace lp = layerprobe;

/// Fresh directory under the system temp dir, removed on destruction.
class ScratchDir {
public:
    explicit ScratchDir(const std::string& tag) {
        static std::atomic<int> counter{0};
        path_ = fs::temp_directory_path() /
                ("layerprobe_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
        fs::remove_all(path_);
        fs::create_directories(path_);
    }
    ~ScratchDir() {
        std::error_code ec;
        fs::remove_all(path_, ec);
    }
    ScratchDir(const ScratchDir&) = delete;
    ScratchDir& operator=(const ScratchDir&) = delete;

    [[nodiscard]] const fs::path& path() const { return path_; }
    [[nodiscard]] fs::path operator/(const std::string& s) const { return path_ / s; }

private:
    fs::path path_;
};

inline Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, lp::Rng& rng) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i)
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = rng.normal();
    return m;
}

/// PR of y on [x, 1] via the Moore-Penrose pseudo-inverse of the full design
/// matrix: the brute-force route.
inline double dense_pr(const Eigen::MatrixXd& x, const Eigen::VectorXd& y) {
    Eigen::MatrixXd a(x.rows(), x.cols() + 1);
    a.leftCols(x.cols()) = x;
    a.col(x.cols()).setOnes();
    Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(a);
    const Eigen::VectorXd beta = cod.pseudoInverse() * y;
    const Eigen::VectorXd resid = y - a * beta;
    const double mean = y.mean();
    return resid.squaredNorm() / (y.array() - mean).square().sum();
}

/// Accumulator fed row by row from a dense matrix.
inline lp::RegressionAccumulator accumulate_dense(const Eigen::MatrixXd& x, const Eigen::VectorXd& y,
                                                  std::size_t begin = 0, std::size_t end = SIZE_MAX) {
    end = std::min<std::size_t>(end, static_cast<std::size_t>(x.rows()));
    const auto d = static_cast<std::size_t>(x.cols());
    lp::RegressionAccumulator acc(d);
    std::vector<float> data;
    std::vector<lp::RowTarget> t;
    for (std::size_t i = begin; i < end; ++i) {
        for (std::size_t j = 0; j < d; ++j)
            data.push_back(static_cast<float>(x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j))));
        t.push_back({true, y(static_cast<Eigen::Index>(i))});
    }
    if (!t.empty()) acc.accumulate(lp::LayerBatch(1, begin, d, std::move(data)), t);
    return acc;
}

/// Round x to float precision, the storage precision of batches.
inline Eigen::MatrixXd as_float(const Eigen::MatrixXd& x) { return x.cast<float>().cast<double>(); }

/// Manifest with one sequence per entry of `lengths`, every position a row.
inline lp::DumpManifest simple_manifest(int layers, int dim, std::uint32_t vocab,
                                        const std::vector<std::uint32_t>& lengths) {
    lp::DumpManifest m;
    m.model_name = "test";
    m.num_layers = layers;
    m.hidden_dim = dim;
    m.vocab_size = vocab;
    std::uint32_t id = 0;
    for (auto len : lengths) {
        m.sequences.push_back({id++, len, {}});
        m.num_rows += len;
    }
    return m;
}

/// Writes a dump whose layer l holds layers[l-1] (N x d, rounded to float).
inline lp::Dump write_matrix_dump(const fs::path& dir, const lp::DumpManifest& m, const lp::TokenTable& tokens,
                                  const std::vector<Eigen::MatrixXd>& layers,
                                  std::optional<std::vector<double>> targets = std::nullopt) {
    lp::DumpWriter w(dir, m, tokens, std::move(targets));
    for (int l = 1; l <= m.num_layers; ++l) {
        const auto& x = layers[static_cast<std::size_t>(l - 1)];
        std::vector<float> data;
        for (Eigen::Index i = 0; i < x.rows(); ++i)
            for (Eigen::Index j = 0; j < x.cols(); ++j) data.push_back(static_cast<float>(x(i, j)));
        w.begin_layer(l);
        w.append(lp::LayerBatch(l, 0, static_cast<std::size_t>(m.hidden_dim), std::move(data)));
        w.end_layer();
    }
    return w.finalize();
}

inline std::vector<unsigned char> file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

} // namespace lpt

#endif
