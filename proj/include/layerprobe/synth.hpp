#ifndef LAYERPROBE_SYNTH_HPP
#define LAYERPROBE_SYNTH_HPP

// Synthetic dumps with a known per-layer PR.
//
// Each row draws a latent y ~ N(0, 1). Layer l stores [y + e, z_1..z_k] with
// e ~ N(0, s_l^2) and independent N(0, 1) distractors z. The best linear
// predictor of y from y + e leaves a fraction s^2 / (1 + s^2) of its variance
// unexplained, so s_l^2 = PR_l / (1 - PR_l) prescribes PR_l. The stored
// token is y binned into V equal-width buckets over [-6, 6], an affine map of
// y up to quantization, so the token index inherits the same PR.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "layerprobe/error.hpp"
#include "layerprobe/hsd.hpp"
#include "layerprobe/random.hpp"

namespace layerprobe {

inline constexpr double kSynthRange = 6.0;

struct SynthSpec {
    int num_layers = 0;
    int hidden_dim = 0;
    std::uint64_t num_rows = 0;
    std::uint32_t vocab_size = 0;
    std::vector<double> pr;  ///< prescribed PR for layers 1..L
    std::uint64_t seed = 0;
    /// Number of pure-noise coordinates; default hidden_dim - 1. Coordinates
    /// beyond 1 + distractor_count are zero.
    std::optional<int> distractor_count;
    /// Apply a seeded random rotation to every row (PR is unchanged).
    bool rotate = false;
    /// Also write targets.bin holding the token targets as f64.
    bool write_targets = false;
    std::string model_name = "synthetic";

    [[nodiscard]] int distractors() const { return distractor_count.value_or(hidden_dim - 1); }

    void validate() const {
        auto bad = [](const std::string& m) { fail_validation("BadSynthSpec", "synth spec: " + m); };
        if (num_layers < 1) bad("num_layers must be >= 1");
        if (hidden_dim < 2) bad("hidden_dim must be >= 2");
        if (num_rows < 2) bad("num_rows must be >= 2");
        if (vocab_size < 2) bad("vocab_size must be >= 2");
        if (pr.size() != static_cast<std::size_t>(num_layers)) bad("need exactly one prescribed PR per layer");
        for (double p : pr) {
            if (!(p > 0.0 && p < 1.0)) bad("prescribed PR values must lie in (0, 1)");
        }
        if (distractors() < 0 || distractors() > hidden_dim - 1) bad("distractor_count must be in 0..hidden_dim-1");
    }

    /// Accepts either "pr": [...] or "pr_first" with "pr_ratio" (PR_l = first * ratio^(l-1)).
    static SynthSpec from_json(const nlohmann::json& j) {
        auto bad = [](const std::string& m) { fail_validation("BadSynthSpec", "synth spec: " + m); };
        if (!j.is_object()) bad("top level must be an object");
        static const std::set<std::string> keys = {"num_layers", "hidden_dim",       "num_rows", "vocab_size",
                                                   "pr",         "pr_first",         "pr_ratio", "seed",
                                                   "distractor_count", "rotate",     "write_targets",
                                                   "model_name"};
        for (const auto& [k, v] : j.items()) {
            if (!keys.contains(k)) bad("unknown key '" + k + "'");
        }
        SynthSpec s;
        try {
            s.num_layers = j.at("num_layers").get<int>();
            s.hidden_dim = j.at("hidden_dim").get<int>();
            s.num_rows = j.at("num_rows").get<std::uint64_t>();
            s.vocab_size = j.at("vocab_size").get<std::uint32_t>();
            s.seed = j.value("seed", std::uint64_t{0});
            if (j.contains("distractor_count")) s.distractor_count = j.at("distractor_count").get<int>();
            s.rotate = j.value("rotate", false);
            s.write_targets = j.value("write_targets", false);
            s.model_name = j.value("model_name", std::string("synthetic"));
            if (j.contains("pr")) {
                if (j.contains("pr_first") || j.contains("pr_ratio")) bad("give either pr or pr_first/pr_ratio");
                s.pr = j.at("pr").get<std::vector<double>>();
            } else {
                s.pr = geometric_pr(j.at("pr_first").get<double>(), j.at("pr_ratio").get<double>(), s.num_layers);
            }
        } catch (const nlohmann::json::exception& e) {
            bad(e.what());
        }
        return s;
    }

    [[nodiscard]] nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["num_layers"] = num_layers;
        j["hidden_dim"] = hidden_dim;
        j["num_rows"] = num_rows;
        j["vocab_size"] = vocab_size;
        j["pr"] = pr;
        j["seed"] = seed;
        j["distractor_count"] = distractors();
        j["rotate"] = rotate;
        j["write_targets"] = write_targets;
        j["model_name"] = model_name;
        return j;
    }

    static std::vector<double> geometric_pr(double first, double ratio, int layers) {
        std::vector<double> out;
        for (int l = 0; l < layers; ++l) out.push_back(first * std::pow(ratio, l));
        return out;
    }
};

/// Noise variance that yields a given PR.
inline double noise_variance_for_pr(double pr) { return pr / (1.0 - pr); }

/// Equal-width bucket of y over [-6, 6].
inline std::uint32_t synth_token(double y, std::uint32_t vocab_size) {
    const double u = (y + kSynthRange) / (2.0 * kSynthRange);
    const double b = std::floor(u * vocab_size);
    return static_cast<std::uint32_t>(std::clamp(b, 0.0, static_cast<double>(vocab_size - 1)));
}

inline Eigen::MatrixXd random_rotation(int d, std::uint64_t seed) {
    Rng rng(seed);
    Eigen::MatrixXd g(d, d);
    for (int i = 0; i < d; ++i) {
        for (int j = 0; j < d; ++j) g(i, j) = rng.normal();
    }
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (int j = 0; j < d; ++j) {
        if (r(j, j) < 0.0) q.col(j) = -q.col(j);
    }
    return q;
}

inline Dump generate_dump(const SynthSpec& spec, const fs::path& out_dir) {
    spec.validate();
    const std::size_t n = spec.num_rows;
    const auto d = static_cast<std::size_t>(spec.hidden_dim);
    const auto k = static_cast<std::size_t>(spec.distractors());

    std::vector<double> latent(n);
    Rng latent_rng(derive_seed(spec.seed, 0));
    for (auto& y : latent) y = latent_rng.normal();

    DumpManifest m;
    m.model_name = spec.model_name;
    m.num_layers = spec.num_layers;
    m.hidden_dim = spec.hidden_dim;
    m.vocab_size = spec.vocab_size;
    m.norm_kind = NormKind::None;
    m.prelast_norm_rule = false;
    m.task_kind = TaskKind::Ntp;
    m.num_rows = n;
    m.sequences.reserve(n);
    TokenTable tokens;
    tokens.reserve(n);
    std::vector<double> targets;
    for (std::size_t i = 0; i < n; ++i) {
        const auto id = synth_token(latent[i], spec.vocab_size);
        // One sequence per row: [filler, target]; the row sits at t = 1 so
        // next-token prediction reads the target.
        m.sequences.push_back({static_cast<std::uint32_t>(i), 2, {1}});
        tokens.push_back({0, id});
        if (spec.write_targets) targets.push_back(static_cast<double>(id));
    }

    std::optional<Eigen::MatrixXd> rotation;
    if (spec.rotate) rotation = random_rotation(spec.hidden_dim, derive_seed(spec.seed, 1ULL << 32));

    std::optional<std::vector<double>> tg;
    if (spec.write_targets) tg = std::move(targets);
    DumpWriter writer(out_dir, m, tokens, std::move(tg));
    constexpr std::size_t kBatch = 4096;
    Eigen::VectorXd row(static_cast<Eigen::Index>(d));
    for (int l = 1; l <= spec.num_layers; ++l) {
        Rng rng(derive_seed(spec.seed, static_cast<std::uint64_t>(l)));
        const double sigma = std::sqrt(noise_variance_for_pr(spec.pr[static_cast<std::size_t>(l - 1)]));
        writer.begin_layer(l);
        for (std::size_t start = 0; start < n; start += kBatch) {
            const std::size_t rows = std::min(kBatch, n - start);
            std::vector<float> buf(rows * d);
            for (std::size_t r = 0; r < rows; ++r) {
                row.setZero();
                row(0) = latent[start + r] + sigma * rng.normal();
                for (std::size_t j = 1; j <= k; ++j) row(static_cast<Eigen::Index>(j)) = rng.normal();
                if (rotation) row = *rotation * row;
                for (std::size_t j = 0; j < d; ++j) buf[r * d + j] = static_cast<float>(row(static_cast<Eigen::Index>(j)));
            }
            writer.append(LayerBatch(l, start, d, std::move(buf)));
        }
        writer.end_layer();
    }
    return writer.finalize();
}

} // namespace layerprobe

#endif
