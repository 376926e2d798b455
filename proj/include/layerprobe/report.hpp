#ifndef LAYERPROBE_REPORT_HPP
#define LAYERPROBE_REPORT_HPP

// Command implementations behind the CLI. Each command writes its outputs
// into an output directory:
//
//   probe      results.json, results.csv (layer,pr,ridge_used,n_rows), plot.svg
//   compare    comparison.json, comparison.csv
//              (name,first_pr,last_pr,rho,overall_decay,pearson_r), overlay.svg
//   fuzziness  fuzziness.json, fuzziness.csv (layer,fuzziness), plot.svg
//   pca        pca.json, coords.csv (layer,row,token,x,y), pca_layer_<l>.svg
//
// Outputs carry no timestamps or host details, so equal inputs give equal bytes.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "layerprobe/error.hpp"
#include "layerprobe/fuzziness.hpp"
#include "layerprobe/hsd.hpp"
#include "layerprobe/lawfit.hpp"
#include "layerprobe/pca.hpp"
#include "layerprobe/probe.hpp"
#include "layerprobe/svg.hpp"
#include "layerprobe/synth.hpp"

namespace layerprobe::report {

using Json = nlohmann::ordered_json;

/// Round-trip decimal form used in CSV files.
inline std::string num(double v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) fail_io("cannot write " + path.string());
    out << text;
    if (!out) fail_io("write failed: " + path.string());
}

inline std::string read_text(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail_io("cannot read " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) fail_io("cannot create " + dir.string() + ": " + ec.message());
}

inline Json target_json(const TargetSpec& t) {
    Json j;
    j["mode"] = t.mode == TargetSpec::Mode::Offset ? "offset" : "explicit";
    j["offset"] = t.offset;
    j["permute_vocab"] = t.permutation_seed ? Json(*t.permutation_seed) : Json(nullptr);
    return j;
}

inline Json norm_json(const std::optional<NormPolicy>& override_policy, double epsilon) {
    Json j;
    if (override_policy) {
        j["override"] = {{"kind", to_string(override_policy->kind)},
                         {"apply_to_last_layer", override_policy->apply_to_last_layer}};
    } else {
        j["override"] = nullptr;
    }
    j["epsilon"] = epsilon;
    return j;
}

inline Json law_fit_json(const LawFit& f) {
    Json j;
    j["rho"] = f.rho;
    j["log_intercept"] = f.log_intercept;
    j["pearson_r"] = f.pearson_r;
    j["overall_decay"] = f.overall_decay;
    j["first_pr"] = f.first_pr;
    j["last_pr"] = f.last_pr;
    j["num_layers"] = f.num_layers;
    return j;
}

/// Fitted line for svg::line_plot in natural-log units.
inline std::pair<double, double> fit_line(const LawFit& f) {
    const double slope = std::log(f.rho);
    return {f.log_intercept - slope, slope};
}

/// Echo of the effective configuration, defaults resolved.
inline Json probe_config_json(const std::string& dump, const DumpManifest& m, const ProbeConfig& cfg) {
    const auto [first, last] = layer_range(m, cfg.layers);
    Json j;
    j["dump"] = dump;
    j["target"] = target_json(resolve_target_spec(cfg.target, m));
    j["norm"] = norm_json(cfg.norm_override, cfg.epsilon);
    j["layers"] = {first, last};
    j["batch_rows"] = cfg.batch_rows;
    j["shards"] = cfg.shards;
    j["ridge"] = cfg.ridge ? Json(*cfg.ridge) : Json("default");
    return j;
}

/// Fit, or nullopt when the series cannot be fitted (too short, zero PR).
inline std::optional<LawFit> try_fit(const std::vector<LayerValue>& series, std::string* why = nullptr) {
    try {
        return fit_law(series);
    } catch (const Error& e) {
        if (why) *why = e.what();
        return std::nullopt;
    }
}

struct ProbeOutputs {
    ProbeResult result;
    std::optional<LawFit> fit;
    Json json;
};

inline ProbeOutputs cmd_probe(const fs::path& dump_dir, const ProbeConfig& cfg, const fs::path& out) {
    const Dump dump = Dump::open(dump_dir);
    ProbeOutputs o;
    o.result = probe_all_layers(dump, cfg);
    std::string why;
    o.fit = try_fit(pr_series(o.result), &why);

    Json j;
    j["command"] = "probe";
    j["model_name"] = dump.manifest().model_name;
    j["config"] = probe_config_json(dump_dir.string(), dump.manifest(), cfg);
    auto layers = Json::array();
    for (const auto& l : o.result.layers) {
        layers.push_back(Json{{"layer", l.layer},
                              {"pr", l.pr},
                              {"ridge_used", l.ridge_used},
                              {"n_rows", l.n_rows},
                              {"norm", to_string(l.norm)}});
    }
    j["layers"] = std::move(layers);
    j["law_fit"] = o.fit ? law_fit_json(*o.fit) : Json(nullptr);
    if (!o.fit) j["law_fit_error"] = why;
    o.json = j;

    ensure_dir(out);
    write_text(out / "results.json", j.dump(2) + "\n");
    std::string csv = "layer,pr,ridge_used,n_rows\n";
    for (const auto& l : o.result.layers)
        csv += std::to_string(l.layer) + "," + num(l.pr) + "," + num(l.ridge_used) + "," + std::to_string(l.n_rows) + "\n";
    write_text(out / "results.csv", csv);

    svg::Series s{dump.manifest().model_name, {}, std::nullopt};
    for (const auto& l : o.result.layers) s.points.emplace_back(l.layer, l.pr);
    if (o.fit) s.fit = fit_line(*o.fit);
    std::string title = "PR by layer";
    if (o.fit) title += " (rho=" + svg::fmt("%.4f", o.fit->rho) + ", r=" + svg::fmt("%.4f", o.fit->pearson_r) + ")";
    write_text(out / "plot.svg", svg::line_plot(title, "layer", "PR", {s}, true));
    return o;
}

/// Rebuilds the PR series of a results.json written by cmd_probe.
inline std::pair<std::string, ProbeResult> load_probe_results(const fs::path& path) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(path));
        if (j.value("command", std::string()) != "probe")
            fail_validation("BadResults", path.string() + " is not a probe results file");
        ProbeResult r;
        for (const auto& l : j.at("layers")) {
            LayerPr p;
            p.layer = l.at("layer").get<int>();
            p.pr = l.at("pr").get<double>();
            p.n_rows = l.at("n_rows").get<std::uint64_t>();
            p.ridge_used = l.at("ridge_used").get<double>();
            p.norm = parse_norm_kind(l.at("norm").get<std::string>());
            r.layers.push_back(p);
        }
        return {j.value("model_name", path.stem().string()), r};
    } catch (const nlohmann::json::exception& e) {
        fail_validation("BadResults", path.string() + ": " + e.what());
    }
}

struct CompareOutputs {
    std::vector<SeriesRow> rows;
    std::vector<std::pair<std::string, ProbeResult>> series;
};

/// Inputs may be dump directories or results.json files. Dumps are probed
/// first with `cfg`; rows keep the order of `inputs`.
inline CompareOutputs cmd_compare(const std::vector<fs::path>& inputs, const ProbeConfig& cfg, const fs::path& out) {
    if (inputs.size() < 2) fail_validation("UsageError", "compare needs at least two inputs");
    std::vector<std::optional<std::pair<std::string, ProbeResult>>> loaded(inputs.size());
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (fs::is_directory(inputs[i])) {
            const Dump d = Dump::open(inputs[i]);
            loaded[i] = std::make_pair(d.manifest().model_name, probe_all_layers(d, cfg));
        }
    }
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        if (!loaded[i]) {
            if (!fs::exists(inputs[i])) fail_io("no such input " + inputs[i].string());
            loaded[i] = load_probe_results(inputs[i]);
        }
    }
    CompareOutputs o;
    std::map<std::string, int> seen;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
        auto [name, r] = std::move(*loaded[i]);
        if (name.empty() || seen[name]++ > 0) name = inputs[i].string();
        o.series.emplace_back(std::move(name), std::move(r));
    }
    o.rows = summarize_series(o.series);

    Json j;
    j["command"] = "compare";
    auto in = Json::array();
    for (const auto& p : inputs) in.push_back(p.string());
    j["inputs"] = std::move(in);
    auto rows = Json::array();
    for (const auto& row : o.rows) {
        Json r = law_fit_json(row.fit);
        r["name"] = row.name;
        rows.push_back(std::move(r));
    }
    j["series"] = std::move(rows);

    ensure_dir(out);
    write_text(out / "comparison.json", j.dump(2) + "\n");
    std::string csv = "name,first_pr,last_pr,rho,overall_decay,pearson_r\n";
    for (const auto& row : o.rows) {
        std::string name = row.name;
        if (name.find_first_of(",\"\n") != std::string::npos) {
            std::string q = "\"";
            for (char c : name) q += (c == '"') ? std::string("\"\"") : std::string(1, c);
            name = q + "\"";
        }
        csv += name + "," + num(row.fit.first_pr) + "," + num(row.fit.last_pr) + "," + num(row.fit.rho) + "," +
               num(row.fit.overall_decay) + "," + num(row.fit.pearson_r) + "\n";
    }
    write_text(out / "comparison.csv", csv);

    std::vector<svg::Series> plot;
    for (std::size_t i = 0; i < o.series.size(); ++i) {
        svg::Series s{o.series[i].first, {}, fit_line(o.rows[i].fit)};
        for (const auto& l : o.series[i].second.layers) s.points.emplace_back(l.layer, l.pr);
        plot.push_back(std::move(s));
    }
    write_text(out / "overlay.svg", svg::line_plot("PR by layer", "layer", "PR", plot, true));
    return o;
}

struct FuzzinessOutputs {
    std::vector<LayerValue> layers;
    std::optional<LawFit> fit;
    Json json;
};

inline FuzzinessOutputs cmd_fuzziness(const fs::path& dump_dir, const FuzzinessConfig& cfg, const fs::path& out) {
    const Dump dump = Dump::open(dump_dir);
    FuzzinessOutputs o;
    o.layers = fuzziness_all_layers(dump, cfg);
    o.fit = try_fit(o.layers);
    const auto [first, last] = layer_range(dump.manifest(), cfg.layers);

    Json j;
    j["command"] = "fuzziness";
    j["model_name"] = dump.manifest().model_name;
    Json c;
    c["dump"] = dump_dir.string();
    c["target"] = target_json(resolve_target_spec(cfg.target, dump.manifest()));
    c["norm"] = norm_json(cfg.norm_override, cfg.epsilon);
    c["layers"] = {first, last};
    c["batch_rows"] = cfg.batch_rows;
    j["config"] = std::move(c);
    auto layers = Json::array();
    for (const auto& l : o.layers) layers.push_back(Json{{"layer", l.layer}, {"fuzziness", l.value}});
    j["layers"] = std::move(layers);
    j["law_fit"] = o.fit ? law_fit_json(*o.fit) : Json(nullptr);
    o.json = j;

    ensure_dir(out);
    write_text(out / "fuzziness.json", j.dump(2) + "\n");
    std::string csv = "layer,fuzziness\n";
    for (const auto& l : o.layers) csv += std::to_string(l.layer) + "," + num(l.value) + "\n";
    write_text(out / "fuzziness.csv", csv);
    svg::Series s{dump.manifest().model_name, {}, std::nullopt};
    for (const auto& l : o.layers) s.points.emplace_back(l.layer, l.value);
    if (o.fit) s.fit = fit_line(*o.fit);
    write_text(out / "plot.svg", svg::line_plot("Separation fuzziness by layer", "layer", "fuzziness", {s}, true));
    return o;
}

inline std::vector<PcaProjection> cmd_pca(const fs::path& dump_dir, const std::vector<int>& layers,
                                          const std::vector<std::uint32_t>& tokens, const PcaConfig& cfg,
                                          const fs::path& out) {
    if (layers.empty()) fail_validation("UsageError", "pca needs at least one layer");
    const Dump dump = Dump::open(dump_dir);
    std::vector<PcaProjection> result;
    for (int l : layers) result.push_back(project_tokens(dump, l, tokens, cfg));

    Json j;
    j["command"] = "pca";
    j["model_name"] = dump.manifest().model_name;
    Json c;
    c["dump"] = dump_dir.string();
    c["layers"] = layers;
    c["tokens"] = tokens;
    c["norm"] = norm_json(cfg.norm_override, cfg.epsilon);
    c["batch_rows"] = cfg.batch_rows;
    j["config"] = std::move(c);
    auto proj = Json::array();
    std::string csv = "layer,row,token,x,y\n";
    for (const auto& p : result) {
        Json e;
        e["layer"] = p.layer;
        e["num_rows"] = p.coords.size();
        e["explained_variance"] = {p.explained_variance[0], p.explained_variance[1]};
        e["total_variance"] = p.total_variance;
        auto comps = Json::array();
        for (Eigen::Index k = 0; k < 2; ++k) {
            std::vector<double> v(p.components.cols());
            for (Eigen::Index i = 0; i < p.components.cols(); ++i) v[static_cast<std::size_t>(i)] = p.components(k, i);
            comps.push_back(v);
        }
        e["components"] = std::move(comps);
        proj.push_back(std::move(e));
        for (const auto& pt : p.coords)
            csv += std::to_string(p.layer) + "," + std::to_string(pt.row) + "," + std::to_string(pt.token) + "," +
                   num(pt.x) + "," + num(pt.y) + "\n";
    }
    j["projections"] = std::move(proj);

    ensure_dir(out);
    write_text(out / "pca.json", j.dump(2) + "\n");
    write_text(out / "coords.csv", csv);
    for (const auto& p : result) {
        std::vector<svg::ScatterGroup> groups;
        for (auto t : p.token_filter) {
            svg::ScatterGroup g{"token " + std::to_string(t), {}};
            for (const auto& pt : p.coords) {
                if (pt.token == t) g.points.emplace_back(pt.x, pt.y);
            }
            groups.push_back(std::move(g));
        }
        write_text(out / ("pca_layer_" + std::to_string(p.layer) + ".svg"),
                   svg::scatter_plot("Layer " + std::to_string(p.layer), groups));
    }
    return result;
}

inline Dump cmd_synth(const fs::path& spec_file, const fs::path& out) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(read_text(spec_file));
    } catch (const nlohmann::json::exception& e) {
        fail_validation("BadSynthSpec", spec_file.string() + ": " + e.what());
    }
    return generate_dump(SynthSpec::from_json(j), out);
}

inline Json validation_json(const fs::path& dump_dir, const ValidationReport& r) {
    Json j;
    j["dump"] = dump_dir.string();
    j["ok"] = r.ok();
    j["violations"] = r.violations;
    return j;
}

inline Json error_json(const Error& e) {
    Json j;
    j["error"] = e.code();
    j["kind"] = std::string(kind_name(e.kind()));
    j["message"] = e.what();
    j["exit_code"] = exit_code(e.kind());
    return j;
}

} // namespace layerprobe::report

#endif
