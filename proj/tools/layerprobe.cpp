// layerprobe: layer-wise linear probing of hidden-state dumps.
//
// Exit codes: 0 ok, 1 I/O failure, 2 validation or usage error,
// 3 degenerate statistics. Errors are reported as one JSON object on stderr.

#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "layerprobe/report.hpp"

namespace lp = layerprobe;

namespace {

struct ProbeFlags {
    int offset = 1;
    std::string targets = "auto";
    std::string norm;
    bool apply_last = false;
    double epsilon = lp::kDefaultNormEpsilon;
    std::optional<std::uint64_t> permute_seed;
    std::string layers;
    std::size_t batch_rows = 4096;
    std::size_t shards = 1;
    std::string ridge;
    std::size_t workers = 0;
};

void add_target_flags(CLI::App* cmd, ProbeFlags& f) {
    cmd->add_option("--offset", f.offset, "predict the token at t+K (default 1: next token)");
    cmd->add_option("--targets", f.targets, "target source: auto, offset or explicit")
        ->check(CLI::IsMember({"auto", "offset", "explicit"}));
    cmd->add_option("--permute-vocab", f.permute_seed, "shuffle the vocabulary with this seed");
}

void add_norm_flags(CLI::App* cmd, ProbeFlags& f) {
    cmd->add_option("--norm", f.norm, "override normalization: layernorm_default, rmsnorm_default, standardize, none");
    cmd->add_flag("--apply-last", f.apply_last, "also normalize the last layer when --norm is given");
    cmd->add_option("--epsilon", f.epsilon, "normalization variance guard")->check(CLI::PositiveNumber);
}

void add_stream_flags(CLI::App* cmd, ProbeFlags& f) {
    cmd->add_option("--layers", f.layers, "inclusive layer range A..B");
    cmd->add_option("--batch-rows", f.batch_rows, "rows per streamed batch")->check(CLI::PositiveNumber);
    cmd->add_option("--workers", f.workers, "worker threads (default: LAYERPROBE_WORKERS or all cores)");
}

std::optional<std::pair<int, int>> parse_layer_range(const std::string& s) {
    if (s.empty()) return std::nullopt;
    try {
        const auto dots = s.find("..");
        if (dots == std::string::npos) {
            const int l = std::stoi(s);
            return std::make_pair(l, l);
        }
        return std::make_pair(std::stoi(s.substr(0, dots)), std::stoi(s.substr(dots + 2)));
    } catch (const std::exception&) {
        lp::fail_validation("UsageError", "bad layer range '" + s + "', expected A..B");
    }
}

template <typename T>
std::vector<T> parse_list(const std::string& s, const char* what) {
    std::vector<T> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        try {
            if constexpr (std::is_floating_point_v<T>) out.push_back(static_cast<T>(std::stod(item)));
            else out.push_back(static_cast<T>(std::stoll(item)));
        } catch (const std::exception&) {
            lp::fail_validation("UsageError", std::string("bad ") + what + " value '" + item + "'");
        }
    }
    return out;
}

lp::TargetSpec target_spec(const ProbeFlags& f) {
    lp::TargetSpec t;
    t.mode = f.targets == "offset" ? lp::TargetSpec::Mode::Offset
             : f.targets == "explicit" ? lp::TargetSpec::Mode::Explicit
                                       : lp::TargetSpec::Mode::Auto;
    t.offset = f.offset;
    t.permutation_seed = f.permute_seed;
    return t;
}

std::optional<lp::NormPolicy> norm_override(const ProbeFlags& f) {
    if (f.norm.empty()) {
        if (f.apply_last) lp::fail_validation("UsageError", "--apply-last needs --norm");
        return std::nullopt;
    }
    return lp::NormPolicy{lp::parse_norm_kind(f.norm), f.apply_last, f.epsilon};
}

lp::ProbeConfig probe_config(const ProbeFlags& f) {
    lp::ProbeConfig c;
    c.norm_override = norm_override(f);
    c.epsilon = f.epsilon;
    c.target = target_spec(f);
    c.layers = parse_layer_range(f.layers);
    c.batch_rows = f.batch_rows;
    c.shards = f.shards;
    if (!f.ridge.empty()) c.ridge = parse_list<double>(f.ridge, "ridge");
    c.workers = f.workers;
    return c;
}

int report_error(const lp::Error& e) {
    std::cerr << lp::report::error_json(e).dump() << '\n';
    return lp::exit_code(e.kind());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Layer-wise linear probing of language-model hidden-state dumps"};
    app.require_subcommand(1);

    ProbeFlags pf;
    std::string dump;
    std::string out = "layerprobe_out";

    auto* probe = app.add_subcommand("probe", "PR per layer, law fit, CSV/JSON/SVG report");
    probe->add_option("--dump", dump, "dump directory")->required();
    add_target_flags(probe, pf);
    add_norm_flags(probe, pf);
    add_stream_flags(probe, pf);
    probe->add_option("--shards", pf.shards, "row shards per layer, merged in fixed order")->check(CLI::PositiveNumber);
    probe->add_option("--ridge", pf.ridge, "comma-separated ridge schedule (first entry should be 0)");
    probe->add_option("--out", out, "output directory");

    std::vector<std::string> inputs;
    auto* compare = app.add_subcommand("compare", "compare PR series of several dumps or results.json files");
    compare->add_option("inputs", inputs, "dump directories or results.json files")->required();
    add_target_flags(compare, pf);
    add_norm_flags(compare, pf);
    add_stream_flags(compare, pf);
    compare->add_option("--shards", pf.shards, "row shards per layer")->check(CLI::PositiveNumber);
    compare->add_option("--out", out, "output directory");

    auto* fuzz = app.add_subcommand("fuzziness", "separation fuzziness per layer");
    fuzz->add_option("--dump", dump, "dump directory")->required();
    add_target_flags(fuzz, pf);
    add_norm_flags(fuzz, pf);
    add_stream_flags(fuzz, pf);
    fuzz->add_option("--out", out, "output directory");

    std::string pca_layers;
    std::string pca_tokens;
    auto* pca = app.add_subcommand("pca", "project selected tokens onto the first two principal components");
    pca->add_option("--dump", dump, "dump directory")->required();
    pca->add_option("--layer", pca_layers, "layer index, or comma-separated list")->required();
    pca->add_option("--tokens", pca_tokens, "comma-separated token ids")->required();
    add_norm_flags(pca, pf);
    pca->add_option("--batch-rows", pf.batch_rows, "rows per streamed batch")->check(CLI::PositiveNumber);
    pca->add_option("--out", out, "output directory");

    std::string spec_file;
    auto* synth = app.add_subcommand("synth", "write a synthetic dump with prescribed per-layer PR");
    synth->add_option("--spec", spec_file, "synth spec JSON")->required();
    synth->add_option("--out", out, "dump directory to create")->required();

    bool full = false;
    auto* validate = app.add_subcommand("validate", "check a dump against the format contract");
    validate->add_option("--dump", dump, "dump directory")->required();
    validate->add_flag("--full", full, "check every row for non-finite values, not a sample");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        return report_error(lp::Error(lp::ErrorKind::Validation, "UsageError", e.what()));
    }

    try {
        if (*probe) {
            const auto o = lp::report::cmd_probe(dump, probe_config(pf), out);
            std::cout << o.json.dump(2) << '\n';
        } else if (*compare) {
            std::vector<lp::fs::path> paths(inputs.begin(), inputs.end());
            const auto o = lp::report::cmd_compare(paths, probe_config(pf), out);
            std::cout << lp::report::read_text(lp::fs::path(out) / "comparison.csv");
        } else if (*fuzz) {
            lp::FuzzinessConfig c;
            c.norm_override = norm_override(pf);
            c.epsilon = pf.epsilon;
            c.target = target_spec(pf);
            c.layers = parse_layer_range(pf.layers);
            c.batch_rows = pf.batch_rows;
            c.workers = pf.workers;
            const auto o = lp::report::cmd_fuzziness(dump, c, out);
            std::cout << o.json.dump(2) << '\n';
        } else if (*pca) {
            lp::PcaConfig c;
            c.norm_override = norm_override(pf);
            c.epsilon = pf.epsilon;
            c.batch_rows = pf.batch_rows;
            const auto layers = parse_list<int>(pca_layers, "layer");
            const auto tokens = parse_list<std::uint32_t>(pca_tokens, "token");
            lp::report::cmd_pca(dump, layers, tokens, c, out);
            std::cout << lp::report::read_text(lp::fs::path(out) / "pca.json");
        } else if (*synth) {
            const auto d = lp::report::cmd_synth(spec_file, out);
            std::cout << d.manifest().num_layers << " layers, " << d.manifest().num_rows << " rows written to "
                      << d.dir().string() << '\n';
        } else if (*validate) {
            const auto r = lp::validate_dump(dump, full ? 0 : 1024);
            std::cout << lp::report::validation_json(dump, r).dump(2) << '\n';
            if (!r.ok()) return lp::exit_code(lp::ErrorKind::Validation);
        }
    } catch (const lp::Error& e) {
        return report_error(e);
    } catch (const std::exception& e) {
        return report_error(lp::Error(lp::ErrorKind::Io, "InternalError", e.what()));
    }
    return 0;
}
