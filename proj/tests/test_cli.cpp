#include <gtest/gtest.h>

#include <sys/wait.h>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "layerprobe/report.hpp"
#include "support.hpp"

namespace lp = layerprobe;
using lpt::ScratchDir;

namespace {

struct Run {
    int exit_code = -1;
    std::string out;
    std::string err;
};

Run run_cli(const std::string& args, const ScratchDir& scratch) {
    const auto out = scratch / "stdout.txt";
    const auto err = scratch / "stderr.txt";
    const std::string cmd = std::string("\"") + LAYERPROBE_CLI + "\" " + args + " >\"" + out.string() + "\" 2>\"" +
                            err.string() + "\"";
    const int status = std::system(cmd.c_str());
    Run r;
    r.exit_code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    r.out = lp::report::read_text(out);
    r.err = lp::report::read_text(err);
    return r;
}

std::string q(const lpt::fs::path& p) { return "\"" + p.string() + "\""; }

void write_spec(const lpt::fs::path& file, double ratio, const std::string& name) {
    std::ofstream(file) << R"({"num_layers": 5, "hidden_dim": 4, "num_rows": 8000, "vocab_size": 8000,)"
                        << R"( "pr_first": 0.8, "pr_ratio": )" << ratio << R"(, "seed": 3, "model_name": ")" << name
                        << "\"}";
}

} // namespace

TEST(Cli, SynthThenProbe) {
    ScratchDir tmp("cli_probe");
    write_spec(tmp / "spec.json", 0.9, "m");
    const auto synth = run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "dump"), tmp);
    ASSERT_EQ(synth.exit_code, 0) << synth.err;
    const auto probe = run_cli("probe --dump " + q(tmp / "dump") + " --out " + q(tmp / "out"), tmp);
    ASSERT_EQ(probe.exit_code, 0) << probe.err;
    const auto j = nlohmann::json::parse(probe.out);
    EXPECT_LE(j["law_fit"]["pearson_r"].get<double>(), -0.99);
    EXPECT_EQ(lp::report::read_text(tmp / "out" / "results.json"), probe.out);
    EXPECT_TRUE(lpt::fs::exists(tmp / "out" / "results.csv"));
}

TEST(Cli, ProbeFlagsAreEchoed) {
    ScratchDir tmp("cli_flags");
    write_spec(tmp / "spec.json", 0.9, "m");
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "dump"), tmp).exit_code, 0);
    const auto r = run_cli("probe --dump " + q(tmp / "dump") +
                               " --offset 1 --permute-vocab 7 --norm standardize --apply-last --layers 2..4"
                               " --batch-rows 100 --shards 3 --workers 2 --out " + q(tmp / "out"),
                           tmp);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto c = nlohmann::json::parse(r.out)["config"];
    EXPECT_EQ(c["target"]["permute_vocab"], 7);
    EXPECT_EQ(c["norm"]["override"]["kind"], "standardize");
    EXPECT_EQ(c["norm"]["override"]["apply_to_last_layer"], true);
    EXPECT_EQ(c["layers"], nlohmann::json::array({2, 4}));
    EXPECT_EQ(c["batch_rows"], 100);
    EXPECT_EQ(c["shards"], 3);
}

TEST(Cli, ValidateReportsCorruption) {
    ScratchDir tmp("cli_validate");
    write_spec(tmp / "spec.json", 0.9, "m");
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "dump"), tmp).exit_code, 0);
    const auto ok = run_cli("validate --dump " + q(tmp / "dump"), tmp);
    EXPECT_EQ(ok.exit_code, 0);
    EXPECT_EQ(nlohmann::json::parse(ok.out)["ok"], true);

    lpt::fs::resize_file(tmp / "dump" / "layer_3.bin", lpt::fs::file_size(tmp / "dump" / "layer_3.bin") - 4);
    const auto bad = run_cli("validate --dump " + q(tmp / "dump"), tmp);
    EXPECT_EQ(bad.exit_code, 2);
    const auto j = nlohmann::json::parse(bad.out);
    EXPECT_EQ(j["ok"], false);
    ASSERT_FALSE(j["violations"].empty());
    EXPECT_NE(j["violations"][0].get<std::string>().find("file length mismatch"), std::string::npos);

    const auto probe = run_cli("probe --dump " + q(tmp / "dump") + " --out " + q(tmp / "out"), tmp);
    EXPECT_EQ(probe.exit_code, 1);
    EXPECT_NE(probe.err.find("short layer file"), std::string::npos) << probe.err;
}

TEST(Cli, CompareNeedsTwoInputs) {
    ScratchDir tmp("cli_cmp1");
    write_spec(tmp / "spec.json", 0.9, "m");
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "dump"), tmp).exit_code, 0);
    const auto r = run_cli("compare " + q(tmp / "dump") + " --out " + q(tmp / "out"), tmp);
    EXPECT_EQ(r.exit_code, 2);
    EXPECT_EQ(nlohmann::json::parse(r.err)["error"], "UsageError");
}

TEST(Cli, CompareTwoDumps) {
    ScratchDir tmp("cli_cmp2");
    write_spec(tmp / "a.json", 0.9, "a");
    write_spec(tmp / "b.json", 0.95, "b");
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "a.json") + " --out " + q(tmp / "a"), tmp).exit_code, 0);
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "b.json") + " --out " + q(tmp / "b"), tmp).exit_code, 0);
    const auto r = run_cli("compare " + q(tmp / "a") + " " + q(tmp / "b") + " --out " + q(tmp / "out"), tmp);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(r.out.rfind("name,first_pr,last_pr,rho,overall_decay,pearson_r\na,", 0), 0u) << r.out;
    EXPECT_NE(r.out.find("\nb,"), std::string::npos);
}

TEST(Cli, PcaOnCollinearTokens) {
    ScratchDir tmp("cli_pca");
    auto m = lpt::simple_manifest(1, 3, 10, {6});
    Eigen::MatrixXd x(6, 3);
    for (int i = 0; i < 6; ++i) x.row(i) << i, i, i;
    lpt::write_matrix_dump(tmp / "dump", m, {{4, 4, 5, 5, 4, 4}}, {x});
    const auto r = run_cli("pca --dump " + q(tmp / "dump") + " --layer 1 --tokens 4,5 --out " + q(tmp / "out"), tmp);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    const auto j = nlohmann::json::parse(r.out);
    EXPECT_EQ(j["projections"][0]["explained_variance"][1].get<double>(), 0.0);
    EXPECT_TRUE(lpt::fs::exists(tmp / "out" / "coords.csv"));
}

TEST(Cli, DegenerateStatisticsExitThree) {
    ScratchDir tmp("cli_degen");
    auto m = lpt::simple_manifest(3, 2, 10, {12});
    lp::Rng rng(1);
    std::vector<Eigen::MatrixXd> mats(3, lpt::random_matrix(12, 2, rng));
    lpt::write_matrix_dump(tmp / "dump", m, {std::vector<std::uint32_t>(12, 6)}, mats);
    const auto r = run_cli("probe --dump " + q(tmp / "dump") + " --out " + q(tmp / "out"), tmp);
    EXPECT_EQ(r.exit_code, 3);
    const auto j = nlohmann::json::parse(r.err);
    EXPECT_EQ(j["error"], "DegenerateTarget");
    EXPECT_EQ(j["exit_code"], 3);
}

TEST(Cli, UsageErrorsExitTwo) {
    ScratchDir tmp("cli_usage");
    EXPECT_EQ(run_cli("", tmp).exit_code, 2);
    EXPECT_EQ(run_cli("probe", tmp).exit_code, 2);
    EXPECT_EQ(run_cli("probe --dump x --targets sideways", tmp).exit_code, 2);
    EXPECT_EQ(run_cli("probe --dump x --layers two", tmp).exit_code, 2);
    EXPECT_EQ(run_cli("probe --dump " + q(tmp / "nowhere"), tmp).exit_code, 1);
}

TEST(Cli, FuzzinessCommand) {
    ScratchDir tmp("cli_fuzz");
    std::ofstream(tmp / "spec.json") << R"({"num_layers": 3, "hidden_dim": 2, "num_rows": 2000, "vocab_size": 6,)"
                                     << R"( "pr": [0.5, 0.3, 0.1], "distractor_count": 0, "seed": 4})";
    ASSERT_EQ(run_cli("synth --spec " + q(tmp / "spec.json") + " --out " + q(tmp / "dump"), tmp).exit_code, 0);
    const auto r = run_cli("fuzziness --dump " + q(tmp / "dump") + " --out " + q(tmp / "out"), tmp);
    ASSERT_EQ(r.exit_code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out)["layers"].size(), 3u);
}
