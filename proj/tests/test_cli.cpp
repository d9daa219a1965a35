#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "meta/drift.hpp"
#include "meta/evalreport.hpp"

namespace fs = std::filesystem;

static int run_cmd(const std::string& args) {
    const std::string cmd = std::string(METARL_BIN) + " " + args + " > /dev/null 2>&1";
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

static std::string slurp(const fs::path& p) {
    std::ifstream is(p, std::ios::binary);
    REQUIRE(is);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

static void write_config(const fs::path& path, const fs::path& out_dir, int n_workers) {
    std::ofstream os(path);
    os << R"({
  "name": "cli_smoke",
  "algorithm": "lpo",
  "meta_method": "baseline",
  "train_dist": "grid_id",
  "test_dists": ["grid_id", "grid_ood"],
  "seeds": [0, 1],
  "base_opt_lr": 0.01,
  "output_dir": ")" << out_dir.string() << R"(",
  "n_workers": )" << n_workers << R"(,
  "ppo": {
    "n_envs": 2,
    "n_steps": 16,
    "total_timesteps": 128,
    "n_minibatches": 2,
    "n_epochs": 1,
    "hidden_widths": [8]
  }
})";
}

TEST_CASE("run: missing or malformed config exits nonzero") {
    CHECK(run_cmd("run /tmp/metarl_no_such_config.json") != 0);
    const fs::path bad = "/tmp/metarl_cli_bad.json";
    {
        std::ofstream os(bad);
        os << "{\"algorithm\": \"unknown_alg\"}";
    }
    CHECK(run_cmd("run " + bad.string()) != 0);
    fs::remove(bad);
    // no subcommand at all
    CHECK(run_cmd("") != 0);
}

TEST_CASE("run: baseline smoke produces records, curve, timing, and manifest") {
    const fs::path cfg = "/tmp/metarl_cli_cfg.json";
    const fs::path out = "/tmp/metarl_cli_out";
    fs::remove_all(out);
    write_config(cfg, out, 1);
    REQUIRE(run_cmd("run " + cfg.string()) == 0);
    CHECK(fs::exists(out / "records.csv"));
    CHECK(fs::exists(out / "curve.csv"));
    CHECK(fs::exists(out / "timing.csv"));
    CHECK(fs::exists(out / "manifest.json"));

    auto records = meta::load_records_csv((out / "records.csv").string());
    REQUIRE(records.size() == 4); // 2 dists x 2 seeds
    for (const auto& r : records) {
        CHECK(r.method == "baseline");
        CHECK(r.env_steps_consumed == 128);
        CHECK(r.wall_time_s == 0.0);
        if (r.env_id == "grid_id") CHECK(r.tag == meta::DistTag::InDist);
        if (r.env_id == "grid_ood") CHECK(r.tag == meta::DistTag::OutDist);
    }
    const std::string manifest = slurp(out / "manifest.json");
    CHECK(manifest.find("config_hash") != std::string::npos);
    CHECK(manifest.find("cli_smoke") != std::string::npos);

    SUBCASE("rerun is bit-identical, independent of worker count") {
        const fs::path out2 = "/tmp/metarl_cli_out2";
        const fs::path cfg2 = "/tmp/metarl_cli_cfg2.json";
        fs::remove_all(out2);
        write_config(cfg2, out2, 3);
        REQUIRE(run_cmd("run " + cfg2.string()) == 0);
        CHECK(slurp(out / "records.csv") == slurp(out2 / "records.csv"));
        CHECK(slurp(out / "curve.csv") == slurp(out2 / "curve.csv"));
        fs::remove_all(out2);
        fs::remove(cfg2);
    }

    SUBCASE("report normalizes the baseline to IQM 1 against itself") {
        // cartpole returns are strictly positive, so the per-env baseline mean
        // can never be zero on a short smoke run
        const fs::path ccfg = "/tmp/metarl_cli_cart_cfg.json";
        const fs::path cout_dir = "/tmp/metarl_cli_cart_out";
        fs::remove_all(cout_dir);
        {
            std::ofstream os(ccfg);
            os << R"({
  "name": "cli_cart",
  "meta_method": "baseline",
  "train_dist": "cartpole",
  "test_dists": ["cartpole"],
  "seeds": [0, 1],
  "output_dir": ")" << cout_dir.string() << R"(",
  "ppo": {
    "n_envs": 2,
    "n_steps": 16,
    "total_timesteps": 256,
    "n_minibatches": 2,
    "n_epochs": 1,
    "hidden_widths": [8]
  }
})";
        }
        REQUIRE(run_cmd("run " + ccfg.string()) == 0);
        const fs::path report = "/tmp/metarl_cli_report.csv";
        fs::remove(report);
        REQUIRE(run_cmd("report '" + (cout_dir / "records.csv").string() +
                        "' --baseline baseline --out " + report.string()) == 0);
        std::ifstream is(report);
        std::string header, line;
        std::getline(is, header);
        CHECK(header == "method,dist_tag,iqm,ci_lo,ci_hi,n_records,samples,train_wall_s");
        int rows = 0;
        while (std::getline(is, line)) {
            if (line.empty()) continue;
            ++rows;
            std::stringstream ls(line);
            std::string method, tag, iqm_s;
            std::getline(ls, method, ',');
            std::getline(ls, tag, ',');
            std::getline(ls, iqm_s, ',');
            CHECK(method == "baseline");
            // two seeds per stratum: the IQM of {a/mean, b/mean} is exactly 1
            CHECK(std::stod(iqm_s) == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(rows == 1); // cartpole only, in_dist
        fs::remove(report);
        fs::remove_all(cout_dir);
        fs::remove(ccfg);
    }

    fs::remove_all(out);
    fs::remove(cfg);
}

TEST_CASE("report: empty glob exits nonzero") {
    CHECK(run_cmd("report '/tmp/metarl_no_records_here/*.csv' --out /tmp/metarl_r.csv") != 0);
}

TEST_CASE("surface: writes the full (r, A) grid for a saved drift") {
    const fs::path artifact = "/tmp/metarl_cli_drift.json";
    const fs::path out = "/tmp/metarl_cli_surface.csv";
    meta::save_drift(meta::DriftFunction::ppo_clip(0.2), artifact.string());
    REQUIRE(run_cmd("surface " + artifact.string() + " --out " + out.string()) == 0);
    std::ifstream is(out);
    std::string line;
    std::getline(is, line);
    CHECK(line == "r,advantage,drift,ddrift_dr");
    int rows = 0;
    while (std::getline(is, line))
        if (!line.empty()) ++rows;
    CHECK(rows == 301 * 6);
    fs::remove(artifact);
    fs::remove(out);

    CHECK(run_cmd("surface /tmp/metarl_no_such_drift.json --out /tmp/metarl_s.csv") != 0);
}
