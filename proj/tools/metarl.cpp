#include "CLI11.hpp"

#include "meta/runconfig.hpp"

int main(int argc, char** argv) {
    CLI::App app{"metarl: meta-learned RL algorithms at desk scale"};
    app.require_subcommand(1);

    std::string config_path;
    auto* run = app.add_subcommand("run", "Execute one pipeline stage from a config file");
    run->add_option("config", config_path, "JSON run configuration")->required();

    std::string records_glob, baseline = "blackbox_es", report_out = "report.csv";
    auto* report = app.add_subcommand("report", "Aggregate run records into a report table");
    report->add_option("glob", records_glob, "Glob over record CSV files")->required();
    report->add_option("--baseline", baseline, "Method used for per-environment normalization");
    report->add_option("--out", report_out, "Output CSV path");

    std::string drift_artifact, surface_out;
    auto* surface = app.add_subcommand("surface", "Export a drift surface table");
    surface->add_option("drift-artifact", drift_artifact, "Saved drift function")->required();
    surface->add_option("--out", surface_out, "Output CSV path")->required();

    CLI11_PARSE(app, argc, argv);

    if (run->parsed()) return meta::cmd_run(config_path);
    if (report->parsed()) return meta::cmd_report(records_glob, baseline, report_out);
    return meta::cmd_surface(drift_artifact, surface_out);
}
