#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "adlp/experiment.hpp"

namespace {

using adlp::ConfigError;
using adlp::IoError;
using adlp::NumericError;

nlohmann::json load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& err) {
        throw ConfigError("invalid config " + path.string() + ": " + err.what());
    }
}

adlp::ExperimentConfig make_config(const std::filesystem::path& config_path,
                                   std::optional<std::uint64_t> seed,
                                   const std::string& out_dir) {
    auto cfg = adlp::config_from_json(load_config(config_path));
    if (seed) cfg.seed = *seed;
    if (!out_dir.empty()) cfg.out_dir = out_dir;
    return cfg;
}

void write_file(const std::filesystem::path& path, const std::string& contents) {
    std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << contents;
}

void cmd_generate(const adlp::ExperimentConfig& cfg) {
    if (!cfg.generate) throw ConfigError("generate requires a data.generate block");
    for (const auto& data : adlp::load_datasets(cfg)) {
        const auto dir = cfg.out_dir / data.name;
        std::filesystem::create_directories(dir);
        adlp::write_triangle_csv(dir / "paid.csv", data.paid);
        adlp::write_triangle_csv(dir / "reported.csv", data.reported);
        adlp::write_triangle_csv(dir / "finalised.csv", data.finalised);
        adlp::SynthConfig sc = *cfg.generate;
        sc.seed = cfg.seed;
        nlohmann::json meta{{"seed", cfg.seed},
                            {"dataset", data.name},
                            {"config", adlp::synth_to_json(sc)}};
        write_file(dir / "meta.json", meta.dump(2) + "\n");
        std::cout << "wrote " << dir.string() << "\n";
    }
}

void cmd_fit(const adlp::ExperimentConfig& cfg) {
    cfg.validate();
    std::string out = "dataset,model,mean_validation_log_score\n";
    for (const auto& data : adlp::load_datasets(cfg)) {
        auto part = adlp::make_partition(data.paid, cfg.partition);
        const adlp::ComponentInputs inputs{&data.paid, &data.reported,
                                           &data.finalised};
        auto components = adlp::fit_components(cfg.models, inputs, part.train);
        auto l1 = adlp::build_level1(components, data.paid, part.validation);
        const Eigen::VectorXd scores = l1.log_density.colwise().mean();
        for (int m = 0; m < scores.size(); ++m)
            out += data.name + "," + l1.names[m] + "," +
                   adlp::format_value(scores[m]) + "\n";
    }
    write_file(cfg.out_dir / "components.csv", out);
    std::cout << "wrote " << (cfg.out_dir / "components.csv").string() << "\n";
}

void cmd_ensemble(const adlp::ExperimentConfig& cfg) {
    cfg.validate();
    const std::string strategy = cfg.strategies.front();
    std::string out = "subset,model,weight\n";
    for (const auto& data : adlp::load_datasets(cfg)) {
        auto part = adlp::make_partition(data.paid, cfg.partition);
        const adlp::ComponentInputs inputs{&data.paid, &data.reported,
                                           &data.finalised};
        auto components = adlp::fit_components(cfg.models, inputs, part.train);
        auto e = adlp::strategy_weights(strategy, components, data.paid, part);
        for (int k = 0; k < e.bands(); ++k)
            for (size_t m = 0; m < e.components.size(); ++m)
                out += std::to_string(k + 1) + "," + e.components[m]->name() +
                       "," +
                       adlp::format_value(e.weights[k][static_cast<int>(m)]) +
                       "\n";
        break;  // weight export is defined for a single dataset
    }
    write_file(cfg.out_dir / "weights.csv", out);
    std::cout << "wrote " << (cfg.out_dir / "weights.csv").string() << "\n";
}

void cmd_evaluate(const adlp::ExperimentConfig& cfg) {
    auto result = adlp::run_experiment(cfg);
    result.reports.write(cfg.out_dir);
    nlohmann::json stamp{{"completed_at_unix",
                          static_cast<std::int64_t>(std::time(nullptr))}};
    write_file(cfg.out_dir / "timestamp.json", stamp.dump(2) + "\n");
    std::cout << "wrote reports to " << cfg.out_dir.string() << "\n";
}

void cmd_sweep(const adlp::ExperimentConfig& cfg, std::vector<int> splits) {
    if (splits.empty())
        for (int s = 3; s <= 33; s += 2) splits.push_back(s);
    write_file(cfg.out_dir / "sweep.csv", adlp::sweep_split_points(cfg, splits));
    std::cout << "wrote " << (cfg.out_dir / "sweep.csv").string() << "\n";
}

void cmd_report(const adlp::ExperimentConfig& cfg) {
    const auto path = cfg.out_dir / "scores.csv";
    std::ifstream in(path);
    if (!in) throw IoError("no scores.csv under " + cfg.out_dir.string() +
                           "; run evaluate first");
    std::string line;
    std::getline(in, line);  // header
    std::cout << "strategy mean log scores (pooled):\n";
    while (std::getline(in, line)) {
        if (line.rfind("pooled,", 0) == 0) {
            std::stringstream ss(line);
            std::string field, strategy, metric, value;
            std::getline(ss, field, ',');
            std::getline(ss, strategy, ',');
            std::getline(ss, metric, ',');
            std::getline(ss, value, ',');
            std::cout << "  " << strategy << ": " << value << "\n";
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"ADLP ensemble loss reserving"};
    app.require_subcommand(1);

    std::string config_path;
    std::string out_dir;
    std::optional<std::uint64_t> seed;
    std::vector<int> splits;

    auto add_common = [&](CLI::App* sub, bool need_config) {
        auto* opt = sub->add_option("-c,--config", config_path, "JSON config file");
        if (need_config) opt->required();
        sub->add_option("--seed", seed, "override the config seed");
        sub->add_option("--out", out_dir, "output directory root");
    };

    auto* generate = app.add_subcommand("generate", "generate synthetic datasets");
    add_common(generate, true);
    auto* fit = app.add_subcommand("fit", "fit component models");
    add_common(fit, true);
    auto* ensemble = app.add_subcommand("ensemble", "fit combination weights");
    add_common(ensemble, true);
    auto* evaluate = app.add_subcommand("evaluate", "run the full experiment");
    add_common(evaluate, true);
    auto* sweep = app.add_subcommand("sweep", "sweep ADLP split points");
    add_common(sweep, true);
    sweep->add_option("--splits", splits, "split points to sweep");
    auto* report = app.add_subcommand("report", "summarize an evaluate run");
    add_common(report, false);

    CLI11_PARSE(app, argc, argv);

    try {
        if (report->parsed() && config_path.empty()) {
            adlp::ExperimentConfig cfg;
            cfg.out_dir = out_dir.empty() ? "results" : out_dir;
            cmd_report(cfg);
            return 0;
        }
        auto cfg = make_config(config_path, seed, out_dir);
        if (generate->parsed()) cmd_generate(cfg);
        else if (fit->parsed()) cmd_fit(cfg);
        else if (ensemble->parsed()) cmd_ensemble(cfg);
        else if (evaluate->parsed()) cmd_evaluate(cfg);
        else if (sweep->parsed()) cmd_sweep(cfg, splits);
        else if (report->parsed()) cmd_report(cfg);
    } catch (const ConfigError& err) {
        std::cerr << "config error: " << err.what() << "\n";
        return 1;
    } catch (const NumericError& err) {
        std::cerr << "numerical failure: " << err.what() << "\n";
        return 2;
    } catch (const IoError& err) {
        std::cerr << "i/o error: " << err.what() << "\n";
        return 3;
    }
    return 0;
}
