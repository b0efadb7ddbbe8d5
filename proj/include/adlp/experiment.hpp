#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "adlp/ensemble.hpp"
#include "adlp/io.hpp"
#include "adlp/scoring.hpp"
#include "adlp/simulate.hpp"
#include "adlp/smooth.hpp"

namespace adlp {

/// One row of the component registry: display name plus a fitting routine.
struct RegistryEntry {
    std::string name;
    std::function<std::shared_ptr<ComponentModel>(
        const ComponentInputs&, const std::vector<Cell>&)>
        fit;
};

/// The full component set in registry order: cross-classified, calendar and
/// Hoerl-curve GLMs under the three claim-size families, the two
/// payments-per-claim models, the zero-adjusted models, the penalized-spline
/// additive models and the varying-dispersion GAMLSS pair.
inline const std::vector<RegistryEntry>& model_registry() {
    static const std::vector<RegistryEntry> registry = [] {
        std::vector<RegistryEntry> r;
        auto add_glm = [&r](ModelStructure st, Family fam) {
            ModelSpec spec{st, fam};
            r.push_back({spec.name(),
                         [spec](const ComponentInputs& in,
                                const std::vector<Cell>& cells) {
                             return fit_glm_component(spec, in, cells);
                         }});
        };
        for (auto st : {ModelStructure::CC, ModelStructure::Cal, ModelStructure::HC})
            for (auto fam : {Family::ODP, Family::LogNormal, Family::Gamma})
                add_glm(st, fam);
        add_glm(ModelStructure::PPCI, Family::ODP);
        r.push_back({"PPCF-ODP", [](const ComponentInputs& in,
                                    const std::vector<Cell>& cells) {
                         return fit_ppcf(in, cells);
                     }});
        add_glm(ModelStructure::ZALN, Family::ZALN);
        add_glm(ModelStructure::ZAGA, Family::ZAGA);
        for (auto fam : {Family::Normal, Family::LogNormal, Family::Gamma}) {
            std::string name = std::string("SP-") + family_name(fam);
            r.push_back({name, [fam, name](const ComponentInputs& in,
                                           const std::vector<Cell>& cells) {
                             auto m = fit_pspline_additive(*in.paid, cells, fam);
                             return m.to_component(name);
                         }});
        }
        for (auto fam : {Family::LogNormal, Family::Gamma}) {
            std::string name = std::string("GAMLSS-") + family_name(fam);
            r.push_back({name, [fam, name](const ComponentInputs& in,
                                           const std::vector<Cell>& cells) {
                             auto m = fit_gamlss_lite(*in.paid, cells, fam);
                             return m.to_component(name);
                         }});
        }
        return r;
    }();
    return registry;
}

inline std::vector<std::string> all_model_names() {
    std::vector<std::string> names;
    for (const auto& e : model_registry()) names.push_back(e.name);
    return names;
}

inline std::vector<std::shared_ptr<ComponentModel>> fit_components(
    const std::vector<std::string>& names, const ComponentInputs& in,
    const std::vector<Cell>& cells) {
    std::vector<std::shared_ptr<ComponentModel>> out;
    for (const std::string& name : names) {
        const RegistryEntry* entry = nullptr;
        for (const auto& e : model_registry())
            if (e.name == name) entry = &e;
        if (!entry) throw ConfigError("unknown component model " + name);
        out.push_back(entry->fit(in, cells));
    }
    return out;
}

/// Experiment configuration, usually parsed from a JSON file.
struct ExperimentConfig {
    // Data source: either generated (possibly several datasets) or ingested.
    std::optional<SynthConfig> generate;
    int datasets = 1;
    std::filesystem::path paid_path, reported_path, finalised_path;

    std::vector<std::string> models;  // registry names
    PartitionStrategy partition{{}, 3};
    std::vector<std::string> strategies;  // BMV, EW, SLP, ADLP, Stacked
    int simulation_n = 1000;
    double simulation_q = 0.75;
    std::uint64_t seed = 1;
    std::filesystem::path out_dir = "results";

    void validate() const {
        if (models.empty()) throw ConfigError("no component models configured");
        if (strategies.empty()) throw ConfigError("no strategies configured");
        if (datasets < 1) throw ConfigError("need at least one dataset");
        if (!generate && !std::filesystem::exists(paid_path))
            throw ConfigError("missing input file " + paid_path.string());
    }
};

inline SynthConfig synth_from_json(const nlohmann::json& j) {
    SynthConfig cfg;
    cfg.size = j.value("size", cfg.size);
    cfg.base_level = j.value("base_level", cfg.base_level);
    cfg.accident_slope = j.value("accident_slope", cfg.accident_slope);
    cfg.hoerl_log = j.value("hoerl_log", cfg.hoerl_log);
    cfg.hoerl_lin = j.value("hoerl_lin", cfg.hoerl_lin);
    cfg.hoerl_interaction = j.value("hoerl_interaction", cfg.hoerl_interaction);
    cfg.inflation = j.value("inflation", cfg.inflation);
    cfg.severity_sigma = j.value("severity_sigma", cfg.severity_sigma);
    cfg.severity_gradient = j.value("severity_gradient", cfg.severity_gradient);
    cfg.zero_intercept = j.value("zero_intercept", cfg.zero_intercept);
    cfg.zero_slope = j.value("zero_slope", cfg.zero_slope);
    cfg.count_mean = j.value("count_mean", cfg.count_mean);
    cfg.closure_intercept = j.value("closure_intercept", cfg.closure_intercept);
    cfg.closure_slope = j.value("closure_slope", cfg.closure_slope);
    cfg.deterministic = j.value("deterministic", cfg.deterministic);
    cfg.seed = j.value("seed", cfg.seed);
    return cfg;
}

inline nlohmann::json synth_to_json(const SynthConfig& cfg) {
    return {{"size", cfg.size},
            {"base_level", cfg.base_level},
            {"accident_slope", cfg.accident_slope},
            {"hoerl_log", cfg.hoerl_log},
            {"hoerl_lin", cfg.hoerl_lin},
            {"hoerl_interaction", cfg.hoerl_interaction},
            {"inflation", cfg.inflation},
            {"severity_sigma", cfg.severity_sigma},
            {"severity_gradient", cfg.severity_gradient},
            {"zero_intercept", cfg.zero_intercept},
            {"zero_slope", cfg.zero_slope},
            {"count_mean", cfg.count_mean},
            {"closure_intercept", cfg.closure_intercept},
            {"closure_slope", cfg.closure_slope},
            {"deterministic", cfg.deterministic},
            {"seed", cfg.seed}};
}

inline ExperimentConfig config_from_json(const nlohmann::json& j) {
    ExperimentConfig cfg;
    if (j.contains("data")) {
        const auto& data = j.at("data");
        if (data.contains("generate")) {
            cfg.generate = synth_from_json(data.at("generate"));
            cfg.datasets = data.value("datasets", 1);
        } else if (data.contains("paths")) {
            const auto& p = data.at("paths");
            cfg.paid_path = p.value("paid", "");
            cfg.reported_path = p.value("reported", "");
            cfg.finalised_path = p.value("finalised", "");
        } else {
            throw ConfigError("data must specify either generate or paths");
        }
    } else {
        cfg.generate = SynthConfig{};
    }
    if (j.contains("models")) {
        if (j.at("models").is_string() && j.at("models") == "all")
            cfg.models = all_model_names();
        else
            cfg.models = j.at("models").get<std::vector<std::string>>();
    } else {
        cfg.models = all_model_names();
    }
    if (j.contains("partition")) {
        cfg.partition.validation_diagonals = j.at("partition").value("tau", 3);
        cfg.partition.split_points =
            j.at("partition").value("splits", std::vector<int>{});
    }
    cfg.strategies =
        j.value("strategies", std::vector<std::string>{"BMV", "EW", "SLP", "ADLP"});
    if (j.contains("simulation")) {
        cfg.simulation_n = j.at("simulation").value("N", 1000);
        cfg.simulation_q = j.at("simulation").value("q", 0.75);
    }
    cfg.seed = j.value("seed", std::uint64_t{1});
    cfg.out_dir = j.value("out", std::string("results"));
    return cfg;
}

/// One dataset's triangles; generated squares carry the unobserved lower
/// triangle used as ground truth.
struct DatasetBundle {
    std::string name;
    Triangle paid, reported, finalised;
    bool has_truth = false;
};

inline std::vector<DatasetBundle> load_datasets(const ExperimentConfig& cfg) {
    std::vector<DatasetBundle> out;
    if (cfg.generate) {
        for (int d = 0; d < cfg.datasets; ++d) {
            SynthConfig sc = *cfg.generate;
            sc.seed = cfg.seed + static_cast<std::uint64_t>(d);
            auto ds = generate_synthetic_dataset(sc);
            char name[32];
            std::snprintf(name, sizeof name, "dataset_%02d", d + 1);
            out.push_back({name, ds.paid, ds.reported, ds.finalised, true});
        }
    } else {
        auto needs = [&cfg](const std::string& prefix) {
            for (const auto& m : cfg.models)
                if (m.rfind(prefix, 0) == 0) return true;
            return false;
        };
        if (needs("PPCI") && cfg.reported_path.empty())
            throw ConfigError(
                "ingestion: PPCI requested but no reported count triangle given");
        if (needs("PPCF") &&
            (cfg.reported_path.empty() || cfg.finalised_path.empty()))
            throw ConfigError(
                "ingestion: PPCF requested but count triangles are missing");
        Triangle paid = read_triangle_csv(cfg.paid_path);
        Triangle reported =
            cfg.reported_path.empty() ? paid : read_triangle_csv(cfg.reported_path);
        Triangle finalised =
            cfg.finalised_path.empty() ? paid : read_triangle_csv(cfg.finalised_path);
        out.push_back({"dataset_01", paid, reported, finalised,
                       paid.full_square()});
    }
    return out;
}

/// Fitted combination strategies for one dataset, following the five-step
/// scheme: components fitted on training cells give validation predictions
/// and weights; components refitted on the whole upper triangle give the
/// out-of-sample predictive distributions under those weights.
struct StrategyFit {
    std::string name;
    Ensemble test_ensemble;  // refit components + validation weights
};

struct DatasetResult {
    std::string dataset;
    DataPartition partition;
    std::vector<StrategyFit> strategies;
    /// Out-of-sample log scores per strategy (calendar-then-accident order),
    /// only available when the lower triangle is known.
    std::map<std::string, ScoreSeries> out_scores;
    std::map<std::string, double> mean_out_score;
    std::map<std::string, double> central_reserve;
    std::map<std::string, double> reserve_quantile;
    double true_reserve = 0.0;
    bool has_truth = false;
};

inline DataPartition make_partition(const Triangle& tri,
                                    const PartitionStrategy& strategy) {
    auto part = split_train_val(tri, strategy.validation_diagonals);
    return assign_maturity_subsets(tri, std::move(part), strategy);
}

inline Ensemble strategy_weights(
    const std::string& strategy,
    const std::vector<std::shared_ptr<ComponentModel>>& val_components,
    const Triangle& tri, const DataPartition& part) {
    if (strategy == "SLP") return fit_slp(val_components, tri, part);
    if (strategy == "ADLP") return fit_adlp(val_components, tri, part);
    if (strategy == "EW") return fit_ew(val_components, part.triangle_size);
    if (strategy == "BMV") return select_bmv(val_components, tri, part);
    if (strategy == "Stacked") {
        auto l1 = build_level1(val_components, tri, part.validation);
        Ensemble e;
        e.components = val_components;
        e.weights.push_back(fit_stacked_mse(l1.mean, l1.observed));
        e.band_start = {1};
        e.band_end = {part.triangle_size};
        return e;
    }
    throw ConfigError("unknown strategy " + strategy);
}

/// Runs the per-dataset pipeline for every configured strategy.
inline DatasetResult run_dataset(const ExperimentConfig& cfg,
                                 const DatasetBundle& data,
                                 bool simulate_reserves = true) {
    DatasetResult res;
    res.dataset = data.name;
    res.has_truth = data.has_truth;
    res.partition = make_partition(data.paid, cfg.partition);
    const ComponentInputs inputs{&data.paid, &data.reported, &data.finalised};

    auto val_components = fit_components(cfg.models, inputs, res.partition.train);
    // Step 5: refit on the whole upper triangle before out-of-sample use.
    auto full_components =
        fit_components(cfg.models, inputs, data.paid.upper_cells());

    const auto lower = data.paid.lower_cells();
    for (const std::string& strategy : cfg.strategies) {
        Ensemble weights_fit =
            strategy_weights(strategy, val_components, data.paid, res.partition);
        StrategyFit fit;
        fit.name = strategy;
        fit.test_ensemble = weights_fit;
        fit.test_ensemble.components = full_components;
        res.strategies.push_back(fit);

        if (data.has_truth) {
            auto series =
                log_scores(fit.test_ensemble, data.paid, lower, strategy);
            res.mean_out_score[strategy] = mean_log_score(series);
            res.out_scores[strategy] = std::move(series);
        }
        if (simulate_reserves) {
            auto reserve = simulate_reserve_quantile(
                fit.test_ensemble, lower, cfg.simulation_n, cfg.simulation_q,
                cfg.seed);
            res.central_reserve[strategy] = reserve.central;
            res.reserve_quantile[strategy] = reserve.quantile_estimate;
        }
    }
    if (data.has_truth)
        for (const Cell& c : lower) res.true_reserve += data.paid.at(c);
    return res;
}

/// In-memory report bundle: files are materialized only after the whole run
/// succeeds, so a failing stage leaves no partial outputs.
struct ReportBundle {
    std::map<std::string, std::string> files;  // relative name -> contents

    void write(const std::filesystem::path& dir) const {
        std::filesystem::create_directories(dir);
        for (const auto& [name, contents] : files) {
            std::ofstream out(dir / name);
            if (!out) throw IoError("cannot write " + (dir / name).string());
            out << contents;
        }
    }
};

struct ExperimentResult {
    std::vector<DatasetResult> datasets;
    ReportBundle reports;
};

namespace detail {

inline std::string weights_csv(const std::vector<DatasetResult>& results) {
    std::string out = "dataset,strategy,subset,model,weight\n";
    for (const auto& res : results)
        for (const auto& s : res.strategies)
            for (int k = 0; k < s.test_ensemble.bands(); ++k)
                for (size_t m = 0; m < s.test_ensemble.components.size(); ++m)
                    out += res.dataset + "," + s.name + "," + std::to_string(k + 1) +
                           "," + s.test_ensemble.components[m]->name() + "," +
                           format_value(s.test_ensemble.weights[k][static_cast<int>(m)]) +
                           "\n";
    return out;
}

inline std::string scores_csv(const std::vector<DatasetResult>& results) {
    std::string out = "dataset,strategy,metric,value\n";
    std::map<std::string, std::pair<double, int>> pooled;
    for (const auto& res : results)
        for (const auto& [strategy, score] : res.mean_out_score) {
            out += res.dataset + "," + strategy + ",mean_log_score," +
                   format_value(score) + "\n";
            pooled[strategy].first += score;
            ++pooled[strategy].second;
        }
    for (const auto& [strategy, acc] : pooled)
        out += "pooled," + strategy + ",mean_log_score," +
               format_value(acc.first / acc.second) + "\n";
    return out;
}

inline std::string reserves_csv(const std::vector<DatasetResult>& results,
                                double q) {
    std::string out = "dataset,strategy,metric,value\n";
    for (const auto& res : results) {
        for (const auto& [strategy, central] : res.central_reserve) {
            out += res.dataset + "," + strategy + ",central_reserve," +
                   format_value(central) + "\n";
            out += res.dataset + "," + strategy + ",reserve_q" +
                   format_value(100.0 * q) + "," +
                   format_value(res.reserve_quantile.at(strategy)) + "\n";
            if (res.has_truth) {
                out += res.dataset + "," + strategy + ",reserve_bias," +
                       format_value(reserve_bias(central, res.true_reserve)) + "\n";
            }
        }
        if (res.has_truth)
            out += res.dataset + ",truth,true_reserve," +
                   format_value(res.true_reserve) + "\n";
    }
    return out;
}

inline std::string tests_csv(const std::vector<DatasetResult>& results,
                             const std::string& baseline) {
    std::string out = "dataset,strategy,test,statistic,reject\n";
    for (const auto& res : results) {
        if (!res.has_truth) continue;
        auto base = res.out_scores.find(baseline);
        if (base == res.out_scores.end()) continue;
        for (const auto& [strategy, series] : res.out_scores) {
            if (strategy == baseline) continue;
            auto dm = dm_test(series.scores, base->second.scores);
            auto adj = adjusted_dm_test(series.scores, base->second.scores);
            out += res.dataset + "," + strategy + ",dm_vs_" + baseline + "," +
                   format_value(dm.statistic) + "," +
                   (dm.degenerate ? "degenerate" : (dm.reject ? "1" : "0")) + "\n";
            out += res.dataset + "," + strategy + ",adjusted_dm_vs_" + baseline +
                   "," + format_value(adj.statistic) + "," +
                   (adj.degenerate ? "degenerate" : (adj.reject ? "1" : "0")) +
                   "\n";
        }
    }
    return out;
}

inline std::string ap_scores_csv(const std::vector<DatasetResult>& results) {
    std::string out = "dataset,strategy,accident,mean_log_score\n";
    for (const auto& res : results)
        for (const auto& [strategy, series] : res.out_scores)
            for (const auto& [ap, score] : log_score_by_ap(series))
                out += res.dataset + "," + strategy + "," + std::to_string(ap) +
                       "," + format_value(score) + "\n";
    return out;
}

}  // namespace detail

/// Full experiment: every dataset through the pipeline, then the report
/// bundle (scores, weights, reserves, tests, per-AP scores, manifest).
inline ExperimentResult run_experiment(const ExperimentConfig& cfg,
                                       bool simulate_reserves = true) {
    cfg.validate();
    ExperimentResult result;
    for (const auto& data : load_datasets(cfg)) {
        try {
            result.datasets.push_back(run_dataset(cfg, data, simulate_reserves));
        } catch (const NumericError& err) {
            throw NumericError("dataset " + data.name + ": " + err.what());
        } catch (const ConfigError& err) {
            throw ConfigError("dataset " + data.name + ": " + err.what());
        }
    }

    result.reports.files["scores.csv"] = detail::scores_csv(result.datasets);
    result.reports.files["weights.csv"] = detail::weights_csv(result.datasets);
    result.reports.files["reserves.csv"] =
        detail::reserves_csv(result.datasets, cfg.simulation_q);
    result.reports.files["tests.csv"] =
        detail::tests_csv(result.datasets, cfg.strategies.front());
    result.reports.files["ap_scores.csv"] =
        detail::ap_scores_csv(result.datasets);

    nlohmann::json manifest{{"seed", cfg.seed},
                            {"datasets", cfg.datasets},
                            {"models", cfg.models},
                            {"strategies", cfg.strategies},
                            {"tau", cfg.partition.validation_diagonals},
                            {"splits", cfg.partition.split_points},
                            {"simulation_n", cfg.simulation_n},
                            {"simulation_q", cfg.simulation_q},
                            {"format_version", 1}};
    if (cfg.generate) manifest["generate"] = synth_to_json(*cfg.generate);
    result.reports.files["manifest.json"] = manifest.dump(2) + "\n";
    return result;
}

/// Sweeps ADLP two-subset split points: one row per split plus the SLP
/// baseline, pooled across the configured datasets.
inline std::string sweep_split_points(const ExperimentConfig& cfg,
                                      const std::vector<int>& splits) {
    cfg.validate();
    std::string out = "strategy,split,mean_log_score\n";
    std::map<int, double> split_total;
    double slp_total = 0.0;
    int count = 0;

    for (const auto& data : load_datasets(cfg)) {
        auto base_part = make_partition(data.paid, {{}, cfg.partition.validation_diagonals});
        const ComponentInputs inputs{&data.paid, &data.reported, &data.finalised};
        auto val_components =
            fit_components(cfg.models, inputs, base_part.train);
        auto full_components =
            fit_components(cfg.models, inputs, data.paid.upper_cells());
        const auto lower = data.paid.lower_cells();

        auto score_with = [&](const DataPartition& part, bool adlp) {
            Ensemble e = adlp ? fit_adlp(val_components, data.paid, part)
                              : fit_slp(val_components, data.paid, part);
            e.components = full_components;
            return mean_log_score(log_scores(e, data.paid, lower, "sweep"));
        };

        slp_total += score_with(base_part, false);
        for (int split : splits) {
            auto part = make_partition(
                data.paid, {{split}, cfg.partition.validation_diagonals});
            split_total[split] += score_with(part, true);
        }
        ++count;
    }

    for (const auto& [split, total] : split_total)
        out += "ADLP," + std::to_string(split) + "," +
               format_value(total / count) + "\n";
    out += "SLP,," + format_value(slp_total / count) + "\n";
    return out;
}

}  // namespace adlp
