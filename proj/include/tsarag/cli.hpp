#pragma once

#include <chrono>
#include <cstdint>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "tsarag/agents.hpp"
#include "tsarag/dataio.hpp"
#include "tsarag/error.hpp"
#include "tsarag/missingness.hpp"
#include "tsarag/remote.hpp"
#include "tsarag/task.hpp"

namespace tsarag::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 1;
inline constexpr int kExitRuntime = 2;

/// Loads (or synthesizes) the dataset an experiment config points at.
inline agents::Dataset load_dataset(const dataio::ExperimentConfig& cfg) {
    std::optional<dataio::CsvSeries> csv;
    std::vector<int> synthetic_labels;
    if (!cfg.data_path.empty()) {
        csv = dataio::read_csv(cfg.data_path);
    } else {
        dataio::SyntheticSpec spec;
        if (cfg.synthetic) {
            spec = *cfg.synthetic;
        } else {
            spec.generator = dataio::default_generator(cfg.task);
            spec.seed = cfg.seed;
        }
        auto gen = dataio::gen_synthetic(spec);
        csv = dataio::CsvSeries{gen.data, MaskMatrix::all_observed(gen.data.num_series(), gen.data.num_timestamps())};
        synthetic_labels = std::move(gen.labels);
    }
    agents::Dataset ds{csv->data, std::nullopt, std::nullopt, std::nullopt};
    const bool has_holes = csv->mask.missing_count() > 0;

    if (cfg.task == TaskKind::Impute) {
        if (!cfg.mask_path.empty()) {
            ds.mask = dataio::read_mask_csv(cfg.mask_path);
            if (has_holes) {
                ds.known = csv->mask;
            }
        } else {
            // artificial missingness on top of whatever the file already lacks
            const MaskMatrix drop =
                missingness::generate(cfg.missing, ds.data.num_series(), ds.data.num_timestamps());
            Matrix flags = drop.flags();
            for (std::size_t k = 0; k < flags.size(); ++k) {
                flags.flat()[k] *= csv->mask.flags().flat()[k];
            }
            ds.mask = MaskMatrix(std::move(flags));
            if (has_holes) {
                ds.known = csv->mask;
            }
        }
        return ds;
    }
    if (has_holes) {
        detail::fail(ErrorKind::InvalidArgument, "data file has empty cells; only the impute task accepts gaps");
    }
    if (cfg.task == TaskKind::Anomaly) {
        if (!cfg.labels_path.empty()) {
            ds.anomaly_labels = dataio::read_labels_csv(cfg.labels_path);
        } else if (!synthetic_labels.empty() && cfg.data_path.empty()) {
            ds.anomaly_labels = synthetic_labels;
        }
    }
    return ds;
}

/// Canonical request text for a direct subcommand; it routes to `kind`.
inline std::string canonical_request(TaskKind kind) {
    switch (kind) {
    case TaskKind::Forecast: return "forecast the next steps";
    case TaskKind::Impute: return "impute the gaps";
    case TaskKind::Anomaly: return "detect anomalies";
    case TaskKind::Classify: return "classify regimes";
    }
    return "forecast";
}

/// Runs one experiment end to end and returns the response.
inline agents::TaskResponse run_experiment(const dataio::ExperimentConfig& cfg, const std::string& request_text) {
    dataio::validate_config(cfg);
    agents::SubAgentConfig sub;
    sub.model.tau = cfg.tau;
    sub.model.nu = cfg.nu;
    sub.model.pool = cfg.pool;
    sub.model.hyper = cfg.hyper;
    sub.model.hyper.seed = cfg.seed;
    sub.params.tau = cfg.tau;
    sub.params.nu = cfg.nu;
    sub.params.w_a = cfg.w_a;
    sub.params.clusters = cfg.clusters;
    sub.params.split_ratio = cfg.split_ratio;
    sub.params.cluster_raw = cfg.cluster_raw;

    agents::Registry registry;
    for (TaskKind k : kAllTasks) {
        registry.specialized[k] = sub;
    }
    registry.universal = sub;
    registry.seed = cfg.seed;
    const agents::Dataset dataset = load_dataset(cfg);
    registry.resolve = [&dataset](const std::string&) { return dataset; };
    if (cfg.model_url) {
        const std::string url = *cfg.model_url;
        const auto timeout = std::chrono::milliseconds(cfg.remote_timeout_ms);
        registry.factory = [url, timeout](TaskKind) { return std::make_unique<agents::RemoteModel>(url, timeout); };
    }

    agents::SharedBackbone shared;
    if (!cfg.pool_file.empty() && std::filesystem::exists(cfg.pool_file)) {
        auto [pool, proj] = dataio::pool_from_json(dataio::json::parse(dataio::read_file(cfg.pool_file)));
        shared.pool = std::move(pool);
        shared.proj = std::move(proj);
    }
    agents::TaskRequest req{request_text, cfg.data_path, {}};
    auto resp = agents::handle(req, registry, cfg.ablation, &shared);
    if (!cfg.pool_file.empty() && shared.pool && shared.proj) {
        dataio::write_file(cfg.pool_file, dataio::pool_to_json(*shared.pool, *shared.proj).dump() + "\n");
    }
    return resp;
}

inline void print_summary(std::ostream& out, const agents::TaskResponse& resp, const std::filesystem::path& dir) {
    out << to_string(resp.kind) << ":";
    if (resp.metrics.empty()) {
        out << " (no labels, metrics not computed)";
    }
    for (const auto& [name, value] : resp.metrics) {
        out << " " << name << "=" << value;
    }
    out << "\nresults written to " << dir.string() << "\n";
}

namespace detail {

using tsarag::detail::fail;
using tsarag::detail::require;

/// Flags shared by the four task subcommands and `ask --execute`.
struct RunFlags {
    std::string config;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> data;
    std::optional<std::string> mask;
    std::optional<std::string> labels;
    std::optional<std::string> model_url;
    std::optional<std::size_t> tau;
    std::optional<std::size_t> nu;
    std::optional<std::size_t> w_a;
    std::optional<std::size_t> clusters;
    std::optional<std::size_t> epochs;
    std::optional<double> lr;
    std::optional<std::string> generator;
    std::optional<std::string> missing_pattern;
    std::optional<double> missing_rate;
    std::optional<double> block_len;
    std::optional<std::string> pool_file;
    bool no_pool{false};
    bool universal_agent{false};
    bool no_train{false};
    bool no_dpo{false};
    bool cluster_raw{false};
};

inline void add_run_flags(CLI::App& cmd, RunFlags& f) {
    cmd.add_option("--config", f.config, "experiment config (JSON)");
    cmd.add_option("--seed", f.seed, "global seed");
    cmd.add_option("--out", f.out, "output directory");
    cmd.add_option("--data", f.data, "input CSV (rows = timestamps, header = series ids)");
    cmd.add_option("--mask", f.mask, "availability mask CSV for imputation");
    cmd.add_option("--labels", f.labels, "anomaly label CSV (t,label)");
    cmd.add_option("--model-url", f.model_url, "remote model endpoint (overrides $TSARAG_MODEL_URL)");
    cmd.add_option("--tau", f.tau, "input window length");
    cmd.add_option("--nu", f.nu, "horizon");
    cmd.add_option("--w-a", f.w_a, "anomaly moving-average window");
    cmd.add_option("--clusters", f.clusters, "number of regimes (default: elbow over 2..6)");
    cmd.add_option("--epochs", f.epochs, "training epochs");
    cmd.add_option("--lr", f.lr, "learning rate");
    cmd.add_option("--generator", f.generator, "synthetic generator when no --data is given")
        ->check(CLI::IsMember({"seasonal_sines", "regime_switch", "ar1_spikes"}));
    cmd.add_option("--missing-pattern", f.missing_pattern, "point|block|spatial|temporal")
        ->check(CLI::IsMember({"point", "block", "spatial", "temporal"}));
    cmd.add_option("--missing-rate", f.missing_rate, "fraction of entries to drop");
    cmd.add_option("--block-len", f.block_len, "mean missing block length");
    cmd.add_option("--pool-file", f.pool_file, "prompt pool dump shared across runs");
    cmd.add_flag("--no-pool", f.no_pool, "bypass prompt retrieval");
    cmd.add_flag("--universal-agent", f.universal_agent, "one shared model for every task");
    cmd.add_flag("--no-train", f.no_train, "skip training");
    cmd.add_flag("--no-dpo", f.no_dpo, "skip preference alignment");
    cmd.add_flag("--cluster-raw", f.cluster_raw, "cluster unstandardized values");
}

inline dataio::ExperimentConfig resolve_config(const RunFlags& f, TaskKind task) {
    dataio::ExperimentConfig cfg = f.config.empty() ? dataio::ExperimentConfig{} : dataio::load_config(f.config);
    cfg.task = task;
    if (f.seed) {
        cfg.set_seed(*f.seed);
        if (cfg.synthetic) {
            cfg.synthetic->seed = *f.seed;
        }
    }
    if (f.out) cfg.out_dir = *f.out;
    if (f.data) cfg.data_path = *f.data;
    if (f.mask) cfg.mask_path = *f.mask;
    if (f.labels) cfg.labels_path = *f.labels;
    if (f.tau) cfg.tau = *f.tau;
    if (f.nu) cfg.nu = *f.nu;
    if (f.w_a) cfg.w_a = *f.w_a;
    if (f.clusters) cfg.clusters = *f.clusters;
    if (f.epochs) cfg.hyper.epochs = *f.epochs;
    if (f.lr) cfg.hyper.lr = *f.lr;
    if (f.generator) {
        dataio::SyntheticSpec spec = cfg.synthetic.value_or(dataio::SyntheticSpec{});
        if (!cfg.synthetic) {
            spec.seed = cfg.seed;
        }
        spec.generator = dataio::parse_generator(*f.generator);
        cfg.synthetic = spec;
    }
    if (f.missing_pattern) cfg.missing.pattern = missingness::parse_pattern(*f.missing_pattern);
    if (f.missing_rate) cfg.missing.rate = *f.missing_rate;
    if (f.block_len) cfg.missing.mean_block_len = *f.block_len;
    if (f.pool_file) cfg.pool_file = *f.pool_file;
    cfg.ablation.no_pool = cfg.ablation.no_pool || f.no_pool;
    cfg.ablation.universal_agent = cfg.ablation.universal_agent || f.universal_agent;
    cfg.ablation.no_train = cfg.ablation.no_train || f.no_train;
    cfg.ablation.no_dpo = cfg.ablation.no_dpo || f.no_dpo;
    cfg.cluster_raw = cfg.cluster_raw || f.cluster_raw;
    if (auto url = remote::resolve_model_url(f.model_url ? f.model_url : cfg.model_url)) {
        cfg.model_url = url;
    }
    dataio::validate_config(cfg);
    return cfg;
}

inline int run_and_write(const RunFlags& f, TaskKind task, const std::string& text, std::ostream& out) {
    const auto cfg = resolve_config(f, task);
    const auto resp = run_experiment(cfg, text);
    dataio::write_results(resp, cfg, cfg.out_dir);
    print_summary(out, resp, cfg.out_dir);
    return kExitOk;
}

}  // namespace detail

/// Entry point of the `tsarag` tool. Exit codes: 0 success, 1 usage error,
/// 2 runtime error (one-line diagnostic on `err`).
inline int cli_main(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
    CLI::App app{"Agentic time series analysis with retrieval-augmented prompt pools", "tsarag"};
    app.require_subcommand(1);

    struct TaskCommand {
        TaskKind kind;
        CLI::App* cmd;
        detail::RunFlags flags;
    };
    std::vector<std::unique_ptr<TaskCommand>> task_cmds;
    for (TaskKind k : kAllTasks) {
        auto tc = std::make_unique<TaskCommand>();
        tc->kind = k;
        tc->cmd = app.add_subcommand(std::string(wire_name(k)), "run the " + std::string(wire_name(k)) + " sub-agent");
        detail::add_run_flags(*tc->cmd, tc->flags);
        task_cmds.push_back(std::move(tc));
    }

    auto* ask = app.add_subcommand("ask", "route a free-text request (and optionally run it)");
    std::string ask_text;
    bool ask_execute = false;
    detail::RunFlags ask_flags;
    ask->add_option("--text", ask_text, "request text")->required();
    ask->add_flag("--execute", ask_execute, "run the routed sub-agent and write results");
    detail::add_run_flags(*ask, ask_flags);

    auto* gen = app.add_subcommand("gen-synthetic", "write a synthetic dataset as CSV");
    std::string gen_name = "seasonal_sines";
    dataio::SyntheticSpec gen_spec;
    std::string gen_out;
    std::string gen_labels_out;
    gen->add_option("--generator", gen_name, "seasonal_sines|regime_switch|ar1_spikes")
        ->check(CLI::IsMember({"seasonal_sines", "regime_switch", "ar1_spikes"}));
    gen->add_option("--n", gen_spec.n, "number of series");
    gen->add_option("--t", gen_spec.t, "number of timestamps");
    gen->add_option("--noise", gen_spec.noise, "noise sigma");
    gen->add_option("--seed", gen_spec.seed, "seed");
    gen->add_option("--segments", gen_spec.segments, "ar1_spikes: anomaly segments");
    gen->add_option("--regime-length", gen_spec.regime_length, "regime_switch: steps per regime");
    gen->add_option("--out", gen_out, "output CSV")->required();
    gen->add_option("--labels-out", gen_labels_out, "label CSV (regime_switch, ar1_spikes)");

    auto* mask_cmd = app.add_subcommand("mask", "write a missingness mask CSV");
    missingness::MissingSpec mask_spec;
    std::string mask_pattern = "point";
    std::string mask_data;
    std::size_t mask_n = 0;
    std::size_t mask_t = 0;
    std::string mask_out;
    mask_cmd->add_option("--pattern", mask_pattern, "point|block|spatial|temporal")
        ->check(CLI::IsMember({"point", "block", "spatial", "temporal"}));
    mask_cmd->add_option("--rate", mask_spec.rate, "missing rate");
    mask_cmd->add_option("--block-len", mask_spec.mean_block_len, "mean block length");
    mask_cmd->add_option("--width", mask_spec.spatial_width, "spatial block width");
    mask_cmd->add_option("--seed", mask_spec.seed, "seed");
    mask_cmd->add_option("--data", mask_data, "take N, T and series ids from this CSV");
    mask_cmd->add_option("--n", mask_n, "number of series (without --data)");
    mask_cmd->add_option("--t", mask_t, "number of timestamps (without --data)");
    mask_cmd->add_option("--out", mask_out, "output CSV")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& e) {
        err << "error: " << e.what() << "\n" << app.help();
        return kExitUsage;
    }

    try {
        for (auto& tc : task_cmds) {
            if (tc->cmd->parsed()) {
                return detail::run_and_write(tc->flags, tc->kind, canonical_request(tc->kind), out);
            }
        }
        if (ask->parsed()) {
            const TaskKind kind = agents::route({ask_text, "", {}});
            out << to_string(kind) << "\n";
            if (ask_execute) {
                return detail::run_and_write(ask_flags, kind, ask_text, out);
            }
            return kExitOk;
        }
        if (gen->parsed()) {
            gen_spec.generator = dataio::parse_generator(gen_name);
            const auto data = dataio::gen_synthetic(gen_spec);
            dataio::write_csv(gen_out, data.data);
            if (!gen_labels_out.empty()) {
                detail::require(!data.labels.empty(), ErrorKind::InvalidSpec, gen_name + " produces no labels");
                dataio::write_file(gen_labels_out, dataio::format_labels_csv(data.labels));
            }
            out << "wrote " << gen_out << " (" << data.data.num_series() << " series × "
                << data.data.num_timestamps() << " timestamps)\n";
            return kExitOk;
        }
        if (mask_cmd->parsed()) {
            mask_spec.pattern = missingness::parse_pattern(mask_pattern);
            std::vector<std::string> ids;
            if (!mask_data.empty()) {
                const auto csv = dataio::read_csv(mask_data);
                mask_n = csv.data.num_series();
                mask_t = csv.data.num_timestamps();
                ids = csv.data.series_ids();
            } else {
                detail::require(mask_n >= 1 && mask_t >= 1, ErrorKind::InvalidArgument,
                                "mask needs --data or both --n and --t");
                for (std::size_t i = 0; i < mask_n; ++i) {
                    ids.push_back("s" + std::to_string(i));
                }
            }
            const MaskMatrix m = missingness::generate(mask_spec, mask_n, mask_t);
            dataio::write_file(mask_out, dataio::format_mask_csv(m, ids));
            out << "wrote " << mask_out << " (missing fraction " << m.missing_fraction() << ")\n";
            return kExitOk;
        }
    } catch (const std::exception& e) {
        std::string msg = e.what();
        for (char& c : msg) {
            if (c == '\n') c = ' ';
        }
        err << "error: " << msg << "\n";
        return kExitRuntime;
    }
    err << app.help();
    return kExitUsage;
}

}  // namespace tsarag::cli
