#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "dier/checkpoint.hpp"
#include "dier/image_io.hpp"
#include "dier/probe.hpp"
#include "dier/run_config.hpp"
#include "dier/selfcheck.hpp"
#include "dier/training.hpp"

namespace fs = std::filesystem;
using namespace dier;

namespace {

// Exit codes: 0 ok, 1 usage, 2 config, 3 data, 4 numeric, 5 checkpoint.
int exit_code_for(const std::exception& e) {
    if (dynamic_cast<const UsageError*>(&e)) return 1;
    if (dynamic_cast<const ConfigError*>(&e)) return 2;
    if (dynamic_cast<const IndexError*>(&e)) return 2;
    if (dynamic_cast<const DimensionError*>(&e)) return 2;
    if (dynamic_cast<const DataError*>(&e)) return 3;
    if (dynamic_cast<const IoError*>(&e)) return 3;
    if (dynamic_cast<const NumericError*>(&e)) return 4;
    if (dynamic_cast<const CheckpointError*>(&e)) return 5;
    return 1;
}

struct CommonOpts {
    std::string config_path;
    std::string data;
    std::string out = "run";
    std::uint64_t seed = 0;
    bool nano = false;
};

RunConfig resolve_config(const CommonOpts& opts, bool seed_given) {
    RunConfig cfg;
    if (!opts.config_path.empty()) cfg = load_run_config(opts.config_path);
    if (opts.nano) cfg.apply_preset("nano");
    if (!opts.data.empty()) cfg.data.path = opts.data;
    if (seed_given) {
        cfg.train.seed = opts.seed;
        cfg.probe.seed = opts.seed;
    }
    return cfg;
}

struct LoadedData {
    PixelDataset train;
    PixelDataset test;
};

LoadedData prepare_data(RunConfig& cfg, bool augment) {
    DatasetPair pair = load_dataset_spec(cfg.data.path, cfg.train.seed);
    if (pair.train.channels != cfg.dit.in_channels) {
        cfg.dit.in_channels = pair.train.channels;
        cfg.encoder.in_channels = pair.train.channels;
    }
    pair.train = take_first(pair.train, cfg.data.train_cap);
    pair.test = take_first(pair.test, cfg.data.test_cap);
    const int target = cfg.data.target_size > 0 ? cfg.data.target_size : cfg.dit.input_size;
    if (target != cfg.dit.input_size) {
        cfg.dit.input_size = target;
        cfg.encoder.input_size = target;
    }
    LoadedData out;
    out.train = preprocess(pair.train, target,
                           augment && cfg.data.augment_flip,
                           Rng::derive(cfg.train.seed, "data").key());
    out.train.name = "train";
    out.test = preprocess(pair.test, target, false, Rng::derive(cfg.train.seed, "data").key());
    out.test.name = "test";
    return out;
}

void echo_config(const RunConfig& cfg, const std::string& out_dir) {
    fs::create_directories(out_dir);
    const auto path = fs::path(out_dir) / "config.effective.ini";
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << serialize_run_config(cfg);
}

struct LoadedCheckpoint {
    TrainState state;
    RunConfig cfg;
};

LoadedCheckpoint open_checkpoint(const std::string& path) {
    LoadedCheckpoint lc;
    lc.state = load_train_state(path);
    lc.cfg = parse_run_config(lc.state.config_text);
    return lc;
}

int cmd_train(const CommonOpts& common, bool seed_given, int epochs, std::int64_t steps,
              const std::string& resume) {
    RunConfig cfg = resolve_config(common, seed_given);
    if (epochs > 0) cfg.train.epochs = epochs;
    if (steps > 0) cfg.train.max_steps = steps;
    LoadedData data = prepare_data(cfg, /*augment=*/true);
    cfg.validate();
    echo_config(cfg, common.out);

    auto sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);
    EncoderModel enc = init_encoder(cfg.encoder, cfg.train.seed);
    DiTModel dit = init_dit(cfg.dit, cfg.train.seed);

    FitOptions opts;
    opts.run_dir = common.out;
    opts.resume_from = resume;
    opts.config_text = serialize_run_config(cfg);
    TrainingReport report = fit(enc, dit, data.train, sched, cfg.train, opts);

    std::printf("steps=%lld initial_smoothed=%.4f final_smoothed=%.4f wall_s=%.1f\n",
                static_cast<long long>(report.steps_run), report.initial_smoothed,
                report.final_smoothed, report.wall_seconds);
    if (!report.checkpoint_paths.empty()) {
        std::printf("checkpoint=%s\n", report.checkpoint_paths.back().c_str());
    }
    return 0;
}

int cmd_sweep(const std::string& ckpt, const std::string& data_spec, const std::string& grid_spec,
              const std::string& out_dir) {
    LoadedCheckpoint lc = open_checkpoint(ckpt);
    if (!data_spec.empty()) lc.cfg.data.path = data_spec;
    LoadedData data = prepare_data(lc.cfg, /*augment=*/false);
    echo_config(lc.cfg, out_dir);
    auto grid = parse_timestep_grid(grid_spec, lc.cfg.train.timesteps);

    ProbeConfig pc = lc.cfg.probe;
    pc.peak_lr = lc.cfg.resolved_probe_peak_lr();
    SweepReport report = timestep_sweep(lc.state.encoder, data.train, data.test, grid, pc);
    write_sweep_csv(report, (fs::path(out_dir) / "sweep.csv").string());
    std::printf("best_t=%d top1=%.4f\n", report.best_timestep, report.best_top1);
    return 0;
}

int cmd_probe(const std::string& ckpt, const std::string& data_spec, int t,
              const std::string& out_dir) {
    LoadedCheckpoint lc = open_checkpoint(ckpt);
    if (t < 0 || t >= lc.cfg.train.timesteps) {
        throw IndexError("probe timestep " + std::to_string(t) + " out of range [0," +
                         std::to_string(lc.cfg.train.timesteps) + ")");
    }
    if (!data_spec.empty()) lc.cfg.data.path = data_spec;
    LoadedData data = prepare_data(lc.cfg, /*augment=*/false);
    echo_config(lc.cfg, out_dir);

    ProbeConfig pc = lc.cfg.probe;
    pc.peak_lr = lc.cfg.resolved_probe_peak_lr();
    EmbeddingTable train_table = extract_embeddings(lc.state.encoder, data.train, t);
    EmbeddingTable test_table = extract_embeddings(lc.state.encoder, data.test, t);
    ProbeResult res = train_linear_probe(train_table, test_table, pc);
    if (res.has_top5) {
        std::printf("top1=%.4f top5=%.4f\n", res.top1, res.top5);
    } else {
        std::printf("top1=%.4f\n", res.top1);
    }
    return 0;
}

int cmd_reconstruct(const std::string& ckpt, const std::string& data_spec,
                    const std::string& mode_str, int n, int steps, const std::string& out_dir,
                    std::uint64_t seed) {
    LoadedCheckpoint lc = open_checkpoint(ckpt);
    if (!data_spec.empty()) lc.cfg.data.path = data_spec;
    lc.cfg.data.test_cap = n;
    LoadedData data = prepare_data(lc.cfg, /*augment=*/false);
    fs::create_directories(out_dir);

    const ReconMode mode = mode_str == "code" ? ReconMode::Code : ReconMode::Noise;
    auto report = reconstruct_report(lc.state.encoder, lc.state.dit, data.test, lc.state.sched,
                                     mode, steps, seed);
    if (report.untrained_warning) {
        std::printf("WARNING: checkpoint looks untrained (zero output projection); "
                    "reconstructions will be meaningless\n");
    }
    const auto grid_path = fs::path(out_dir) / ("recon_" + mode_str + ".ppm");
    write_pair_grid_ppm(grid_path.string(), report.reconstructions, report.truth);
    const auto csv_path = fs::path(out_dir) / ("psnr_" + mode_str + ".csv");
    std::ofstream csv(csv_path, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + csv_path.string());
    csv << "index,psnr_db\n";
    for (std::size_t i = 0; i < report.psnr.size(); ++i) {
        csv << i << ',' << report.psnr[i] << '\n';
    }
    const double mean_psnr =
        std::accumulate(report.psnr.begin(), report.psnr.end(), 0.0) /
        static_cast<double>(report.psnr.size());
    std::printf("mode=%s n=%zu mean_psnr=%.2f grid=%s\n", mode_str.c_str(), report.psnr.size(),
                mean_psnr, grid_path.string().c_str());
    return 0;
}

int cmd_export(const std::string& ckpt, const std::string& data_spec, int t,
               const std::string& format, const std::string& out_dir) {
    LoadedCheckpoint lc = open_checkpoint(ckpt);
    if (t < 0 || t >= lc.cfg.train.timesteps) {
        throw IndexError("timestep " + std::to_string(t) + " out of range");
    }
    if (!data_spec.empty()) lc.cfg.data.path = data_spec;
    LoadedData data = prepare_data(lc.cfg, /*augment=*/false);
    fs::create_directories(out_dir);
    EmbeddingTable table = extract_embeddings(lc.state.encoder, data.test, t);
    table.source = ckpt;
    const EmbeddingFormat fmt = format == "bin" ? EmbeddingFormat::Bin : EmbeddingFormat::Csv;
    const auto path =
        fs::path(out_dir) / ("embeddings_t" + std::to_string(t) + (format == "bin" ? ".bin" : ".csv"));
    export_embeddings(table, path.string(), fmt);
    std::printf("exported %lld x %lld embeddings to %s\n",
                static_cast<long long>(table.vectors.dim(0)),
                static_cast<long long>(table.vectors.dim(1)), path.string().c_str());
    return 0;
}

int cmd_selfcheck(std::uint64_t seed) {
    const std::string scratch = (fs::temp_directory_path() / "dier-selfcheck").string();
    auto results = run_selfcheck(seed, scratch);
    bool all_ok = true;
    for (const auto& r : results) {
        std::printf("[%s] %s: %s\n", r.pass ? "PASS" : "FAIL", r.name.c_str(),
                    r.detail.c_str());
        all_ok = all_ok && r.pass;
    }
    return all_ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"dier — diffusion pre-training with timestep-conditioned embeddings"};
    app.require_subcommand(1);

    CommonOpts train_opts;
    int train_epochs = 0;
    std::int64_t train_steps = 0;
    std::string train_resume;
    auto* train = app.add_subcommand("train", "pre-train encoder + noise predictor");
    train->add_option("--config", train_opts.config_path, "run config file");
    train->add_option("--data", train_opts.data, "dataset spec or IDX directory");
    train->add_option("--out", train_opts.out, "output/run directory");
    auto* train_seed = train->add_option("--seed", train_opts.seed, "global seed");
    train->add_option("--epochs", train_epochs, "override epoch count");
    train->add_option("--steps", train_steps, "cap total optimizer steps");
    train->add_flag("--nano", train_opts.nano, "use the nano desk-scale preset");
    train->add_option("--resume", train_resume, "resume from checkpoint");

    std::string sweep_ckpt, sweep_data, sweep_out = "run", sweep_grid = "0:999:100";
    auto* sweep = app.add_subcommand("sweep", "linear-probe accuracy across timesteps");
    sweep->add_option("--checkpoint", sweep_ckpt, "trained checkpoint")->required();
    sweep->add_option("--data", sweep_data, "dataset spec or IDX directory");
    sweep->add_option("--t-grid", sweep_grid, "timestep grid start:end:step");
    sweep->add_option("--out", sweep_out, "output directory");

    std::string probe_ckpt, probe_data, probe_out = "run";
    int probe_t = 0;
    auto* probe = app.add_subcommand("probe", "linear-probe accuracy at one timestep");
    probe->add_option("--checkpoint", probe_ckpt, "trained checkpoint")->required();
    probe->add_option("--data", probe_data, "dataset spec or IDX directory");
    probe->add_option("--t", probe_t, "timestep")->required();
    probe->add_option("--out", probe_out, "output directory");

    std::string rec_ckpt, rec_data, rec_mode, rec_out = "run";
    int rec_n = 8, rec_steps = 50;
    std::uint64_t rec_seed = 0;
    auto* rec = app.add_subcommand("reconstruct", "decode from stochastic code or noise");
    rec->add_option("--checkpoint", rec_ckpt, "trained checkpoint")->required();
    rec->add_option("--data", rec_data, "dataset spec or IDX directory");
    rec->add_option("--mode", rec_mode, "code | noise")
        ->required()
        ->check(CLI::IsMember({"code", "noise"}));
    rec->add_option("--n", rec_n, "sample count");
    rec->add_option("--steps", rec_steps, "DDIM grid size");
    rec->add_option("--out", rec_out, "output directory");
    rec->add_option("--seed", rec_seed, "noise seed");

    std::string exp_ckpt, exp_data, exp_format = "csv", exp_out = "run";
    int exp_t = 0;
    auto* exp = app.add_subcommand("export-embeddings", "dump v_t vectors for external tools");
    exp->add_option("--checkpoint", exp_ckpt, "trained checkpoint")->required();
    exp->add_option("--data", exp_data, "dataset spec or IDX directory");
    exp->add_option("--t", exp_t, "timestep")->required();
    exp->add_option("--format", exp_format, "csv | bin")
        ->check(CLI::IsMember({"csv", "bin"}));
    exp->add_option("--out", exp_out, "output directory");

    std::uint64_t selfcheck_seed = 0;
    auto* selfcheck = app.add_subcommand("selfcheck", "run built-in verification suites");
    selfcheck->add_option("--seed", selfcheck_seed, "seed");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 1;
    }

    try {
        if (train->parsed()) {
            return cmd_train(train_opts, !train_seed->empty(), train_epochs, train_steps,
                             train_resume);
        }
        if (sweep->parsed()) return cmd_sweep(sweep_ckpt, sweep_data, sweep_grid, sweep_out);
        if (probe->parsed()) return cmd_probe(probe_ckpt, probe_data, probe_t, probe_out);
        if (rec->parsed()) {
            return cmd_reconstruct(rec_ckpt, rec_data, rec_mode, rec_n, rec_steps, rec_out,
                                   rec_seed);
        }
        if (exp->parsed()) return cmd_export(exp_ckpt, exp_data, exp_t, exp_format, exp_out);
        if (selfcheck->parsed()) return cmd_selfcheck(selfcheck_seed);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return exit_code_for(e);
    }
    return 1;
}
