// Command-line front end: dataset generation, training, denoising,
// evaluation, ablation sweeps and the Monte-Carlo theory report.

#include <cstdio>
#include <string>

#include "CLI11.hpp"
#include "simpc/config.hpp"
#include "simpc/pipeline.hpp"
#include "simpc/util.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitNumeric = 4;
constexpr int kExitCheckFailed = 5;

struct GlobalOpts {
    std::string config_path;
    std::string out_dir;
    uint64_t seed = 0;
    bool seed_set = false;
    int threads = 1;
};

simpc::RunConfig load_config(const GlobalOpts& g) {
    simpc::RunConfig cfg;
    if (!g.config_path.empty()) cfg = simpc::parse_config_file(g.config_path);
    if (g.seed_set) cfg.seed = g.seed;
    if (!g.out_dir.empty()) {
        cfg.data_dir = g.out_dir + "/data";
        cfg.checkpoint_dir = g.out_dir + "/ckpt";
        cfg.report_dir = g.out_dir + "/report";
    }
    simpc::validate(cfg);
    return cfg;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"SIMPC point cloud denoising pipeline"};
    app.require_subcommand(1);

    GlobalOpts g;
    app.add_option("--config", g.config_path, "run configuration file");
    app.add_option("--seed", g.seed, "override the config seed")->each([&](const std::string&) {
        g.seed_set = true;
    });
    app.add_option("--threads", g.threads, "worker threads for parallel kernels");
    app.add_option("--out", g.out_dir, "root output directory (overrides path config)");

    auto* gen = app.add_subcommand("generate", "write the synthetic dataset and manifest");

    auto* train = app.add_subcommand("train", "train a model on the generated dataset");
    bool train_verbose = false;
    train->add_flag("--verbose", train_verbose, "print per-epoch progress");

    auto* denoise = app.add_subcommand("denoise", "apply a checkpoint to a point cloud");
    std::string dn_ckpt, dn_in, dn_out;
    int dn_iters = 1;
    bool dn_intermediates = false;
    denoise->add_option("--checkpoint", dn_ckpt, "model checkpoint")->required();
    denoise->add_option("--input", dn_in, "noisy cloud (.ply/.xyz)")->required();
    denoise->add_option("--output", dn_out, "output cloud path")->required();
    denoise->add_option("--iterations", dn_iters, "outer denoising passes");
    denoise->add_flag("--intermediates", dn_intermediates, "also write per-pass clouds");

    auto* eval = app.add_subcommand("eval", "CD/P2M report for a denoised cloud");
    std::string ev_denoised, ev_clean, ev_mesh, ev_noisy, ev_csv = "eval.csv";
    std::string ev_noise_kind = "unknown";
    double ev_noise_scale = 0.0;
    eval->add_option("--denoised", ev_denoised)->required();
    eval->add_option("--clean", ev_clean)->required();
    eval->add_option("--mesh", ev_mesh)->required();
    eval->add_option("--noisy", ev_noisy, "noisy input for the baseline row")->required();
    eval->add_option("--csv", ev_csv, "output CSV path");
    eval->add_option("--noise-kind", ev_noise_kind);
    eval->add_option("--noise-scale", ev_noise_scale);

    auto* ablate = app.add_subcommand("ablate", "loss-type and extension-distance sweep");
    bool ablate_verbose = false;
    ablate->add_flag("--verbose", ablate_verbose, "print per-run progress");

    auto* theory = app.add_subcommand("theory", "Monte-Carlo checks of the analysis");
    std::string th_ckpt;
    theory->add_option("--checkpoint", th_ckpt, "optional model for the mirror-bridge report");

    auto* evalrun = app.add_subcommand("evalrun", "evaluate a checkpoint over the whole dataset");
    std::string er_ckpt;
    int er_iters = 1;
    evalrun->add_option("--checkpoint", er_ckpt, "model checkpoint")->required();
    evalrun->add_option("--iterations", er_iters, "outer denoising passes");

    CLI11_PARSE(app, argc, argv);
    simpc::worker_threads() = g.threads;

    try {
        if (gen->parsed()) {
            simpc::pipe::cmd_generate(load_config(g));
        } else if (train->parsed()) {
            simpc::pipe::cmd_train(load_config(g), train_verbose);
        } else if (denoise->parsed()) {
            simpc::pipe::cmd_denoise(dn_ckpt, dn_in, dn_out, dn_iters, dn_intermediates);
        } else if (eval->parsed()) {
            auto rows = simpc::pipe::cmd_eval_files(ev_denoised, ev_clean, ev_mesh, ev_noisy,
                                                    ev_noise_kind, ev_noise_scale);
            simpc::pipe::write_metric_csv(ev_csv, rows);
        } else if (ablate->parsed()) {
            simpc::pipe::cmd_ablate(load_config(g), ablate_verbose);
        } else if (theory->parsed()) {
            simpc::RunConfig cfg = load_config(g);
            if (!simpc::pipe::cmd_theory(cfg, th_ckpt)) {
                std::fprintf(stderr, "error: theory_check_failed (see %s/theory.json)\n",
                             cfg.report_dir.c_str());
                return kExitCheckFailed;
            }
        } else if (evalrun->parsed()) {
            simpc::RunConfig cfg = load_config(g);
            simpc::net::ModelParams params = simpc::net::load_model(er_ckpt);
            simpc::pipe::Dataset ds = simpc::pipe::load_dataset(cfg);
            auto rows = simpc::pipe::evaluate_run(cfg, params, ds, er_iters);
            std::filesystem::create_directories(cfg.report_dir);
            simpc::pipe::write_metric_csv(cfg.report_dir + "/eval.csv", rows);
        }
    } catch (const simpc::ConfigError& e) {
        std::fprintf(stderr, "error: config_error %s\n", e.what());
        return kExitConfig;
    } catch (const simpc::ParamError& e) {
        std::fprintf(stderr, "error: parameter_error %s\n", e.what());
        return kExitConfig;
    } catch (const simpc::NumericError& e) {
        std::fprintf(stderr, "error: numeric_error %s\n", e.what());
        return kExitNumeric;
    } catch (const simpc::IoError& e) {
        std::fprintf(stderr, "error: io_error %s\n", e.what());
        return kExitIo;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: unexpected %s\n", e.what());
        return kExitIo;
    }
    return kExitOk;
}
