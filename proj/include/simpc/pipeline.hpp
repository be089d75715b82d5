#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "simpc/config.hpp"
#include "simpc/error.hpp"
#include "simpc/geometry.hpp"
#include "simpc/io.hpp"
#include "simpc/loss.hpp"
#include "simpc/metrics.hpp"
#include "simpc/network.hpp"
#include "simpc/theory.hpp"
#include "simpc/util.hpp"

namespace simpc::pipe {

namespace fs = std::filesystem;
using json = nlohmann::ordered_json;

inline uint64_t mix2(uint64_t a, uint64_t b) { return CounterRng::mix(a, b); }
inline uint64_t mix4(uint64_t a, uint64_t b, uint64_t c, uint64_t d) {
    return mix2(mix2(a, b), mix2(c, d));
}

// seed-stream tags so every random consumer gets a disjoint stream
constexpr uint64_t kTagShape = 0x53484150;
constexpr uint64_t kTagTrainNoise = 0x544e4f49;
constexpr uint64_t kTagEvalNoise = 0x45564c4e;
constexpr uint64_t kTagInit = 0x494e4954;
constexpr uint64_t kTagStep = 0x53544550;
constexpr uint64_t kTagBaseline = 0x424c4e45;

// ------------------------------- generate -----------------------------------

inline void cmd_generate(const RunConfig& cfg) {
    fs::create_directories(cfg.data_dir);
    json manifest;
    manifest["seed"] = cfg.seed;
    manifest["shapes"] = json::array();

    size_t shape_idx = 0;
    auto emit = [&](const ShapeSpec& spec, const std::string& role) {
        auto [cloud, mesh] = make_shape(spec.kind, spec.n, mix2(cfg.seed, kTagShape + shape_idx));
        const std::string base = std::string(to_string(spec.kind)) + "_" + std::to_string(shape_idx);
        const std::string mesh_file = base + "_mesh.off";
        const std::string clean_file = base + "_clean.ply";
        io::write_off(cfg.data_dir + "/" + mesh_file, mesh);
        io::write_ply(cfg.data_dir + "/" + clean_file, cloud);

        json js;
        js["name"] = base;
        js["kind"] = to_string(spec.kind);
        js["n"] = spec.n;
        js["role"] = role;
        js["mesh"] = mesh_file;
        js["clean"] = clean_file;
        js["train_variants"] = json::array();
        js["eval_variants"] = json::array();

        for (size_t qi = 0; qi < cfg.train_noise.size(); ++qi) {
            const NoiseSpec& q = cfg.train_noise[qi];
            json group;
            group["noise"] = to_string(q.kind);
            group["scale"] = q.scale;
            group["files"] = json::array();
            group["seeds"] = json::array();
            for (int v = 0; v < 2; ++v) {
                const uint64_t seed = mix4(cfg.seed, kTagTrainNoise, shape_idx * 131 + qi, v);
                PointCloud noisy = add_noise(cloud, {q.kind, q.scale, seed});
                const std::string file =
                    base + "_n" + std::to_string(qi) + "_train" + std::to_string(v) + ".ply";
                io::write_ply(cfg.data_dir + "/" + file, noisy);
                group["files"].push_back(file);
                group["seeds"].push_back(seed);
            }
            js["train_variants"].push_back(group);
        }
        for (size_t ei = 0; ei < cfg.eval_noise.size(); ++ei) {
            const NoiseSpec& q = cfg.eval_noise[ei];
            const uint64_t seed = mix4(cfg.seed, kTagEvalNoise, shape_idx * 131 + ei, 0);
            PointCloud noisy = add_noise(cloud, {q.kind, q.scale, seed});
            const std::string file = base + "_e" + std::to_string(ei) + "_eval.ply";
            io::write_ply(cfg.data_dir + "/" + file, noisy);
            json rec;
            rec["noise"] = to_string(q.kind);
            rec["scale"] = q.scale;
            rec["seed"] = seed;
            rec["file"] = file;
            js["eval_variants"].push_back(rec);
        }
        manifest["shapes"].push_back(js);
        ++shape_idx;
    };

    for (const ShapeSpec& s : cfg.train_shapes) emit(s, "train");
    for (const ShapeSpec& s : cfg.holdout_shapes) emit(s, "holdout");

    std::ofstream mf(cfg.data_dir + "/manifest.json", std::ios::trunc);
    if (!mf) throw IoError("cannot write manifest in " + cfg.data_dir);
    mf << manifest.dump(2) << "\n";
}

// -------------------------------- dataset -----------------------------------

struct LoadedVariant {
    NoiseSpec spec;
    uint64_t seed = 0;
    std::string file;
    PointCloud cloud;
};

struct LoadedShape {
    std::string name;
    ShapeKind kind = ShapeKind::sphere;
    size_t n = 0;
    std::string role;
    TriangleMesh mesh;
    PointCloud clean;
    std::vector<std::array<LoadedVariant, 2>> train;  // indexed by train-noise spec
    std::vector<LoadedVariant> eval;                  // indexed by eval-noise spec
};

struct Dataset {
    std::vector<LoadedShape> shapes;

    std::vector<const LoadedShape*> with_role(const std::string& role) const {
        std::vector<const LoadedShape*> out;
        for (const LoadedShape& s : shapes)
            if (s.role == role) out.push_back(&s);
        return out;
    }
};

inline Dataset load_dataset(const RunConfig& cfg) {
    const std::string mpath = cfg.data_dir + "/manifest.json";
    std::ifstream mf(mpath);
    if (!mf) throw IoError("missing dataset manifest: " + mpath + " (run generate first)");
    json manifest = json::parse(mf, nullptr, true);

    Dataset ds;
    for (const json& js : manifest.at("shapes")) {
        LoadedShape s;
        s.name = js.at("name").get<std::string>();
        s.kind = shape_kind_from(js.at("kind").get<std::string>());
        s.n = js.at("n").get<size_t>();
        s.role = js.at("role").get<std::string>();
        s.mesh = io::read_off(cfg.data_dir + "/" + js.at("mesh").get<std::string>());
        s.clean = io::read_ply(cfg.data_dir + "/" + js.at("clean").get<std::string>());
        for (const json& group : js.at("train_variants")) {
            std::array<LoadedVariant, 2> pair;
            for (int v = 0; v < 2; ++v) {
                LoadedVariant& lv = pair[v];
                lv.spec = {noise_kind_from(group.at("noise").get<std::string>()),
                           group.at("scale").get<double>()};
                lv.seed = group.at("seeds")[v].get<uint64_t>();
                lv.file = group.at("files")[v].get<std::string>();
                lv.cloud = io::read_ply(cfg.data_dir + "/" + lv.file);
            }
            s.train.push_back(std::move(pair));
        }
        for (const json& rec : js.at("eval_variants")) {
            LoadedVariant lv;
            lv.spec = {noise_kind_from(rec.at("noise").get<std::string>()), rec.at("scale").get<double>()};
            lv.seed = rec.at("seed").get<uint64_t>();
            lv.file = rec.at("file").get<std::string>();
            lv.cloud = io::read_ply(cfg.data_dir + "/" + lv.file);
            s.eval.push_back(std::move(lv));
        }
        ds.shapes.push_back(std::move(s));
    }
    return ds;
}

// --------------------------------- train ------------------------------------

struct EpochLog {
    int epoch = 0;
    double loss_total = 0.0;
    double loss_mpc = 0.0;
    double loss_sr = 0.0;
    double loss_baseline = 0.0;
    double eval_cd = 0.0;
    double eval_p2m = 0.0;
    uint64_t max_mid_ulp = 0;
    double wall_s = 0.0;  // excluded from the deterministic log
};

struct TrainResult {
    net::ModelParams params;
    std::vector<EpochLog> logs;
    std::string final_checkpoint;
};

namespace detail {

struct PairOutcome {
    std::vector<std::vector<double>> grads;
    double total = 0.0, mpc = 0.0, sr = 0.0, baseline = 0.0;
    uint64_t mid_ulp = 0;
    std::string error;
};

inline void write_train_logs(const RunConfig& cfg, const std::vector<EpochLog>& logs) {
    fs::create_directories(cfg.report_dir);
    std::ofstream lf(cfg.report_dir + "/train_log.csv", std::ios::trunc);
    lf << "epoch,loss_total,loss_mpc,loss_sr,loss_baseline,eval_cd,eval_p2m,max_mid_ulp\n";
    for (const EpochLog& e : logs)
        lf << e.epoch << ',' << io::g17(e.loss_total) << ',' << io::g17(e.loss_mpc) << ','
           << io::g17(e.loss_sr) << ',' << io::g17(e.loss_baseline) << ',' << io::g17(e.eval_cd)
           << ',' << io::g17(e.eval_p2m) << ',' << e.max_mid_ulp << '\n';
    std::ofstream tf(cfg.report_dir + "/train_timing.csv", std::ios::trunc);
    tf << "epoch,wall_s\n";
    for (const EpochLog& e : logs) tf << e.epoch << ',' << e.wall_s << '\n';
}

} // namespace detail

inline TrainResult cmd_train(const RunConfig& cfg, bool verbose = false) {
    Dataset ds = load_dataset(cfg);
    std::vector<const LoadedShape*> train_shapes = ds.with_role("train");
    if (train_shapes.empty()) throw ConfigError("dataset has no training shapes");
    for (const LoadedShape* s : train_shapes)
        if (s->train.empty()) throw ConfigError("dataset has no training noise variants");

    net::ModelParams params = net::init_params(cfg.hyper, mix2(cfg.seed, kTagInit));
    std::vector<ad::Tensor*> ptrs = params.tensor_ptrs();
    ad::AdamState adam;
    adam.lr = cfg.lr;
    adam.init(ptrs);

    // per-epoch eval target: first holdout shape if present, else first train
    std::vector<const LoadedShape*> holdout = ds.with_role("holdout");
    const LoadedShape* eval_shape = holdout.empty() ? train_shapes[0] : holdout[0];
    const size_t eval_spec = eval_shape->eval.size() > 1 ? 1 : 0;

    fs::create_directories(cfg.checkpoint_dir);
    fs::create_directories(cfg.report_dir);

    TrainResult result;
    uint64_t step_index = 0;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        EpochLog log;
        log.epoch = epoch;
        size_t steps_in_epoch = 0;

        for (size_t si = 0; si < train_shapes.size(); ++si) {
            const LoadedShape& shape = *train_shapes[si];
            for (size_t qi = 0; qi < shape.train.size(); ++qi) {
            for (int sub = 0; sub < cfg.substeps; ++sub) {
                const PointCloud& xa = shape.train[qi][0].cloud;
                const PointCloud& xb = shape.train[qi][1].cloud;
                const uint64_t step_seed = mix4(cfg.seed, kTagStep, step_index, 0);

                std::vector<detail::PairOutcome> outcomes(cfg.batch);
                parallel_for(cfg.batch, [&](size_t p) {
                    detail::PairOutcome& oc = outcomes[p];
                    try {
                        CounterRng rng(step_seed, p);
                        const size_t seed_idx = rng.uniform_index(0, xa.size());
                        PointCloud pa = sample_patch_at(xa, seed_idx, cfg.patch_size);
                        PointCloud pb = sample_patch_at(xb, seed_idx, cfg.patch_size);

                        ad::Tape tape;
                        net::ModelVars mv = net::register_params(tape, params);
                        ad::Var loss;
                        const bool mirror = mpgm::mode_needs_mirror(cfg.loss_mode);
                        if (cfg.loss_mode == mpgm::LossMode::noise_baseline) {
                            ad::Var la = mpgm::baseline_noise_loss(
                                tape, pa, mv, cfg.hyper, cfg.noise_delta_sigma,
                                mix4(step_seed, kTagBaseline, p, 0));
                            ad::Var lb = mpgm::baseline_noise_loss(
                                tape, pb, mv, cfg.hyper, cfg.noise_delta_sigma,
                                mix4(step_seed, kTagBaseline, p, 1));
                            loss = ad::add(la, lb);
                            oc.baseline = loss.val().v[0];
                        } else {
                            net::Trajectory ta = net::denoise_forward(tape, pa, mv, cfg.hyper, mirror);
                            net::Trajectory tb = net::denoise_forward(tape, pb, mv, cfg.hyper, mirror);
                            if (cfg.loss_mode == mpgm::LossMode::simpc) {
                                mpgm::LossBreakdown bd = mpgm::total_loss(ta, tb, cfg.hyper);
                                loss = bd.total;
                                for (double m : bd.mpc) oc.mpc += m;
                                for (double s : bd.sr) oc.sr += s;
                                oc.mid_ulp = std::max(mpgm::midpoint_max_ulp(ta),
                                                      mpgm::midpoint_max_ulp(tb));
                            } else if (cfg.loss_mode == mpgm::LossMode::sr_cd_only) {
                                ad::Var acc;
                                for (size_t l = 1; l < ta.clouds.size(); ++l) {
                                    ad::Var srl = mpgm::sr_loss(ta, tb, l);
                                    acc = (l == 1) ? srl : ad::add(acc, srl);
                                }
                                loss = acc;
                                oc.sr = loss.val().v[0];
                            } else {  // sr_emd_only
                                loss = mpgm::baseline_emd_loss(ta, tb, cfg.emd_cap);
                                oc.baseline = loss.val().v[0];
                            }
                        }
                        oc.total = loss.val().v[0];
                        tape.backward(loss);
                        oc.grads = net::zero_grads(params);
                        net::accumulate_grads(tape, mv, oc.grads, 1.0 / cfg.batch);
                    } catch (const std::exception& e) {
                        oc.error = e.what();
                    }
                });

                for (const detail::PairOutcome& oc : outcomes) {
                    if (oc.error.empty()) continue;
                    json dump;
                    dump["epoch"] = epoch;
                    dump["step"] = step_index;
                    dump["shape"] = shape.name;
                    dump["noise"] = to_string(shape.train[qi][0].spec.kind);
                    dump["scale"] = shape.train[qi][0].spec.scale;
                    dump["step_seed"] = step_seed;
                    dump["error"] = oc.error;
                    std::ofstream df(cfg.report_dir + "/nan_dump.json", std::ios::trunc);
                    df << dump.dump(2) << "\n";
                    throw NumericError("training aborted at epoch " + std::to_string(epoch) + ": " +
                                       oc.error + " (diagnostics in " + cfg.report_dir +
                                       "/nan_dump.json)");
                }

                // fixed pair order keeps accumulation independent of threading
                std::vector<std::vector<double>> grads = net::zero_grads(params);
                for (const detail::PairOutcome& oc : outcomes) {
                    for (size_t g = 0; g < grads.size(); ++g)
                        for (size_t j = 0; j < grads[g].size(); ++j) grads[g][j] += oc.grads[g][j];
                    log.loss_total += oc.total / cfg.batch;
                    log.loss_mpc += oc.mpc / cfg.batch;
                    log.loss_sr += oc.sr / cfg.batch;
                    log.loss_baseline += oc.baseline / cfg.batch;
                    log.max_mid_ulp = std::max(log.max_mid_ulp, oc.mid_ulp);
                }
                try {
                    ad::adam_step(ptrs, grads, adam);
                } catch (const NumericError& e) {
                    json dump;
                    dump["epoch"] = epoch;
                    dump["step"] = step_index;
                    dump["shape"] = shape.name;
                    dump["noise"] = to_string(shape.train[qi][0].spec.kind);
                    dump["scale"] = shape.train[qi][0].spec.scale;
                    dump["step_seed"] = step_seed;
                    dump["error"] = e.what();
                    std::ofstream df(cfg.report_dir + "/nan_dump.json", std::ios::trunc);
                    df << dump.dump(2) << "\n";
                    throw NumericError(std::string(e.what()) + " (diagnostics in " +
                                       cfg.report_dir + "/nan_dump.json)");
                }
                ++step_index;
                ++steps_in_epoch;
            }
            }
        }

        log.loss_total /= steps_in_epoch;
        log.loss_mpc /= steps_in_epoch;
        log.loss_sr /= steps_in_epoch;
        log.loss_baseline /= steps_in_epoch;

        // quick held-out probe on a prefix of the eval variant
        if (!eval_shape->eval.empty()) {
            const LoadedVariant& ev = eval_shape->eval[eval_spec];
            PointCloud probe;
            const size_t n_probe = std::min(cfg.eval_points, ev.cloud.size());
            probe.pts.assign(ev.cloud.pts.begin(), ev.cloud.pts.begin() + n_probe);
            if (n_probe > static_cast<size_t>(cfg.hyper.k) + 1) {
                PointCloud denoised = net::denoise_apply(probe, params, 1);
                log.eval_cd = chamfer(denoised, eval_shape->clean);
                log.eval_p2m = point_to_mesh(denoised, eval_shape->mesh);
            }
        }

        log.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.logs.push_back(log);
        if (verbose)
            std::fprintf(stderr, "epoch %3d  loss %.6g  eval_cd %.6g  eval_p2m %.6g  (%.1fs)\n",
                         epoch, log.loss_total, log.eval_cd, log.eval_p2m, log.wall_s);

        if (cfg.checkpoint_interval > 0 && epoch % cfg.checkpoint_interval == 0) {
            char name[64];
            std::snprintf(name, sizeof(name), "model_epoch%04d.ckpt", epoch);
            net::save_model(cfg.checkpoint_dir + "/" + name, params);
        }
    }

    result.final_checkpoint = cfg.checkpoint_dir + "/model_final.ckpt";
    net::save_model(result.final_checkpoint, params);
    detail::write_train_logs(cfg, result.logs);
    result.params = std::move(params);
    return result;
}

// ---------------------------------- eval ------------------------------------

// rows for every shape x eval-noise spec: the noisy baseline plus the
// denoised result, CD against the clean cloud and P2M against the mesh
inline std::vector<MetricReport> evaluate_run(const RunConfig& cfg, net::ModelParams& params,
                                              const Dataset& ds, int iterations = 1) {
    std::vector<MetricReport> rows;
    for (const LoadedShape& shape : ds.shapes) {
        for (const LoadedVariant& ev : shape.eval) {
            MetricReport noisy;
            noisy.shape = shape.name + "/noisy";
            noisy.noise_kind = to_string(ev.spec.kind);
            noisy.noise_scale = ev.spec.scale;
            noisy.cd = chamfer(ev.cloud, shape.clean);
            noisy.p2m = point_to_mesh(ev.cloud, shape.mesh);
            rows.push_back(noisy);

            PointCloud denoised = net::denoise_apply(ev.cloud, params, iterations);
            MetricReport den;
            den.shape = shape.name + "/denoised";
            den.noise_kind = to_string(ev.spec.kind);
            den.noise_scale = ev.spec.scale;
            den.cd = chamfer(denoised, shape.clean);
            den.p2m = point_to_mesh(denoised, shape.mesh);
            rows.push_back(den);
        }
    }
    return rows;
}

inline void write_metric_csv(const std::string& path, const std::vector<MetricReport>& rows) {
    std::ofstream f(path, std::ios::trunc);
    if (!f) throw IoError("cannot write report: " + path);
    f << MetricReport::csv_header() << "\n";
    for (const MetricReport& r : rows) f << r.csv_row() << "\n";
}

// file-based eval used by the CLI subcommand
inline std::vector<MetricReport> cmd_eval_files(const std::string& denoised_path,
                                                const std::string& clean_path,
                                                const std::string& mesh_path,
                                                const std::string& noisy_path,
                                                const std::string& noise_kind, double noise_scale) {
    PointCloud denoised = io::read_cloud(denoised_path);
    PointCloud clean = io::read_cloud(clean_path);
    PointCloud noisy = io::read_cloud(noisy_path);
    TriangleMesh mesh = io::read_off(mesh_path);
    auto stem = [](const std::string& p) { return fs::path(p).stem().string(); };

    MetricReport base;
    base.shape = stem(noisy_path) + "/noisy";
    base.noise_kind = noise_kind;
    base.noise_scale = noise_scale;
    base.cd = chamfer(noisy, clean);
    base.p2m = point_to_mesh(noisy, mesh);

    MetricReport den;
    den.shape = stem(denoised_path) + "/denoised";
    den.noise_kind = noise_kind;
    den.noise_scale = noise_scale;
    den.cd = chamfer(denoised, clean);
    den.p2m = point_to_mesh(denoised, mesh);
    return {base, den};
}

// -------------------------------- denoise -----------------------------------

inline void cmd_denoise(const std::string& checkpoint, const std::string& input,
                        const std::string& output, int iterations, bool write_intermediates) {
    net::ModelParams params = net::load_model(checkpoint);
    PointCloud cloud = io::read_cloud(input);
    if (cloud.size() <= static_cast<size_t>(params.hyper.k))
        throw ParamError("denoise: cloud smaller than the neighborhood size");
    for (int it = 1; it <= iterations; ++it) {
        cloud = net::denoise_apply(cloud, params, 1);
        if (write_intermediates && it < iterations) {
            fs::path p(output);
            std::string inter =
                (p.parent_path() / (p.stem().string() + "_iter" + std::to_string(it) + ".ply")).string();
            io::write_ply(inter, cloud);
        }
    }
    io::write_cloud(output, cloud);
}

// -------------------------------- ablation ----------------------------------

struct AblationRow {
    std::string group;
    std::string label;
    std::vector<double> cd_e5;   // per eval-noise spec
    std::vector<double> p2m_e5;  // per eval-noise spec
};

// mean over training shapes of held-out CD / P2M per eval-noise level, x1e5
inline AblationRow ablate_eval(const RunConfig& cfg, net::ModelParams& params, const Dataset& ds,
                               const std::string& group, const std::string& label) {
    AblationRow row;
    row.group = group;
    row.label = label;
    std::vector<const LoadedShape*> train_shapes = ds.with_role("train");
    const size_t levels = cfg.eval_noise.size();
    row.cd_e5.assign(levels, 0.0);
    row.p2m_e5.assign(levels, 0.0);
    for (const LoadedShape* shape : train_shapes) {
        for (size_t ei = 0; ei < levels && ei < shape->eval.size(); ++ei) {
            PointCloud denoised = net::denoise_apply(shape->eval[ei].cloud, params, 1);
            row.cd_e5[ei] += chamfer(denoised, shape->clean) * 1e5 / train_shapes.size();
            row.p2m_e5[ei] += point_to_mesh(denoised, shape->mesh) * 1e5 / train_shapes.size();
        }
    }
    return row;
}

inline std::vector<AblationRow> cmd_ablate(const RunConfig& cfg, bool verbose = false) {
    RunConfig base = cfg;
    base.epochs = cfg.ablate_epochs;
    base.patch_size = cfg.ablate_patch;
    base.batch = cfg.ablate_batch;
    base.checkpoint_interval = 0;  // only the final model matters here

    Dataset ds = load_dataset(cfg);

    struct Setting {
        std::string group, label;
        mpgm::LossMode mode;
        double w2;
    };
    const std::vector<Setting> settings = {
        {"loss_type", "sr_cd", mpgm::LossMode::sr_cd_only, 2.0},
        {"loss_type", "sr_emd", mpgm::LossMode::sr_emd_only, 2.0},
        {"loss_type", "mpc_sr_cd", mpgm::LossMode::simpc, 2.0},
        {"extend_dist", "near_w2_1.5", mpgm::LossMode::simpc, 1.5},
        {"extend_dist", "symmetry_w2_2", mpgm::LossMode::simpc, 2.0},
        {"extend_dist", "far_w2_2.5", mpgm::LossMode::simpc, 2.5},
    };

    std::vector<AblationRow> rows;
    const AblationRow* symmetry_source = nullptr;
    for (const Setting& s : settings) {
        // the symmetry row is the same configuration as mpc_sr_cd: reuse it
        if (s.group == "extend_dist" && s.w2 == 2.0 && symmetry_source) {
            AblationRow row = *symmetry_source;
            row.group = s.group;
            row.label = s.label;
            rows.push_back(row);
            continue;
        }
        RunConfig run = base;
        run.loss_mode = s.mode;
        run.hyper.w2 = s.w2;
        run.checkpoint_dir = cfg.checkpoint_dir + "/ablate_" + s.label;
        run.report_dir = cfg.report_dir + "/ablate_" + s.label;
        if (verbose) std::fprintf(stderr, "[ablate] training %s\n", s.label.c_str());
        TrainResult tr = cmd_train(run, verbose);
        rows.push_back(ablate_eval(cfg, tr.params, ds, s.group, s.label));
        if (s.label == "mpc_sr_cd") symmetry_source = &rows.back();
    }

    fs::create_directories(cfg.report_dir);
    std::ofstream f(cfg.report_dir + "/ablation.csv", std::ios::trunc);
    f << "setting,label";
    for (const NoiseSpec& q : cfg.eval_noise)
        f << ",cd_" << to_string(q.kind) << "_" << q.scale << ",p2m_" << to_string(q.kind) << "_"
          << q.scale;
    f << "\n";
    for (const AblationRow& r : rows) {
        f << r.group << ',' << r.label;
        for (size_t i = 0; i < r.cd_e5.size(); ++i)
            f << ',' << io::g17(r.cd_e5[i]) << ',' << io::g17(r.p2m_e5[i]);
        f << "\n";
    }
    return rows;
}

// --------------------------------- theory -----------------------------------

struct TheoryCheck {
    std::string check;
    size_t samples = 0;
    double empirical = 0.0;
    double analytic = 0.0;
    double rel_error = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    double z_score = 0.0;
};

inline json theory_check_json(const TheoryCheck& c) {
    json j;
    j["check"] = c.check;
    j["samples"] = c.samples;
    j["empirical"] = c.empirical;
    j["analytic"] = c.analytic;
    j["rel_error"] = c.rel_error;
    j["tolerance"] = c.tolerance;
    j["pass"] = c.pass;
    j["z_score"] = c.z_score;
    return j;
}

inline theory::Mat3 random_mat3(const CounterRng& rng, uint64_t base, double scale) {
    theory::Mat3 m{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) m[i][j] = scale * rng.uniform(base + i * 3 + j, -1.0, 1.0);
    return m;
}

inline std::vector<TheoryCheck> run_theory_checks(const RunConfig& cfg,
                                                  const std::string& checkpoint = "") {
    std::vector<TheoryCheck> checks;
    const uint64_t seed = mix2(cfg.seed, 0x7468);
    CounterRng rng(seed, 0x636b73ull);

    // landing distribution: empirical mean and normal-direction variance
    {
        theory::LandingModel lm;
        lm.mu = {0.3, -0.2, 0.5};
        Vec3 n{1.0, 2.0, -0.5};
        lm.normal = (1.0 / norm(n)) * n;
        auto frame = theory::tangent_basis({lm.mu, lm.normal});
        lm.tangent_frame = frame;
        lm.sigma_tangential = {{{0.04, 0.01}, {0.01, 0.09}}};
        lm.sigma_normal = 0.15;
        lm.validate();
        const size_t count = cfg.moment_samples;
        std::vector<Vec3> samples = theory::sample_landing(lm, count, mix2(seed, 1));

        Vec3 mean{0, 0, 0};
        for (const Vec3& s : samples) mean = mean + s;
        mean = (1.0 / count) * mean;
        const theory::Mat3 cov = lm.covariance();
        double worst_dev = 0.0, worst_tol = 0.0, worst_z = 0.0;
        for (int a = 0; a < 3; ++a) {
            const double sd = std::sqrt(cov[a][a]);
            const double dev = std::fabs(mean[a] - lm.mu[a]);
            const double tol = 4.0 * sd / std::sqrt(static_cast<double>(count));
            if (dev / tol > worst_dev / std::max(worst_tol, 1e-300)) {
                worst_dev = dev;
                worst_tol = tol;
                worst_z = dev / (sd / std::sqrt(static_cast<double>(count)));
            }
        }
        TheoryCheck c{"landing_mean", count, worst_dev, 0.0, 0.0, worst_tol,
                      worst_dev <= worst_tol, worst_z};
        checks.push_back(c);

        double var_n = 0.0;
        for (const Vec3& s : samples) {
            const double d = dot(s - mean, lm.normal);
            var_n += d * d;
        }
        var_n /= static_cast<double>(count - 1);
        const double target = lm.sigma_normal * lm.sigma_normal;
        TheoryCheck cv;
        cv.check = "landing_normal_variance";
        cv.samples = count;
        cv.empirical = var_n;
        cv.analytic = target;
        cv.rel_error = std::fabs(var_n - target) / target;
        cv.tolerance = 0.02;
        cv.pass = cv.rel_error < cv.tolerance;
        cv.z_score = (var_n - target) / (target * std::sqrt(2.0 / static_cast<double>(count)));
        checks.push_back(cv);
    }

    // second-moment identity over random PSD instances
    {
        double worst_rel = 0.0, worst_emp = 0.0, worst_ana = 0.0, worst_z = 0.0;
        for (int inst = 0; inst < cfg.moment_instances; ++inst) {
            CounterRng ir = rng.fork(100 + inst);
            std::array<std::array<double, 6>, 6> g{};
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) g[i][j] = 0.3 * ir.uniform(i * 6 + j, -1.0, 1.0);
            std::array<std::array<double, 6>, 6> joint{};
            for (int i = 0; i < 6; ++i)
                for (int j = 0; j < 6; ++j) {
                    double s = (i == j) ? 1e-4 : 0.0;
                    for (int p = 0; p < 6; ++p) s += g[i][p] * g[j][p];
                    joint[i][j] = s;
                }
            theory::Mat3 sh{}, sb{}, sx{};
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) {
                    sh[i][j] = joint[i][j];
                    sb[i][j] = joint[3 + i][3 + j];
                    sx[i][j] = joint[i][3 + j];
                }
            const Vec3 mu_hat{ir.uniform(100, -1, 1), ir.uniform(101, -1, 1), ir.uniform(102, -1, 1)};
            const Vec3 mu_bar{ir.uniform(103, -1, 1), ir.uniform(104, -1, 1), ir.uniform(105, -1, 1)};
            theory::LandingModel hat = theory::landing_from_covariance(mu_hat, sh);
            theory::LandingModel bar = theory::landing_from_covariance(mu_bar, sb);
            theory::MomentCheck mc =
                theory::second_moment_check(hat, bar, sx, cfg.moment_samples, mix2(seed, 200 + inst));
            if (mc.rel_error > worst_rel) {
                worst_rel = mc.rel_error;
                worst_emp = mc.empirical;
                worst_ana = mc.analytic;
                worst_z = mc.z_score;
            }
        }
        TheoryCheck c;
        c.check = "second_moment_identity";
        c.samples = cfg.moment_samples;
        c.empirical = worst_emp;
        c.analytic = worst_ana;
        c.rel_error = worst_rel;
        c.tolerance = 0.02;
        c.pass = worst_rel < c.tolerance;
        c.z_score = worst_z;
        checks.push_back(c);
    }

    // Taylor cases with an exactly linear denoiser
    {
        theory::LinearDenoiser den;
        den.jacobian = random_mat3(rng, 300, 0.8);
        const double sigma = 0.1;

        theory::TaylorReport r1 = theory::taylor_case1(den, sigma, cfg.mc_samples, mix2(seed, 301));
        checks.push_back({"taylor_case1", r1.samples, r1.empirical, r1.analytic, r1.rel_error, 0.05,
                          r1.rel_error < 0.05, r1.z_score});

        theory::LinearDenoiser ident;
        ident.jacobian = {{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
        theory::TaylorReport ri = theory::taylor_case1(ident, sigma, cfg.mc_samples, mix2(seed, 302));
        checks.push_back({"taylor_case1_identity", ri.samples, ri.empirical, 0.12, ri.rel_error, 0.05,
                          std::fabs(ri.empirical - 0.12) / 0.12 < 0.05, ri.z_score});

        theory::LinearDenoiser small;
        small.jacobian = random_mat3(rng, 310, 0.01);
        theory::TaylorReport r2 = theory::taylor_case2(small, {0.5, 0, 0}, {-0.5, 0, 0}, sigma,
                                                       cfg.mc_samples, mix2(seed, 303));
        TheoryCheck c2{"taylor_case2_bias_floor", r2.samples, r2.empirical, r2.bias_floor, 0.0, 0.02,
                       false, r2.z_score};
        c2.rel_error = std::fabs(r2.empirical - r2.bias_floor) / r2.bias_floor;
        c2.pass = c2.rel_error < c2.tolerance;
        checks.push_back(c2);

        const Vec3 delta{0.2, -0.1, 0.15};
        theory::TaylorReport r3 =
            theory::taylor_case3(den, sigma, delta, cfg.mc_samples, mix2(seed, 304));
        checks.push_back({"taylor_case3", r3.samples, r3.empirical, r3.analytic, r3.rel_error, 0.05,
                          r3.rel_error < 0.05, r3.z_score});

        // residual grows monotonically with ||delta||
        double prev = -1.0;
        bool monotone = true;
        for (double s : {0.1, 0.2, 0.4}) {
            theory::TaylorReport rr =
                theory::taylor_case3(den, sigma, s * delta, cfg.mc_samples, mix2(seed, 305));
            if (rr.empirical <= prev) monotone = false;
            prev = rr.empirical;
        }
        checks.push_back({"taylor_case3_delta_monotone", cfg.mc_samples, prev, prev, 0.0, 0.0,
                          monotone, 0.0});
    }

    // projection orthogonality on both manifolds
    {
        for (const auto& [name, manifold] :
             {std::pair<std::string, theory::Manifold>{"sphere", {theory::Manifold::Kind::sphere, 1.0}},
              std::pair<std::string, theory::Manifold>{
                  "torus", {theory::Manifold::Kind::torus, 1.0, kTorusMajor, kTorusMinor}}}) {
            CounterRng pr = rng.fork(mix2(0x70726f6aull, name.size()));
            double worst = 0.0;
            for (int i = 0; i < 1000; ++i) {
                Vec3 x{pr.uniform(3 * i, -2.0, 2.0), pr.uniform(3 * i + 1, -2.0, 2.0),
                       pr.uniform(3 * i + 2, -2.0, 2.0)};
                theory::SurfaceTarget t;
                try {
                    t = theory::projection(x, manifold);
                } catch (const theory::SingularityError&) {
                    continue;
                }
                auto basis = theory::tangent_basis(t);
                const Vec3 d = x - t.g;
                worst = std::max(worst, std::fabs(dot(d, basis[0])));
                worst = std::max(worst, std::fabs(dot(d, basis[1])));
            }
            checks.push_back({"projection_orthogonality_" + name, 1000, worst, 0.0, 0.0, 1e-9,
                              worst <= 1e-9, 0.0});
        }
    }

    // bridge experiment: how closely the learned mirror realizes the exact
    // sign flip on a noisy sphere (reported, never asserted)
    if (!checkpoint.empty()) {
        net::ModelParams params = net::load_model(checkpoint);
        auto [cloud, mesh] = make_shape(ShapeKind::sphere, 512, mix2(seed, 400));
        PointCloud noisy = add_noise(cloud, {NoiseKind::gaussian, 0.02, mix2(seed, 401)});
        ad::Tape tape;
        net::ModelVars mv = net::register_params(tape, params, false);
        net::Trajectory traj = net::denoise_forward(tape, noisy, mv, params.hyper, true);
        const theory::Manifold sphere{theory::Manifold::Kind::sphere, 1.0};
        double gap = 0.0, noise_mag = 0.0;
        const auto x0 = traj.clouds[0].val().to_points();
        const auto xt = traj.mirrors[0].x_tilde.val().to_points();
        for (size_t i = 0; i < x0.size(); ++i) {
            const Vec3 g = theory::projection(x0[i], sphere).g;
            const Vec3 ideal = 2.0 * g - x0[i];
            gap += norm(xt[i] - ideal);
            noise_mag += norm(x0[i] - g);
        }
        TheoryCheck c;
        c.check = "mirror_bridge_gap";
        c.samples = x0.size();
        c.empirical = gap / x0.size();
        c.analytic = noise_mag / x0.size();  // mean noise magnitude, for scale
        c.rel_error = c.analytic > 0 ? c.empirical / c.analytic : 0.0;
        c.tolerance = 0.0;
        c.pass = true;  // descriptive only
        c.z_score = 0.0;
        checks.push_back(c);
    }

    return checks;
}

inline bool cmd_theory(const RunConfig& cfg, const std::string& checkpoint = "") {
    std::vector<TheoryCheck> checks = run_theory_checks(cfg, checkpoint);
    json report;
    report["checks"] = json::array();
    bool all_pass = true;
    for (const TheoryCheck& c : checks) {
        report["checks"].push_back(theory_check_json(c));
        all_pass = all_pass && c.pass;
    }
    report["all_pass"] = all_pass;
    fs::create_directories(cfg.report_dir);
    std::ofstream f(cfg.report_dir + "/theory.json", std::ios::trunc);
    f << report.dump(2) << "\n";
    return all_pass;
}

} // namespace simpc::pipe
