#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "simpc/autodiff.hpp"
#include "simpc/checkpoint.hpp"
#include "simpc/error.hpp"
#include "simpc/geometry.hpp"
#include "simpc/rng.hpp"

namespace simpc::net {

struct Hyper {
    int k = 32;
    int c = 16;              // feature width C
    int blocks = 2;          // L denoiser blocks
    int encoder_layers = 3;  // T graph-conv layers
    double max_step = 1.0;   // tanh output scaling
    double w1 = 1.0;
    double w2 = 2.0;
    double lambda_mpc = 1.0;
    bool mirror_nbr_in_input = false;  // neighborhood in X^{l-1} instead of X^l

    bool operator==(const Hyper&) const = default;
};

struct Linear {
    ad::Tensor w, b;
};

struct EncoderParams {
    std::vector<Linear> self_mlp;  // width_t -> width_{t+1}
    std::vector<Linear> edge_mlp;  // 2*width_t -> width_{t+1}
};

struct PSAParams {
    Linear q, k, v;           // C -> C
    Linear score_h, score_o;  // 2C -> C/4 -> C
};

struct DecoderParams {
    Linear fc1;  // C -> C/2
    Linear fc2;  // C/2 -> 3, zero-initialized: training starts at identity
};

struct ModelParams {
    Hyper hyper;
    EncoderParams encoder;
    std::vector<PSAParams> psa;
    std::vector<DecoderParams> dec;
    Linear lift;  // shared 3 -> C coordinate lift for the mirror branch

    // Fixed traversal order shared by gradient accumulation, Adam state and
    // the checkpoint container.
    std::vector<std::pair<std::string, ad::Tensor*>> named_tensors() {
        std::vector<std::pair<std::string, ad::Tensor*>> out;
        auto lin = [&](const std::string& prefix, Linear& l) {
            out.emplace_back(prefix + "/w", &l.w);
            out.emplace_back(prefix + "/b", &l.b);
        };
        for (size_t t = 0; t < encoder.self_mlp.size(); ++t) {
            lin("enc" + std::to_string(t) + "/self", encoder.self_mlp[t]);
            lin("enc" + std::to_string(t) + "/edge", encoder.edge_mlp[t]);
        }
        for (size_t l = 0; l < psa.size(); ++l) {
            const std::string p = "blk" + std::to_string(l);
            lin(p + "/psa/q", psa[l].q);
            lin(p + "/psa/k", psa[l].k);
            lin(p + "/psa/v", psa[l].v);
            lin(p + "/psa/score_h", psa[l].score_h);
            lin(p + "/psa/score_o", psa[l].score_o);
            lin(p + "/dec/fc1", dec[l].fc1);
            lin(p + "/dec/fc2", dec[l].fc2);
        }
        lin("lift", lift);
        return out;
    }
    std::vector<ad::Tensor*> tensor_ptrs() {
        std::vector<ad::Tensor*> out;
        for (auto& [name, t] : named_tensors()) out.push_back(t);
        return out;
    }
    size_t parameter_count() {
        size_t n = 0;
        for (auto& [name, t] : named_tensors()) n += t->numel();
        return n;
    }
};

// encoder widths rise from 3 to C: C/4, C/2, C for the default T=3
inline std::vector<int> encoder_widths(const Hyper& h) {
    std::vector<int> w{3};
    for (int t = 1; t <= h.encoder_layers; ++t) {
        int width = h.c >> (h.encoder_layers - t);
        w.push_back(std::max(width, 2));
    }
    w.back() = h.c;
    return w;
}

inline ModelParams init_params(const Hyper& hyper, uint64_t seed) {
    if (hyper.w1 != 1.0) throw ParamError("init_params: w1 is fixed at 1");
    if (!(hyper.w2 > hyper.w1)) throw ParamError("init_params: w2 must exceed w1");
    ModelParams p;
    p.hyper = hyper;
    CounterRng rng(seed, 0x696e6974ull);
    uint64_t tensor_id = 0;

    // uniform Kaiming-style fan-in init: U(-a, a), a = sqrt(3/fan_in)
    auto make = [&](int in, int out, size_t fan_in, bool zero = false) {
        Linear l;
        l.w = ad::Tensor({in, out});
        l.b = ad::Tensor({out});
        if (!zero) {
            const double a = std::sqrt(3.0 / static_cast<double>(fan_in));
            CounterRng tr = rng.fork(tensor_id);
            for (size_t i = 0; i < l.w.v.size(); ++i) l.w.v[i] = tr.uniform(i, -a, a);
        }
        ++tensor_id;
        return l;
    };

    const std::vector<int> widths = encoder_widths(hyper);
    for (int t = 0; t < hyper.encoder_layers; ++t) {
        p.encoder.self_mlp.push_back(make(widths[t], widths[t + 1], widths[t]));
        // the sum over k neighbors is part of the effective fan-in
        p.encoder.edge_mlp.push_back(
            make(2 * widths[t], widths[t + 1], static_cast<size_t>(2 * widths[t]) * hyper.k));
    }
    const int c = hyper.c;
    const int hid = std::max(c / 4, 2);
    for (int l = 0; l < hyper.blocks; ++l) {
        PSAParams ps;
        ps.q = make(c, c, c);
        ps.k = make(c, c, c);
        ps.v = make(c, c, c);
        ps.score_h = make(2 * c, hid, 2 * c);
        ps.score_o = make(hid, c, hid);
        p.psa.push_back(std::move(ps));
        DecoderParams d;
        d.fc1 = make(c, std::max(c / 2, 2), c);
        d.fc2 = make(std::max(c / 2, 2), 3, std::max(c / 2, 2), /*zero=*/true);
        p.dec.push_back(std::move(d));
    }
    p.lift = make(3, c, 3);
    return p;
}

// ------------------------- tape registration --------------------------------

struct LinearVar {
    ad::Var w, b;
};

struct ModelVars {
    std::vector<LinearVar> enc_self, enc_edge;
    struct PsaVar {
        LinearVar q, k, v, score_h, score_o;
    };
    struct DecVar {
        LinearVar fc1, fc2;
    };
    std::vector<PsaVar> psa;
    std::vector<DecVar> dec;
    LinearVar lift;
    std::vector<ad::Var> flat;  // same order as ModelParams::named_tensors()
};

inline ModelVars register_params(ad::Tape& tape, ModelParams& params, bool requires_grad = true) {
    ModelVars mv;
    auto lin = [&](Linear& l) {
        LinearVar lv{tape.leaf(l.w, requires_grad), tape.leaf(l.b, requires_grad)};
        mv.flat.push_back(lv.w);
        mv.flat.push_back(lv.b);
        return lv;
    };
    for (size_t t = 0; t < params.encoder.self_mlp.size(); ++t) {
        mv.enc_self.push_back(lin(params.encoder.self_mlp[t]));
        mv.enc_edge.push_back(lin(params.encoder.edge_mlp[t]));
    }
    for (size_t l = 0; l < params.psa.size(); ++l) {
        ModelVars::PsaVar pv;
        pv.q = lin(params.psa[l].q);
        pv.k = lin(params.psa[l].k);
        pv.v = lin(params.psa[l].v);
        pv.score_h = lin(params.psa[l].score_h);
        pv.score_o = lin(params.psa[l].score_o);
        mv.psa.push_back(pv);
        ModelVars::DecVar dv;
        dv.fc1 = lin(params.dec[l].fc1);
        dv.fc2 = lin(params.dec[l].fc2);
        mv.dec.push_back(dv);
    }
    mv.lift = lin(params.lift);
    return mv;
}

// accumulate tape gradients into flat buffers ordered like named_tensors()
inline void accumulate_grads(ad::Tape& tape, const ModelVars& mv,
                             std::vector<std::vector<double>>& acc, double scale = 1.0) {
    if (acc.size() != mv.flat.size()) throw ParamError("accumulate_grads: buffer count mismatch");
    for (size_t i = 0; i < mv.flat.size(); ++i) {
        const ad::Var& v = mv.flat[i];
        if (!tape.has_grad(v.id)) continue;
        const auto& g = tape.nodes[v.id].grad;
        if (acc[i].size() != g.size()) throw ParamError("accumulate_grads: shape mismatch");
        for (size_t j = 0; j < g.size(); ++j) acc[i][j] += scale * g[j];
    }
}

inline std::vector<std::vector<double>> zero_grads(ModelParams& params) {
    std::vector<std::vector<double>> out;
    for (auto& [name, t] : params.named_tensors()) out.emplace_back(t->numel(), 0.0);
    return out;
}

// ------------------------------ forward -------------------------------------

inline ad::Var linear(ad::Var x, const LinearVar& l) { return ad::affine(x, l.w, l.b); }

// Eq.-style dynamic-graph encoder: per layer, recompute k-NN in the current
// feature space, then g' = self(g) + sum_j relu(edge([g_i || g_j - g_i])).
inline ad::Var encode(ad::Var cloud, const ModelVars& mv, const Hyper& hyper) {
    const int n = cloud.val().shape[0];
    if (n <= hyper.k) throw ParamError("encode: need more points than neighbors");
    ad::Var g = cloud;
    for (size_t t = 0; t < mv.enc_self.size(); ++t) {
        const ad::Tensor& gv = g.val();
        NeighborIndex idx = knn_self(gv.v.data(), n, gv.shape[1], hyper.k);
        ad::Var gi = ad::expand_neighbors(g, hyper.k);
        ad::Var gj = ad::gather_rows(g, idx);
        ad::Var edge = ad::concat_last({gi, ad::sub(gj, gi)});
        ad::Var eh = ad::relu(linear(edge, mv.enc_edge[t]));
        ad::Var agg = ad::reduce(eh, ad::Reduce::sum, 1);
        g = ad::add(linear(g, mv.enc_self[t]), agg);
    }
    return g;
}

// Channel-wise point self-attention. Queries and keys/values may come from
// different feature tensors (the mirror branch lifts coordinates into the
// query side); the main branch passes the same tensor twice.
inline ad::Var psa_core(ad::Var query_feat, ad::Var kv_feat, const NeighborIndex& idx,
                        const ModelVars::PsaVar& pv, int k) {
    const int n = query_feat.val().shape[0];
    if (k > n - 1) throw ParamError("psa: k exceeds N-1");
    ad::Var q = linear(query_feat, pv.q);
    ad::Var kf = linear(kv_feat, pv.k);
    ad::Var vf = linear(kv_feat, pv.v);
    ad::Var qe = ad::expand_neighbors(q, k);
    ad::Var kg = ad::gather_rows(kf, idx);
    ad::Var pair = ad::concat_last({qe, kg});
    ad::Var sh = ad::relu(linear(pair, pv.score_h));
    ad::Var score = linear(sh, pv.score_o);
    ad::Var alpha = ad::softmax_neighbors(score);
    ad::Var vg = ad::gather_rows(vf, idx);
    return ad::reduce(ad::mul(alpha, vg), ad::Reduce::sum, 1);
}

inline ad::Var psa(ad::Var features, ad::Var coords, const ModelVars::PsaVar& pv, int k,
                   const NeighborIndex* neighbor_override = nullptr) {
    const ad::Tensor& cv = coords.val();
    NeighborIndex idx = neighbor_override
                            ? *neighbor_override
                            : knn_self(cv.v.data(), cv.shape[0], cv.shape[1], k);
    return psa_core(features, features, idx, pv, k);
}

// d = max_step * tanh(fc2(relu(fc1(f))))
inline ad::Var decode(ad::Var features, const ModelVars::DecVar& dv, double max_step) {
    ad::Var h = ad::relu(linear(features, dv.fc1));
    return ad::scale(ad::tanh_op(linear(h, dv.fc2)), max_step);
}

struct MirrorRecord {
    ad::Var x_hat;    // denoised seed points, x + w1*d
    ad::Var x_tilde;  // mirror inputs, x + w2*d
    ad::Var x_bar;    // denoised mirror points
    ad::Var d;        // seed displacement
    ad::Var d_tilde;  // mirror displacement
};

struct Trajectory {
    std::vector<ad::Var> clouds;         // X^0 .. X^L
    std::vector<ad::Var> displacements;  // d^1 .. d^L
    std::vector<ad::Var> features;       // U^0 .. U^L
    std::vector<MirrorRecord> mirrors;   // one per block when recorded
};

// Mirror branch of one denoiser block, sharing the block's PSA and decoder
// weights. x_prev/x_next are X^{l-1}/X^l, u is the block input feature U^{l-1},
// d the block displacement. `x_tilde_pre` carries the mirror input already
// materialized by the block loop (the X^l-as-midpoint construction).
inline MirrorRecord mirror_branch(ad::Var x_prev, ad::Var x_next, ad::Var u, ad::Var d,
                                  ad::Var x_hat, const ModelVars& mv, size_t block,
                                  const Hyper& hyper, const ad::Var* x_tilde_pre = nullptr) {
    const int n = x_prev.val().shape[0];
    if (n <= hyper.k + 1) throw ParamError("mirror_branch: exclusion leaves too few neighbors");

    ad::Var x_tilde = x_tilde_pre ? *x_tilde_pre : ad::add_scaled(x_prev, d, hyper.w2);

    ad::Var ref = hyper.mirror_nbr_in_input ? x_prev : x_next;
    std::vector<int32_t> self(n);
    for (int i = 0; i < n; ++i) self[i] = i;
    const ad::Tensor& qv = x_tilde.val();
    const ad::Tensor& rv = ref.val();
    NeighborIndex idx = knn(qv.v.data(), n, rv.v.data(), n, 3, hyper.k, self.data());

    ad::Var kv = ad::add(u, linear(ref, mv.lift));
    ad::Var qf = ad::add(u, linear(x_tilde, mv.lift));
    ad::Var f_tilde = psa_core(qf, kv, idx, mv.psa[block], hyper.k);
    ad::Var d_tilde = decode(f_tilde, mv.dec[block], hyper.max_step);
    ad::Var x_bar = ad::add(x_tilde, d_tilde);
    return {x_hat, x_tilde, x_bar, d, d_tilde};
}

inline Trajectory denoise_forward(ad::Tape& tape, const PointCloud& cloud, const ModelVars& mv,
                                  const Hyper& hyper, bool with_mirror) {
    const int n = static_cast<int>(cloud.size());
    if (n <= hyper.k) throw ParamError("denoise_forward: need more points than neighbors");

    Trajectory traj;
    ad::Var x = tape.constant(ad::Tensor::from_points(cloud.pts));
    ad::Var u = encode(x, mv, hyper);
    traj.clouds.push_back(x);
    traj.features.push_back(u);

    const bool symmetric = hyper.w2 == 2.0 * hyper.w1;
    for (int l = 0; l < hyper.blocks; ++l) {
        const ad::Tensor& xv = x.val();
        NeighborIndex idx = knn_self(xv.v.data(), n, 3, hyper.k);
        ad::Var f = psa_core(u, u, idx, mv.psa[l], hyper.k);
        ad::Var d = decode(f, mv.dec[l], hyper.max_step);
        // w1 = 1: the denoised seed IS X^l. Under the symmetric w2 = 2*w1
        // setting X^l is materialized as the midpoint of x and the mirror
        // input, so x_hat == (x + x_tilde)/2 holds bit-for-bit.
        ad::Var x_tilde;
        ad::Var x_next;
        if (symmetric) {
            x_tilde = ad::add_scaled(x, d, hyper.w2);
            x_next = ad::scale(ad::add(x, x_tilde), 0.5);
        } else {
            x_next = ad::add(x, d);
        }
        if (with_mirror)
            traj.mirrors.push_back(mirror_branch(x, x_next, u, d, x_next, mv,
                                                 static_cast<size_t>(l), hyper,
                                                 symmetric ? &x_tilde : nullptr));
        traj.displacements.push_back(d);
        traj.clouds.push_back(x_next);
        traj.features.push_back(f);
        x = x_next;
        u = f;
    }
    return traj;
}

// Inference: repeated mirror-free forward passes, feeding X^L back in.
inline PointCloud denoise_apply(const PointCloud& in, ModelParams& params, int iterations = 1) {
    if (iterations < 1) throw ParamError("denoise_apply: iterations must be >= 1");
    PointCloud cur = in;
    for (int it = 0; it < iterations; ++it) {
        ad::Tape tape;
        ModelVars mv = register_params(tape, params, /*requires_grad=*/false);
        Trajectory traj = denoise_forward(tape, cur, mv, params.hyper, /*with_mirror=*/false);
        cur.pts = traj.clouds.back().val().to_points();
    }
    return cur;
}

// ----------------------------- checkpoints ----------------------------------

inline void save_model(const std::string& path, ModelParams& params) {
    std::vector<ckpt::NamedTensor> ts;
    const Hyper& h = params.hyper;
    auto hyper_scalar = [&](const std::string& name, double v) {
        ts.push_back({"hyper/" + name, ad::Tensor::scalar(v)});
    };
    hyper_scalar("k", h.k);
    hyper_scalar("c", h.c);
    hyper_scalar("blocks", h.blocks);
    hyper_scalar("encoder_layers", h.encoder_layers);
    hyper_scalar("max_step", h.max_step);
    hyper_scalar("w1", h.w1);
    hyper_scalar("w2", h.w2);
    hyper_scalar("lambda_mpc", h.lambda_mpc);
    hyper_scalar("mirror_nbr_in_input", h.mirror_nbr_in_input ? 1.0 : 0.0);
    for (auto& [name, t] : params.named_tensors()) ts.push_back({name, *t});
    ckpt::save(path, ts);
}

inline ModelParams load_model(const std::string& path) {
    std::vector<ckpt::NamedTensor> ts = ckpt::load(path);
    auto find = [&](const std::string& name) -> const ad::Tensor& {
        for (const auto& nt : ts)
            if (nt.name == name) return nt.tensor;
        throw IoError("checkpoint: missing tensor '" + name + "' in " + path);
    };
    Hyper h;
    h.k = static_cast<int>(find("hyper/k").v[0]);
    h.c = static_cast<int>(find("hyper/c").v[0]);
    h.blocks = static_cast<int>(find("hyper/blocks").v[0]);
    h.encoder_layers = static_cast<int>(find("hyper/encoder_layers").v[0]);
    h.max_step = find("hyper/max_step").v[0];
    h.w1 = find("hyper/w1").v[0];
    h.w2 = find("hyper/w2").v[0];
    h.lambda_mpc = find("hyper/lambda_mpc").v[0];
    h.mirror_nbr_in_input = find("hyper/mirror_nbr_in_input").v[0] != 0.0;

    ModelParams params = init_params(h, 0);
    for (auto& [name, t] : params.named_tensors()) {
        const ad::Tensor& src = find(name);
        if (src.shape != t->shape) throw IoError("checkpoint: shape mismatch for tensor '" + name + "'");
        *t = src;
    }
    return params;
}

} // namespace simpc::net
