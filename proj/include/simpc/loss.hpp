#pragma once

#include <bit>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "simpc/autodiff.hpp"
#include "simpc/error.hpp"
#include "simpc/metrics.hpp"
#include "simpc/network.hpp"
#include "simpc/rng.hpp"

namespace simpc::mpgm {

enum class LossMode { simpc, sr_cd_only, sr_emd_only, noise_baseline };

inline const char* to_string(LossMode m) {
    switch (m) {
        case LossMode::simpc: return "simpc";
        case LossMode::sr_cd_only: return "sr_cd_only";
        case LossMode::sr_emd_only: return "sr_emd_only";
        case LossMode::noise_baseline: return "noise_baseline";
    }
    return "?";
}

inline LossMode loss_mode_from(const std::string& s) {
    if (s == "simpc") return LossMode::simpc;
    if (s == "sr_cd_only") return LossMode::sr_cd_only;
    if (s == "sr_emd_only") return LossMode::sr_emd_only;
    if (s == "noise_baseline") return LossMode::noise_baseline;
    throw ParamError("unknown loss mode: " + s);
}

// Re-export: the mirror branch is built inside the denoiser block because it
// shares the block's live tape state; callers wanting it standalone use this.
using net::mirror_branch;
using net::MirrorRecord;

// Eq.-form consistency: sum_i ||x_hat_i - x_bar_i||^2, gradient through both
// branches (no stop-gradient).
inline ad::Var mpc_loss(const MirrorRecord& rec) {
    return ad::sum_squares(ad::sub(rec.x_hat, rec.x_bar));
}

// CD(Xa^l, Xb^l) + CD(Xa^{l-1}, Xb^l) + CD(Xb^{l-1}, Xa^l); l is 1-based
inline ad::Var sr_loss(const net::Trajectory& a, const net::Trajectory& b, size_t l) {
    if (l < 1 || l >= a.clouds.size() || l >= b.clouds.size())
        throw ParamError("sr_loss: block index out of range");
    ad::Var t1 = differentiable_chamfer(a.clouds[l], b.clouds[l]);
    ad::Var t2 = differentiable_chamfer(a.clouds[l - 1], b.clouds[l]);
    ad::Var t3 = differentiable_chamfer(b.clouds[l - 1], a.clouds[l]);
    return ad::add(ad::add(t1, t2), t3);
}

struct LossBreakdown {
    ad::Var total;
    std::vector<double> mpc;  // per block, lambda-weighted, both variants
    std::vector<double> sr;   // per block
    std::optional<double> baseline;

    double total_value() const { return total.val().v[0]; }
};

// L_total = sum_l (lambda * (MPC_a^l + MPC_b^l) + SR^l)
inline LossBreakdown total_loss(const net::Trajectory& a, const net::Trajectory& b,
                                const net::Hyper& hyper) {
    const size_t blocks = a.clouds.size() - 1;
    if (b.clouds.size() != blocks + 1) throw ParamError("total_loss: trajectory lengths differ");
    if (a.mirrors.size() != blocks || b.mirrors.size() != blocks)
        throw StateError("total_loss: mirror records missing; run denoise_forward with_mirror");

    LossBreakdown out;
    ad::Var acc;
    for (size_t l = 1; l <= blocks; ++l) {
        ad::Var mpc_l = ad::scale(ad::add(mpc_loss(a.mirrors[l - 1]), mpc_loss(b.mirrors[l - 1])),
                                  hyper.lambda_mpc);
        ad::Var sr_l = sr_loss(a, b, l);
        out.mpc.push_back(mpc_l.val().v[0]);
        out.sr.push_back(sr_l.val().v[0]);
        ad::Var term = ad::add(mpc_l, sr_l);
        acc = (l == 1) ? term : ad::add(acc, term);
    }
    out.total = acc;
    return out;
}

// -------------------------- baseline objectives -----------------------------

// Eq.-form noise baseline: inject u ~ N(0, dsigma^2), predict -u with the
// one-block displacement head. The assembled cloud and target are constants;
// gradient reaches the parameters only.
inline ad::Var baseline_noise_loss(ad::Tape& tape, const PointCloud& cloud, const net::ModelVars& mv,
                                   const net::Hyper& hyper, double dsigma, uint64_t seed) {
    const size_t n = cloud.size();
    if (n <= static_cast<size_t>(hyper.k)) throw ParamError("baseline_noise_loss: cloud too small");

    CounterRng rng(seed, 0x62617365ull);
    ad::Tensor u({static_cast<int>(n), 3});
    for (size_t i = 0; i < n * 3; ++i) u.v[i] = dsigma * rng.normal(i);

    PointCloud noised = cloud;
    for (size_t i = 0; i < n; ++i)
        for (int a = 0; a < 3; ++a) noised.pts[i][a] += u.v[i * 3 + a];

    ad::Var x = tape.constant(ad::Tensor::from_points(noised.pts));
    ad::Var feat = net::encode(x, mv, hyper);
    const ad::Tensor& xv = x.val();
    NeighborIndex idx = knn_self(xv.v.data(), n, 3, hyper.k);
    ad::Var f = net::psa_core(feat, feat, idx, mv.psa[0], hyper.k);
    ad::Var d = net::decode(f, mv.dec[0], hyper.max_step);

    for (double& val : u.v) val = -val;
    ad::Var target = tape.constant(std::move(u));
    return ad::mse(d, target);
}

// one term of Eq.-form EMD matching with the assignment frozen per forward
inline ad::Var emd_term(ad::Var p, ad::Var q, size_t cap = kEmdDefaultCap) {
    const ad::Tensor& pv = p.val();
    const ad::Tensor& qv = q.val();
    if (pv.shape != qv.shape || pv.ndim() != 2 || pv.shape[1] != 3)
        throw ParamError("emd_term: need equal N x 3 tensors");
    PointCloud pc, qc;
    pc.pts = pv.to_points();
    qc.pts = qv.to_points();
    Assignment a = emd(pc, qc, cap);
    NeighborIndex match;
    match.n = pc.size();
    match.k = 1;
    match.idx.assign(a.mapping.begin(), a.mapping.end());
    ad::Var qm = ad::reshape(ad::gather_rows(q, match), pv.shape);
    return ad::scale(ad::sum_squares(ad::sub(p, qm)), 1.0 / static_cast<double>(pc.size()));
}

// EMD(Xa^L, Xb^0) + EMD(Xb^L, Xa^0) + EMD(Xa^L, Xb^L)
inline ad::Var baseline_emd_loss(const net::Trajectory& a, const net::Trajectory& b,
                                 size_t cap = kEmdDefaultCap) {
    ad::Var n2n_a = emd_term(a.clouds.back(), b.clouds.front(), cap);
    ad::Var n2n_b = emd_term(b.clouds.back(), a.clouds.front(), cap);
    ad::Var cons = emd_term(a.clouds.back(), b.clouds.back(), cap);
    return ad::add(ad::add(n2n_a, n2n_b), cons);
}

inline ad::Var baseline_emd_loss(ad::Tape& tape, const PointCloud& cloud_a, const PointCloud& cloud_b,
                                 const net::ModelVars& mv, const net::Hyper& hyper,
                                 size_t cap = kEmdDefaultCap) {
    if (cloud_a.size() != cloud_b.size()) throw ParamError("baseline_emd_loss: cloud sizes differ");
    net::Trajectory ta = net::denoise_forward(tape, cloud_a, mv, hyper, false);
    net::Trajectory tb = net::denoise_forward(tape, cloud_b, mv, hyper, false);
    return baseline_emd_loss(ta, tb, cap);
}

// ------------------------- mode dispatch for training -----------------------

struct PairLoss {
    LossBreakdown breakdown;
    double midpoint_max_ulp = 0.0;
};

inline bool mode_needs_mirror(LossMode m) { return m == LossMode::simpc; }

// --------------------------- mirror diagnostics -----------------------------

// representable-double distance; 0 means bitwise equal
inline uint64_t ulp_distance(double a, double b) {
    if (a == b) return 0;
    if (!std::isfinite(a) || !std::isfinite(b)) return UINT64_MAX;
    auto key = [](double x) {
        int64_t i = std::bit_cast<int64_t>(x);
        return i >= 0 ? static_cast<uint64_t>(i) + 0x8000000000000000ull
                      : 0x8000000000000000ull - static_cast<uint64_t>(-i);
    };
    uint64_t ka = key(a), kb = key(b);
    return ka > kb ? ka - kb : kb - ka;
}

// max over points and coordinates of ulp(x_hat, (x + x_tilde)/2) for one block
inline uint64_t midpoint_max_ulp(const ad::Tensor& x_prev, const MirrorRecord& rec) {
    const auto& x = x_prev.v;
    const auto& xh = rec.x_hat.val().v;
    const auto& xt = rec.x_tilde.val().v;
    uint64_t worst = 0;
    for (size_t i = 0; i < x.size(); ++i) {
        const double mid = (x[i] + xt[i]) * 0.5;
        worst = std::max(worst, ulp_distance(mid, xh[i]));
    }
    return worst;
}

inline uint64_t midpoint_max_ulp(const net::Trajectory& traj) {
    uint64_t worst = 0;
    for (size_t l = 0; l < traj.mirrors.size(); ++l)
        worst = std::max(worst, midpoint_max_ulp(traj.clouds[l].val(), traj.mirrors[l]));
    return worst;
}

} // namespace simpc::mpgm
