#pragma once

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "simpc/error.hpp"
#include "simpc/geometry.hpp"
#include "simpc/rng.hpp"
#include "simpc/util.hpp"

namespace simpc::theory {

struct SingularityError : ParamError {
    explicit SingularityError(const std::string& msg) : ParamError(msg) {}
};

using Mat3 = std::array<std::array<double, 3>, 3>;

inline Vec3 matvec(const Mat3& m, const Vec3& v) {
    return {m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2]};
}

inline double frobenius2(const Mat3& m) {
    double s = 0.0;
    for (const auto& row : m)
        for (double x : row) s += x * x;
    return s;
}

inline double trace(const Mat3& m) { return m[0][0] + m[1][1] + m[2][2]; }

// ---------------------------------------------------------------------------
// Anisotropic landing model: tangential 2x2 covariance in an orthonormal
// tangent frame plus an independent normal-direction variance.
// ---------------------------------------------------------------------------
struct LandingModel {
    Vec3 mu{0, 0, 0};
    std::array<std::array<double, 2>, 2> sigma_tangential{{{0, 0}, {0, 0}}};
    double sigma_normal = 0.0;  // standard deviation along the normal
    Vec3 normal{0, 0, 1};
    std::array<Vec3, 2> tangent_frame{{{1, 0, 0}, {0, 1, 0}}};

    void validate() const {
        auto unit = [](const Vec3& v) { return std::fabs(norm(v) - 1.0) <= 1e-12; };
        if (!unit(normal) || !unit(tangent_frame[0]) || !unit(tangent_frame[1]))
            throw ParamError("landing model: frame vectors must be unit length");
        if (std::fabs(dot(tangent_frame[0], tangent_frame[1])) > 1e-12 ||
            std::fabs(dot(tangent_frame[0], normal)) > 1e-12 ||
            std::fabs(dot(tangent_frame[1], normal)) > 1e-12)
            throw ParamError("landing model: frame is not orthonormal");
        const auto& s = sigma_tangential;
        if (std::fabs(s[0][1] - s[1][0]) > 1e-12) throw ParamError("landing model: covariance not symmetric");
        const double det = s[0][0] * s[1][1] - s[0][1] * s[1][0];
        if (s[0][0] < -1e-15 || s[1][1] < -1e-15 || det < -1e-12)
            throw ParamError("landing model: tangential covariance not PSD");
        if (sigma_normal < 0.0) throw ParamError("landing model: negative normal sigma");
    }

    // full 3x3 covariance T * S * T^T + sigma_n^2 * n n^T
    Mat3 covariance() const {
        Mat3 c{};
        const auto& t = tangent_frame;
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                double v = 0.0;
                for (int a = 0; a < 2; ++a)
                    for (int b = 0; b < 2; ++b) v += t[a][i] * sigma_tangential[a][b] * t[b][j];
                v += sigma_normal * sigma_normal * normal[i] * normal[j];
                c[i][j] = v;
            }
        return c;
    }
};

inline std::vector<Vec3> sample_landing(const LandingModel& model, size_t count, uint64_t seed) {
    if (count < 1) throw ParamError("sample_landing: count must be positive");
    model.validate();
    // Cholesky of the 2x2 tangential covariance
    const auto& s = model.sigma_tangential;
    const double a11 = std::sqrt(std::max(s[0][0], 0.0));
    const double a21 = a11 > 0.0 ? s[0][1] / a11 : 0.0;
    const double a22 = std::sqrt(std::max(s[1][1] - a21 * a21, 0.0));

    std::vector<Vec3> out(count);
    CounterRng rng(seed, 0x6c616e64ull);
    parallel_for(count, [&](size_t i) {
        const double z1 = rng.normal(3 * i);
        const double z2 = rng.normal(3 * i + 1);
        const double z3 = rng.normal(3 * i + 2);
        const double t1 = a11 * z1;
        const double t2 = a21 * z1 + a22 * z2;
        out[i] = model.mu + t1 * model.tangent_frame[0] + t2 * model.tangent_frame[1] +
                 (model.sigma_normal * z3) * model.normal;
    });
    return out;
}

// ---------------------------------------------------------------------------
// Second-moment identity: E||x_hat - x_bar||^2 against the closed form
// ||mu_hat - mu_bar||^2 + Tr(S_hat + S_bar - 2 S_cross), sampling the joint
// 6-d Gaussian through its Cholesky factor.
// ---------------------------------------------------------------------------
struct MomentCheck {
    double empirical = 0.0;
    double analytic = 0.0;
    double rel_error = 0.0;
    double z_score = 0.0;
    size_t samples = 0;
};

namespace detail {

// Cholesky with a small clamp for semi-definite inputs; throws if clearly
// indefinite.
template <size_t N>
std::array<std::array<double, N>, N> cholesky(const std::array<std::array<double, N>, N>& a) {
    std::array<std::array<double, N>, N> l{};
    for (size_t i = 0; i < N; ++i) {
        for (size_t j = 0; j <= i; ++j) {
            double sum = a[i][j];
            for (size_t p = 0; p < j; ++p) sum -= l[i][p] * l[j][p];
            if (i == j) {
                if (sum < -1e-9) throw ParamError("covariance is not positive semidefinite");
                l[i][j] = std::sqrt(std::max(sum, 0.0));
            } else {
                l[i][j] = l[j][j] > 0.0 ? sum / l[j][j] : 0.0;
            }
        }
    }
    return l;
}

} // namespace detail

inline MomentCheck second_moment_check(const LandingModel& hat, const LandingModel& bar,
                                       const Mat3& cross_cov, size_t count, uint64_t seed) {
    hat.validate();
    bar.validate();
    const Mat3 sh = hat.covariance();
    const Mat3 sb = bar.covariance();

    std::array<std::array<double, 6>, 6> joint{};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            joint[i][j] = sh[i][j];
            joint[3 + i][3 + j] = sb[i][j];
            joint[i][3 + j] = cross_cov[i][j];
            joint[3 + i][j] = cross_cov[j][i];
        }
    const auto l = detail::cholesky<6>(joint);

    const Vec3 dmu = hat.mu - bar.mu;
    const double analytic = norm2(dmu) + trace(sh) + trace(sb) - 2.0 * trace(cross_cov);

    CounterRng rng(seed, 0x6d6f6d32ull);
    std::vector<double> vals(count);
    parallel_for(count, [&](size_t n) {
        double z[6], y[6];
        for (int i = 0; i < 6; ++i) z[i] = rng.normal(6 * n + i);
        for (int i = 0; i < 6; ++i) {
            double s = 0.0;
            for (int j = 0; j <= i; ++j) s += l[i][j] * z[j];
            y[i] = s;
        }
        const Vec3 xh = hat.mu + Vec3{y[0], y[1], y[2]};
        const Vec3 xb = bar.mu + Vec3{y[3], y[4], y[5]};
        vals[n] = norm2(xh - xb);
    });
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(count > 1 ? count - 1 : 1);

    MomentCheck mc;
    mc.samples = count;
    mc.empirical = mean;
    mc.analytic = analytic;
    mc.rel_error = std::fabs(mean - analytic) / std::max(1e-300, std::fabs(analytic));
    const double sem = std::sqrt(var / static_cast<double>(count));
    mc.z_score = sem > 0.0 ? (mean - analytic) / sem : 0.0;
    return mc;
}

// ---------------------------------------------------------------------------
// Exactly linear denoiser: x_hat = s + J * n. First-order Taylor claims become
// equalities for it, so the appendix algebra is testable as stated.
// ---------------------------------------------------------------------------
struct LinearDenoiser {
    Mat3 jacobian{};  // d x_hat / d x
    Vec3 anchor{0, 0, 0};
};

struct TaylorReport {
    double empirical = 0.0;
    double analytic = 0.0;
    double rel_error = 0.0;
    double z_score = 0.0;
    double bias_floor = 0.0;  // case 2: ||s1 - s2||^2
    size_t samples = 0;
};

namespace detail {

template <typename PerSample>
TaylorReport run_mc(size_t count, uint64_t seed, uint64_t stream, double analytic, PerSample&& f) {
    CounterRng rng(seed, stream);
    std::vector<double> vals(count);
    parallel_for(count, [&](size_t i) { vals[i] = f(rng, i); });
    double mean = 0.0;
    for (double v : vals) mean += v;
    mean /= static_cast<double>(count);
    double var = 0.0;
    for (double v : vals) var += (v - mean) * (v - mean);
    var /= static_cast<double>(count > 1 ? count - 1 : 1);

    TaylorReport r;
    r.samples = count;
    r.empirical = mean;
    r.analytic = analytic;
    r.rel_error = std::fabs(mean - analytic) / std::max(1e-300, std::fabs(analytic));
    const double sem = std::sqrt(var / static_cast<double>(count));
    r.z_score = sem > 0.0 ? (mean - analytic) / sem : 0.0;
    return r;
}

} // namespace detail

// Case 1: exact sign-flip mirror. E||x_hat - x_bar||^2 = 4 E||J n||^2
//       = 4 sigma^2 ||J||_F^2.
inline TaylorReport taylor_case1(const LinearDenoiser& den, double noise_std, size_t count,
                                 uint64_t seed) {
    const double analytic = 4.0 * noise_std * noise_std * frobenius2(den.jacobian);
    return detail::run_mc(count, seed, 0x74633165ull, analytic, [&](const CounterRng& rng, size_t i) {
        const Vec3 n{noise_std * rng.normal(3 * i), noise_std * rng.normal(3 * i + 1),
                     noise_std * rng.normal(3 * i + 2)};
        const Vec3 jn = matvec(den.jacobian, n);
        const Vec3 diff = 2.0 * jn;  // (s + Jn) - (s - Jn)
        return norm2(diff);
    });
}

// Case 2: ambiguous correspondence. The ||s1 - s2||^2 bias floor persists
// however small J becomes.
inline TaylorReport taylor_case2(const LinearDenoiser& den, const Vec3& s1, const Vec3& s2,
                                 double noise_std, size_t count, uint64_t seed) {
    const double bias = norm2(s1 - s2);
    const double analytic = bias + 2.0 * noise_std * noise_std * frobenius2(den.jacobian);
    TaylorReport r =
        detail::run_mc(count, seed, 0x74633265ull, analytic, [&](const CounterRng& rng, size_t i) {
            const Vec3 n1{noise_std * rng.normal(6 * i), noise_std * rng.normal(6 * i + 1),
                          noise_std * rng.normal(6 * i + 2)};
            const Vec3 n2{noise_std * rng.normal(6 * i + 3), noise_std * rng.normal(6 * i + 4),
                          noise_std * rng.normal(6 * i + 5)};
            const Vec3 x1 = s1 + matvec(den.jacobian, n1);
            const Vec3 x2 = s2 + matvec(den.jacobian, n2);
            return norm2(x1 - x2);
        });
    r.bias_floor = bias;
    return r;
}

// Case 3: asymmetric mirror noise n_tilde = -n + delta. The residual J*delta
// does not vanish as noise_std -> 0:
// E||x_hat - x_bar||^2 = 4 sigma^2 ||J||_F^2 + ||J delta||^2.
inline TaylorReport taylor_case3(const LinearDenoiser& den, double noise_std, const Vec3& delta,
                                 size_t count, uint64_t seed) {
    const Vec3 jd = matvec(den.jacobian, delta);
    const double analytic = 4.0 * noise_std * noise_std * frobenius2(den.jacobian) + norm2(jd);
    return detail::run_mc(count, seed, 0x74633365ull, analytic, [&](const CounterRng& rng, size_t i) {
        const Vec3 n{noise_std * rng.normal(3 * i), noise_std * rng.normal(3 * i + 1),
                     noise_std * rng.normal(3 * i + 2)};
        const Vec3 diff = matvec(den.jacobian, 2.0 * n - delta);  // J n - J (-n + delta)
        return norm2(diff);
    });
}

// ---------------------------------------------------------------------------
// Closed-form closest-point projection onto the two test manifolds.
// ---------------------------------------------------------------------------
struct Manifold {
    enum class Kind { sphere, torus };
    Kind kind = Kind::sphere;
    double radius = 1.0;       // sphere
    double major = 1.0;        // torus ring radius
    double minor = 0.4;        // torus tube radius
};

struct SurfaceTarget {
    Vec3 g{0, 0, 0};
    Vec3 normal{0, 0, 1};
};

inline SurfaceTarget projection(const Vec3& x, const Manifold& m) {
    constexpr double tiny = 1e-12;
    switch (m.kind) {
        case Manifold::Kind::sphere: {
            const double r = norm(x);
            if (r < tiny) throw SingularityError("projection: sphere center is on the medial axis");
            const Vec3 n = (1.0 / r) * x;
            return {m.radius * n, n};
        }
        case Manifold::Kind::torus: {
            const double rho = std::hypot(x[0], x[1]);
            if (rho < tiny) throw SingularityError("projection: torus axis is on the medial axis");
            const Vec3 ring{m.major * x[0] / rho, m.major * x[1] / rho, 0.0};
            const Vec3 dir = x - ring;
            const double d = norm(dir);
            if (d < tiny) throw SingularityError("projection: torus core circle is on the medial axis");
            const Vec3 n = (1.0 / d) * dir;
            return {ring + m.minor * n, n};
        }
    }
    throw ParamError("projection: unknown manifold");
}

inline double surface_distance(const Vec3& x, const Manifold& m) {
    return norm(x - projection(x, m).g);
}

inline double mean_surface_distance(const PointCloud& cloud, const Manifold& m) {
    double s = 0.0;
    for (const Vec3& p : cloud.pts) s += surface_distance(p, m);
    return s / static_cast<double>(cloud.size());
}

// Jacobi eigen-decomposition of a symmetric 3x3 matrix; returns eigenvalues
// ascending with matching orthonormal eigenvectors. Used to cast arbitrary
// PSD covariances into the tangential/normal landing form.
struct Eigen3 {
    std::array<double, 3> values{};
    std::array<Vec3, 3> vectors{};
};

inline Eigen3 jacobi_eigen3(Mat3 a) {
    Mat3 v{{{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}};
    for (int sweep = 0; sweep < 64; ++sweep) {
        double off = std::fabs(a[0][1]) + std::fabs(a[0][2]) + std::fabs(a[1][2]);
        if (off < 1e-15) break;
        for (int p = 0; p < 2; ++p)
            for (int q = p + 1; q < 3; ++q) {
                if (std::fabs(a[p][q]) < 1e-18) continue;
                const double theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::fabs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int i = 0; i < 3; ++i) {
                    const double aip = a[i][p], aiq = a[i][q];
                    a[i][p] = c * aip - s * aiq;
                    a[i][q] = s * aip + c * aiq;
                }
                for (int i = 0; i < 3; ++i) {
                    const double api = a[p][i], aqi = a[q][i];
                    a[p][i] = c * api - s * aqi;
                    a[q][i] = s * api + c * aqi;
                }
                for (int i = 0; i < 3; ++i) {
                    const double vip = v[i][p], viq = v[i][q];
                    v[i][p] = c * vip - s * viq;
                    v[i][q] = s * vip + c * viq;
                }
            }
    }
    Eigen3 e;
    std::array<int, 3> ord{0, 1, 2};
    std::sort(ord.begin(), ord.end(), [&](int x, int y) { return a[x][x] < a[y][y]; });
    for (int i = 0; i < 3; ++i) {
        e.values[i] = a[ord[i]][ord[i]];
        e.vectors[i] = {v[0][ord[i]], v[1][ord[i]], v[2][ord[i]]};
        const double len = norm(e.vectors[i]);
        if (len > 0) e.vectors[i] = (1.0 / len) * e.vectors[i];
    }
    return e;
}

// arbitrary PSD covariance -> landing form via its eigenframe
inline LandingModel landing_from_covariance(const Vec3& mu, const Mat3& cov) {
    const Eigen3 e = jacobi_eigen3(cov);
    LandingModel m;
    m.mu = mu;
    m.tangent_frame = {e.vectors[0], e.vectors[1]};
    // re-orthogonalize the normal against the tangent pair
    Vec3 n = cross(e.vectors[0], e.vectors[1]);
    m.normal = (1.0 / norm(n)) * n;
    m.sigma_tangential = {{{std::max(e.values[0], 0.0), 0.0}, {0.0, std::max(e.values[1], 0.0)}}};
    m.sigma_normal = std::sqrt(std::max(e.values[2], 0.0));
    return m;
}

// tangent basis at a projection, for orthogonality checks
inline std::array<Vec3, 2> tangent_basis(const SurfaceTarget& t) {
    const Vec3& n = t.normal;
    Vec3 any = std::fabs(n[0]) < 0.9 ? Vec3{1, 0, 0} : Vec3{0, 1, 0};
    Vec3 t1 = cross(n, any);
    t1 = (1.0 / norm(t1)) * t1;
    Vec3 t2 = cross(n, t1);
    return {t1, t2};
}

} // namespace simpc::theory
