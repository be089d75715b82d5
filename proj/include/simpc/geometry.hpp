#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "simpc/error.hpp"
#include "simpc/rng.hpp"
#include "simpc/util.hpp"

namespace simpc {

using Vec3 = std::array<double, 3>;

inline Vec3 operator+(const Vec3& a, const Vec3& b) { return {a[0] + b[0], a[1] + b[1], a[2] + b[2]}; }
inline Vec3 operator-(const Vec3& a, const Vec3& b) { return {a[0] - b[0], a[1] - b[1], a[2] - b[2]}; }
inline Vec3 operator*(double s, const Vec3& a) { return {s * a[0], s * a[1], s * a[2]}; }
inline double dot(const Vec3& a, const Vec3& b) { return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]; }
inline Vec3 cross(const Vec3& a, const Vec3& b) {
    return {a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]};
}
inline double norm2(const Vec3& a) { return dot(a, a); }
inline double norm(const Vec3& a) { return std::sqrt(norm2(a)); }

enum class NoiseKind { gaussian, laplacian, uniform, discrete, anisotropic };

inline const char* to_string(NoiseKind k) {
    switch (k) {
        case NoiseKind::gaussian: return "gaussian";
        case NoiseKind::laplacian: return "laplacian";
        case NoiseKind::uniform: return "uniform";
        case NoiseKind::discrete: return "discrete";
        case NoiseKind::anisotropic: return "anisotropic";
    }
    return "?";
}

inline NoiseKind noise_kind_from(const std::string& s) {
    if (s == "gaussian") return NoiseKind::gaussian;
    if (s == "laplacian") return NoiseKind::laplacian;
    if (s == "uniform") return NoiseKind::uniform;
    if (s == "discrete") return NoiseKind::discrete;
    if (s == "anisotropic") return NoiseKind::anisotropic;
    throw ParamError("unknown noise kind: " + s);
}

struct NoiseModel {
    NoiseKind kind = NoiseKind::gaussian;
    double scale = 0.01;  // fraction of the bounding sphere radius
    uint64_t seed = 0;
};

struct NoiseMeta {
    std::string model;
    double scale = 0.0;
    uint64_t seed = 0;
};

struct PointCloud {
    std::vector<Vec3> pts;
    std::optional<std::string> clean_ref;
    std::optional<NoiseMeta> noise_meta;

    size_t size() const { return pts.size(); }
    const double* data() const { return pts.empty() ? nullptr : pts[0].data(); }
    double* data() { return pts.empty() ? nullptr : pts[0].data(); }
};

struct TriangleMesh {
    std::vector<Vec3> vertices;
    std::vector<std::array<int, 3>> faces;

    // Validates index ranges and rejects zero-area faces.
    void validate() const {
        const int v = static_cast<int>(vertices.size());
        for (size_t f = 0; f < faces.size(); ++f) {
            for (int c : faces[f])
                if (c < 0 || c >= v) throw ParamError("mesh face index out of range at face " + std::to_string(f));
            const Vec3& a = vertices[faces[f][0]];
            const Vec3& b = vertices[faces[f][1]];
            const Vec3& c = vertices[faces[f][2]];
            if (norm2(cross(b - a, c - a)) <= 0.0)
                throw ParamError("degenerate (zero-area) mesh face at index " + std::to_string(f));
        }
    }
};

// Row-major N x k neighbor table.
struct NeighborIndex {
    std::vector<int32_t> idx;
    size_t n = 0;
    size_t k = 0;

    int32_t at(size_t i, size_t j) const { return idx[i * k + j]; }
    const int32_t* row(size_t i) const { return idx.data() + i * k; }
};

// ---------------------------------------------------------------------------
// k nearest neighbors, brute force, ties broken by ascending index.
// `exclude`, when non-null, holds one reference index per query that must not
// appear in that query's row (-1 for none). Parallel over queries; each row is
// computed independently, so results do not depend on the worker count.
// ---------------------------------------------------------------------------
inline NeighborIndex knn(const double* queries, size_t m, const double* reference, size_t n,
                         size_t dim, size_t k, const int32_t* exclude = nullptr) {
    if (k == 0) throw ParamError("knn: k must be positive");
    if (exclude == nullptr) {
        if (k > n) throw ParamError("knn: k exceeds reference size");
    } else {
        if (n == 0 || k > n - 1) throw ParamError("knn: k exceeds reference size minus exclusion");
    }

    NeighborIndex out;
    out.n = m;
    out.k = k;
    out.idx.resize(m * k);

    parallel_for(m, [&](size_t qi) {
        const double* q = queries + qi * dim;
        std::vector<std::pair<double, int32_t>> cand(n);
        for (size_t r = 0; r < n; ++r) {
            const double* p = reference + r * dim;
            double d2 = 0.0;
            for (size_t d = 0; d < dim; ++d) {
                double diff = q[d] - p[d];
                d2 += diff * diff;
            }
            cand[r] = {d2, static_cast<int32_t>(r)};
        }
        int32_t skip = exclude ? exclude[qi] : -1;
        if (skip >= 0 && static_cast<size_t>(skip) < n)
            cand[skip].first = std::numeric_limits<double>::infinity();
        std::partial_sort(cand.begin(), cand.begin() + k, cand.end());
        for (size_t j = 0; j < k; ++j) out.idx[qi * k + j] = cand[j].second;
    });
    return out;
}

inline NeighborIndex knn(const PointCloud& queries, const PointCloud& reference, size_t k,
                         const std::vector<int32_t>* exclude = nullptr) {
    if (exclude && exclude->size() != queries.size())
        throw ParamError("knn: exclusion list size mismatch");
    return knn(queries.data(), queries.size(), reference.data(), reference.size(), 3, k,
               exclude ? exclude->data() : nullptr);
}

// Neighborhood of each point within its own cloud, self excluded.
inline NeighborIndex knn_self(const double* pts, size_t n, size_t dim, size_t k) {
    std::vector<int32_t> self(n);
    std::iota(self.begin(), self.end(), 0);
    return knn(pts, n, pts, n, dim, k, self.data());
}

// ---------------------------------------------------------------------------
// Minimal enclosing sphere (Welzl, move-to-front, deterministic shuffle).
// ---------------------------------------------------------------------------
struct Sphere {
    Vec3 center{0, 0, 0};
    double radius = 0.0;
};

namespace detail {

inline bool sphere_contains(const Sphere& s, const Vec3& p) {
    double slack = 1e-12 * std::max(1.0, s.radius * s.radius);
    return norm2(p - s.center) <= s.radius * s.radius + slack;
}

inline Sphere sphere_from(const Vec3& a) { return {a, 0.0}; }

inline Sphere sphere_from(const Vec3& a, const Vec3& b) {
    Vec3 c = 0.5 * (a + b);
    return {c, norm(a - c)};
}

inline Sphere sphere_from(const Vec3& a, const Vec3& b, const Vec3& c) {
    // circumcircle of the triangle, embedded in 3-space
    Vec3 ab = b - a, ac = c - a;
    Vec3 abxac = cross(ab, ac);
    double den = 2.0 * norm2(abxac);
    if (den > 1e-30) {
        Vec3 to_center = (1.0 / den) * (norm2(ac) * cross(abxac, ab) + norm2(ab) * cross(ac, abxac));
        Vec3 center = a + to_center;
        Sphere s{center, norm(center - a)};
        if (sphere_contains(s, b) && sphere_contains(s, c)) return s;
    }
    // near-collinear: fall back to the best diametral pair
    Sphere best{{0, 0, 0}, std::numeric_limits<double>::infinity()};
    for (const Sphere& s : {sphere_from(a, b), sphere_from(a, c), sphere_from(b, c)}) {
        if (sphere_contains(s, a) && sphere_contains(s, b) && sphere_contains(s, c) && s.radius < best.radius)
            best = s;
    }
    return best;
}

inline Sphere sphere_from(const Vec3& a, const Vec3& b, const Vec3& c, const Vec3& d) {
    // circumsphere: solve 2*(x - a)·(p - a) = |p - a|^2 for p in {b, c, d}
    Vec3 r1 = b - a, r2 = c - a, r3 = d - a;
    double m[3][3] = {{2 * r1[0], 2 * r1[1], 2 * r1[2]},
                      {2 * r2[0], 2 * r2[1], 2 * r2[2]},
                      {2 * r3[0], 2 * r3[1], 2 * r3[2]}};
    double rhs[3] = {norm2(r1), norm2(r2), norm2(r3)};
    double det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) -
                 m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0]) +
                 m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if (std::fabs(det) > 1e-30) {
        auto solve = [&](int col) {
            double t[3][3];
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j) t[i][j] = (j == col) ? rhs[i] : m[i][j];
            return (t[0][0] * (t[1][1] * t[2][2] - t[1][2] * t[2][1]) -
                    t[0][1] * (t[1][0] * t[2][2] - t[1][2] * t[2][0]) +
                    t[0][2] * (t[1][0] * t[2][1] - t[1][1] * t[2][0])) / det;
        };
        Vec3 x{solve(0), solve(1), solve(2)};
        Vec3 center = a + x;
        return {center, norm(x)};
    }
    // coplanar support: the minimal sphere is determined by some triple
    Sphere best{{0, 0, 0}, std::numeric_limits<double>::infinity()};
    const Vec3 quad[4] = {a, b, c, d};
    for (int skip = 0; skip < 4; ++skip) {
        Vec3 t[3];
        int w = 0;
        for (int i = 0; i < 4; ++i)
            if (i != skip) t[w++] = quad[i];
        Sphere s = sphere_from(t[0], t[1], t[2]);
        bool ok = true;
        for (const Vec3& p : quad)
            if (!sphere_contains(s, p)) ok = false;
        if (ok && s.radius < best.radius) best = s;
    }
    return best;
}

} // namespace detail

inline Sphere bounding_sphere(const PointCloud& cloud) {
    if (cloud.pts.empty()) throw ParamError("bounding_sphere: empty cloud");
    const size_t n = cloud.size();
    std::vector<uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    CounterRng rng(0x5bd1e995u);  // fixed shuffle seed: results must not vary between calls
    for (size_t i = n - 1; i > 0; --i)
        std::swap(order[i], order[rng.uniform_index(i, i + 1)]);

    auto pt = [&](size_t i) -> const Vec3& { return cloud.pts[order[i]]; };
    using detail::sphere_contains;
    using detail::sphere_from;

    Sphere ball = sphere_from(pt(0));
    for (size_t i = 1; i < n; ++i) {
        if (sphere_contains(ball, pt(i))) continue;
        ball = sphere_from(pt(i));
        for (size_t j = 0; j < i; ++j) {
            if (sphere_contains(ball, pt(j))) continue;
            ball = sphere_from(pt(i), pt(j));
            for (size_t l = 0; l < j; ++l) {
                if (sphere_contains(ball, pt(l))) continue;
                ball = sphere_from(pt(i), pt(j), pt(l));
                for (size_t q = 0; q < l; ++q) {
                    if (sphere_contains(ball, pt(q))) continue;
                    ball = sphere_from(pt(i), pt(j), pt(l), pt(q));
                }
            }
        }
    }
    return ball;
}

// ---------------------------------------------------------------------------
// Unit-sphere normalization. Returns the transform so callers can invert it.
// ---------------------------------------------------------------------------
struct NormalizeResult {
    PointCloud cloud;
    Vec3 center{0, 0, 0};
    double radius = 1.0;
};

inline NormalizeResult normalize_unit_sphere(const PointCloud& in) {
    Sphere s = bounding_sphere(in);
    if (!(s.radius > 0.0)) throw ParamError("normalize_unit_sphere: zero radius");
    NormalizeResult r;
    r.center = s.center;
    r.radius = s.radius;
    r.cloud = in;
    double inv = 1.0 / s.radius;
    for (Vec3& p : r.cloud.pts) p = inv * (p - s.center);
    return r;
}

inline PointCloud denormalize(const PointCloud& in, const Vec3& center, double radius) {
    PointCloud out = in;
    for (Vec3& p : out.pts) p = radius * p + center;
    return out;
}

inline bool is_unit_normalized(const PointCloud& cloud) {
    return bounding_sphere(cloud).radius <= 1.0 + 1e-9;
}

// ---------------------------------------------------------------------------
// Noise injection. Pure in (cloud, model): identical seeds give identical
// output bits. Counters are indexed by point and axis, never by thread.
// ---------------------------------------------------------------------------
inline PointCloud add_noise(const PointCloud& cloud, const NoiseModel& model) {
    if (model.scale < 0.0) throw ParamError("add_noise: negative scale");
    if (!is_unit_normalized(cloud)) throw ParamError("add_noise: cloud is not unit-normalized");

    PointCloud out = cloud;
    out.noise_meta = NoiseMeta{to_string(model.kind), model.scale, model.seed};
    if (model.scale == 0.0) return out;

    const double s = model.scale;
    CounterRng rng(model.seed, 0x6e6f6973ull);  // dedicated noise stream
    const size_t n = cloud.size();

    switch (model.kind) {
        case NoiseKind::gaussian:
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a) out.pts[i][a] += s * rng.normal(i * 3 + a);
            break;
        case NoiseKind::laplacian:
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a) out.pts[i][a] += rng.laplace(i * 3 + a, s);
            break;
        case NoiseKind::uniform: {
            const double half = s * std::sqrt(3.0);
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a) out.pts[i][a] += rng.uniform(i * 3 + a, -half, half);
            break;
        }
        case NoiseKind::discrete: {
            static constexpr int offs[7][3] = {{1, 0, 0},  {-1, 0, 0}, {0, 1, 0}, {0, -1, 0},
                                               {0, 0, 1},  {0, 0, -1}, {0, 0, 0}};
            for (size_t i = 0; i < n; ++i) {
                const int* o = offs[rng.uniform_index(i, 7)];
                for (int a = 0; a < 3; ++a) out.pts[i][a] += s * o[a];
            }
            break;
        }
        case NoiseKind::anisotropic: {
            // one random diagonal covariance per shape, entries in [0.25, 1]*scale^2
            CounterRng cov = rng.fork(0xd1a6ull);
            double sd[3];
            for (int a = 0; a < 3; ++a) sd[a] = std::sqrt(cov.uniform(a, 0.25, 1.0)) * s;
            for (size_t i = 0; i < n; ++i)
                for (int a = 0; a < 3; ++a) out.pts[i][a] += sd[a] * rng.normal(i * 3 + a);
            break;
        }
    }
    for (const Vec3& p : out.pts)
        for (double c : p)
            if (!std::isfinite(c)) throw NumericError("add_noise produced a non-finite coordinate");
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic shapes: area-uniform samples plus a matching triangulation, both
// scaled by the analytic circumradius so the clean surface fits the unit
// sphere exactly.
// ---------------------------------------------------------------------------
enum class ShapeKind { sphere, torus, cube_surface };

inline const char* to_string(ShapeKind k) {
    switch (k) {
        case ShapeKind::sphere: return "sphere";
        case ShapeKind::torus: return "torus";
        case ShapeKind::cube_surface: return "cube_surface";
    }
    return "?";
}

inline ShapeKind shape_kind_from(const std::string& s) {
    if (s == "sphere") return ShapeKind::sphere;
    if (s == "torus") return ShapeKind::torus;
    if (s == "cube_surface") return ShapeKind::cube_surface;
    throw ParamError("unknown shape kind: " + s);
}

constexpr double kTorusMajor = 1.0;
constexpr double kTorusMinor = 0.4;

namespace detail {

inline TriangleMesh sphere_mesh(int slices = 48, int stacks = 24) {
    TriangleMesh m;
    // interior ring vertices plus two poles
    m.vertices.push_back({0, 0, 1});
    for (int st = 1; st < stacks; ++st) {
        double theta = M_PI * st / stacks;
        for (int sl = 0; sl < slices; ++sl) {
            double phi = 2.0 * M_PI * sl / slices;
            m.vertices.push_back({std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta)});
        }
    }
    m.vertices.push_back({0, 0, -1});
    int south = static_cast<int>(m.vertices.size()) - 1;
    auto ring = [&](int st, int sl) { return 1 + (st - 1) * slices + (sl % slices); };
    for (int sl = 0; sl < slices; ++sl) m.faces.push_back({0, ring(1, sl), ring(1, sl + 1)});
    for (int st = 1; st < stacks - 1; ++st)
        for (int sl = 0; sl < slices; ++sl) {
            m.faces.push_back({ring(st, sl), ring(st + 1, sl), ring(st + 1, sl + 1)});
            m.faces.push_back({ring(st, sl), ring(st + 1, sl + 1), ring(st, sl + 1)});
        }
    for (int sl = 0; sl < slices; ++sl) m.faces.push_back({south, ring(stacks - 1, sl + 1), ring(stacks - 1, sl)});
    return m;
}

inline TriangleMesh torus_mesh(int major_seg = 48, int minor_seg = 24) {
    TriangleMesh m;
    for (int i = 0; i < major_seg; ++i) {
        double u = 2.0 * M_PI * i / major_seg;
        for (int j = 0; j < minor_seg; ++j) {
            double v = 2.0 * M_PI * j / minor_seg;
            double w = kTorusMajor + kTorusMinor * std::cos(v);
            m.vertices.push_back({w * std::cos(u), w * std::sin(u), kTorusMinor * std::sin(v)});
        }
    }
    auto vid = [&](int i, int j) { return (i % major_seg) * minor_seg + (j % minor_seg); };
    for (int i = 0; i < major_seg; ++i)
        for (int j = 0; j < minor_seg; ++j) {
            m.faces.push_back({vid(i, j), vid(i + 1, j), vid(i + 1, j + 1)});
            m.faces.push_back({vid(i, j), vid(i + 1, j + 1), vid(i, j + 1)});
        }
    return m;
}

inline TriangleMesh cube_mesh() {
    TriangleMesh m;
    for (int i = 0; i < 8; ++i)
        m.vertices.push_back({i & 1 ? 1.0 : -1.0, i & 2 ? 1.0 : -1.0, i & 4 ? 1.0 : -1.0});
    static constexpr int quads[6][4] = {{0, 2, 3, 1}, {4, 5, 7, 6}, {0, 1, 5, 4},
                                        {2, 6, 7, 3}, {0, 4, 6, 2}, {1, 3, 7, 5}};
    for (const auto& q : quads) {
        m.faces.push_back({q[0], q[1], q[2]});
        m.faces.push_back({q[0], q[2], q[3]});
    }
    return m;
}

} // namespace detail

inline std::pair<PointCloud, TriangleMesh> make_shape(ShapeKind kind, size_t n, uint64_t seed) {
    if (n < 16) throw ParamError("make_shape: need at least 16 points");
    PointCloud cloud;
    cloud.pts.resize(n);
    cloud.clean_ref = to_string(kind);
    TriangleMesh mesh;
    double circumradius = 1.0;
    CounterRng rng(seed, 0x73686170ull);

    switch (kind) {
        case ShapeKind::sphere: {
            for (size_t i = 0; i < n; ++i) {
                double z = rng.uniform(2 * i, -1.0, 1.0);
                double phi = rng.uniform(2 * i + 1, 0.0, 2.0 * M_PI);
                double rho = std::sqrt(std::max(0.0, 1.0 - z * z));
                cloud.pts[i] = {rho * std::cos(phi), rho * std::sin(phi), z};
            }
            mesh = detail::sphere_mesh();
            circumradius = 1.0;
            break;
        }
        case ShapeKind::torus: {
            // area element ~ (R + r cos v); rejection-sample v
            for (size_t i = 0; i < n; ++i) {
                CounterRng point = rng.fork(i);
                double u = point.uniform(0, 0.0, 2.0 * M_PI);
                double v = 0.0;
                for (uint64_t t = 0;; ++t) {
                    v = point.uniform(2 * t + 1, 0.0, 2.0 * M_PI);
                    double accept = (kTorusMajor + kTorusMinor * std::cos(v)) / (kTorusMajor + kTorusMinor);
                    if (point.uniform01(2 * t + 2) <= accept) break;
                }
                double w = kTorusMajor + kTorusMinor * std::cos(v);
                cloud.pts[i] = {w * std::cos(u), w * std::sin(u), kTorusMinor * std::sin(v)};
            }
            mesh = detail::torus_mesh();
            circumradius = kTorusMajor + kTorusMinor;
            break;
        }
        case ShapeKind::cube_surface: {
            // side 2, centered at the origin; faces have equal area
            for (size_t i = 0; i < n; ++i) {
                uint64_t face = rng.uniform_index(3 * i, 6);
                double a = rng.uniform(3 * i + 1, -1.0, 1.0);
                double b = rng.uniform(3 * i + 2, -1.0, 1.0);
                int axis = static_cast<int>(face / 2);
                double sign = (face % 2) ? 1.0 : -1.0;
                Vec3 p{0, 0, 0};
                p[axis] = sign;
                p[(axis + 1) % 3] = a;
                p[(axis + 2) % 3] = b;
                cloud.pts[i] = p;
            }
            mesh = detail::cube_mesh();
            circumradius = std::sqrt(3.0);
            break;
        }
    }

    double inv = 1.0 / circumradius;
    for (Vec3& p : cloud.pts) p = inv * p;
    for (Vec3& v : mesh.vertices) v = inv * v;
    mesh.validate();
    return {std::move(cloud), std::move(mesh)};
}

// ---------------------------------------------------------------------------
// Patch sampling: a uniformly chosen seed point plus its patch_size-1 nearest
// neighbors, ordered by distance to the seed.
// ---------------------------------------------------------------------------
inline PointCloud sample_patch_at(const PointCloud& cloud, size_t seed_index, size_t patch_size) {
    const size_t n = cloud.size();
    if (patch_size == 0 || patch_size > n) throw ParamError("sample_patch: patch size out of range");
    if (seed_index >= n) throw ParamError("sample_patch: seed index out of range");
    const Vec3& q = cloud.pts[seed_index];
    std::vector<std::pair<double, int32_t>> cand(n);
    for (size_t i = 0; i < n; ++i) cand[i] = {norm2(cloud.pts[i] - q), static_cast<int32_t>(i)};
    std::partial_sort(cand.begin(), cand.begin() + patch_size, cand.end());
    PointCloud out;
    out.clean_ref = cloud.clean_ref;
    out.noise_meta = cloud.noise_meta;
    out.pts.resize(patch_size);
    for (size_t i = 0; i < patch_size; ++i) out.pts[i] = cloud.pts[cand[i].second];
    return out;
}

inline PointCloud sample_patch(const PointCloud& cloud, size_t patch_size, uint64_t seed) {
    if (cloud.pts.empty()) throw ParamError("sample_patch: empty cloud");
    CounterRng rng(seed, 0x70617463ull);
    return sample_patch_at(cloud, rng.uniform_index(0, cloud.size()), patch_size);
}

} // namespace simpc
