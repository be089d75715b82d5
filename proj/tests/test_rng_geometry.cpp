#include <cmath>
#include <set>

#include "doctest.h"
#include "oracles.hpp"
#include "simpc/geometry.hpp"
#include "simpc/rng.hpp"

using namespace simpc;

TEST_CASE("counter rng is a pure function of seed, stream and counter") {
    CounterRng a(42, 7), b(42, 7), c(43, 7);
    CHECK(a.bits(123) == b.bits(123));
    CHECK(a.bits(123) != c.bits(123));
    for (uint64_t i = 0; i < 1000; ++i) {
        double u = a.uniform01(i);
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}

TEST_CASE("counter rng normal and laplace have the right spread") {
    CounterRng rng(1, 0);
    const size_t n = 200000;
    double mean = 0, var = 0;
    for (size_t i = 0; i < n; ++i) mean += rng.normal(i);
    mean /= n;
    for (size_t i = 0; i < n; ++i) {
        double d = rng.normal(i) - mean;
        var += d * d;
    }
    var /= n - 1;
    CHECK(std::fabs(mean) < 0.01);
    CHECK(var == doctest::Approx(1.0).epsilon(0.02));

    double lvar = 0;
    for (size_t i = 0; i < n; ++i) {
        double x = rng.laplace(i + n, 0.5);
        lvar += x * x;
    }
    lvar /= n;  // Laplace(0, b) variance is 2 b^2
    CHECK(lvar == doctest::Approx(0.5).epsilon(0.05));
}

TEST_CASE("knn basic ordering and exclusion") {
    std::vector<double> ref = {1, 0, 0, 2, 0, 0, 3, 0, 0};
    std::vector<double> q = {0, 0, 0};
    NeighborIndex ni = knn(q.data(), 1, ref.data(), 3, 3, 2);
    CHECK(ni.at(0, 0) == 0);
    CHECK(ni.at(0, 1) == 1);

    // query equals reference point 1, excluded: nearest other point wins
    std::vector<double> q2 = {2, 0, 0};
    std::vector<int32_t> excl = {1};
    NeighborIndex ne = knn(q2.data(), 1, ref.data(), 3, 3, 1, excl.data());
    CHECK(ne.at(0, 0) != 1);
    CHECK((ne.at(0, 0) == 0 || ne.at(0, 0) == 2));
}

TEST_CASE("knn parameter errors") {
    std::vector<double> ref = {0, 0, 0, 1, 0, 0};
    std::vector<double> q = {0, 0, 0};
    CHECK_THROWS_AS(knn(q.data(), 1, ref.data(), 2, 3, 3), ParamError);
    std::vector<int32_t> excl = {0};
    CHECK_THROWS_AS(knn(q.data(), 1, ref.data(), 2, 3, 2, excl.data()), ParamError);
    CHECK_THROWS_AS(knn(q.data(), 1, ref.data(), 2, 3, 0), ParamError);
}

TEST_CASE("knn matches the full-sort oracle, D in {3, 64}") {
    for (int inst = 0; inst < 24; ++inst) {
        CounterRng rng(900 + inst, 0);
        const size_t dim = (inst % 2 == 0) ? 3 : 64;
        const size_t n = 16 + rng.uniform_index(0, 120);
        const size_t k = 1 + rng.uniform_index(1, 12);
        auto ref = oracle::random_values(n * dim, 7000 + inst);
        auto q = oracle::random_values(8 * dim, 8000 + inst);
        NeighborIndex got = knn(q.data(), 8, ref.data(), n, dim, k);
        auto want = oracle::knn_full_sort(q, 8, ref, n, dim, k);
        for (size_t i = 0; i < 8; ++i)
            for (size_t j = 0; j < k; ++j) CHECK(got.at(i, j) == want[i][j]);
    }
}

TEST_CASE("knn is permutation-consistent") {
    PointCloud ref = oracle::random_cloud(60, 11);
    PointCloud q = oracle::random_cloud(10, 12);
    NeighborIndex base = knn(q, ref, 5);

    // reverse the reference order; returned indices must map through it
    PointCloud rev = ref;
    std::reverse(rev.pts.begin(), rev.pts.end());
    NeighborIndex perm = knn(q, rev, 5);
    const int32_t n = static_cast<int32_t>(ref.size());
    for (size_t i = 0; i < q.size(); ++i)
        for (size_t j = 0; j < 5; ++j) CHECK(perm.at(i, j) == n - 1 - base.at(i, j));
}

TEST_CASE("bounding sphere trivial cases") {
    PointCloud single;
    single.pts = {{2, 3, 4}};
    Sphere s1 = bounding_sphere(single);
    CHECK(s1.radius == 0.0);
    CHECK(s1.center == Vec3{2, 3, 4});

    PointCloud pair;
    pair.pts = {{-1, 0, 0}, {1, 0, 0}};
    Sphere s2 = bounding_sphere(pair);
    CHECK(s2.radius == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(norm(s2.center) < 1e-12);

    PointCloud cube;
    for (int i = 0; i < 8; ++i)
        cube.pts.push_back({i & 1 ? 0.5 : -0.5, i & 2 ? 0.5 : -0.5, i & 4 ? 0.5 : -0.5});
    Sphere s3 = bounding_sphere(cube);
    CHECK(s3.radius == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-9));

    PointCloud empty;
    CHECK_THROWS_AS(bounding_sphere(empty), ParamError);
}

TEST_CASE("bounding sphere agrees with subset enumeration and contains all points") {
    for (int inst = 0; inst < 30; ++inst) {
        PointCloud c = oracle::random_cloud(4 + inst % 9, 500 + inst);
        Sphere got = bounding_sphere(c);
        Sphere want = oracle::mes_enumeration(c);
        CHECK(got.radius == doctest::Approx(want.radius).epsilon(1e-6));
        for (const Vec3& p : c.pts)
            CHECK(norm(p - got.center) <= got.radius * (1.0 + 1e-9) + 1e-12);
    }
}

TEST_CASE("normalize_unit_sphere round trip and invariances") {
    PointCloud c = oracle::random_cloud(50, 77, 3.0);

    NormalizeResult r = normalize_unit_sphere(c);
    CHECK(bounding_sphere(r.cloud).radius == doctest::Approx(1.0).epsilon(1e-9));
    for (const Vec3& p : r.cloud.pts) CHECK(norm(p) <= 1.0 + 1e-9);

    // idempotence
    NormalizeResult again = normalize_unit_sphere(r.cloud);
    for (size_t i = 0; i < c.size(); ++i)
        CHECK(norm(again.cloud.pts[i] - r.cloud.pts[i]) < 1e-9);

    // scale invariance
    PointCloud scaled = c;
    for (Vec3& p : scaled.pts) p = 5.0 * p;
    NormalizeResult rs = normalize_unit_sphere(scaled);
    for (size_t i = 0; i < c.size(); ++i)
        CHECK(norm(rs.cloud.pts[i] - r.cloud.pts[i]) < 1e-9);

    // denormalize recovers the input
    PointCloud back = denormalize(r.cloud, r.center, r.radius);
    for (size_t i = 0; i < c.size(); ++i) CHECK(norm(back.pts[i] - c.pts[i]) < 1e-9 * r.radius);

    PointCloud degenerate;
    degenerate.pts = {{1, 1, 1}, {1, 1, 1}};
    CHECK_THROWS_AS(normalize_unit_sphere(degenerate), ParamError);
}

TEST_CASE("add_noise zero scale and determinism") {
    auto [cloud, mesh] = make_shape(ShapeKind::sphere, 100, 5);
    PointCloud zero = add_noise(cloud, {NoiseKind::gaussian, 0.0, 9});
    for (size_t i = 0; i < cloud.size(); ++i) CHECK(zero.pts[i] == cloud.pts[i]);

    NoiseModel m{NoiseKind::laplacian, 0.02, 1234};
    PointCloud a = add_noise(cloud, m);
    PointCloud b = add_noise(cloud, m);
    for (size_t i = 0; i < a.size(); ++i)
        for (int d = 0; d < 3; ++d) CHECK(a.pts[i][d] == b.pts[i][d]);

    PointCloud big = oracle::random_cloud(40, 3, 10.0);
    CHECK_THROWS_AS(add_noise(big, m), ParamError);
}

TEST_CASE("gaussian noise empirical std in [0.0195, 0.0205] at 1e5 points") {
    auto [cloud, mesh] = make_shape(ShapeKind::sphere, 100000, 21);
    PointCloud noisy = add_noise(cloud, {NoiseKind::gaussian, 0.02, 77});
    for (int axis = 0; axis < 3; ++axis) {
        double mean = 0, var = 0;
        for (size_t i = 0; i < cloud.size(); ++i) mean += noisy.pts[i][axis] - cloud.pts[i][axis];
        mean /= cloud.size();
        for (size_t i = 0; i < cloud.size(); ++i) {
            double d = noisy.pts[i][axis] - cloud.pts[i][axis] - mean;
            var += d * d;
        }
        double sd = std::sqrt(var / (cloud.size() - 1));
        CHECK(sd >= 0.0195);
        CHECK(sd <= 0.0205);
    }
}

TEST_CASE("all noise models are empirically zero-mean") {
    auto [cloud, mesh] = make_shape(ShapeKind::sphere, 20000, 31);
    const double scale = 0.02;
    for (NoiseKind kind : {NoiseKind::gaussian, NoiseKind::laplacian, NoiseKind::uniform,
                           NoiseKind::discrete, NoiseKind::anisotropic}) {
        PointCloud noisy = add_noise(cloud, {kind, scale, 99});
        const double bound = 3.0 * scale / std::sqrt(static_cast<double>(cloud.size()));
        for (int axis = 0; axis < 3; ++axis) {
            double mean = 0;
            for (size_t i = 0; i < cloud.size(); ++i) mean += noisy.pts[i][axis] - cloud.pts[i][axis];
            mean /= cloud.size();
            INFO("kind ", to_string(kind), " axis ", axis);
            CHECK(std::fabs(mean) <= bound);
        }
    }
}

TEST_CASE("make_shape sphere: unit distance after normalization") {
    auto [cloud, mesh] = make_shape(ShapeKind::sphere, 1000, 10);
    for (const Vec3& p : cloud.pts) CHECK(norm(p) == doctest::Approx(1.0).epsilon(1e-6));
    mesh.validate();
}

TEST_CASE("make_shape torus: points satisfy the implicit equation") {
    auto [cloud, mesh] = make_shape(ShapeKind::torus, 500, 11);
    const double s = kTorusMajor + kTorusMinor;  // normalization factor
    for (const Vec3& p : cloud.pts) {
        const Vec3 q = s * p;  // back to analytic coordinates
        const double rho = std::hypot(q[0], q[1]);
        const double lhs = (rho - kTorusMajor) * (rho - kTorusMajor) + q[2] * q[2];
        CHECK(std::fabs(lhs - kTorusMinor * kTorusMinor) < 1e-6);
    }
}

TEST_CASE("make_shape cube_surface: points on the cube boundary") {
    auto [cloud, mesh] = make_shape(ShapeKind::cube_surface, 500, 12);
    const double s = std::sqrt(3.0);
    for (const Vec3& p : cloud.pts) {
        const Vec3 q = s * p;
        const double m = std::max({std::fabs(q[0]), std::fabs(q[1]), std::fabs(q[2])});
        CHECK(m == doctest::Approx(1.0).epsilon(1e-9));
    }
    CHECK_THROWS_AS(make_shape(ShapeKind::sphere, 8, 0), ParamError);
}

TEST_CASE("shape sampling is area-uniform (chi-square)") {
    const size_t n = 100000;
    const double zcrit = 2.3263478740408408;  // alpha = 0.01

    SUBCASE("sphere: equal-area z-slices x azimuth bins") {
        auto [cloud, mesh] = make_shape(ShapeKind::sphere, n, 42);
        const int zb = 10, ab = 12;
        std::vector<double> counts(zb * ab, 0.0);
        for (const Vec3& p : cloud.pts) {
            int zi = std::min(zb - 1, static_cast<int>((p[2] + 1.0) / 2.0 * zb));
            double phi = std::atan2(p[1], p[0]) + M_PI;
            int ai = std::min(ab - 1, static_cast<int>(phi / (2.0 * M_PI) * ab));
            counts[zi * ab + ai] += 1.0;
        }
        const double expect = static_cast<double>(n) / (zb * ab);
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
        CHECK(chi2 < oracle::chi2_critical(zb * ab - 1, zcrit));
    }

    SUBCASE("torus: (u, v) bins weighted by the area element") {
        auto [cloud, mesh] = make_shape(ShapeKind::torus, n, 43);
        const int ub = 12, vb = 12;
        std::vector<double> counts(ub * vb, 0.0);
        const double s = kTorusMajor + kTorusMinor;
        for (const Vec3& p : cloud.pts) {
            const Vec3 q = s * p;
            double u = std::atan2(q[1], q[0]) + M_PI;
            double rho = std::hypot(q[0], q[1]);
            double v = std::atan2(q[2], rho - kTorusMajor) + M_PI;
            int ui = std::min(ub - 1, static_cast<int>(u / (2.0 * M_PI) * ub));
            int vi = std::min(vb - 1, static_cast<int>(v / (2.0 * M_PI) * vb));
            counts[ui * vb + vi] += 1.0;
        }
        double chi2 = 0.0;
        for (int ui = 0; ui < ub; ++ui)
            for (int vi = 0; vi < vb; ++vi) {
                const double v0 = 2.0 * M_PI * vi / vb - M_PI, v1 = v0 + 2.0 * M_PI / vb;
                // integral of (R + r cos v) over the bin, azimuth uniform
                const double mass = kTorusMajor * (v1 - v0) + kTorusMinor * (std::sin(v1) - std::sin(v0));
                const double expect = n * mass / (2.0 * M_PI * kTorusMajor * ub);
                const double c = counts[ui * vb + vi];
                chi2 += (c - expect) * (c - expect) / expect;
            }
        CHECK(chi2 < oracle::chi2_critical(ub * vb - 1, zcrit));
    }

    SUBCASE("cube: six equal faces") {
        auto [cloud, mesh] = make_shape(ShapeKind::cube_surface, n, 44);
        std::vector<double> counts(6, 0.0);
        const double s = std::sqrt(3.0);
        for (const Vec3& p : cloud.pts) {
            const Vec3 q = s * p;
            int axis = 0;
            for (int a = 1; a < 3; ++a)
                if (std::fabs(q[a]) > std::fabs(q[axis])) axis = a;
            counts[axis * 2 + (q[axis] > 0 ? 1 : 0)] += 1.0;
        }
        const double expect = n / 6.0;
        double chi2 = 0.0;
        for (double c : counts) chi2 += (c - expect) * (c - expect) / expect;
        CHECK(chi2 < oracle::chi2_critical(5, zcrit));
    }
}

TEST_CASE("sample_patch full, single and diameter behavior") {
    PointCloud c = oracle::random_cloud(64, 200);

    PointCloud full = sample_patch(c, 64, 1);
    CHECK(full.size() == 64);
    std::set<std::array<double, 3>> orig(c.pts.begin(), c.pts.end());
    std::set<std::array<double, 3>> got(full.pts.begin(), full.pts.end());
    CHECK(orig == got);
    // distance-ordered from the seed point (first element)
    for (size_t i = 1; i < full.size(); ++i)
        CHECK(norm2(full.pts[i] - full.pts[0]) >= norm2(full.pts[i - 1] - full.pts[0]));

    PointCloud one = sample_patch(c, 1, 2);
    CHECK(one.size() == 1);

    auto [sphere, mesh] = make_shape(ShapeKind::sphere, 1024, 7);
    PointCloud patch = sample_patch(sphere, 128, 3);
    auto diameter = [](const PointCloud& pc) {
        double d = 0;
        for (size_t i = 0; i < pc.size(); ++i)
            for (size_t j = i + 1; j < pc.size(); ++j) d = std::max(d, norm2(pc.pts[i] - pc.pts[j]));
        return d;
    };
    CHECK(diameter(patch) < diameter(sphere));

    CHECK_THROWS_AS(sample_patch(c, 65, 4), ParamError);
}
