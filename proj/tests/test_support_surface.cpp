#include <cmath>
#include <numbers>
#include <random>

#include "doctest.h"
#include "wfb/errors.hpp"
#include "wfb/support_surface.hpp"

using namespace wfb;

namespace {

// Brute-force closest point on x^2 + y^2 + 4 z^2 = 1: dense angular sampling,
// then compass search on the angles.
Vec3 ellipsoid_closest_oracle(const Vec3& y) {
    auto pt = [](double th, double ph) {
        return Vec3(std::sin(th) * std::cos(ph), std::sin(th) * std::sin(ph), 0.5 * std::cos(th));
    };
    double best = 1e300, bth = 0, bph = 0;
    const int n = 600;
    for (int a = 0; a <= n; ++a)
        for (int b = 0; b < 2 * n; ++b) {
            const double th = std::numbers::pi * a / n, ph = std::numbers::pi * b / n;
            const double d = (pt(th, ph) - y).squaredNorm();
            if (d < best) best = d, bth = th, bph = ph;
        }
    double step = std::numbers::pi / n;
    while (step > 1e-14) {
        bool moved = false;
        for (auto [dt, dp] : {std::pair{1, 0}, {-1, 0}, {0, 1}, {0, -1}}) {
            const double d = (pt(bth + dt * step, bph + dp * step) - y).squaredNorm();
            if (d < best) best = d, bth += dt * step, bph += dp * step, moved = true;
        }
        if (!moved) step *= 0.5;
    }
    return pt(bth, bph);
}

}  // namespace

TEST_CASE("plane support") {
    const auto S = SupportSurface::plane(Vec3::Zero(), Vec3::UnitZ(), 1);
    CHECK(S.signed_distance(Vec3(0, 0, 0.3)) == doctest::Approx(0.3));
    CHECK((S.project(Vec3(1, 2, 0.5)) - Vec3(1, 2, 0)).norm() == 0.0);
    CHECK(S.shape_operator(Vec3(0.1, 0.2, 0.3), Vec3(1, 0, 0), Vec3(0.3, 1, 2)) == 0.0);
}

TEST_CASE("sphere support") {
    const auto S = SupportSurface::sphere(Vec3::Zero(), 1.0, 1);
    CHECK(S.signed_distance(Vec3(0, 0, 1.2)) == doctest::Approx(0.2));
    CHECK((S.project(Vec3(0, 0, 0.5)) - Vec3(0, 0, 1)).norm() < 1e-15);
    CHECK(S.shape_operator(Vec3(0, 0, 1), Vec3(1, 0, 0), Vec3(1, 0, 0)) == doctest::Approx(-1.0));
    // oracle: central finite-difference Hessian of the distance
    const Vec3 y(0.3, -0.2, 0.95);
    const double e = 1e-4;
    Eigen::Matrix3d fd;
    for (int a = 0; a < 3; ++a)
        for (int b = 0; b < 3; ++b) {
            Vec3 ea = Vec3::Unit(a) * e, eb = Vec3::Unit(b) * e;
            fd(a, b) = (S.signed_distance(y + ea + eb) - S.signed_distance(y + ea - eb) - S.signed_distance(y - ea + eb) +
                        S.signed_distance(y - ea - eb)) /
                       (4 * e * e);
        }
    CHECK((fd - S.distance_hessian(y)).norm() < 1e-6);
    CHECK_THROWS_AS(S.signed_distance(Vec3(0, 0, 2.5)), Error);
}

TEST_CASE("ellipsoid support matches the brute-force closest point") {
    const auto S = SupportSurface::ellipsoid(1, 1, 0.5, 0.2, 1);
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> U(-1, 1);
    for (int k = 0; k < 6; ++k) {
        Vec3 dir(U(rng), U(rng), U(rng));
        dir.normalize();
        Vec3 base(dir.x(), dir.y(), 0.5 * dir.z());
        base /= std::sqrt(base.x() * base.x() + base.y() * base.y() + 4 * base.z() * base.z());
        const Vec3 y = base + 0.05 * U(rng) * Vec3(U(rng), U(rng), U(rng));
        const Vec3 oracle = ellipsoid_closest_oracle(y);
        const Vec3 x = S.project(y);
        CHECK((x - oracle).norm() < 1e-8);
        const double sgn = (y.x() * y.x() + y.y() * y.y() + 4 * y.z() * y.z() > 1) ? 1 : -1;
        CHECK(std::abs(S.signed_distance(y) - sgn * (y - oracle).norm()) < 1e-10);
    }
}

TEST_CASE("support surface properties") {
    std::vector<SupportSurface> all{SupportSurface::plane(Vec3(0, 0, 0.1), Vec3(0.2, 0.1, 1), -1),
                                    SupportSurface::sphere(Vec3(0.1, 0, 0), 1.0, 1),
                                    SupportSurface::ellipsoid(1, 1, 0.5, 0.2, 1)};
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> U(-1, 1);
    for (const auto& S : all) {
        for (int k = 0; k < 20; ++k) {
            Vec3 q = Vec3(U(rng), U(rng), U(rng)).normalized();
            if (S.kind() == SupportSurface::Kind::Implicit) q /= std::sqrt(q.x() * q.x() + q.y() * q.y() + 4 * q.z() * q.z());
            const Vec3 y0 = S.project(q);
            const Vec3 y = y0 + 0.08 * U(rng) * S.normal(y0);
            const double e = 1e-6;
            Vec3 grad;
            for (int a = 0; a < 3; ++a)
                grad[a] = (S.signed_distance(y + e * Vec3::Unit(a)) - S.signed_distance(y - e * Vec3::Unit(a))) / (2 * e);
            CHECK((grad - S.normal(y)).norm() < 1e-6);
            CHECK(std::abs(S.normal(y).norm() - 1) < 1e-12);
            const Vec3 p = S.project(y);
            CHECK((S.project(p) - p).norm() < 1e-10);
            CHECK(std::abs(S.signed_distance(p)) < 1e-10);
            const double t = 0.01;
            CHECK(std::abs(S.signed_distance(y + t * S.normal(y)) - S.signed_distance(y) - t) < 1e-10);
            const Vec3 v(U(rng), U(rng), U(rng)), w(U(rng), U(rng), U(rng));
            CHECK(std::abs(S.shape_operator(y, v, w) - S.shape_operator(y, w, v)) < 1e-12);
            CHECK(std::abs(S.shape_operator(p, S.normal(p), S.normal(p))) < 1e-10);
        }
    }
}

TEST_CASE("implicit sphere reproduces the closed-form sphere") {
    LevelFunction F;
    F.value = [](const Vec3& x) { return x.squaredNorm() - 1.0; };
    F.gradient = [](const Vec3& x) -> Vec3 { return 2.0 * x; };
    F.hessian = [](const Vec3&) -> Eigen::Matrix3d { return 2.0 * Eigen::Matrix3d::Identity(); };
    const auto Si = SupportSurface::implicit(F, 0.5, 1);
    const auto Ss = SupportSurface::sphere(Vec3::Zero(), 1.0, 1);
    const Vec3 y(0.4, 0.7, -0.9);
    CHECK(std::abs(Si.signed_distance(y) - Ss.signed_distance(y)) < 1e-12);
    CHECK((Si.distance_hessian(y) - Ss.distance_hessian(y)).norm() < 1e-12);
}
