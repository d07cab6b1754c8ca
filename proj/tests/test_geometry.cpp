#include <cmath>
#include <numbers>

#include "doctest.h"
#include "wfb/errors.hpp"
#include "wfb/geometry.hpp"

using namespace wfb;

namespace {

constexpr double kPi = std::numbers::pi;

// Independent oracle: composite Simpson quadrature of 1/4 H^2 dA for a sphere
// of radius R in spherical angles, H = 2/R and dA = R^2 sin(theta).
double sphere_cap_energy_oracle(double R, double theta_max) {
    const int n = 20000;
    const double dt = theta_max / n;
    double acc = 0.0;
    for (int k = 0; k <= n; ++k) {
        const double th = k * dt;
        const double w = (k == 0 || k == n) ? 1.0 : (k % 2 ? 4.0 : 2.0);
        acc += w * 0.25 * (2.0 / R) * (2.0 / R) * R * R * std::sin(th);
    }
    return acc * dt / 3.0 * 2.0 * kPi;
}

Immersion hemi(int ns, int nphi, bool axi, double R = 1.0) {
    return make_immersion(ParamGrid::make(Topology::Disk, ns, nphi, axi), samplers::hemisphere(R), "hemisphere");
}

double max_err_H(const GeometryCache& c, double target) {
    double e = 0.0;
    for (int i = 0; i < c.grid.n_s; ++i)
        for (int j = 0; j < c.grid.cols(); ++j) e = std::max(e, std::abs(c.H(c.grid.p(i), j) - target));
    return e;
}

}  // namespace

TEST_CASE("fourier derivative matrix differentiates trigonometric data") {
    for (int n : {8, 9, 16}) {
        const Eigen::MatrixXd d = fourier_d1(n);
        Eigen::VectorXd u(n), du(n);
        for (int j = 0; j < n; ++j) {
            const double x = 2 * kPi * j / n;
            u[j] = std::sin(2 * x) + std::cos(3 * x);
            du[j] = 2 * std::cos(2 * x) - 3 * std::sin(3 * x);
        }
        CHECK((d * u - du).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("second derivative matrix keeps the Nyquist mode") {
    for (int n : {8, 9, 16}) {
        const Eigen::MatrixXd d = fourier_d2(n);
        Eigen::VectorXd u(n), d2u(n);
        const int kmax = n / 2;
        for (int j = 0; j < n; ++j) {
            const double x = 2 * kPi * j / n;
            u[j] = std::sin(2 * x) + std::cos(kmax * x) + 1.0;
            d2u[j] = -4 * std::sin(2 * x) - kmax * kmax * std::cos(kmax * x);
        }
        CHECK((d * u - d2u).cwiseAbs().maxCoeff() < 1e-10);
        CHECK((d - d.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    }
}

TEST_CASE("grid invariants are enforced") {
    CHECK_THROWS_AS(ParamGrid::make(Topology::Disk, 6, 16, false), Error);
    CHECK_THROWS_AS(ParamGrid::make(Topology::Disk, 16, 4, false), Error);
    CHECK_THROWS_AS(ParamGrid::make(Topology::Disk, 16, 2, true), Error);
    const auto g = ParamGrid::make(Topology::Disk, 16, 1, true);
    CHECK(g.s(g.n_s - 1) == doctest::Approx(1.0).epsilon(1e-15));
    double total = 0.0;
    for (int i = 0; i < g.n_s; ++i) total += g.weight_s(i);
    CHECK(total == doctest::Approx(1.0));
}

TEST_CASE("hemisphere curvature and energy") {
    // The oracle for the energy of a hemisphere is independent of the grid code.
    const double W_oracle = sphere_cap_energy_oracle(1.0, kPi / 2);
    CHECK(W_oracle == doctest::Approx(2 * kPi).epsilon(1e-12));

    for (bool axi : {true, false}) {
        const auto c = build_geometry(hemi(64, axi ? 1 : 64, axi));
        CHECK(max_err_H(c, 2.0) <= 5e-3);
        CHECK(std::abs(willmore_energy(c) - W_oracle) / W_oracle <= 1e-3);
        double nu_err = 0, hdef = 0, tr0 = 0;
        for (int i = 0; i < c.grid.n_s; ++i)
            for (int j = 0; j < c.grid.cols(); ++j) {
                const int p = c.grid.p(i);
                nu_err = std::max(nu_err, std::abs(at(c.nu, p, j).norm() - 1.0));
                const double H = c.iss(p, j) * c.Ass(p, j) + 2 * c.isp(p, j) * c.Asp(p, j) + c.ipp(p, j) * c.App(p, j);
                hdef = std::max(hdef, std::abs(H - c.H(p, j)));
                // trace of A0 = A - H g / 2
                const double t = c.iss(p, j) * (c.Ass(p, j) - 0.5 * c.H(p, j) * c.gss(p, j)) +
                                 2 * c.isp(p, j) * (c.Asp(p, j) - 0.5 * c.H(p, j) * c.gsp(p, j)) +
                                 c.ipp(p, j) * (c.App(p, j) - 0.5 * c.H(p, j) * c.gpp(p, j));
                tr0 = std::max(tr0, std::abs(t));
                CHECK(c.gss(p, j) > 0);
                CHECK(c.det_g(p, j) > 0);
            }
        CHECK(nu_err < 1e-12);
        CHECK(hdef < 1e-12);
        CHECK(tr0 < 1e-10);
    }
}

TEST_CASE("hemisphere convergence order") {
    double eH[3], eW[3];
    int k = 0;
    for (int n : {32, 64, 128}) {
        const auto c = build_geometry(hemi(n, 1, true));
        eH[k] = max_err_H(c, 2.0);
        eW[k] = std::abs(willmore_energy(c) - 2 * kPi);
        ++k;
    }
    const double h32 = 1.0 / 31.5, h64 = 1.0 / 63.5, h128 = 1.0 / 127.5;
    CHECK(std::log(eH[0] / eH[1]) / std::log(h32 / h64) >= 1.9);
    CHECK(std::log(eH[1] / eH[2]) / std::log(h64 / h128) >= 1.9);
    CHECK(std::log(eW[0] / eW[1]) / std::log(h32 / h64) >= 1.9);
    CHECK(std::log(eW[1] / eW[2]) / std::log(h64 / h128) >= 1.9);
}

TEST_CASE("flat disk has vanishing curvature") {
    const auto g = ParamGrid::make(Topology::Disk, 24, 16, false);
    const auto c = build_geometry(make_immersion(g, samplers::equatorial_disk(), "disk"));
    CHECK(max_err_H(c, 0.0) == 0.0);
    CHECK(willmore_energy(c) == 0.0);
    CHECK(max_abs_real(g, willmore_gradient(c)) == 0.0);
    for (const auto& b : c.boundary) {
        const Vec3 radial(std::cos(g.phi(b.j)), std::sin(g.phi(b.j)), 0.0);
        CHECK((b.eta - radial).norm() < 1e-12);
    }
}

TEST_CASE("scaling and translation") {
    const auto base = hemi(32, 32, false);
    const auto c0 = build_geometry(base);
    const double W0 = willmore_energy(c0);
    for (double lam : {0.5, 2.0, 1.37}) {
        const auto c = build_geometry(scaled(base, lam));
        CHECK(std::abs(willmore_energy(c) - W0) <= 1e-10 * W0);
        const int p = c.grid.p(5);
        CHECK(c.gss(p, 3) == doctest::Approx(lam * lam * c0.gss(p, 3)).epsilon(1e-12));
        CHECK(c.H(p, 3) == doctest::Approx(c0.H(p, 3) / lam).epsilon(1e-12));
        CHECK((at(c.nu, p, 3) - at(c0.nu, p, 3)).norm() < 1e-12);
        const auto& b = c.boundary[2];
        const auto& b0 = c0.boundary[2];
        CHECK(b.eta_s == doctest::Approx(b0.eta_s / lam).epsilon(1e-12));
        CHECK((b.eta - b0.eta).norm() < 1e-12);
    }
    const auto ct = build_geometry(translated(base, Vec3(0.3, -1.0, 2.5)));
    // differences of translated positions round differently, so equality holds to cancellation level
    CHECK(std::abs(willmore_energy(ct) - W0) <= 1e-11 * W0);
}

TEST_CASE("laplace-beltrami oracles") {
    SUBCASE("constants") {
        const auto c = build_geometry(hemi(32, 16, false));
        Field one = Field::Ones(c.grid.rows(), c.grid.cols());
        CHECK(max_abs_real(c.grid, laplace_beltrami(one, c)) < 1e-12);
    }
    SUBCASE("height function on the hemisphere is an eigenfunction") {
        // uniform polar spacing makes the stencil exact on trigonometric data
        for (int n : {32, 64}) {
            const auto c = build_geometry(hemi(n, 16, false));
            const Field z = c.f[2];
            const Field lz = laplace_beltrami(z, c);
            double e = 0;
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < 16; ++j) e = std::max(e, std::abs(lz(c.grid.p(i), j) + 2 * z(c.grid.p(i), j)));
            CHECK(e < 1e-8);
        }
    }
    SUBCASE("flat disk s^2 cos(phi) has Laplacian 3 cos(phi)") {
        const auto g = ParamGrid::make(Topology::Disk, 48, 16, false);
        const auto c = build_geometry(make_immersion(g, samplers::equatorial_disk(), "disk"));
        Field u = g.zeros();
        for (int p = 0; p < g.rows(); ++p)
            for (int j = 0; j < 16; ++j) {
                const double s = g.s(p - ParamGrid::kGhost);
                u(p, j) = s * s * std::cos(g.phi(j));
            }
        const Field lu = laplace_beltrami(u, c);
        double e = 0;
        for (int i = 0; i < g.n_s; ++i)
            for (int j = 0; j < 16; ++j) e = std::max(e, std::abs(lu(g.p(i), j) - 3 * std::cos(g.phi(j))));
        CHECK(e < 1e-10);
    }
    SUBCASE("self-adjointness for compactly supported fields") {
        const auto c = build_geometry(hemi(32, 16, false));
        const auto& g = c.grid;
        Field u = g.zeros(), v = g.zeros();
        for (int p = 0; p < g.rows(); ++p)
            for (int j = 0; j < 16; ++j) {
                const double s = g.s(p - ParamGrid::kGhost);
                const double bump = s < 0.8 ? std::pow(std::cos(kPi * s / 1.6), 6) : 0.0;
                u(p, j) = bump * (1 + 0.3 * std::cos(g.phi(j)) + 0.2 * std::sin(2 * g.phi(j)));
                v(p, j) = bump * s * s * (0.5 + std::sin(g.phi(j)));
            }
        fill_pole_ghosts(g, u);
        fill_pole_ghosts(g, v);
        const double a = integrate(c, laplace_beltrami(u, c) * v);
        const double b = integrate(c, u * laplace_beltrami(v, c));
        CHECK(std::abs(a - b) <= 1e-10 * (std::abs(a) + std::abs(b)));
    }
}

TEST_CASE("hemisphere boundary conormal points down") {
    for (int n : {32, 64}) {
        const auto c = build_geometry(hemi(n, 16, false));
        for (const auto& b : c.boundary) CHECK((b.eta - Vec3(0, 0, -1)).norm() < 1e-12);
    }
}

TEST_CASE("willmore gradient vanishes on the hemisphere under refinement") {
    double prev = 0;
    for (int n : {16, 32, 64}) {
        const auto c = build_geometry(hemi(n, 1, true));
        const double e = max_abs_real(c.grid, willmore_gradient(c));
        if (prev > 0) CHECK(prev / e > 2.0);
        prev = e;
    }
}

TEST_CASE("directional derivative of the energy matches the gradient pairing") {
    // perturb the hemisphere along its normal by phi supported away from the boundary
    const auto g = ParamGrid::make(Topology::Disk, 64, 1, true);
    const auto base = make_immersion(g, samplers::hemisphere(1.0), "hemisphere");
    const auto c0 = build_geometry(base);
    auto bump = [&](double s) { return s < 0.7 ? std::pow(std::cos(kPi * s / 1.4), 4) : 0.0; };
    auto perturbed = [&](double t) {
        VField pos = base.pos;
        for (int p = 0; p < g.rows(); ++p) {
            const double s = g.s(p - ParamGrid::kGhost);
            const Vec3 x = at(pos, p, 0);
            put(pos, p, 0, x - t * bump(std::abs(s)) * x);
        }
        Immersion m{g, pos, {}, "pert"};
        return build_geometry(m);
    };
    // base point along the path, away from the critical hemisphere
    const double t0 = 0.05, dt = 1e-4;
    const auto c = perturbed(t0);
    Field phi = g.zeros();
    for (int p = 0; p < g.rows(); ++p) {
        const Vec3 x = at(base.pos, p, 0);
        phi(p, 0) = -bump(std::abs(g.s(p - ParamGrid::kGhost))) * x.dot(at(c.nu, p, 0));
    }
    const double fd = (willmore_energy(perturbed(t0 + dt)) - willmore_energy(perturbed(t0 - dt))) / (2 * dt);
    const double pairing = integrate(c, willmore_gradient(c) * phi);
    CHECK(std::abs(fd) > 1e-3);
    CHECK(std::abs(fd - pairing) <= 0.01 * std::abs(fd));
    (void)c0;
}

TEST_CASE("degenerate immersions are rejected") {
    const auto g = ParamGrid::make(Topology::Disk, 16, 1, true);
    auto imm = make_immersion(g, samplers::hemisphere(1.0), "hemisphere");
    for (int p = 0; p < g.rows(); ++p) imm.pos[2](p, 0) = 0.0, imm.pos[0](p, 0) = 0.0;
    CHECK_THROWS_AS(build_geometry(imm), Error);
    const auto g2 = ParamGrid::make(Topology::Disk, 16, 16, false);
    // a cone has a pole singularity: H blows up and varies
    auto cone = make_immersion(g2, [](double s, double phi) -> Vec3 {
        return Vec3(s * std::cos(phi), s * std::sin(phi), std::abs(s) * (1 + 0.5 * std::cos(phi)));
    }, "cone");
    try {
        build_geometry(cone);
        FAIL("expected PoleInconsistency");
    } catch (const Error& e) {
        CHECK(e.code() == "PoleInconsistency");
    }
}
