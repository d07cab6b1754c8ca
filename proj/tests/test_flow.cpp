#include <cmath>
#include <numbers>
#include <string>

#include "doctest.h"
#include "wfb/errors.hpp"
#include "wfb/flow.hpp"

using namespace wfb;

namespace {

constexpr double kTwoPi = 2 * std::numbers::pi;

GaussChart hemisphere(int ns, int nphi, bool axi) {
    auto g = ParamGrid::make(Topology::Disk, ns, nphi, axi);
    auto f = make_immersion(g, samplers::hemisphere(1.0), "hemisphere");
    return build_gauss_chart(f, SupportSurface::plane(Vec3::Zero(), Vec3::UnitZ()), 0.1, 0.06);
}

GaussChart disk_in_ball(int ns, int nphi, bool axi) {
    auto g = ParamGrid::make(Topology::Disk, ns, nphi, axi);
    auto f = make_immersion(g, samplers::equatorial_disk(1.0), "disk");
    return build_gauss_chart(f, SupportSurface::sphere(Vec3::Zero(), 1.0), 0.1, 0.06);
}

HeightField bump(const ParamGrid& g, double amp, double s0, double r, int mode = 0) {
    HeightField w = HeightField::zero(g);
    for (int p = 0; p < g.rows(); ++p)
        for (int j = 0; j < g.cols(); ++j) {
            const double t = (g.s(p - ParamGrid::kGhost) - s0) / r;
            const double b = std::abs(t) < 1 ? std::exp(-1.0 / (1 - t * t)) * std::exp(1.0) : 0.0;
            w.w(p, j) = amp * b * (mode == 0 ? 1.0 : std::cos(mode * g.phi(j)));
        }
    complete_height_field(g, w);
    return w;
}

// Flat polar Laplacian u_ss + u_s / s + u_pp / s^2 on padded rows [p0, p1],
// with the pole ghosts mirrored; an independent stencil for the disk.
Field flat_laplacian(const ParamGrid& g, const Field& u_in, int p0, int p1) {
    Field u = u_in;
    fill_pole_ghosts(g, u);
    const double h = g.h();
    const Eigen::MatrixXd D1 = fourier_d1(g.cols());
    const Eigen::MatrixXd D2 = fourier_d2(g.cols());
    Field out = g.zeros();
    for (int p = p0; p <= p1; ++p) {
        const double s = g.s(p - ParamGrid::kGhost);
        for (int j = 0; j < g.cols(); ++j) {
            double v = (u(p + 1, j) - 2 * u(p, j) + u(p - 1, j)) / (h * h) + (u(p + 1, j) - u(p - 1, j)) / (2 * h * s);
            if (!g.axisymmetric)
                for (int m = 0; m < g.cols(); ++m) v += D2(j, m) * u(p, m) / (s * s);
            out(p, j) = v;
        }
    }
    return out;
}

Field random_field(const ParamGrid& g, unsigned seed) {
    std::srand(seed);
    Field u = Field::Random(g.rows(), g.cols());
    fill_pole_ghosts(g, u);
    return u;
}

double phi_variation(const ParamGrid& g, const Field& w) {
    double v = 0;
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        v = std::max(v, w.row(p).maxCoeff() - w.row(p).minCoeff());
    }
    return v;
}

}  // namespace

TEST_CASE("principal part on the flat disk is the squared polar Laplacian") {
    for (bool axi : {true, false}) {
        const auto c = disk_in_ball(24, axi ? 1 : 12, axi);
        const ParamGrid& g = c.grid;
        const Unknowns U(g);
        const auto A = assemble_principal(c, HeightField::zero(g));
        for (unsigned seed : {1u, 2u}) {
            const Field u = random_field(g, seed);
            const Eigen::VectorXd Au = A.matrix * U.pack(u);
            Field Lu = flat_laplacian(g, u, g.p(0), g.p(g.n_s));
            const Field LLu = flat_laplacian(g, Lu, g.p(0), g.p(g.n_s - 1));
            double err = 0, scale = 0;
            for (int i = 0; i < g.n_s; ++i)
                for (int j = 0; j < g.cols(); ++j) {
                    const int p = g.p(i);
                    err = std::max(err, std::abs(Au[U.red(p, j)] - LLu(p, j)));
                    scale = std::max(scale, std::abs(LLu(p, j)));
                }
            CHECK(err <= 1e-11 * scale);
        }
        // every real row is interior, every ghost row a boundary row
        int n1 = 0, n2 = 0;
        for (auto t : A.row_tags) n1 += t == RowTag::B1, n2 += t == RowTag::B2;
        CHECK(n1 == g.cols());
        CHECK(n2 == g.cols());
    }
}

TEST_CASE("principal coefficient tensor is symmetric") {
    const auto c = hemisphere(16, 8, false);
    const auto ev = evaluate(c, bump(c.grid, 0.01, 0.5, 0.3, 2));
    const auto& G = ev.geom;
    for (int i = 0; i < c.grid.n_s; ++i)
        for (int j = 0; j < c.grid.cols(); ++j) {
            const int p = c.grid.p(i);
            const double gi[2][2] = {{G.iss(p, j), G.isp(p, j)}, {G.isp(p, j), G.ipp(p, j)}};
            for (int a = 0; a < 2; ++a)
                for (int b = 0; b < 2; ++b)
                    for (int k = 0; k < 2; ++k)
                        for (int l = 0; l < 2; ++l) CHECK(gi[a][b] * gi[k][l] == gi[k][l] * gi[a][b]);
        }
}

TEST_CASE("hemisphere principal part converges to the squared Laplace-Beltrami operator") {
    // away from the boundary A(0) and the composed divergence-form operator share
    // their continuum limit; the gap is O(h^2)
    std::vector<double> errs;
    for (int ns : {32, 64}) {
        const auto c = hemisphere(ns, 1, true);
        const ParamGrid& g = c.grid;
        const Unknowns U(g);
        Field u = g.zeros();
        for (int p = 0; p < g.rows(); ++p) {
            const double s = g.s(p - ParamGrid::kGhost);
            u(p, 0) = std::cos(2.0 * s);
        }
        const auto A = assemble_principal(c, HeightField::zero(g));
        const Eigen::VectorXd Au = A.matrix * U.pack(u);
        Field Lu = laplace_beltrami(u, c.ref);
        fill_pole_ghosts(g, Lu);
        const Field LLu = laplace_beltrami(Lu, c.ref);
        double e = 0;
        for (int i = 0; i < g.n_s / 2; ++i) e = std::max(e, std::abs(Au[U.red(g.p(i), 0)] - LLu(g.p(i), 0)));
        errs.push_back(e);
    }
    CHECK(errs[1] < 0.05);
    CHECK(errs[0] / errs[1] > 3.0);
}

TEST_CASE("lower-order terms") {
    SUBCASE("vanish on the equatorial disk at w = 0") {
        const auto c = disk_in_ball(24, 8, false);
        const auto lo = lower_order_rhs(c, HeightField::zero(c.grid));
        CHECK(lo.F0.abs().maxCoeff() < 1e-12);
        CHECK(lo.F2.cwiseAbs().maxCoeff() < 1e-12);
        CHECK(lo.F1.cwiseAbs().maxCoeff() < 1e-12);
    }
    SUBCASE("hemisphere F0(0) shrinks under refinement") {
        std::vector<double> n;
        for (int ns : {16, 32, 64}) {
            const auto c = hemisphere(ns, 1, true);
            const auto lo = lower_order_rhs(c, HeightField::zero(c.grid));
            const auto ev = evaluate(c, HeightField::zero(c.grid));
            n.push_back(l2_norm(ev.geom, lo.F0));
        }
        CHECK(n[1] < n[0]);
        CHECK(n[2] < n[1]);
        CHECK(n[1] / n[2] > 1.8);
    }
    SUBCASE("A(w) w + F0 reproduces deltaE to rounding") {
        const auto c = hemisphere(32, 8, false);
        const auto w = project_to_constraint(c, bump(c.grid, 2e-3, 0.4, 0.5, 1), 1e-11);
        const auto ev = evaluate(c, w);
        const auto A = assemble_principal(c, w, &ev);
        const auto lo = lower_order_rhs(c, w, A, ev);
        const Unknowns U(c.grid);
        const Eigen::VectorXd y = A.matrix * U.pack(w.w);
        for (int i = 0; i < c.grid.n_s; ++i)
            for (int j = 0; j < c.grid.cols(); ++j) {
                const int p = c.grid.p(i);
                const double back = y[U.red(p, j)] + lo.F0(p, j);
                CHECK(std::abs(back - ev.dE(p, j)) <= 4e-16 * (std::abs(y[U.red(p, j)]) + std::abs(ev.dE(p, j)) + 1e-300));
            }
        for (int k = 0; k < static_cast<int>(ev.B1.size()); ++k) {
            const auto [r1, r2] = boundary_ghost_rows(U, ev.geom.boundary[k].i, ev.geom.boundary[k].j);
            CHECK(y[r1] + lo.F1[k] == doctest::Approx(ev.B1[k]).epsilon(1e-12));
            CHECK(std::abs(y[r2] + lo.F2[k] - ev.B2[k]) <= 1e-12 * (std::abs(y[r2]) + 1));
        }
    }
}

TEST_CASE("a step from the hemisphere stays at the hemisphere") {
    const auto c = hemisphere(32, 1, true);
    const auto w0 = HeightField::zero(c.grid);
    const FlowState s0 = make_state(c, w0);
    FlowConfig cfg;
    const double dt = 1e-4;
    const FlowState s1 = step(c, s0, cfg, dt);
    const double move = max_abs_real(c.grid, s1.w.w);
    const double d0 = max_abs_real(c.grid, evaluate(c, w0).dE);
    CHECK(move <= dt * d0 + 1e-12);
    CHECK(s1.b1_norm + s1.b2_norm < c.tol_constraint);
    CHECK(s1.t == doctest::Approx(dt));
    CHECK(s1.step == 1);
}

TEST_CASE("energy decreases monotonically over 100 steps") {
    const auto c = hemisphere(32, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 2e-3, 0.0, 0.6), 1e-11);
    FlowConfig cfg;
    cfg.dt = 1e-5;
    cfg.dt_max = 1e-5;
    cfg.max_steps = 100;
    cfg.t_end = 1.0;
    cfg.grad_tol = 1e-12;
    const auto tr = run_flow(c, w0, cfg);
    REQUIRE(tr.samples.size() == 101);
    for (std::size_t k = 1; k < tr.samples.size(); ++k) {
        CHECK(tr.samples[k].energy <= tr.samples[k - 1].energy + 1e-8 * (1 + std::abs(tr.samples[k - 1].energy)));
        CHECK(tr.samples[k].b1_norm + tr.samples[k].b2_norm <= 10 * c.tol_constraint);
        CHECK(tr.samples[k].t > tr.samples[k - 1].t);
    }
    CHECK(tr.samples.back().energy < tr.samples.front().energy);
}

TEST_CASE("time-step refinement is at least first order") {
    const auto c = hemisphere(32, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 2e-3, 0.0, 0.6), 1e-11);
    // leave the initial collar transient first
    FlowConfig warm;
    warm.dt = 1e-6;
    warm.dt_max = 1e-6;
    warm.t_end = 2e-4;
    warm.grad_tol = 1e-12;
    const FlowState start = run_flow(c, w0, warm).final_state;
    FlowConfig cfg;
    const double T = 4e-6;
    auto advance = [&](int n) {
        FlowState s = start;
        for (int k = 0; k < n; ++k) s = step(c, s, cfg, T / n);
        return s.w.w;
    };
    const Field ref = advance(16);
    const double e1 = max_abs_real(c.grid, advance(1) - ref);
    const double e2 = max_abs_real(c.grid, advance(2) - ref);
    const double e4 = max_abs_real(c.grid, advance(4) - ref);
    MESSAGE("one-step errors " << e1 << " " << e2 << " " << e4);
    CHECK(e1 > 0);
    // first order against a dt/16 reference predicts ratios 15/7 and 7/3
    CHECK(e1 / e2 > 1.8);
    CHECK(e2 / e4 > 1.8);
}

TEST_CASE("hemisphere stability run converges") {
    const auto c = hemisphere(64, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 0.01, 0.0, 0.6), 1e-11);
    FlowConfig cfg;
    cfg.dt = 1e-4;
    cfg.t_end = 50;
    const auto tr = run_flow(c, w0, cfg);
    CHECK(tr.reason == Termination::Converged);
    CHECK(tr.final_state.grad_norm < cfg.grad_tol);
    const double excess0 = tr.samples.front().energy - kTwoPi;
    const double excess = std::abs(tr.final_state.energy - kTwoPi);
    MESSAGE("W(f0) - 2pi = " << excess0 << ", final |W - 2pi| = " << excess);
    CHECK(excess <= 0.1 * excess0);
    for (std::size_t k = 1; k < tr.samples.size(); ++k)
        CHECK(tr.samples[k].energy <= tr.samples[k - 1].energy + 1e-8 * (1 + std::abs(tr.samples[k - 1].energy)));

    SUBCASE("converged state persists") {
        FlowState s = tr.final_state;
        FlowConfig c2 = cfg;
        for (int k = 0; k < 100; ++k) {
            s = step(c, s, c2, tr.final_state.dt);
            CHECK(s.grad_norm <= 2 * cfg.grad_tol);
        }
    }
}

TEST_CASE("oversized dt adapts down and still converges") {
    const auto c = hemisphere(64, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 0.01, 0.0, 0.6), 1e-11);
    FlowConfig cfg;
    cfg.dt = 5e-2;
    cfg.t_end = 50;
    const auto tr = run_flow(c, w0, cfg);
    REQUIRE(tr.reason == Termination::Converged);
    CHECK(tr.rejected_steps > 0);
    bool residue = false;
    for (const auto& line : tr.dt_log) residue = residue || line.find("step residue") != std::string::npos;
    CHECK(residue);
    CHECK(tr.final_state.dt < cfg.dt);
    CHECK(tr.accepted_steps < 2000);
    // the limits sit on the dilation family, where discrete W varies slightly
    cfg.dt = 1e-4;
    const auto ref = run_flow(c, w0, cfg);
    REQUIRE(ref.reason == Termination::Converged);
    const double excess0 = tr.samples.front().energy - ref.final_state.energy;
    CHECK(std::abs(tr.final_state.energy - ref.final_state.energy) < 1e-3 * excess0);
}

TEST_CASE("perturbed equatorial disk in the unit ball flows to a minimal surface") {
    const auto c = disk_in_ball(32, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 0.01, 0.0, 0.6), 1e-11);
    FlowConfig cfg;
    cfg.dt = 1e-4;
    cfg.t_end = 50;
    const auto tr = run_flow(c, w0, cfg);
    CHECK(tr.samples.front().energy > 1e-6);
    CHECK(tr.reason == Termination::Converged);
    CHECK(tr.final_state.energy <= 1e-6);
}

TEST_CASE("amplitude near r_bar exits the chart or converges") {
    const auto c = hemisphere(32, 1, true);
    const auto w0 = bump(c.grid, c.r_bar / 1.01, 0.0, 0.6);
    FlowConfig cfg;
    cfg.dt = 1e-4;
    cfg.t_end = 20;
    const auto tr = run_flow(c, w0, cfg);
    MESSAGE("termination: " << std::string(termination_name(tr.reason)) << " " << tr.message);
    CHECK((tr.reason == Termination::ChartExit || tr.reason == Termination::Converged));
    CHECK(norm_c0(c, tr.final_state.w) < c.r_bar);
}

TEST_CASE("unprojected initial data is rejected") {
    const auto c = hemisphere(32, 1, true);
    FlowConfig cfg;
    CHECK_THROWS_WITH_AS(run_flow(c, bump(c.grid, 1e-3, 0.9, 0.3), cfg), doctest::Contains("project"), Error);
}

TEST_CASE("axisymmetric data stays axisymmetric on the full grid") {
    const auto c = hemisphere(24, 8, false);
    const auto w0 = project_to_constraint(c, bump(c.grid, 3e-3, 0.0, 0.6), 1e-11);
    REQUIRE(phi_variation(c.grid, w0.w) < 1e-12);
    FlowConfig cfg;
    cfg.dt = 2e-5;
    cfg.max_steps = 40;
    cfg.grad_tol = 1e-12;
    const auto tr = run_flow(c, w0, cfg);
    CHECK(tr.accepted_steps == 40);
    CHECK(phi_variation(c.grid, tr.final_state.w.w) < 1e-10);
}

TEST_CASE("energy dissipation identity") {
    const auto c = hemisphere(64, 1, true);
    const auto w0 = project_to_constraint(c, bump(c.grid, 0.01, 0.0, 0.6), 1e-11);
    auto deviation = [&](double dt) {
        FlowConfig cfg;
        cfg.dt = dt;
        cfg.dt_max = dt;
        cfg.t_end = 2e-3;
        cfg.grad_tol = 1e-12;
        return energy_dissipation_check(run_flow(c, w0, cfg), 0.2);
    };
    SUBCASE("stability run away from the transient") {
        const auto r = deviation(1.6e-5);
        CHECK(r.samples_used > 50);
        CHECK(r.max_rel_deviation <= 0.05);
    }
    SUBCASE("coarse steps: deviation falls as dt halves") {
        const auto a = deviation(6.4e-5), b = deviation(3.2e-5);
        MESSAGE("deviations " << a.max_rel_deviation << " " << b.max_rel_deviation);
        CHECK(b.max_rel_deviation < 0.6 * a.max_rel_deviation);
    }
}

TEST_CASE("dissipation check on a stationary trace") {
    // grad_norm is exactly 0 here, so run_flow would stop at once; step by hand
    const auto c = disk_in_ball(24, 1, true);
    FlowConfig cfg;
    FlowTrace tr;
    FlowState s = make_state(c, HeightField::zero(c.grid));
    for (int k = 0; k <= 10; ++k) {
        tr.samples.push_back({s.t, s.step, s.dt, s.energy, s.grad_norm, s.b1_norm, s.b2_norm, s.dissipation, s.c0_norm, s.c1_norm});
        s = step(c, s, cfg, 1e-4);
    }
    const auto r = energy_dissipation_check(tr, 0.0);
    CHECK(r.max_abs_deviation < 1e-10);
    CHECK(r.samples_used == 0);

    FlowTrace short_trace;
    short_trace.samples.assign(tr.samples.begin(), tr.samples.begin() + 2);
    CHECK_THROWS_WITH_AS(energy_dissipation_check(short_trace), doctest::Contains("3 samples"), Error);
}
