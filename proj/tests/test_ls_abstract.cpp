#include <cmath>
#include <random>

#include "doctest.h"
#include "wfb/errors.hpp"
#include "wfb/ls_abstract.hpp"

using namespace wfb;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

const VectorXd z2 = VectorXd::Zero(2);

std::string code_of(const std::function<void()>& f) {
    try {
        f();
    } catch (const Error& e) {
        return e.code();
    }
    return "";
}

// x^4 + y^4 + (z - x y)^2: two-dimensional kernel, curved reduced manifold z = x y
AnalyticFunctional saddle_valley() {
    return polynomial_functional(3, {{1, {4, 0, 0}}, {1, {0, 4, 0}}, {1, {0, 0, 2}}, {-2, {1, 1, 1}}, {1, {2, 2, 0}}});
}

}  // namespace

TEST_CASE("kernel_split on the zoo") {
    const ReductionResult r = kernel_split(quartic_x4_y2(), z2);
    REQUIRE(r.dim() == 1);
    // oracle: the Jacobian at 0 is diag(0, 2)
    CHECK(std::abs(std::abs(r.X(0, 0)) - 1) < 1e-14);
    CHECK(std::abs(r.X(1, 0)) < 1e-14);
    CHECK(r.singular_values[0] == doctest::Approx(2.0));
    MatrixXd XY(2, 2);
    XY << r.X, r.Y;
    CHECK((XY.transpose() * XY - MatrixXd::Identity(2, 2)).norm() < 1e-12);
    CHECK((r.PW * r.PW - r.PW).norm() < 1e-12);

    const MatrixXd A{{3, 1, 0}, {1, 2, 0.5}, {0, 0.5, 1}};
    CHECK(kernel_split(quadratic_functional(A), VectorXd::Zero(3)).dim() == 0);
    CHECK(kernel_split(constant_functional(4, 0.0), VectorXd::Zero(4)).dim() == 4);
    CHECK(kernel_split(saddle_valley(), VectorXd::Zero(3)).dim() == 2);
}

TEST_CASE("kernel_split refuses non-critical points and ambiguous ranks") {
    CHECK(code_of([] { kernel_split(quartic_x4_y2(), VectorXd{{0.1, 0.0}}); }) == "NotCritical");
    const MatrixXd A{{1, 0}, {0, 1e-6}};
    CHECK(code_of([&] { kernel_split(quadratic_functional(A), z2, 1e-6); }) == "RankAmbiguous");
    CHECK(kernel_split(quadratic_functional(A), z2, 1e-3).dim() == 1);
}

TEST_CASE("Lyapunov-Schmidt solve and reduced energy") {
    const ReductionResult flat = kernel_split(quartic_x4_y2(), z2);
    const ReductionResult bent = kernel_split(quartic_parabola(), z2);
    for (double x : {0.0, 0.05, -0.2, 0.3}) {
        const VectorXd xv{{x}};
        CHECK(lyapunov_schmidt_solve(flat, xv).norm() < 1e-14);
        const VectorXd y = lyapunov_schmidt_solve(bent, xv);
        const VectorXd v = bent.v0 + bent.X * xv + bent.Y * y;
        CHECK(std::abs(v[1] - v[0] * v[0]) < 1e-10);  // y = x^2
        CHECK((bent.PW * bent.fn.delta(v)).norm() < 1e-10);
        CHECK(std::abs(reduced_energy(flat, xv) - std::pow(x, 4)) < 1e-10);
        CHECK(std::abs(reduced_energy(bent, xv) - std::pow(x, 4)) < 1e-9);
    }
    CHECK(reduced_energy(bent, VectorXd::Zero(1)) == bent.fn.E(z2));
    CHECK(code_of([&] { lyapunov_schmidt_solve(bent, VectorXd{{0.9}}); }) == "LeftNeighborhood");
}

TEST_CASE("reduced gradient: chain rule against differences of the reduced energy") {
    const ReductionResult r = kernel_split(saddle_valley(), VectorXd::Zero(3));
    REQUIRE(r.dim() == 2);
    for (const VectorXd& x : {VectorXd{{0.1, 0.2}}, VectorXd{{-0.25, 0.05}}}) {
        const VectorXd g = reduced_gradient(r, x);
        VectorXd fd(2);
        const double h = 1e-5;
        for (int i = 0; i < 2; ++i) {
            VectorXd xp = x, xm = x;
            xp[i] += h;
            xm[i] -= h;
            fd[i] = (reduced_energy(r, xp) - reduced_energy(r, xm)) / (2 * h);
        }
        CHECK((g - fd).norm() <= 1e-4 * g.norm());
    }
}

TEST_CASE("analytic Jacobians agree with differences") {
    for (const auto& f : {quartic_x4_y2(), quartic_parabola()})
        CHECK(jacobian_consistency(f, VectorXd{{0.3, -0.2}}) < 1e-5);
    CHECK(jacobian_consistency(saddle_valley(), VectorXd{{0.3, -0.2, 0.1}}) < 1e-5);
    AnalyticFunctional wrong = quartic_x4_y2();
    wrong.jacobian = [](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(2, 2); };
    CHECK(jacobian_consistency(wrong, VectorXd{{0.3, -0.2}}) > 1e-2);
}

TEST_CASE("envelope fit recovers a planted lower line") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0, 1);
    std::vector<SamplePair> pairs;
    for (int i = 0; i < 1000; ++i) {
        const double lx = -30 * u(rng);
        // 1% exactly on log b = 0.7 log a + 0.2, the rest above
        const double lift = i % 100 == 0 ? 0.0 : 0.1 + 3 * u(rng);
        pairs.push_back({std::exp(lx), std::exp(0.7 * lx + 0.2 + lift)});
    }
    const LSFit f = envelope_fit(pairs, 0.02);
    CHECK(f.slope == doctest::Approx(0.7).epsilon(1e-3));
    CHECK(f.theta == doctest::Approx(0.3).epsilon(3e-3));
    CHECK(f.violation_fraction <= 0.05);
    CHECK(code_of([] { envelope_fit({{1.0, 1.0}, {1.0, 2.0}, {1.0, 3.0}}); }) == "DegenerateSamples");
}

TEST_CASE("estimate_theta on the zoo") {
    const LSFit q1 = estimate_theta(quadratic_functional(MatrixXd::Constant(1, 1, 2.0)), VectorXd::Zero(1));
    CHECK(q1.theta == doctest::Approx(0.5).epsilon(0.03 / 0.5));
    const MatrixXd A{{3, 1, 0}, {1, 2, 0.5}, {0, 0.5, 1}};
    const LSFit q3 = estimate_theta(quadratic_functional(A), VectorXd::Zero(3));
    CHECK(std::abs(q3.theta - 0.5) <= 0.03);
    const LSFit quart = estimate_theta(quartic_x4_y2(), z2);
    CHECK(std::abs(quart.theta - 0.25) <= 0.05);
    for (const LSFit* f : {&q1, &q3, &quart}) {
        CHECK(f->theta > 0);
        CHECK(f->theta <= 0.55);
        CHECK(f->violation_fraction <= 0.05);
    }
    CHECK(code_of([] { estimate_theta(constant_functional(2, 1.5), z2); }) == "DegenerateSamples");
    CHECK(code_of([] { estimate_theta(quartic_x4_y2(), VectorXd{{0.2, 0.0}}); }) == "NotCritical");
}

TEST_CASE("exponents of analytic functionals stay in range") {
    for (const auto& f : {quartic_parabola(), saddle_valley()}) {
        const VectorXd v0 = VectorXd::Zero(f.n);
        const LSFit fit = estimate_theta(f, v0);
        CHECK(fit.theta > 0);
        CHECK(fit.theta <= 0.55);
        // held out: fresh shells from another seed
        ShellSampling fresh;
        fresh.seed = 99;
        CHECK(inequality_holds_fraction(fit, sample_shells(f, v0, fresh)) >= 0.95);
    }
}

TEST_CASE("seeded sampling is bitwise reproducible") {
    const LSFit a = estimate_theta(quartic_parabola(), z2), b = estimate_theta(quartic_parabola(), z2);
    CHECK(a.theta == b.theta);
    CHECK(a.C == b.C);
    REQUIRE(a.samples.size() == b.samples.size());
    bool same = true;
    for (size_t i = 0; i < a.samples.size(); ++i) same = same && a.samples[i].gap == b.samples[i].gap && a.samples[i].grad == b.samples[i].grad;
    CHECK(same);
    ShellSampling other;
    other.seed = 2;
    CHECK(estimate_theta(quartic_parabola(), z2, other).samples[0].gap != a.samples[0].gap);
}

TEST_CASE("check_hypotheses") {
    const HypothesisReport id = check_hypotheses(quartic_x4_y2(), z2);
    CHECK(id.max_ratio == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(id.bound_confirmed);
    CHECK(id.kernel_dim == 1);
    CHECK(id.range_closed);

    AnalyticFunctional twice = quartic_x4_y2();
    twice.deltaE = [g = twice.grad](const VectorXd& v) -> VectorXd { return 2 * g(v); };
    twice.jacobian = [j = twice.jacobian](const VectorXd& v) -> MatrixXd { return 2 * j(v); };
    twice.M_bound = 0.5;
    const HypothesisReport tw = check_hypotheses(twice, z2);
    CHECK(tw.max_ratio == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(tw.bound_confirmed);

    // deltaE drops the y component that grad E keeps
    AnalyticFunctional lossy = quadratic_functional(MatrixXd::Identity(2, 2) * 2.0);
    lossy.deltaE = [](const VectorXd& v) -> VectorXd { return VectorXd{{2 * v[0], 0.0}}; };
    lossy.jacobian = [](const VectorXd&) -> MatrixXd { return MatrixXd{{2, 0}, {0, 0}}; };
    const HypothesisReport lo = check_hypotheses(lossy, z2);
    CHECK_FALSE(lo.bound_confirmed);
    CHECK(lo.max_ratio > 10);
}

TEST_CASE("exponent is invariant under diffeomorphisms") {
    const auto f = quartic_x4_y2();
    CHECK(diffeo_invariance_test(f, z2, rotation_diffeo(0.7)).delta_theta <= 0.05);
    const InvarianceReport sh = diffeo_invariance_test(f, z2, shear_diffeo());
    CHECK(sh.delta_theta <= 0.05);
    CHECK(sh.u0.norm() == 0.0);
    const InvarianceReport id = diffeo_invariance_test(f, z2, identity_diffeo(2));
    CHECK(id.delta_theta == 0.0);
    // the pulled-back deltaE is deltaE o phi, with the composed Jacobian
    const AnalyticFunctional pb = pull_back(f, shear_diffeo());
    CHECK(jacobian_consistency(pb, VectorXd{{0.2, 0.1}}) < 1e-5);
}
