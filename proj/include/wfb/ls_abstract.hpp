#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

namespace wfb {

using VecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&)>;
using MatFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&)>;

// E : R^n -> R with a second map deltaE : R^n -> R^m satisfying
// |E'(v)| <= M_bound |deltaE(v)|. Empty deltaE means deltaE = grad; an empty
// jacobian is replaced by central differences of deltaE.
struct AnalyticFunctional {
    int n = 0;
    std::string name;
    std::function<double(const Eigen::VectorXd&)> E;
    VecFn grad;
    VecFn deltaE;
    MatFn jacobian;
    double M_bound = 1.0;

    Eigen::VectorXd delta(const Eigen::VectorXd& v) const { return deltaE ? deltaE(v) : grad(v); }
    Eigen::MatrixXd jac(const Eigen::VectorXd& v) const;
};

// max column-relative gap between fn.jacobian and central differences of deltaE
double jacobian_consistency(const AnalyticFunctional& fn, const Eigen::VectorXd& v, double h = 1e-6);

// A few members of the built-in zoo.
AnalyticFunctional quadratic_functional(const Eigen::MatrixXd& A);  // 1/2 v^T A v
AnalyticFunctional quartic_x4_y2();                                  // x^4 + y^2
AnalyticFunctional quartic_parabola();                               // x^4 + (y - x^2)^2
AnalyticFunctional constant_functional(int n, double c);
struct Monomial {
    double coef = 0;
    std::vector<int> powers;
};
AnalyticFunctional polynomial_functional(int n, const std::vector<Monomial>& terms);

struct ReductionResult {
    AnalyticFunctional fn;
    Eigen::VectorXd v0;
    Eigen::MatrixXd X;   // kernel of deltaE'(v0), n x d
    Eigen::MatrixXd Y;   // complement, n x (n - d)
    Eigen::MatrixXd Ur;  // left singular vectors spanning W = im deltaE'(v0)
    Eigen::MatrixXd PW;  // Ur Ur^T
    Eigen::VectorXd singular_values;
    double rank_tol = 0;
    double radius = 0.5;  // validity ball for x and g(x)
    int dim() const { return static_cast<int>(X.cols()); }
};

ReductionResult kernel_split(const AnalyticFunctional& fn, const Eigen::VectorXd& v0, double rank_tol = 1e-6,
                             double radius = 0.5);

// y = g(x, 0): P_W deltaE(v0 + X x + Y y) = 0 by Newton with continuation in |x|.
Eigen::VectorXd lyapunov_schmidt_solve(const ReductionResult& red, const Eigen::VectorXd& x);

double reduced_energy(const ReductionResult& red, const Eigen::VectorXd& x);

// E'(v) (X + Y dg/dx) at v = v0 + X x + Y g(x), by the chain rule
Eigen::VectorXd reduced_gradient(const ReductionResult& red, const Eigen::VectorXd& x);

struct SamplePair {
    double gap;   // |E - E*|
    double grad;  // |deltaE|
};

struct LSFit {
    double theta = 0, C = 0;
    double slope = 0, intercept = 0;  // log|deltaE| >= slope log|E - E*| + intercept
    double tau = 0.02;
    double violation_fraction = 0;
    std::vector<SamplePair> samples;  // every pair offered to the fit
    int used = 0;                     // pairs with a resolvable gap and nonzero gradient
};

// tau quantile regression line y ~ slope x + intercept
struct QuantileLine {
    double slope = 0, intercept = 0;
};
QuantileLine quantile_line(const std::vector<double>& x, const std::vector<double>& y, double tau);

// (1 - theta) and C from the tau lower quantile line of log grad against log gap.
// gap_floor excludes pairs whose gap is lost to rounding.
LSFit envelope_fit(const std::vector<SamplePair>& samples, double tau = 0.02, double gap_floor = 0.0);

// share of pairs obeying gap^(1 - theta) <= C grad
double inequality_holds_fraction(const LSFit& fit, const std::vector<SamplePair>& pairs);

struct ShellSampling {
    std::vector<double> radii = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
    int samples_per_shell = 200;
    std::uint64_t seed = 1;
    double tau = 0.02;
    // share of each shell placed on the reduced manifold v0 + X xi + Y (g(xi) + eta)
    double adapted_fraction = 0.5;
    double eta_decades = 16;  // |eta| = rho * 10^(-U(0, eta_decades))
    double rank_tol = 1e-6;
};

std::vector<SamplePair> sample_shells(const AnalyticFunctional& fn, const Eigen::VectorXd& v0, const ShellSampling& s);

LSFit estimate_theta(const AnalyticFunctional& fn, const Eigen::VectorXd& v0, const ShellSampling& s = {});

struct HypothesisReport {
    double max_ratio = 0;  // sampled sup |grad E| / |deltaE|
    double M_bound = 0;
    bool bound_confirmed = false;
    int kernel_dim = 0;
    int rank = 0;
    Eigen::VectorXd singular_values;
    bool range_closed = true;  // finite dimensions: always
    int samples = 0;
};

HypothesisReport check_hypotheses(const AnalyticFunctional& fn, const Eigen::VectorXd& v0, double ball = 0.1,
                                  int samples = 2000, std::uint64_t seed = 7);

struct Diffeo {
    VecFn map;
    MatFn jacobian;
    VecFn inverse;  // optional; Newton on map otherwise
};

AnalyticFunctional pull_back(const AnalyticFunctional& fn, const Diffeo& phi);

struct InvarianceReport {
    LSFit original, transformed;
    double delta_theta = 0;
    Eigen::VectorXd u0;
};

InvarianceReport diffeo_invariance_test(const AnalyticFunctional& fn, const Eigen::VectorXd& v0, const Diffeo& phi,
                                        const ShellSampling& s = {});

Diffeo rotation_diffeo(double angle);  // in the first two coordinates
Diffeo shear_diffeo();                 // (x, y) -> (x, y + x^2)
Diffeo identity_diffeo(int n);

}  // namespace wfb
