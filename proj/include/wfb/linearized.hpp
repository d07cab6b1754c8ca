#pragma once

#include <vector>

#include "wfb/flow.hpp"

namespace wfb {

struct LinearizationOptions {
    double h_rel = 1e-5;          // direction step relative to r_bar
    double richardson_tol = 1e-4;  // columns at h and h/2 must agree to this, relative
    int stencil_radius = 5;        // rows reached by one nodal perturbation
};

// Jacobian of the discrete map w -> (deltaE on real rows, B1 and B2 on the ghost
// rows) at w = 0, by central differences over reduced unknowns.
struct Linearization {
    OperatorAssembly op;
    double richardson_defect = 0;  // max column-relative gap between steps h and h/2
    double h_dir = 0;
};

Linearization assemble_linearization(const GaussChart& chart, const LinearizationOptions& opt = {});

// The map itself over reduced unknowns; the linearisation differentiates this.
Eigen::VectorXd nonlinear_map(const GaussChart& chart, const Unknowns& U, const Eigen::VectorXd& x);

// Boundary coefficients of the auxiliary operator, per boundary node.
struct BoundaryCoefficients {
    Eigen::VectorXd m;                 // A^S(nu, nu)
    Eigen::VectorXd b_s, b_phi, b;     // d phi . b_vec = b_s phi_s + b_phi phi_phi
};

// m from the support surface; (b_vec, b) from the lower-order remainder of the
// assembled B2 row after removing d_eta Delta + m Delta.
BoundaryCoefficients boundary_coefficients(const GaussChart& chart, const Linearization& lin);

// (Delta^2 - c1 Delta + c2) in the interior, d_eta + m and
// d_eta Delta + m Delta + d phi . b_vec + b phi on the ghost rows.
OperatorAssembly assemble_T_tilde(const GaussChart& chart, double c1, double c2, const BoundaryCoefficients& bc);
OperatorAssembly assemble_T_tilde(const GaussChart& chart, double c1, double c2);

struct SpectralReport {
    std::vector<double> singular_values;  // smallest first
    double sigma_max = 0;
    double kernel_tol = 0;
    int near_kernel_dim = 0;
    bool isomorphism = false;
    std::vector<Eigen::VectorXd> kernel_basis;  // right singular vectors below kernel_tol
    int iterations = 0;
    std::string method;
};

struct SpectralOptions {
    int k = 6;                 // smallest singular values wanted
    // <= 0 selects kernel_rel * sigma_max for a bare matrix and chart_kernel_tol for
    // the chart-level entry points, where sigma_max grows like h^-4
    double kernel_tol = 0.0;
    double kernel_rel = 1e-6;
    int max_iterations = 500;
    double conv_tol = 1e-10;
    unsigned seed = 12345;
};

// Shift-invert subspace iteration on (M^T M)^{-1}; verdict = sigma_min > kernel_tol.
SpectralReport verify_isomorphism(const SpMat& M, const SpectralOptions& opt = {});
SpectralReport verify_isomorphism(const OperatorAssembly& op, const SpectralOptions& opt = {});

// 1/L^4 with L^2 = area / 2 pi: the natural scale of a fourth-order operator on
// the reference surface.
double chart_kernel_tol(const GaussChart& chart);

// (c1, c2) scan over a geometric grid, c1 outer; the first isomorphism wins.
struct TTildeScan {
    double c1 = 0, c2 = 0;
    bool found = false;
    SpectralReport report;
    std::vector<std::tuple<double, double, double>> tried;  // (c1, c2, sigma_min)
};
TTildeScan scan_T_tilde(const GaussChart& chart, const std::vector<double>& values = {1, 4, 16, 64, 256},
                        const SpectralOptions& opt = {});

// T restricted to the linearised constraint: ghost values are eliminated through
// the B1/B2 rows, leaving an operator on real-row unknowns. Norms are L2(d mu_fbar).
struct ConstrainedOperator {
    Eigen::MatrixXd T;            // weighted: W^{1/2} T_res W^{-1/2}
    Eigen::MatrixXd T_res;        // unweighted, real rows x real rows
    Eigen::MatrixXd ghost_solve;  // ghost values = ghost_solve * real values
    Eigen::VectorXd weights;      // quadrature weights of the real unknowns
    std::vector<int> real_index;  // reduced index of each real unknown
    std::vector<int> ghost_index;
};
ConstrainedOperator constrain(const Unknowns& U, const Linearization& lin, const GeometryCache& ref);

struct NearKernel {
    SpectralReport report;
    ConstrainedOperator op;
    Linearization lin;
};
// kernel basis vectors are real-row fields, orthonormal in L2(d mu_fbar)
NearKernel near_kernel(const GaussChart& chart, const SpectralOptions& opt = {}, const LinearizationOptions& lopt = {});

// Normal speeds of rigid motions and dilation, divided by <xi, nu>, on real rows.
Eigen::VectorXd translation_field(const GaussChart& chart, const Unknowns& U, const Vec3& e);
Eigen::VectorXd dilation_field(const GaussChart& chart, const Unknowns& U, const Vec3& centre);

// |T phi| / (sigma_max |phi|) in the weighted norm, phi on real rows.
double relative_residual(const NearKernel& nk, const Eigen::VectorXd& phi_real);

// reduced-unknown vector -> its real-row entries, ordered like co.real_index
Eigen::VectorXd restrict_to_real(const ConstrainedOperator& co, const Eigen::VectorXd& reduced);
// share of phi's weighted norm inside the span of the kernel basis
double kernel_capture(const NearKernel& nk, const Eigen::VectorXd& phi_real);

}  // namespace wfb
