#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wfb/geometry.hpp"
#include "wfb/support_surface.hpp"

namespace wfb {

struct HeightField {
    Field w;  // padded; ghost rows are part of the state

    static HeightField zero(const ParamGrid& g) { return {g.zeros()}; }
};

struct ChartOptions {
    double eps_c1 = 0.25;      // bound on |Phi - Phi_fbar|_{C^1}
    double tol_fbc = 0.0;      // <= 0 selects max(1e-6, h^2)
    double tol_constraint = 1e-10;
    int max_halvings = 12;
};

// Smooth nonincreasing cutoff: 1 below alpha0, 0 above 2 alpha0, |zeta'| <= 2/alpha0.
double zeta_profile(double d, double alpha0);
double zeta_profile_derivative(double d, double alpha0);

class GaussChart {
public:
    ParamGrid grid;
    GeometryCache ref;
    SupportSurface support;
    double alpha0 = 0, r_bar = 0, a_c1 = 0;
    double tol_fbc = 0, tol_constraint = 1e-10;
    Field d0, zeta;       // padded
    VField fbar, nubar;   // padded
    std::vector<std::string> warnings;
    double fbc_residual_d = 0, fbc_residual_orth = 0, fbc_residual_third = 0;
    double c1_perturbation = 0;

    Vec3 phi_map(int p, int j, double r) const;
    Vec3 xi(int p, int j, double r) const;
    std::uint64_t hash() const;
};

GaussChart build_gauss_chart(const Immersion& fbar, SupportSurface S, double alpha0, double r_bar,
                             const ChartOptions& opt = {});

// Everything derived from one height field, evaluated once.
struct ChartEval {
    Immersion imm;
    GeometryCache geom;
    VField xi;
    Field pairing;  // <xi, nu> on padded rows where geometry is valid
    Field dE;       // on real rows
    std::vector<Eigen::Vector3d> mu;  // (mu_s, mu_phi, mu2) per boundary node
    Eigen::VectorXd B1, B2;           // per boundary node, ordered like geom.boundary
    double energy = 0;
    double grad_norm = 0;  // |grad W|_{L2(d mu)}
    double dE_norm = 0;    // |deltaE|_{L2(d mu)}
};

struct EvalOptions {
    bool check_pairing = true;
    bool check_pole = true;  // off for nodal perturbations, which are not smooth at the pole
};

ChartEval evaluate(const GaussChart& chart, const HeightField& w, const EvalOptions& opt = {});

Immersion evaluate_immersion(const GaussChart& chart, const HeightField& w);
Field xi_pairing(const GaussChart& chart, const HeightField& w);
Field delta_E(const GaussChart& chart, const HeightField& w);
std::vector<Eigen::Vector3d> boundary_direction_field(const GaussChart& chart, const HeightField& w);
std::pair<Eigen::VectorXd, Eigen::VectorXd> boundary_residuals(const GaussChart& chart, const HeightField& w);
double chart_energy(const GaussChart& chart, const HeightField& w);

// Newton on collar profiles attached to each boundary node until |B1| + |B2| < tol.
HeightField project_to_constraint(const GaussChart& chart, const HeightField& w, double tol = 0.0);

double norm_c0(const GaussChart& chart, const HeightField& w);
double norm_c1(const GaussChart& chart, const HeightField& w);
// max over real nodes of finite-difference derivatives up to order k in chart coordinates
double norm_ck(const ParamGrid& g, const Field& u, int k);

// Fill pole ghosts of a height field by symmetry.
void complete_height_field(const ParamGrid& g, HeightField& w);

}  // namespace wfb
