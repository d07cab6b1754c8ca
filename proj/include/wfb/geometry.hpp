#pragma once

#include <functional>
#include <string>
#include <vector>

#include "wfb/grid.hpp"

namespace wfb {

using Sampler = std::function<Vec3(double s, double phi)>;

struct Immersion {
    ParamGrid grid;
    VField pos;       // padded, ghost rows filled
    Sampler sampler;  // empty when built from raw positions
    std::string label;
};

// Samples every padded row, ghosts included, from an analytic parametrization.
Immersion make_immersion(const ParamGrid& g, const Sampler& f, std::string label);
// Real rows given; pole ghosts are mirrored and outer ghosts extrapolated.
Immersion make_immersion(const ParamGrid& g, VField pos, std::string label);

Immersion scaled(const Immersion& imm, double lambda);
Immersion translated(const Immersion& imm, const Vec3& c);

namespace samplers {
// Upper hemisphere of radius R centered at c; boundary on the plane z = c.z.
Sampler hemisphere(double R, Vec3 c = Vec3::Zero());
// Spherical cap with polar opening angle `angle` (radians); boundary at z = R cos(angle).
Sampler spherical_cap(double angle, double R = 1.0);
// Flat disk of radius R in the plane z = 0.
Sampler equatorial_disk(double R = 1.0);
// Critical catenoid meeting the unit sphere orthogonally, scaled by R.
Sampler catenoid_band(double R = 1.0);
double critical_catenoid_t();
}  // namespace samplers

struct BoundaryNode {
    int i = 0, j = 0;
    double eta_s = 0, eta_p = 0;  // conormal coefficients in (s, phi)
    double tau_s = 0, tau_p = 0;
    Vec3 eta;  // df(eta)
    Vec3 tau;  // df(tau)
};

struct GeometryOptions {
    double eps_imm_rel = 1e-12;
    double pole_tol = 1e-2;
};

struct GeometryCache {
    ParamGrid grid;
    int lo = 0, hi = 0;  // padded rows carrying valid geometry
    VField f, fs, fp, fss, fsp, fpp;
    Field gss, gsp, gpp, det_g, sqrt_g;
    Field iss, isp, ipp;
    VField nu;
    Field Ass, Asp, App, H, A0_norm2;
    // Gamma^k_ij with k in {s, phi} and ij in {ss, sphi, phiphi}: index 3*k + ij.
    std::array<Field, 6> christoffel;
    std::vector<BoundaryNode> boundary;
};

GeometryCache build_geometry(const Immersion& imm, const GeometryOptions& opt = {});

double willmore_energy(const GeometryCache& geom);
// 1/2 (Delta_g H + |A0|^2 H) on the real rows.
Field willmore_gradient(const GeometryCache& geom);
// Divergence-form Laplace-Beltrami on the real rows; u must carry ghost values.
Field laplace_beltrami(const Field& u, const GeometryCache& geom);
std::vector<BoundaryNode> boundary_frame(const GeometryCache& geom);

// Quadrature of u against d mu over the real rows.
double integrate(const GeometryCache& geom, const Field& u);
double l2_norm(const GeometryCache& geom, const Field& u);

// Coordinates of the tangent vector a*f_s + b*f_phi evaluated with metric entries.
double metric_dot(const GeometryCache& geom, int p, int j, double as, double ap, double bs, double bp);

}  // namespace wfb
