#include "wfb/grid.hpp"

#include <cmath>
#include <numbers>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

ParamGrid ParamGrid::make(Topology topo, int n_s, int n_phi, bool axisymmetric) {
    if (n_s < 8) throw Error(ErrorFamily::Input, "InvalidGrid", "n_s must be at least 8");
    if (axisymmetric) {
        if (n_phi != 1) throw Error(ErrorFamily::Input, "InvalidGrid", "axisymmetric mode requires n_phi = 1");
    } else {
        if (n_phi < 8) throw Error(ErrorFamily::Input, "InvalidGrid", "n_phi must be at least 8");
        if (topo == Topology::Disk && n_phi % 2 != 0)
            throw Error(ErrorFamily::Input, "InvalidGrid", "disk grids need an even n_phi to reach across the pole");
    }
    ParamGrid g;
    g.topology = topo;
    g.n_s = n_s;
    g.n_phi = n_phi;
    g.axisymmetric = axisymmetric;
    return g;
}

double ParamGrid::h() const {
    return topology == Topology::Disk ? 1.0 / (n_s - 0.5) : 1.0 / (n_s - 1);
}

double ParamGrid::s(int i) const {
    return topology == Topology::Disk ? (i + 0.5) * h() : i * h();
}

double ParamGrid::phi(int j) const {
    if (axisymmetric) return 0.0;
    return 2.0 * std::numbers::pi * j / n_phi;
}

int ParamGrid::mirror(int j) const {
    if (axisymmetric) return 0;
    return (j + n_phi / 2) % n_phi;
}

std::vector<int> ParamGrid::boundary_rows() const {
    if (topology == Topology::Disk) return {n_s - 1};
    return {0, n_s - 1};
}

int ParamGrid::outward(int i) const { return i == 0 && topology == Topology::Annulus ? -1 : 1; }

double ParamGrid::weight_s(int i) const {
    const double hh = h();
    if (i < 0 || i >= n_s) return 0.0;
    if (i == n_s - 1) return 0.5 * hh;
    if (topology == Topology::Annulus && i == 0) return 0.5 * hh;
    return hh;
}

double ParamGrid::weight_phi() const {
    return axisymmetric ? 2.0 * std::numbers::pi : 2.0 * std::numbers::pi / n_phi;
}

std::string ParamGrid::describe() const {
    std::ostringstream os;
    os << (topology == Topology::Disk ? "disk" : "annulus") << ' ' << n_s << 'x' << n_phi
       << (axisymmetric ? " axisymmetric" : "");
    return os.str();
}

Eigen::MatrixXd fourier_d1(int n) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    if (n <= 1) return d;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            if (j == k) continue;
            const int m = j - k;
            const double x = std::numbers::pi * m / n;
            const double sign = (m % 2 == 0) ? 1.0 : -1.0;
            d(j, k) = (n % 2 == 0) ? 0.5 * sign / std::tan(x) : 0.5 * sign / std::sin(x);
        }
    // rows sum to zero in floating point, so constants differentiate to exactly 0
    for (int j = 0; j < n; ++j) d(j, j) = -(d.row(j).sum() - d(j, j));
    return d;
}

Eigen::MatrixXd fourier_d2(int n) {
    Eigen::MatrixXd d = Eigen::MatrixXd::Zero(n, n);
    if (n <= 1) return d;
    const double h = 2 * std::numbers::pi / n;
    for (int j = 0; j < n; ++j)
        for (int k = 0; k < n; ++k) {
            if (j == k) continue;
            const int m = j - k;
            const double sign = (m % 2 == 0) ? 1.0 : -1.0;
            const double sn = std::sin(0.5 * m * h);
            d(j, k) = (n % 2 == 0) ? -0.5 * sign / (sn * sn) : -0.5 * sign * std::cos(0.5 * m * h) / (sn * sn);
        }
    for (int j = 0; j < n; ++j) d(j, j) = -(d.row(j).sum() - d(j, j));
    return d;
}

Diff::Diff(const ParamGrid& g) : g_(g) {
    if (!g.axisymmetric) {
        d1_ = fourier_d1(g.n_phi);
        d2_ = fourier_d2(g.n_phi);
    }
}

Field Diff::ds(const Field& u, int lo, int hi) const {
    Field out = Field::Zero(u.rows(), u.cols());
    const double inv = 0.5 / g_.h();
    for (int p = lo; p <= hi; ++p) out.row(p) = (u.row(p + 1) - u.row(p - 1)) * inv;
    return out;
}

Field Diff::dss(const Field& u, int lo, int hi) const {
    Field out = Field::Zero(u.rows(), u.cols());
    const double inv = 1.0 / (g_.h() * g_.h());
    for (int p = lo; p <= hi; ++p) out.row(p) = (u.row(p + 1) - 2.0 * u.row(p) + u.row(p - 1)) * inv;
    return out;
}

Field Diff::dp(const Field& u) const {
    if (g_.axisymmetric) return Field::Zero(u.rows(), u.cols());
    // shifting each row by a constant keeps constant rows exactly in the kernel
    const Eigen::MatrixXd v = u.matrix().colwise() - u.matrix().col(0);
    return (v * d1_.transpose()).array();
}

Field Diff::dpp(const Field& u) const {
    if (g_.axisymmetric) return Field::Zero(u.rows(), u.cols());
    const Eigen::MatrixXd v = u.matrix().colwise() - u.matrix().col(0);
    return (v * d2_.transpose()).array();
}

void fill_pole_ghosts(const ParamGrid& g, Field& u) {
    if (!g.has_pole()) return;
    for (int k = 0; k < ParamGrid::kGhost; ++k)
        for (int j = 0; j < g.n_phi; ++j) u(g.p(-1 - k), j) = u(g.p(k), g.mirror(j));
}

void fill_pole_ghosts_position(const ParamGrid& g, VField& f) {
    if (!g.has_pole()) return;
    if (!g.axisymmetric) {
        for (auto& c : f) fill_pole_ghosts(g, c);
        return;
    }
    for (int k = 0; k < ParamGrid::kGhost; ++k) {
        f[0](g.p(-1 - k), 0) = -f[0](g.p(k), 0);
        f[1](g.p(-1 - k), 0) = -f[1](g.p(k), 0);
        f[2](g.p(-1 - k), 0) = f[2](g.p(k), 0);
    }
}

VField vzeros(const ParamGrid& g) { return {g.zeros(), g.zeros(), g.zeros()}; }

double max_abs_real(const ParamGrid& g, const Field& u) {
    return u.block(g.p(0), 0, g.n_s, g.n_phi).abs().maxCoeff();
}

}  // namespace wfb
