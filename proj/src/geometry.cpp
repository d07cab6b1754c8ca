#include "wfb/geometry.hpp"

#include <cmath>
#include <numbers>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

void extrapolate_outer_ghosts(const ParamGrid& g, Field& u) {
    const int last = g.p(g.n_s - 1);
    for (int k = 1; k <= ParamGrid::kGhost; ++k) {
        const int p = last + k;
        u.row(p) = 4.0 * u.row(p - 1) - 6.0 * u.row(p - 2) + 4.0 * u.row(p - 3) - u.row(p - 4);
    }
    if (g.topology == Topology::Annulus) {
        const int first = g.p(0);
        for (int k = 1; k <= ParamGrid::kGhost; ++k) {
            const int p = first - k;
            u.row(p) = 4.0 * u.row(p + 1) - 6.0 * u.row(p + 2) + 4.0 * u.row(p + 3) - u.row(p + 4);
        }
    }
}

}  // namespace

Immersion make_immersion(const ParamGrid& g, const Sampler& f, std::string label) {
    Immersion imm{g, vzeros(g), f, std::move(label)};
    for (int p = 0; p < g.rows(); ++p)
        for (int j = 0; j < g.cols(); ++j) put(imm.pos, p, j, f(g.s(p - ParamGrid::kGhost), g.phi(j)));
    return imm;
}

Immersion make_immersion(const ParamGrid& g, VField pos, std::string label) {
    Immersion imm{g, std::move(pos), {}, std::move(label)};
    for (auto& c : imm.pos) extrapolate_outer_ghosts(g, c);
    fill_pole_ghosts_position(g, imm.pos);
    return imm;
}

Immersion scaled(const Immersion& imm, double lambda) {
    Immersion out = imm;
    for (auto& c : out.pos) c *= lambda;
    if (imm.sampler) {
        auto base = imm.sampler;
        out.sampler = [base, lambda](double s, double phi) -> Vec3 { return lambda * base(s, phi); };
    }
    return out;
}

Immersion translated(const Immersion& imm, const Vec3& c) {
    Immersion out = imm;
    for (int k = 0; k < 3; ++k) out.pos[k] += c[k];
    if (imm.sampler) {
        auto base = imm.sampler;
        out.sampler = [base, c](double s, double phi) -> Vec3 { return base(s, phi) + c; };
    }
    return out;
}

namespace samplers {

Sampler hemisphere(double R, Vec3 c) {
    return [R, c](double s, double phi) -> Vec3 {
        const double th = 0.5 * std::numbers::pi * s;
        return c + R * Vec3(std::sin(th) * std::cos(phi), std::sin(th) * std::sin(phi), std::cos(th));
    };
}

Sampler spherical_cap(double angle, double R) {
    return [angle, R](double s, double phi) -> Vec3 {
        const double th = angle * s;
        return R * Vec3(std::sin(th) * std::cos(phi), std::sin(th) * std::sin(phi), std::cos(th));
    };
}

Sampler equatorial_disk(double R) {
    return [R](double s, double phi) -> Vec3 { return R * Vec3(s * std::cos(phi), s * std::sin(phi), 0.0); };
}

double critical_catenoid_t() {
    double t = 1.2;
    for (int it = 0; it < 50; ++it) {
        const double th = std::tanh(t);
        const double f = t * th - 1.0;
        const double df = th + t * (1.0 - th * th);
        const double dt = f / df;
        t -= dt;
        if (std::abs(dt) < 1e-16) break;
    }
    return t;
}

Sampler catenoid_band(double R) {
    const double t = critical_catenoid_t();
    const double a = 1.0 / std::sqrt(std::cosh(t) * std::cosh(t) + t * t);
    return [R, t, a](double s, double phi) -> Vec3 {
        const double z = a * t * (2.0 * s - 1.0);
        const double r = a * std::cosh(z / a);
        return R * Vec3(r * std::cos(phi), r * std::sin(phi), z);
    };
}

}  // namespace samplers

double metric_dot(const GeometryCache& geom, int p, int j, double as, double ap, double bs, double bp) {
    return geom.gss(p, j) * as * bs + geom.gsp(p, j) * (as * bp + ap * bs) + geom.gpp(p, j) * ap * bp;
}

GeometryCache build_geometry(const Immersion& imm, const GeometryOptions& opt) {
    const ParamGrid& g = imm.grid;
    const Diff D(g);
    GeometryCache c;
    c.grid = g;
    c.lo = 1;
    c.hi = g.rows() - 2;
    c.f = imm.pos;

    for (int p = 0; p < g.rows(); ++p)
        for (int j = 0; j < g.cols(); ++j)
            if (!at(c.f, p, j).allFinite())
                throw Error(ErrorFamily::Geometry, "DegenerateMetric", "non-finite position at row " + std::to_string(p - ParamGrid::kGhost));

    for (int k = 0; k < 3; ++k) {
        c.fs[k] = D.ds(c.f[k], c.lo, c.hi);
        c.fss[k] = D.dss(c.f[k], c.lo, c.hi);
    }
    if (g.axisymmetric) {
        c.fp = c.fpp = c.fsp = vzeros(g);
        for (int p = 0; p < g.rows(); ++p) {
            const Vec3 x = at(c.f, p, 0);
            put(c.fp, p, 0, ez_cross(x));
            put(c.fpp, p, 0, Vec3(-x.x(), -x.y(), 0.0));
            put(c.fsp, p, 0, ez_cross(at(c.fs, p, 0)));
        }
    } else {
        for (int k = 0; k < 3; ++k) {
            c.fp[k] = D.dp(c.f[k]);
            c.fpp[k] = D.dpp(c.f[k]);
            c.fsp[k] = D.dp(c.fs[k]);
        }
    }

    const int R = g.rows(), C = g.cols();
    for (Field* fld : {&c.gss, &c.gsp, &c.gpp, &c.det_g, &c.sqrt_g, &c.iss, &c.isp, &c.ipp, &c.Ass, &c.Asp, &c.App,
                       &c.H, &c.A0_norm2})
        *fld = Field::Zero(R, C);
    for (auto& x : c.christoffel) x = Field::Zero(R, C);
    c.nu = vzeros(g);

    double det_max = 0.0;
    for (int p = c.lo; p <= c.hi; ++p) {
        const int i = p - ParamGrid::kGhost;
        const double orient = (g.has_pole() && i < 0) ? -1.0 : 1.0;
        for (int j = 0; j < C; ++j) {
            const Vec3 fs = at(c.fs, p, j), fp = at(c.fp, p, j);
            const double gss = fs.dot(fs), gsp = fs.dot(fp), gpp = fp.dot(fp);
            const double det = gss * gpp - gsp * gsp;
            c.gss(p, j) = gss;
            c.gsp(p, j) = gsp;
            c.gpp(p, j) = gpp;
            c.det_g(p, j) = det;
            if (i >= 0 && i < g.n_s) det_max = std::max(det_max, det);
            if (!(det > 0.0)) continue;
            const Vec3 cr = fp.cross(fs);
            const Vec3 nu = orient * cr / cr.norm();
            put(c.nu, p, j, nu);
            c.sqrt_g(p, j) = orient * std::sqrt(det);
            const double iss = gpp / det, isp = -gsp / det, ipp = gss / det;
            c.iss(p, j) = iss;
            c.isp(p, j) = isp;
            c.ipp(p, j) = ipp;
            const Vec3 fss = at(c.fss, p, j), fsp = at(c.fsp, p, j), fpp = at(c.fpp, p, j);
            const double Ass = fss.dot(nu), Asp = fsp.dot(nu), App = fpp.dot(nu);
            c.Ass(p, j) = Ass;
            c.Asp(p, j) = Asp;
            c.App(p, j) = App;
            const double H = iss * Ass + 2.0 * isp * Asp + ipp * App;
            c.H(p, j) = H;
            // |A|^2 = g^ik g^jl A_ij A_kl via the mixed tensor A^i_j
            const double ms = iss * Ass + isp * Asp, msp = iss * Asp + isp * App;
            const double mps = isp * Ass + ipp * Asp, mp = isp * Asp + ipp * App;
            const double A2 = ms * ms + 2.0 * msp * mps + mp * mp;
            c.A0_norm2(p, j) = A2 - 0.5 * H * H;
            const std::array<Vec3, 3> d2{fss, fsp, fpp};
            for (int ij = 0; ij < 3; ++ij) {
                const double ts = d2[ij].dot(fs), tp = d2[ij].dot(fp);
                c.christoffel[ij](p, j) = iss * ts + isp * tp;
                c.christoffel[3 + ij](p, j) = isp * ts + ipp * tp;
            }
        }
    }

    const double eps = opt.eps_imm_rel * det_max;
    for (int p = c.lo; p <= c.hi; ++p)
        for (int j = 0; j < C; ++j)
            if (!(c.det_g(p, j) > eps))
                throw Error(ErrorFamily::Geometry, "DegenerateMetric",
                            "det g = " + std::to_string(c.det_g(p, j)) + " at row " +
                                std::to_string(p - ParamGrid::kGhost) + ", column " + std::to_string(j));

    if (g.has_pole()) {
        // Ghost rows across the pole are exact mirrors of the first ring.
        for (Field* fld : {&c.H, &c.A0_norm2}) fill_pole_ghosts(g, *fld);
        if (g.axisymmetric) {
            const Vec3 n0 = at(c.nu, g.p(0), 0);
            put(c.nu, g.p(-1), 0, Vec3(-n0.x(), -n0.y(), n0.z()));
        } else {
            for (auto& k : c.nu) fill_pole_ghosts(g, k);
        }
        double hmin = 1e300, hmax = -1e300, nspread = 0.0;
        Vec3 nmean = Vec3::Zero();
        std::vector<Vec3> nest;
        for (int j = 0; j < C; ++j) {
            const int m = g.mirror(j);
            const double hp = 0.5 * (c.H(g.p(0), j) + c.H(g.p(0), m));
            hmin = std::min(hmin, hp);
            hmax = std::max(hmax, hp);
            Vec3 nv = at(c.nu, g.p(0), j) + at(c.nu, g.p(-1), j);
            nv.normalize();
            nest.push_back(nv);
            nmean += nv;
        }
        nmean /= C;
        for (const auto& nv : nest) nspread = std::max(nspread, (nv - nmean).norm());
        const double scale = 1.0 + 0.5 * std::abs(hmax + hmin);
        if (hmax - hmin > opt.pole_tol * scale || nspread > opt.pole_tol)
            throw Error(ErrorFamily::Geometry, "PoleInconsistency",
                        "pole limits spread: H " + std::to_string(hmax - hmin) + ", normal " + std::to_string(nspread));
    }

    c.boundary = boundary_frame(c);
    return c;
}

std::vector<BoundaryNode> boundary_frame(const GeometryCache& c) {
    const ParamGrid& g = c.grid;
    std::vector<BoundaryNode> out;
    for (int i : g.boundary_rows()) {
        const int p = g.p(i);
        const double o = g.outward(i);
        for (int j = 0; j < g.cols(); ++j) {
            // eta0 = o d_s, tau0 = -o d_phi
            const double e0s = o, e0p = 0.0, t0s = 0.0, t0p = -o;
            const double gtt = metric_dot(c, p, j, t0s, t0p, t0s, t0p);
            const double gee = metric_dot(c, p, j, e0s, e0p, e0s, e0p);
            const double get = metric_dot(c, p, j, e0s, e0p, t0s, t0p);
            const double disc = gee * gtt - get * get;
            if (!(disc > 0.0) || !(gtt > 0.0))
                throw Error(ErrorFamily::Geometry, "DegenerateBoundaryMetric", "boundary metric degenerate at column " + std::to_string(j));
            const double den = std::sqrt(disc) * std::sqrt(gtt);
            BoundaryNode b;
            b.i = i;
            b.j = j;
            b.eta_s = (gtt * e0s - get * t0s) / den;
            b.eta_p = (gtt * e0p - get * t0p) / den;
            b.tau_s = t0s / std::sqrt(gtt);
            b.tau_p = t0p / std::sqrt(gtt);
            const Vec3 fs = at(c.fs, p, j), fp = at(c.fp, p, j);
            b.eta = b.eta_s * fs + b.eta_p * fp;
            b.tau = b.tau_s * fs + b.tau_p * fp;
            const double nee = metric_dot(c, p, j, b.eta_s, b.eta_p, b.eta_s, b.eta_p);
            const double ntt = metric_dot(c, p, j, b.tau_s, b.tau_p, b.tau_s, b.tau_p);
            const double net = metric_dot(c, p, j, b.eta_s, b.eta_p, b.tau_s, b.tau_p);
            if (std::abs(nee - 1) > 1e-10 || std::abs(ntt - 1) > 1e-10 || std::abs(net) > 1e-10)
                throw Error(ErrorFamily::Geometry, "DegenerateBoundaryMetric", "conormal frame not orthonormal");
            out.push_back(b);
        }
    }
    return out;
}

double integrate(const GeometryCache& c, const Field& u) {
    const ParamGrid& g = c.grid;
    double total = 0.0;
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        double row = 0.0;
        for (int j = 0; j < g.cols(); ++j) row += u(p, j) * c.sqrt_g(p, j);
        total += g.weight_s(i) * row;
    }
    return total * g.weight_phi();
}

double l2_norm(const GeometryCache& c, const Field& u) { return std::sqrt(integrate(c, u * u)); }

double willmore_energy(const GeometryCache& c) { return 0.25 * integrate(c, c.H * c.H); }

Field laplace_beltrami(const Field& u, const GeometryCache& c) {
    const ParamGrid& g = c.grid;
    const Diff D(g);
    const double h = g.h();
    const Field a = c.sqrt_g * c.iss;
    Field out = g.zeros();
    if (g.axisymmetric) {
        for (int i = 0; i < g.n_s; ++i) {
            const int p = g.p(i);
            const double up = 0.5 * (a(p, 0) + a(p + 1, 0)) * (u(p + 1, 0) - u(p, 0));
            const double dn = (g.has_pole() && i == 0) ? 0.0 : 0.5 * (a(p, 0) + a(p - 1, 0)) * (u(p, 0) - u(p - 1, 0));
            out(p, 0) = (up - dn) / (h * h) / c.sqrt_g(p, 0);
        }
        return out;
    }
    const Field b = c.sqrt_g * c.isp;
    const Field cc = c.sqrt_g * c.ipp;
    const Field up_ = D.dp(u);
    const Field us = D.ds(u, c.lo, c.hi);
    const Field bup = b * up_;
    const Field cross2 = D.dp(b * us);
    // expanded rather than D1(cc D1 u), which cannot see the Nyquist mode of u
    const Field pp = cc * D.dpp(u) + D.dp(cc) * up_;
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        for (int j = 0; j < g.cols(); ++j) {
            const double up = 0.5 * (a(p, j) + a(p + 1, j)) * (u(p + 1, j) - u(p, j));
            const double dn = (g.has_pole() && i == 0) ? 0.0 : 0.5 * (a(p, j) + a(p - 1, j)) * (u(p, j) - u(p - 1, j));
            const double cross1 = (bup(p + 1, j) - bup(p - 1, j)) / (2.0 * h);
            out(p, j) = ((up - dn) / (h * h) + cross1 + cross2(p, j) + pp(p, j)) / c.sqrt_g(p, j);
        }
    }
    return out;
}

Field willmore_gradient(const GeometryCache& c) {
    const ParamGrid& g = c.grid;
    const Field lh = laplace_beltrami(c.H, c);
    Field out = g.zeros();
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        out.row(p) = 0.5 * (lh.row(p) + c.A0_norm2.row(p) * c.H.row(p));
    }
    return out;
}

}  // namespace wfb
