#include "wfb/gauss_chart.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

double smooth_h(double t) { return t > 0 ? std::exp(-1.0 / t) : 0.0; }

// Tangent derivative of the padded position field at row p, one-sided at the
// outermost rows.
Vec3 position_ds(const ParamGrid& g, const VField& f, int p, int j) {
    const double h = g.h();
    if (p == 0) return (-3.0 * at(f, 0, j) + 4.0 * at(f, 1, j) - at(f, 2, j)) / (2 * h);
    if (p == g.rows() - 1) return (3.0 * at(f, p, j) - 4.0 * at(f, p - 1, j) + at(f, p - 2, j)) / (2 * h);
    return (at(f, p + 1, j) - at(f, p - 1, j)) / (2 * h);
}

VField position_dp(const ParamGrid& g, const VField& f) {
    VField out = vzeros(g);
    if (g.axisymmetric) {
        for (int p = 0; p < g.rows(); ++p) put(out, p, 0, ez_cross(at(f, p, 0)));
        return out;
    }
    const Diff D(g);
    for (int k = 0; k < 3; ++k) out[k] = D.dp(f[k]);
    return out;
}

bool is_pole_ghost(const ParamGrid& g, int p) { return g.has_pole() && p < g.p(0); }

double sup_real(const ParamGrid& g, const Field& u) { return max_abs_real(g, u); }

// sampled |Phi - Phi_fbar|_{C^1} over real nodes and a few radii
double c1_perturbation(const GaussChart& c, double rbar) {
    const ParamGrid& g = c.grid;
    const Diff D(g);
    double sup0 = 0.0, sup1 = 0.0;
    for (double r : {-rbar, -0.5 * rbar, 0.5 * rbar, rbar}) {
        VField Dv = vzeros(g), Dr = vzeros(g);
        for (int p = 0; p < g.rows(); ++p) {
            if (is_pole_ghost(g, p)) continue;
            for (int j = 0; j < g.cols(); ++j) {
                put(Dv, p, j, c.phi_map(p, j, r) - (at(c.fbar, p, j) + r * at(c.nubar, p, j)));
                put(Dr, p, j, c.xi(p, j, r) - at(c.nubar, p, j));
            }
        }
        fill_pole_ghosts_position(g, Dv);
        VField Ds, Dp = position_dp(g, Dv);
        for (int k = 0; k < 3; ++k) Ds[k] = D.ds(Dv[k], 1, g.rows() - 2);
        for (int i = 0; i < g.n_s; ++i) {
            const int p = g.p(i);
            for (int j = 0; j < g.cols(); ++j) {
                sup0 = std::max(sup0, at(Dv, p, j).norm());
                const Vec3 a = at(Ds, p, j), b = at(Dp, p, j);
                const double gx = c.ref.iss(p, j) * a.squaredNorm() + 2 * c.ref.isp(p, j) * a.dot(b) +
                                  c.ref.ipp(p, j) * b.squaredNorm();
                sup1 = std::max(sup1, std::sqrt(std::max(gx, 0.0) + at(Dr, p, j).squaredNorm()));
            }
        }
    }
    return sup0 + sup1;
}

}  // namespace

double zeta_profile(double d, double alpha0) {
    if (d <= alpha0) return 1.0;
    if (d >= 2 * alpha0) return 0.0;
    const double t = (d - alpha0) / alpha0;
    const double a = smooth_h(t), b = smooth_h(1 - t);
    return b / (a + b);
}

double zeta_profile_derivative(double d, double alpha0) {
    if (d <= alpha0 || d >= 2 * alpha0) return 0.0;
    const double t = (d - alpha0) / alpha0;
    const double a = smooth_h(t), b = smooth_h(1 - t);
    const double da = a / (t * t), db = -b / ((1 - t) * (1 - t));
    return (db * (a + b) - b * (da + db)) / ((a + b) * (a + b)) / alpha0;
}

Vec3 GaussChart::phi_map(int p, int j, double r) const {
    const Vec3 y = at(fbar, p, j) + r * at(nubar, p, j);
    const double z = zeta(p, j);
    if (z == 0.0) return y;
    const auto L = support.local(y, false);
    const double dbar = support.signed_distance(at(fbar, p, j));
    return y + z * (dbar - L.d) * L.N;
}

Vec3 GaussChart::xi(int p, int j, double r) const {
    const Vec3 nb = at(nubar, p, j);
    const double z = zeta(p, j);
    if (z == 0.0) return nb;
    const Vec3 y = at(fbar, p, j) + r * nb;
    const auto L = support.local(y, true);
    const double dbar = support.signed_distance(at(fbar, p, j));
    return nb + z * (-L.N.dot(nb) * L.N + (dbar - L.d) * (L.hess * nb));
}

std::uint64_t GaussChart::hash() const {
    // FNV-1a over the chart-defining numbers
    std::uint64_t hsh = 1469598103934665603ull;
    auto mix = [&](const void* data, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(data);
        for (std::size_t k = 0; k < n; ++k) {
            hsh ^= b[k];
            hsh *= 1099511628211ull;
        }
    };
    const int dims[4] = {static_cast<int>(grid.topology), grid.n_s, grid.n_phi, grid.axisymmetric ? 1 : 0};
    mix(dims, sizeof dims);
    mix(&alpha0, sizeof alpha0);
    mix(&r_bar, sizeof r_bar);
    for (const auto& c : fbar) mix(c.data(), sizeof(double) * c.size());
    const std::string s = support.describe();
    mix(s.data(), s.size());
    return hsh;
}

GaussChart build_gauss_chart(const Immersion& fb, SupportSurface S, double alpha0, double r_bar, const ChartOptions& opt) {
    GaussChart c;
    c.grid = fb.grid;
    const ParamGrid& g = c.grid;
    c.ref = build_geometry(fb);
    c.fbar = fb.pos;
    c.support = std::move(S);
    c.tol_constraint = opt.tol_constraint;

    // normal on every non-pole padded row
    c.nubar = vzeros(g);
    const VField fp = position_dp(g, c.fbar);
    for (int p = 0; p < g.rows(); ++p) {
        if (is_pole_ghost(g, p)) continue;
        for (int j = 0; j < g.cols(); ++j) {
            if (p >= c.ref.lo && p <= c.ref.hi) {
                put(c.nubar, p, j, at(c.ref.nu, p, j));
            } else {
                const Vec3 n = at(fp, p, j).cross(position_ds(g, c.fbar, p, j));
                put(c.nubar, p, j, n.normalized());
            }
        }
    }
    fill_pole_ghosts_position(g, c.nubar);

    // orientation of N^S so that N^S o fbar = d fbar(eta)
    double align = 0.0;
    for (const auto& b : c.ref.boundary) align += c.support.normal(at(c.fbar, g.p(b.i), b.j)).dot(b.eta);
    if (align < 0) c.support.set_orientation(-c.support.orientation());

    // free boundary conditions of the reference
    c.tol_fbc = opt.tol_fbc > 0 ? opt.tol_fbc : std::max(1e-6, g.h() * g.h());
    {
        const Field& H = c.ref.H;
        for (const auto& b : c.ref.boundary) {
            const int p = g.p(b.i);
            const Vec3 x = at(c.fbar, p, b.j);
            const auto L = c.support.local(x, true);
            const Vec3 nu = at(c.ref.nu, p, b.j);
            c.fbc_residual_d = std::max(c.fbc_residual_d, std::abs(L.d));
            c.fbc_residual_orth = std::max(c.fbc_residual_orth, std::abs(nu.dot(L.N)));
            const double Hs = (H(p + 1, b.j) - H(p - 1, b.j)) / (2 * g.h());
            double Hp = 0.0;
            if (!g.axisymmetric) {
                const Diff D(g);
                Hp = D.dp(H)(p, b.j);
            }
            const double third = b.eta_s * Hs + b.eta_p * Hp - nu.dot(L.hess * nu) * H(p, b.j);
            c.fbc_residual_third = std::max(c.fbc_residual_third, std::abs(third));
        }
        if (c.fbc_residual_d > c.tol_fbc || c.fbc_residual_orth > c.tol_fbc) {
            std::ostringstream os;
            os << "reference violates the free boundary conditions: |d^S| = " << c.fbc_residual_d
               << ", |<nu, N^S>| = " << c.fbc_residual_orth << ", third-order residual = " << c.fbc_residual_third
               << " (tolerance " << c.tol_fbc << ")";
            throw Error(ErrorFamily::Chart, "ReferenceNotFreeBoundary", os.str());
        }
        if (c.fbc_residual_third > 1e3 * c.tol_fbc) {
            std::ostringstream os;
            os << "third-order boundary residual of the reference is " << c.fbc_residual_third;
            c.warnings.push_back(os.str());
        }
    }

    // intrinsic distance to the boundary along the coordinate lines
    c.d0 = g.zeros();
    Field speed = g.zeros();
    for (int p = 0; p < g.rows(); ++p)
        for (int j = 0; j < g.cols(); ++j) speed(p, j) = position_ds(g, c.fbar, p, j).norm();
    {
        const int pb = g.p(g.n_s - 1);
        for (int j = 0; j < g.cols(); ++j) {
            c.d0(pb, j) = 0.0;
            for (int p = pb - 1; p >= 0; --p) c.d0(p, j) = c.d0(p + 1, j) + 0.5 * g.h() * (speed(p, j) + speed(p + 1, j));
            for (int p = pb + 1; p < g.rows(); ++p) c.d0(p, j) = c.d0(p - 1, j) - 0.5 * g.h() * (speed(p, j) + speed(p - 1, j));
        }
        if (g.topology == Topology::Annulus) {
            const int pa = g.p(0);
            for (int j = 0; j < g.cols(); ++j) {
                double d = 0.0;
                for (int p = pa; p < g.rows(); ++p) {
                    if (p > pa) d += 0.5 * g.h() * (speed(p, j) + speed(p - 1, j));
                    c.d0(p, j) = std::min(c.d0(p, j), d);
                }
                d = 0.0;
                for (int p = pa - 1; p >= 0; --p) {
                    d -= 0.5 * g.h() * (speed(p, j) + speed(p + 1, j));
                    c.d0(p, j) = d;
                }
            }
        }
    }
    double Lmax = 0.0;
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) Lmax = std::max(Lmax, c.d0(g.p(i), j));

    auto set_collar = [&](double a0) {
        c.alpha0 = a0;
        c.zeta = g.zeros();
        for (int p = 0; p < g.rows(); ++p)
            for (int j = 0; j < g.cols(); ++j) c.zeta(p, j) = zeta_profile(c.d0(p, j), a0);
    };
    auto collar_tilt = [&]() {
        // the r-independent part of the C^1 perturbation: zeta |<nu, N^S>|
        double t = 0.0;
        for (int p = 0; p < g.rows(); ++p)
            for (int j = 0; j < g.cols(); ++j) {
                if (c.zeta(p, j) == 0.0 || is_pole_ghost(g, p)) continue;
                t = std::max(t, c.zeta(p, j) * std::abs(c.support.normal(at(c.fbar, p, j)).dot(at(c.nubar, p, j))));
            }
        return t;
    };

    try {
        if (alpha0 > 0) {
            if (2 * alpha0 > 0.5 * Lmax)
                throw Error(ErrorFamily::Chart, "CollarTooWide",
                            "2 alpha0 = " + std::to_string(2 * alpha0) + " exceeds half the boundary distance range " +
                                std::to_string(0.5 * Lmax));
            set_collar(alpha0);
        } else {
            double a0 = 0.25 * Lmax;
            int k = 0;
            for (;; ++k) {
                set_collar(a0);
                if (collar_tilt() < 0.5 * opt.eps_c1) break;
                if (k >= opt.max_halvings) throw Error(ErrorFamily::Chart, "CollarTooWide", "no admissible collar width found");
                a0 *= 0.5;
            }
        }
        if (r_bar > 0) {
            c.r_bar = r_bar;
            c.c1_perturbation = c1_perturbation(c, r_bar);
            if (!(c.c1_perturbation < opt.eps_c1)) {
                std::ostringstream os;
                os << "sampled |Phi - Phi_fbar|_C1 = " << c.c1_perturbation << " >= " << opt.eps_c1 << " at r_bar = " << r_bar;
                throw Error(ErrorFamily::Chart, "ChartPerturbationTooLarge", os.str());
            }
        } else {
            double rb = Lmax / 8;
            for (int k = 0;; ++k) {
                const double m = c1_perturbation(c, rb);
                if (m < opt.eps_c1) {
                    c.r_bar = rb;
                    c.c1_perturbation = m;
                    break;
                }
                if (k >= opt.max_halvings) {
                    std::ostringstream os;
                    os << "sampled |Phi - Phi_fbar|_C1 stays >= " << opt.eps_c1 << " down to r_bar = " << rb;
                    throw Error(ErrorFamily::Chart, "ChartPerturbationTooLarge", os.str());
                }
                rb *= 0.5;
            }
        }
    } catch (const Error& e) {
        if (e.code() == "OutsideTubularNeighborhood") throw Error(ErrorFamily::Chart, "CollarTooWide", e.what());
        throw;
    }

    // chart invariants at w = 0
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        for (int j = 0; j < g.cols(); ++j) {
            if ((c.phi_map(p, j, 0.0) - at(c.fbar, p, j)).norm() > 1e-12)
                throw Error(ErrorFamily::Chart, "ChartInvariant", "Phi(x, 0) differs from the reference");
            const double pr = c.xi(p, j, 0.0).dot(at(c.nubar, p, j));
            if (pr < 0.5 || pr > 2.0) throw Error(ErrorFamily::Chart, "ChartInvariant", "xi pairing outside [1/2, 2] at w = 0");
        }
    }
    for (const auto& b : c.ref.boundary) {
        const int p = g.p(b.i);
        if ((c.xi(p, b.j, 0.0) - at(c.nubar, p, b.j)).norm() > 1e-8)
            throw Error(ErrorFamily::Chart, "ChartInvariant", "xi(x, 0) differs from the normal on the boundary");
        for (double r : {-c.r_bar * 0.9, c.r_bar * 0.9})
            if (std::abs(c.support.signed_distance(c.phi_map(p, b.j, r))) > 1e-8)
                throw Error(ErrorFamily::Chart, "ChartInvariant", "Phi(x, r) leaves S on the boundary");
    }

    // C^1 radius of the admissible height fields: grow test fields of unit C^1
    // norm until the pairing leaves [1/4, 4], then keep half
    {
        std::vector<HeightField> shapes;
        for (int m : {1, 2, 4}) {
            HeightField u = HeightField::zero(g);
            for (int p = 0; p < g.rows(); ++p)
                for (int j = 0; j < g.cols(); ++j)
                    u.w(p, j) = std::sin(0.5 * m * std::numbers::pi * g.s(p - ParamGrid::kGhost)) *
                                (g.axisymmetric ? 1.0 : std::cos(g.phi(j)));
            complete_height_field(g, u);
            u.w /= norm_c1(c, u);
            shapes.push_back(std::move(u));
        }
        double best = 0.0;
        for (double t = c.r_bar / 64; t < 64.0; t *= 1.5) {
            bool ok = true;
            for (const auto& u : shapes) {
                HeightField x{t * u.w};
                try {
                    const ChartEval ev = evaluate(c, x, {.check_pairing = false});
                    for (int i = 0; i < g.n_s && ok; ++i)
                        for (int j = 0; j < g.cols() && ok; ++j) {
                            const double pr = ev.pairing(g.p(i), j);
                            if (!(pr >= 0.25 && pr <= 4.0)) ok = false;
                        }
                } catch (const Error&) {
                    ok = false;
                }
                if (!ok) break;
            }
            if (!ok) break;
            best = t;
        }
        c.a_c1 = 0.5 * best;
    }
    return c;
}

void complete_height_field(const ParamGrid& g, HeightField& w) { fill_pole_ghosts(g, w.w); }

ChartEval evaluate(const GaussChart& chart, const HeightField& hw, const EvalOptions& opt) {
    const ParamGrid& g = chart.grid;
    const Field& w = hw.w;
    if (!w.allFinite()) throw Error(ErrorFamily::Flow, "NonFiniteState", "height field has non-finite values");
    const double w0 = sup_real(g, w);
    if (!(w0 < chart.r_bar)) {
        std::ostringstream os;
        os << "|w|_inf = " << w0 << " >= r_bar = " << chart.r_bar;
        throw Error(ErrorFamily::Chart, "ChartExit", os.str());
    }

    ChartEval ev;
    VField pos = vzeros(g);
    for (int p = 0; p < g.rows(); ++p) {
        if (is_pole_ghost(g, p)) continue;
        for (int j = 0; j < g.cols(); ++j) put(pos, p, j, chart.phi_map(p, j, w(p, j)));
    }
    fill_pole_ghosts_position(g, pos);
    ev.imm = Immersion{g, std::move(pos), {}, "f_w"};
    GeometryOptions go;
    if (!opt.check_pole) go.pole_tol = std::numeric_limits<double>::infinity();
    ev.geom = build_geometry(ev.imm, go);
    const GeometryCache& G = ev.geom;

    ev.xi = vzeros(g);
    ev.pairing = g.zeros();
    for (int p = G.lo; p <= G.hi; ++p) {
        if (is_pole_ghost(g, p)) continue;
        for (int j = 0; j < g.cols(); ++j) {
            const Vec3 x = chart.xi(p, j, w(p, j));
            put(ev.xi, p, j, x);
            ev.pairing(p, j) = x.dot(at(G.nu, p, j));
        }
    }
    if (opt.check_pairing) {
        for (int i = 0; i < g.n_s; ++i)
            for (int j = 0; j < g.cols(); ++j) {
                const double pr = ev.pairing(g.p(i), j);
                if (!(pr >= 0.125 && pr <= 8.0)) {
                    std::ostringstream os;
                    os << "<xi, nu> = " << pr << " at row " << i << ", column " << j;
                    throw Error(ErrorFamily::Chart, "PairingDegenerate", os.str());
                }
            }
    }

    const Field grad = willmore_gradient(G);
    ev.dE = g.zeros();
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        ev.dE.row(p) = 2.0 * grad.row(p) / ev.pairing.row(p);
    }
    ev.energy = willmore_energy(G);
    ev.grad_norm = l2_norm(G, grad);
    ev.dE_norm = l2_norm(G, ev.dE);

    const Diff D(g);
    const Field ws = D.ds(w, G.lo, G.hi);
    const Field wp = D.dp(w);
    const Field Hp = D.dp(G.H);
    const int nb = static_cast<int>(G.boundary.size());
    ev.B1.resize(nb);
    ev.B2.resize(nb);
    ev.mu.resize(nb);
    for (int k = 0; k < nb; ++k) {
        const auto& b = G.boundary[k];
        const int p = g.p(b.i), j = b.j;
        const Vec3 xi = at(ev.xi, p, j);
        const Vec3 Phis = at(G.fs, p, j) - xi * ws(p, j);
        const Vec3 Phip = at(G.fp, p, j) - xi * wp(p, j);
        const auto L = chart.support.local(at(G.f, p, j), true);
        Eigen::Matrix3d M;
        M.col(0) = Phis;
        M.col(1) = Phip;
        M.col(2) = xi;
        const double det = M.determinant();
        if (!(std::abs(det) > 1e-12 * Phis.norm() * Phip.norm() * xi.norm()))
            throw Error(ErrorFamily::Chart, "SingularChartDifferential", "d Phi is singular at a boundary node");
        const Vec3 mu = M.partialPivLu().solve(L.N);
        ev.mu[k] = mu;
        ev.B1[k] = mu[0] * ws(p, j) + mu[1] * wp(p, j) - mu[2];
        const Vec3 nu = at(G.nu, p, j);
        const double Hs = (G.H(p + 1, j) - G.H(p - 1, j)) / (2 * g.h());
        const double dHeta = b.eta_s * Hs + b.eta_p * Hp(p, j);
        ev.B2[k] = (dHeta - nu.dot(L.hess * nu) * G.H(p, j)) / ev.pairing(p, j);
    }
    return ev;
}

Immersion evaluate_immersion(const GaussChart& chart, const HeightField& w) {
    return evaluate(chart, w, {.check_pairing = false}).imm;
}
Field xi_pairing(const GaussChart& chart, const HeightField& w) { return evaluate(chart, w).pairing; }
Field delta_E(const GaussChart& chart, const HeightField& w) { return evaluate(chart, w).dE; }
std::vector<Eigen::Vector3d> boundary_direction_field(const GaussChart& chart, const HeightField& w) {
    return evaluate(chart, w).mu;
}
std::pair<Eigen::VectorXd, Eigen::VectorXd> boundary_residuals(const GaussChart& chart, const HeightField& w) {
    auto ev = evaluate(chart, w);
    return {ev.B1, ev.B2};
}
double chart_energy(const GaussChart& chart, const HeightField& w) { return evaluate(chart, w).energy; }

double norm_c0(const GaussChart& chart, const HeightField& w) { return sup_real(chart.grid, w.w); }

double norm_c1(const GaussChart& chart, const HeightField& hw) {
    const ParamGrid& g = chart.grid;
    const Diff D(g);
    const Field ws = D.ds(hw.w, 1, g.rows() - 2);
    const Field wp = D.dp(hw.w);
    double s1 = 0.0;
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) {
            const int p = g.p(i);
            const double q = chart.ref.iss(p, j) * ws(p, j) * ws(p, j) + 2 * chart.ref.isp(p, j) * ws(p, j) * wp(p, j) +
                             chart.ref.ipp(p, j) * wp(p, j) * wp(p, j);
            s1 = std::max(s1, std::sqrt(std::max(q, 0.0)));
        }
    return sup_real(g, hw.w) + s1;
}

double norm_ck(const ParamGrid& g, const Field& u, int k) {
    const Diff D(g);
    const double h = g.h();
    Field v = u;
    fill_pole_ghosts(g, v);
    // s-derivatives of orders 0..4 with stencils that fit inside the two ghost layers
    std::vector<Field> ds(5, g.zeros());
    ds[0] = v;
    for (int i = 0; i < g.n_s; ++i) {
        const int p = g.p(i);
        ds[1].row(p) = (v.row(p + 1) - v.row(p - 1)) / (2 * h);
        ds[2].row(p) = (v.row(p + 1) - 2 * v.row(p) + v.row(p - 1)) / (h * h);
        ds[3].row(p) = (v.row(p + 2) - 2 * v.row(p + 1) + 2 * v.row(p - 1) - v.row(p - 2)) / (2 * h * h * h);
        ds[4].row(p) = (v.row(p + 2) - 4 * v.row(p + 1) + 6 * v.row(p) - 4 * v.row(p - 1) + v.row(p - 2)) / (h * h * h * h);
    }
    double m = 0.0;
    for (int a = 0; a <= k; ++a) {
        Field cur = ds[a];
        for (int b = 0; a + b <= k; ++b) {
            m = std::max(m, max_abs_real(g, cur));
            if (g.axisymmetric) break;
            cur = D.dp(cur);
        }
    }
    return m;
}

HeightField project_to_constraint(const GaussChart& chart, const HeightField& w_in, double tol) {
    const ParamGrid& g = chart.grid;
    if (tol <= 0) tol = chart.tol_constraint;
    HeightField w = w_in;
    complete_height_field(g, w);
    EvalOptions eo;
    auto residual = [&](const HeightField& x, Eigen::VectorXd& R) {
        const auto ev = evaluate(chart, x, eo);
        const int nb = static_cast<int>(ev.B1.size());
        R.resize(2 * nb);
        R.head(nb) = ev.B1;
        R.tail(nb) = ev.B2;
        return ev.B1.cwiseAbs().maxCoeff() + ev.B2.cwiseAbs().maxCoeff();
    };
    Eigen::VectorXd R;
    double res = residual(w, R);
    if (res < tol) return w_in;
    if (!(res < chart.r_bar / 10))
        throw Error(ErrorFamily::Chart, "ConstraintProjectionDiverged",
                    "initial boundary residual " + std::to_string(res) + " exceeds r_bar/10");

    // collar profiles attached to each boundary node
    const auto& bnodes = chart.ref.boundary;
    const int nb = static_cast<int>(bnodes.size());
    std::vector<Field> prof1(nb), prof2(nb);
    for (int k = 0; k < nb; ++k) {
        const auto& b = bnodes[k];
        const int pb = g.p(b.i);
        const double ell = chart.ref.fs[0](pb, b.j) * chart.ref.fs[0](pb, b.j) + chart.ref.fs[1](pb, b.j) * chart.ref.fs[1](pb, b.j) +
                           chart.ref.fs[2](pb, b.j) * chart.ref.fs[2](pb, b.j);
        const double scale = std::sqrt(ell);
        prof1[k] = g.zeros();
        prof2[k] = g.zeros();
        for (int p = 0; p < g.rows(); ++p) {
            if (is_pole_ghost(g, p)) continue;
            const double sig = g.outward(b.i) * (g.s(b.i) - g.s(p - ParamGrid::kGhost)) * scale;
            // the annulus splits the collar between its two boundary circles
            if (g.topology == Topology::Annulus && std::abs(p - pb) > g.n_s / 2) continue;
            const double z = chart.zeta(p, b.j);
            prof1[k](p, b.j) = z * sig;
            prof2[k](p, b.j) = z * sig * sig * sig / 6.0;
        }
    }
    const int n = 2 * nb;
    Eigen::VectorXd coef = Eigen::VectorXd::Zero(n);
    auto apply = [&](const Eigen::VectorXd& cf) {
        HeightField x = w;
        for (int k = 0; k < nb; ++k) x.w += cf[k] * prof1[k] + cf[nb + k] * prof2[k];
        complete_height_field(g, x);
        return x;
    };
    for (int it = 0; it < 40; ++it) {
        Eigen::MatrixXd J(n, n);
        const double step = 1e-7 * std::max(1e-3, chart.r_bar);
        for (int col = 0; col < n; ++col) {
            Eigen::VectorXd cp = coef, cm = coef, Rp, Rm;
            cp[col] += step;
            cm[col] -= step;
            residual(apply(cp), Rp);
            residual(apply(cm), Rm);
            J.col(col) = (Rp - Rm) / (2 * step);
        }
        const Eigen::VectorXd delta = J.fullPivLu().solve(R);
        double lambda = 1.0;
        bool accepted = false;
        for (int ls = 0; ls < 30; ++ls, lambda *= 0.5) {
            Eigen::VectorXd trial = coef - lambda * delta, Rt;
            double rt;
            try {
                rt = residual(apply(trial), Rt);
            } catch (const Error&) {
                continue;
            }
            if (rt < res || rt < tol) {
                coef = trial;
                R = Rt;
                res = rt;
                accepted = true;
                break;
            }
        }
        if (res < tol) return apply(coef);
        if (!accepted) break;
    }
    // B2 carries third differences, so its rounding floor grows like eps / h^3;
    // a stall below that floor is as converged as the arithmetic allows
    const double h = g.h();
    const double floor = 100 * std::numeric_limits<double>::epsilon() / (h * h * h);
    if (res < floor) return apply(coef);
    std::ostringstream msg;
    msg << "boundary residual stalled at " << std::scientific << res << " (tolerance " << tol << ")";
    throw Error(ErrorFamily::Chart, "ConstraintProjectionDiverged", msg.str());
}

}  // namespace wfb
