#include "wfb/ls_abstract.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

using Eigen::MatrixXd;
using Eigen::VectorXd;

Error analysis_error(const std::string& code, const std::string& what) {
    return Error(ErrorFamily::Analysis, code, what);
}

MatrixXd fd_jacobian(const AnalyticFunctional& fn, const VectorXd& v, double h) {
    const VectorXd f0 = fn.delta(v);
    MatrixXd J(f0.size(), fn.n);
    for (int i = 0; i < fn.n; ++i) {
        const double hi = h * (1 + std::abs(v[i]));
        VectorXd vp = v, vm = v;
        vp[i] += hi;
        vm[i] -= hi;
        J.col(i) = (fn.delta(vp) - fn.delta(vm)) / (2 * hi);
    }
    return J;
}

VectorXd unit_direction(std::mt19937_64& rng, int n) {
    std::normal_distribution<double> nd;
    VectorXd u(n);
    do {
        for (int i = 0; i < n; ++i) u[i] = nd(rng);
    } while (u.norm() == 0);
    return u / u.norm();
}

// per-shell stream, independent of how many draws earlier shells made
std::mt19937_64 shell_rng(std::uint64_t seed, std::size_t shell) {
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(shell), 0x5eedu};
    return std::mt19937_64(sq);
}

// check loss of the tau quantile line through the residuals, alpha solved exactly
double quantile_loss(const std::vector<double>& x, const std::vector<double>& y, double tau, double beta,
                     double* alpha_out) {
    std::vector<double> r(x.size());
    for (size_t i = 0; i < x.size(); ++i) r[i] = y[i] - beta * x[i];
    std::vector<double> sorted = r;
    const size_t k = std::min(sorted.size() - 1, static_cast<size_t>(std::ceil(tau * sorted.size())) - (tau > 0 ? 1 : 0));
    std::nth_element(sorted.begin(), sorted.begin() + k, sorted.end());
    const double alpha = sorted[k];
    double loss = 0;
    for (double ri : r) {
        const double u = ri - alpha;
        loss += u >= 0 ? tau * u : (tau - 1) * u;
    }
    if (alpha_out) *alpha_out = alpha;
    return loss;
}

}  // namespace

MatrixXd AnalyticFunctional::jac(const VectorXd& v) const {
    return jacobian ? jacobian(v) : fd_jacobian(*this, v, 1e-6);
}

double jacobian_consistency(const AnalyticFunctional& fn, const VectorXd& v, double h) {
    const MatrixXd a = fn.jac(v), b = fd_jacobian(fn, v, h);
    double worst = 0;
    const double scale = std::max(b.norm(), 1e-300);
    for (int c = 0; c < a.cols(); ++c) worst = std::max(worst, (a.col(c) - b.col(c)).norm() / std::max(b.col(c).norm(), 1e-8 * scale));
    return worst;
}

AnalyticFunctional quadratic_functional(const MatrixXd& A) {
    const MatrixXd S = 0.5 * (A + A.transpose());
    AnalyticFunctional f;
    f.n = static_cast<int>(A.rows());
    f.name = "quadratic";
    f.E = [S](const VectorXd& v) { return 0.5 * v.dot(S * v); };
    f.grad = [S](const VectorXd& v) -> VectorXd { return S * v; };
    f.jacobian = [S](const VectorXd&) -> MatrixXd { return S; };
    return f;
}

AnalyticFunctional quartic_x4_y2() {
    AnalyticFunctional f;
    f.n = 2;
    f.name = "x4+y2";
    f.E = [](const VectorXd& v) { return std::pow(v[0], 4) + v[1] * v[1]; };
    f.grad = [](const VectorXd& v) -> VectorXd { return VectorXd{{4 * std::pow(v[0], 3), 2 * v[1]}}; };
    f.jacobian = [](const VectorXd& v) -> MatrixXd { return MatrixXd{{12 * v[0] * v[0], 0}, {0, 2}}; };
    return f;
}

AnalyticFunctional quartic_parabola() {
    AnalyticFunctional f;
    f.n = 2;
    f.name = "x4+(y-x2)2";
    f.E = [](const VectorXd& v) {
        const double q = v[1] - v[0] * v[0];
        return std::pow(v[0], 4) + q * q;
    };
    f.grad = [](const VectorXd& v) -> VectorXd {
        const double q = v[1] - v[0] * v[0];
        return VectorXd{{4 * std::pow(v[0], 3) - 4 * v[0] * q, 2 * q}};
    };
    f.jacobian = [](const VectorXd& v) -> MatrixXd {
        const double x = v[0], q = v[1] - x * x;
        return MatrixXd{{12 * x * x - 4 * q + 8 * x * x, -4 * x}, {-4 * x, 2}};
    };
    return f;
}

AnalyticFunctional constant_functional(int n, double c) {
    AnalyticFunctional f;
    f.n = n;
    f.name = "constant";
    f.E = [c](const VectorXd&) { return c; };
    f.grad = [n](const VectorXd&) -> VectorXd { return VectorXd::Zero(n); };
    f.jacobian = [n](const VectorXd&) -> MatrixXd { return MatrixXd::Zero(n, n); };
    return f;
}

AnalyticFunctional polynomial_functional(int n, const std::vector<Monomial>& terms) {
    for (const auto& t : terms)
        if (static_cast<int>(t.powers.size()) != n || std::any_of(t.powers.begin(), t.powers.end(), [](int p) { return p < 0; }))
            throw Error(ErrorFamily::Input, "ValidationError", "monomial powers must be n nonnegative integers");
    // d^k/dv^k of v^p, as coefficient and remaining power
    auto ipow = [](double x, int p) {
        double r = 1;
        for (int i = 0; i < p; ++i) r *= x;
        return r;
    };
    auto value = [ipow, terms, n](const VectorXd& v, int di, int dj) {
        double s = 0;
        for (const auto& t : terms) {
            double term = t.coef;
            for (int i = 0; i < n && term != 0; ++i) {
                int p = t.powers[i];
                double c = 1;
                const int k = (i == di) + (i == dj);
                for (int q = 0; q < k; ++q) c *= p - q;
                p -= k;
                term *= p < 0 ? 0.0 : c * ipow(v[i], p);
            }
            s += term;
        }
        return s;
    };
    AnalyticFunctional f;
    f.n = n;
    f.name = "polynomial";
    f.E = [value](const VectorXd& v) { return value(v, -1, -1); };
    f.grad = [value, n](const VectorXd& v) -> VectorXd {
        VectorXd g(n);
        for (int i = 0; i < n; ++i) g[i] = value(v, i, -1);
        return g;
    };
    f.jacobian = [value, n](const VectorXd& v) -> MatrixXd {
        MatrixXd H(n, n);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) H(i, j) = value(v, i, j);
        return H;
    };
    return f;
}

ReductionResult kernel_split(const AnalyticFunctional& fn, const VectorXd& v0, double rank_tol, double radius) {
    const double res = fn.delta(v0).norm();
    if (!(res < 1e-10)) {
        std::ostringstream os;
        os << "|deltaE(v0)| = " << res << " is not below 1e-10";
        throw analysis_error("NotCritical", os.str());
    }
    const MatrixXd J = fn.jac(v0);
    Eigen::JacobiSVD<MatrixXd> svd(J, Eigen::ComputeFullU | Eigen::ComputeFullV);
    const VectorXd s = svd.singularValues();
    const double smax = s.size() ? s[0] : 0.0;
    const double cut = rank_tol * smax;
    int rank = 0;
    for (int i = 0; i < s.size(); ++i) {
        if (smax > 0 && s[i] > cut / 3 && s[i] < 3 * cut) {
            std::ostringstream os;
            os << "singular value " << s[i] << " is within a factor 3 of the cut " << cut;
            throw analysis_error("RankAmbiguous", os.str());
        }
        if (smax > 0 && s[i] >= cut) ++rank;
    }
    ReductionResult r;
    r.fn = fn;
    r.v0 = v0;
    r.rank_tol = rank_tol;
    r.radius = radius;
    r.singular_values = s;
    const MatrixXd& V = svd.matrixV();
    r.Y = V.leftCols(rank);
    r.X = V.rightCols(fn.n - rank);
    r.Ur = svd.matrixU().leftCols(rank);
    r.PW = r.Ur * r.Ur.transpose();
    return r;
}

VectorXd lyapunov_schmidt_solve(const ReductionResult& red, const VectorXd& x) {
    const int nc = static_cast<int>(red.Y.cols());
    VectorXd y = VectorXd::Zero(nc);
    if (nc == 0) return y;
    const double xn = x.norm();
    if (xn > red.radius) throw analysis_error("LeftNeighborhood", "|x| exceeds the reduction's validated radius");
    const int stages = 1 + static_cast<int>(4 * xn / red.radius);
    int used = 0;
    for (int st = 1; st <= stages; ++st) {
        const VectorXd xs = x * (static_cast<double>(st) / stages);
        double res = 0;
        bool done = false;
        while (used < 50) {
            const VectorXd v = red.v0 + red.X * xs + red.Y * y;
            const VectorXd F = red.Ur.transpose() * red.fn.delta(v);
            res = F.norm();
            if (!std::isfinite(res)) throw analysis_error("NewtonDivergence", "non-finite residual");
            if (res <= 1e-12) {
                done = true;
                break;
            }
            const MatrixXd Jy = red.Ur.transpose() * red.fn.jac(v) * red.Y;
            const VectorXd dy = Jy.colPivHouseholderQr().solve(-F);
            y += dy;
            ++used;
            if (!y.allFinite()) throw analysis_error("NewtonDivergence", "non-finite iterate");
            if (y.norm() > red.radius) throw analysis_error("LeftNeighborhood", "g(x) left the validity ball");
            // rounding stall: accept at the invariant's 1e-10 level
            if (dy.norm() <= 1e-15 * (1 + y.norm()) && res <= 1e-10) {
                done = true;
                break;
            }
        }
        if (!done) {
            std::ostringstream os;
            os << "residual " << res << " after 50 Newton iterations";
            throw analysis_error("NewtonDivergence", os.str());
        }
    }
    return y;
}

double reduced_energy(const ReductionResult& red, const VectorXd& x) {
    const VectorXd y = lyapunov_schmidt_solve(red, x);
    return red.fn.E(red.v0 + red.X * x + red.Y * y);
}

VectorXd reduced_gradient(const ReductionResult& red, const VectorXd& x) {
    const VectorXd y = lyapunov_schmidt_solve(red, x);
    const VectorXd v = red.v0 + red.X * x + red.Y * y;
    MatrixXd T = red.X;
    if (red.Y.cols() > 0) {
        const MatrixXd J = red.Ur.transpose() * red.fn.jac(v);
        const MatrixXd dg = -(J * red.Y).colPivHouseholderQr().solve(J * red.X);
        T += red.Y * dg;
    }
    return T.transpose() * red.fn.grad(v);
}

QuantileLine quantile_line(const std::vector<double>& x, const std::vector<double>& y, double tau) {
    if (x.size() < 2 || x.size() != y.size()) throw analysis_error("DegenerateSamples", "quantile line needs two or more points");
    const double xmin = *std::min_element(x.begin(), x.end()), xmax = *std::max_element(x.begin(), x.end());
    if (xmax - xmin < 1e-9) throw analysis_error("DegenerateSamples", "all abscissae coincide");
    // the loss is convex in beta once alpha is eliminated, so golden section is exact enough
    double lo = -5, hi = 5;
    const double gr = 0.5 * (std::sqrt(5.0) - 1);
    double a = hi - gr * (hi - lo), b = lo + gr * (hi - lo);
    double fa = quantile_loss(x, y, tau, a, nullptr), fb = quantile_loss(x, y, tau, b, nullptr);
    for (int it = 0; it < 200 && hi - lo > 1e-13; ++it) {
        if (fa <= fb) {
            hi = b;
            b = a;
            fb = fa;
            a = hi - gr * (hi - lo);
            fa = quantile_loss(x, y, tau, a, nullptr);
        } else {
            lo = a;
            a = b;
            fa = fb;
            b = lo + gr * (hi - lo);
            fb = quantile_loss(x, y, tau, b, nullptr);
        }
    }
    QuantileLine line;
    line.slope = 0.5 * (lo + hi);
    quantile_loss(x, y, tau, line.slope, &line.intercept);
    return line;
}

LSFit envelope_fit(const std::vector<SamplePair>& samples, double tau, double gap_floor) {
    LSFit fit;
    fit.tau = tau;
    fit.samples = samples;
    std::vector<double> x, y;
    for (const auto& s : samples)
        if (s.gap > gap_floor && s.gap > 0 && s.grad > 0 && std::isfinite(s.gap) && std::isfinite(s.grad)) {
            x.push_back(std::log(s.gap));
            y.push_back(std::log(s.grad));
        }
    fit.used = static_cast<int>(x.size());
    if (x.size() < 3) throw analysis_error("DegenerateSamples", "fewer than 3 pairs with a resolvable energy gap");
    const QuantileLine line = quantile_line(x, y, tau);
    fit.slope = line.slope;
    fit.intercept = line.intercept;
    fit.theta = 1 - fit.slope;
    fit.C = std::exp(-fit.intercept);
    fit.violation_fraction = 1 - inequality_holds_fraction(fit, samples);
    return fit;
}

double inequality_holds_fraction(const LSFit& fit, const std::vector<SamplePair>& pairs) {
    if (pairs.empty()) return 1.0;
    int ok = 0;
    for (const auto& p : pairs) {
        if (p.gap <= 0) {
            ++ok;
            continue;
        }
        // log form; a relative slack of 1e-12 absorbs the pair that defines the line
        const double lhs = (1 - fit.theta) * std::log(p.gap), rhs = std::log(fit.C) + std::log(p.grad);
        if (p.grad > 0 && lhs <= rhs + 1e-12 * (1 + std::abs(rhs))) ++ok;
    }
    return static_cast<double>(ok) / pairs.size();
}

std::vector<SamplePair> sample_shells(const AnalyticFunctional& fn, const VectorXd& v0, const ShellSampling& s) {
    const double E0 = fn.E(v0);
    bool adapted = s.adapted_fraction > 0;
    ReductionResult red;
    if (adapted) {
        try {
            red = kernel_split(fn, v0, s.rank_tol);
            adapted = red.dim() > 0 && red.dim() < fn.n;
        } catch (const Error& e) {
            if (e.code() != "RankAmbiguous") throw;
            adapted = false;
        }
    }
    std::vector<SamplePair> out;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (size_t k = 0; k < s.radii.size(); ++k) {
        auto rng = shell_rng(s.seed, k);
        const double rho = s.radii[k];
        const int n_adapted = adapted ? static_cast<int>(std::lround(s.adapted_fraction * s.samples_per_shell)) : 0;
        for (int i = 0; i < s.samples_per_shell; ++i) {
            VectorXd v;
            if (i < n_adapted) {
                const VectorXd xi = rho * unit_direction(rng, red.dim());
                const double mag = rho * std::pow(10.0, -s.eta_decades * uni(rng));
                const VectorXd eta = mag * unit_direction(rng, static_cast<int>(red.Y.cols()));
                VectorXd g;
                try {
                    g = lyapunov_schmidt_solve(red, xi);
                } catch (const Error&) {
                    continue;
                }
                v = v0 + red.X * xi + red.Y * (g + eta);
            } else {
                v = v0 + rho * unit_direction(rng, fn.n);
            }
            out.push_back({std::abs(fn.E(v) - E0), fn.delta(v).norm()});
        }
    }
    return out;
}

LSFit estimate_theta(const AnalyticFunctional& fn, const VectorXd& v0, const ShellSampling& s) {
    const double res = fn.delta(v0).norm();
    if (!(res < 1e-10)) throw analysis_error("NotCritical", "estimate_theta needs a critical point");
    const double E0 = fn.E(v0);
    const std::vector<SamplePair> pairs = sample_shells(fn, v0, s);
    const double degenerate = 1e-14 * std::max(1.0, std::abs(E0));
    if (std::all_of(pairs.begin(), pairs.end(), [&](const SamplePair& p) { return p.gap <= degenerate; }))
        throw analysis_error("DegenerateSamples", "every sampled energy lies within 1e-14 of E(v0)");
    // gaps below a few ulps of E(v0) carry no information
    return envelope_fit(pairs, s.tau, 64 * std::numeric_limits<double>::epsilon() * std::abs(E0));
}

HypothesisReport check_hypotheses(const AnalyticFunctional& fn, const VectorXd& v0, double ball, int samples,
                                  std::uint64_t seed) {
    HypothesisReport rep;
    rep.M_bound = fn.M_bound;
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (int i = 0; i < samples; ++i) {
        const VectorXd v = v0 + ball * std::pow(uni(rng), 1.0 / fn.n) * unit_direction(rng, fn.n);
        const double g = fn.grad(v).norm(), d = fn.delta(v).norm();
        if (g == 0) continue;
        rep.max_ratio = std::max(rep.max_ratio, d > 0 ? g / d : std::numeric_limits<double>::infinity());
        ++rep.samples;
    }
    rep.bound_confirmed = rep.max_ratio <= fn.M_bound * (1 + 1e-9);
    Eigen::JacobiSVD<MatrixXd> svd(fn.jac(v0));
    rep.singular_values = svd.singularValues();
    const double smax = rep.singular_values.size() ? rep.singular_values[0] : 0.0;
    for (int i = 0; i < rep.singular_values.size(); ++i)
        if (smax > 0 && rep.singular_values[i] >= 1e-6 * smax) ++rep.rank;
    rep.kernel_dim = fn.n - rep.rank;
    return rep;
}

AnalyticFunctional pull_back(const AnalyticFunctional& fn, const Diffeo& phi) {
    AnalyticFunctional f;
    f.n = fn.n;
    f.name = fn.name + "@phi";
    f.M_bound = fn.M_bound;
    f.E = [fn, phi](const VectorXd& u) { return fn.E(phi.map(u)); };
    f.grad = [fn, phi](const VectorXd& u) -> VectorXd { return phi.jacobian(u).transpose() * fn.grad(phi.map(u)); };
    f.deltaE = [fn, phi](const VectorXd& u) -> VectorXd { return fn.delta(phi.map(u)); };
    f.jacobian = [fn, phi](const VectorXd& u) -> MatrixXd { return fn.jac(phi.map(u)) * phi.jacobian(u); };
    return f;
}

InvarianceReport diffeo_invariance_test(const AnalyticFunctional& fn, const VectorXd& v0, const Diffeo& phi,
                                        const ShellSampling& s) {
    InvarianceReport rep;
    if (phi.inverse) {
        rep.u0 = phi.inverse(v0);
    } else {
        VectorXd u = v0;
        for (int it = 0; it < 50; ++it) {
            const VectorXd r = phi.map(u) - v0;
            if (r.norm() <= 1e-15 * (1 + v0.norm())) break;
            u -= phi.jacobian(u).partialPivLu().solve(r);
        }
        rep.u0 = u;
    }
    rep.original = estimate_theta(fn, v0, s);
    rep.transformed = estimate_theta(pull_back(fn, phi), rep.u0, s);
    rep.delta_theta = std::abs(rep.original.theta - rep.transformed.theta);
    return rep;
}

Diffeo rotation_diffeo(double angle) {
    const double c = std::cos(angle), s = std::sin(angle);
    Diffeo d;
    d.map = [c, s](const VectorXd& u) -> VectorXd {
        VectorXd v = u;
        v[0] = c * u[0] - s * u[1];
        v[1] = s * u[0] + c * u[1];
        return v;
    };
    d.jacobian = [c, s](const VectorXd& u) -> MatrixXd {
        MatrixXd J = MatrixXd::Identity(u.size(), u.size());
        J(0, 0) = c;
        J(0, 1) = -s;
        J(1, 0) = s;
        J(1, 1) = c;
        return J;
    };
    d.inverse = [c, s](const VectorXd& v) -> VectorXd {
        VectorXd u = v;
        u[0] = c * v[0] + s * v[1];
        u[1] = -s * v[0] + c * v[1];
        return u;
    };
    return d;
}

Diffeo shear_diffeo() {
    Diffeo d;
    d.map = [](const VectorXd& u) -> VectorXd {
        VectorXd v = u;
        v[1] = u[1] + u[0] * u[0];
        return v;
    };
    d.jacobian = [](const VectorXd& u) -> MatrixXd {
        MatrixXd J = MatrixXd::Identity(u.size(), u.size());
        J(1, 0) = 2 * u[0];
        return J;
    };
    d.inverse = [](const VectorXd& v) -> VectorXd {
        VectorXd u = v;
        u[1] = v[1] - v[0] * v[0];
        return u;
    };
    return d;
}

Diffeo identity_diffeo(int n) {
    Diffeo d;
    d.map = [](const VectorXd& u) -> VectorXd { return u; };
    d.jacobian = [n](const VectorXd&) -> MatrixXd { return MatrixXd::Identity(n, n); };
    d.inverse = [](const VectorXd& v) -> VectorXd { return v; };
    return d;
}

}  // namespace wfb
