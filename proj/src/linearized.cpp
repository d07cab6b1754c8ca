#include "wfb/linearized.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

using Trip = Eigen::Triplet<double>;

int row_of(const Unknowns& U, int r) { return U.red_to_full[r] / U.g.cols(); }
int col_of(const Unknowns& U, int r) { return U.red_to_full[r] % U.g.cols(); }

// boundary node owning each ghost row, -1 elsewhere
std::vector<int> ghost_owner(const Unknowns& U, const std::vector<BoundaryNode>& bn) {
    std::vector<int> own(U.n_red, -1);
    for (int k = 0; k < static_cast<int>(bn.size()); ++k) {
        const auto [r1, r2] = boundary_ghost_rows(U, bn[k].i, bn[k].j);
        own[r1] = k;
        own[r2] = k;
    }
    return own;
}

SpMat columns_by_difference(const GaussChart& chart, const Unknowns& U, double h, int radius) {
    const ParamGrid& g = chart.grid;
    const int period = 2 * radius + 1;
    const Eigen::VectorXd x0 = Eigen::VectorXd::Zero(U.n_red);
    std::vector<Trip> t;
    for (int colour = 0; colour < period; ++colour)
        for (int j = 0; j < g.cols(); ++j) {
            std::vector<int> group;
            for (int r = 0; r < U.n_red; ++r)
                if (row_of(U, r) % period == colour && col_of(U, r) == j) group.push_back(r);
            if (group.empty()) continue;
            Eigen::VectorXd xp = x0, xm = x0;
            for (int r : group) xp[r] += h, xm[r] -= h;
            const Eigen::VectorXd d = (nonlinear_map(chart, U, xp) - nonlinear_map(chart, U, xm)) / (2 * h);
            // every output row within the radius belongs to the unique source of this colour
            for (int q = 0; q < U.n_red; ++q) {
                if (d[q] == 0.0) continue;
                const int pq = row_of(U, q);
                for (int r : group)
                    if (std::abs(pq - row_of(U, r)) <= radius) {
                        t.emplace_back(q, r, d[q]);
                        break;
                    }
            }
        }
    SpMat J(U.n_red, U.n_red);
    J.setFromTriplets(t.begin(), t.end());
    return J;
}

double column_defect(const SpMat& a, const SpMat& b) {
    const Eigen::SparseMatrix<double> A = a, B = b;  // column major for column access
    double worst = 0;
    for (int c = 0; c < A.cols(); ++c) {
        const Eigen::VectorXd da = A.col(c), db = B.col(c);
        const double n = db.norm();
        if (n > 0) worst = std::max(worst, (da - db).norm() / n);
    }
    return worst;
}

Eigen::MatrixXd orthonormal_columns(const Eigen::MatrixXd& X) {
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(X);
    return qr.householderQ() * Eigen::MatrixXd::Identity(X.rows(), X.cols());
}

}  // namespace

Eigen::VectorXd nonlinear_map(const GaussChart& chart, const Unknowns& U, const Eigen::VectorXd& x) {
    const ParamGrid& g = chart.grid;
    HeightField w{U.unpack(x)};
    EvalOptions eo;
    eo.check_pairing = false;
    eo.check_pole = false;
    const ChartEval ev = evaluate(chart, w, eo);
    Eigen::VectorXd out = Eigen::VectorXd::Zero(U.n_red);
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) out[U.red(g.p(i), j)] = ev.dE(g.p(i), j);
    for (int k = 0; k < static_cast<int>(ev.geom.boundary.size()); ++k) {
        const auto [r1, r2] = boundary_ghost_rows(U, ev.geom.boundary[k].i, ev.geom.boundary[k].j);
        out[r1] = ev.B1[k];
        out[r2] = ev.B2[k];
    }
    return out;
}

Linearization assemble_linearization(const GaussChart& chart, const LinearizationOptions& opt) {
    const Unknowns U(chart.grid);
    const double h = opt.h_rel * chart.r_bar;
    const SpMat J1 = columns_by_difference(chart, U, h, opt.stencil_radius);
    const SpMat J2 = columns_by_difference(chart, U, h / 2, opt.stencil_radius);
    Linearization lin;
    lin.h_dir = h;
    lin.richardson_defect = column_defect(J1, J2);
    if (!(lin.richardson_defect <= opt.richardson_tol)) {
        std::ostringstream os;
        os << "columns at steps " << h << " and " << h / 2 << " differ by " << lin.richardson_defect << " (tolerance "
           << opt.richardson_tol << ")";
        throw Error(ErrorFamily::Linear, "DifferentiationNoise", os.str());
    }
    lin.op.grid = chart.grid;
    lin.op.matrix = J1;
    lin.op.row_tags = default_row_tags(U);
    std::ostringstream id;
    id << std::hex << chart.hash();
    lin.op.chart_id = id.str();
    lin.op.method = "central-difference";
    return lin;
}

BoundaryCoefficients boundary_coefficients(const GaussChart& chart, const Linearization& lin) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const HeightField zero = HeightField::zero(g);
    const ChartEval ev = evaluate(chart, zero);
    const OperatorAssembly A0 = assemble_principal(chart, zero, &ev);
    const SpMat DP = principal_factor(chart, ev);
    const auto& bn = ev.geom.boundary;
    const int nb = static_cast<int>(bn.size());
    BoundaryCoefficients bc;
    bc.m.resize(nb);
    for (int k = 0; k < nb; ++k) {
        const int p = g.p(bn[k].i);
        const Vec3 y = at(chart.fbar, p, bn[k].j), nu = at(chart.nubar, p, bn[k].j);
        bc.m[k] = chart.support.shape_operator(y, nu, nu);
    }
    // remainder of the B2 row once the second- and third-order parts are removed
    std::vector<Trip> t;
    for (int k = 0; k < nb; ++k) {
        const int r2 = boundary_ghost_rows(U, bn[k].i, bn[k].j).second;
        for (SpMat::InnerIterator it(lin.op.matrix, r2); it; ++it) t.emplace_back(k, it.col(), it.value());
        for (SpMat::InnerIterator it(A0.matrix, r2); it; ++it) t.emplace_back(k, it.col(), -it.value());
        const int f = U.full(g.p(bn[k].i), bn[k].j);
        for (SpMat::InnerIterator it(DP, f); it; ++it) t.emplace_back(k, it.col(), -bc.m[k] * it.value());
    }
    SpMat K(nb, U.n_red);
    K.setFromTriplets(t.begin(), t.end());

    const double sb = g.s(bn.empty() ? 0 : bn[0].i);
    Field one = Field::Ones(g.rows(), g.cols());
    Field lin_s = g.zeros();
    for (int p = 0; p < g.rows(); ++p) lin_s.row(p).setConstant(g.s(p - ParamGrid::kGhost) - sb);
    bc.b = K * U.pack(one);
    bc.b_s = K * U.pack(lin_s);
    bc.b_phi = Eigen::VectorXd::Zero(nb);
    if (!g.axisymmetric)
        for (int k = 0; k < nb; ++k) {
            Field probe = g.zeros();
            for (int p = 0; p < g.rows(); ++p)
                for (int j = 0; j < g.cols(); ++j) probe(p, j) = std::sin(g.phi(j) - g.phi(bn[k].j));
            fill_pole_ghosts(g, probe);
            bc.b_phi[k] = (K * U.pack(probe))[k];
        }
    return bc;
}

OperatorAssembly assemble_T_tilde(const GaussChart& chart, double c1, double c2, const BoundaryCoefficients& bc) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const HeightField zero = HeightField::zero(g);
    const ChartEval ev = evaluate(chart, zero);
    const OperatorAssembly A0 = assemble_principal(chart, zero, &ev);
    const SpMat DP = principal_factor(chart, ev);
    const Diff D(g);
    const double h = g.h();
    const auto owner = ghost_owner(U, ev.geom.boundary);
    std::vector<Trip> t;
    for (int r = 0; r < U.n_red; ++r) {
        for (SpMat::InnerIterator it(A0.matrix, r); it; ++it) t.emplace_back(r, it.col(), it.value());
        const RowTag tag = A0.row_tags[r];
        if (tag == RowTag::Interior) {
            for (SpMat::InnerIterator it(DP, U.red_to_full[r]); it; ++it) t.emplace_back(r, it.col(), -c1 * it.value());
            t.emplace_back(r, r, c2);
            continue;
        }
        const int k = owner[r];
        const auto& b = ev.geom.boundary[k];
        const int p = g.p(b.i), rb = U.red(p, b.j);
        if (tag == RowTag::B1) {
            t.emplace_back(r, rb, bc.m[k]);
            continue;
        }
        for (SpMat::InnerIterator it(DP, U.full(p, b.j)); it; ++it) t.emplace_back(r, it.col(), bc.m[k] * it.value());
        t.emplace_back(r, U.red(p + 1, b.j), bc.b_s[k] / (2 * h));
        t.emplace_back(r, U.red(p - 1, b.j), -bc.b_s[k] / (2 * h));
        if (!g.axisymmetric)
            for (int m = 0; m < g.cols(); ++m) t.emplace_back(r, U.red(p, m), bc.b_phi[k] * D.D1()(b.j, m));
        t.emplace_back(r, rb, bc.b[k]);
    }
    OperatorAssembly out;
    out.grid = g;
    out.row_tags = A0.row_tags;
    out.chart_id = A0.chart_id;
    std::ostringstream m;
    m << "T_tilde(c1=" << c1 << ",c2=" << c2 << ")";
    out.method = m.str();
    out.matrix.resize(U.n_red, U.n_red);
    out.matrix.setFromTriplets(t.begin(), t.end());
    out.matrix.prune(0.0);
    return out;
}

OperatorAssembly assemble_T_tilde(const GaussChart& chart, double c1, double c2) {
    return assemble_T_tilde(chart, c1, c2, boundary_coefficients(chart, assemble_linearization(chart)));
}

SpectralReport verify_isomorphism(const SpMat& Mrow, const SpectralOptions& opt) {
    const Eigen::SparseMatrix<double> M = Mrow;
    const Eigen::SparseMatrix<double> Mt = M.transpose();
    const int n = static_cast<int>(M.rows());
    if (M.rows() != M.cols() || n == 0) throw Error(ErrorFamily::Linear, "EigsolverFailure", "operator must be square and nonempty");
    SpectralReport rep;
    rep.method = "shift-invert subspace iteration";
    std::mt19937_64 rng(opt.seed);
    std::normal_distribution<double> nd;

    // largest singular value by power iteration on M^T M
    Eigen::VectorXd v(n);
    for (int i = 0; i < n; ++i) v[i] = nd(rng);
    v.normalize();
    double smax = 0;
    for (int it = 0; it < 300; ++it) {
        Eigen::VectorXd u = Mt * (M * v);
        const double nu = u.norm();
        if (nu == 0) break;
        const double s = std::sqrt(nu);
        v = u / nu;
        if (std::abs(s - smax) < 1e-12 * s) {
            smax = s;
            break;
        }
        smax = s;
    }
    rep.sigma_max = smax;
    rep.kernel_tol = opt.kernel_tol > 0 ? opt.kernel_tol : opt.kernel_rel * smax;

    Eigen::SparseLU<Eigen::SparseMatrix<double>> lu, lut;
    lu.analyzePattern(M);
    lu.factorize(M);
    bool singular = lu.info() != Eigen::Success;
    if (!singular) {
        lut.analyzePattern(Mt);
        lut.factorize(Mt);
        singular = lut.info() != Eigen::Success;
    }
    if (singular) {
        // exactly singular to working precision
        rep.singular_values = {0.0};
        rep.near_kernel_dim = 1;
        rep.isomorphism = false;
        rep.method += " (factorisation singular)";
        return rep;
    }
    const int k = std::min(opt.k, n);
    const int b = std::min(n, k + 4);
    Eigen::MatrixXd X(n, b);
    for (int i = 0; i < n; ++i)
        for (int c = 0; c < b; ++c) X(i, c) = nd(rng);
    X = orthonormal_columns(X);
    Eigen::VectorXd prev = Eigen::VectorXd::Constant(k, -1.0);
    for (int it = 1; it <= opt.max_iterations; ++it) {
        Eigen::MatrixXd Y(n, b);
        for (int c = 0; c < b; ++c) Y.col(c) = lu.solve(lut.solve(Eigen::VectorXd(X.col(c))));
        if (!Y.allFinite()) throw Error(ErrorFamily::Linear, "EigsolverFailure", "non-finite iterate in shift-invert");
        X = orthonormal_columns(Y);
        // Rayleigh-Ritz on the subspace: singular values of M X
        const Eigen::MatrixXd MX = M * X;
        Eigen::JacobiSVD<Eigen::MatrixXd> svd(MX, Eigen::ComputeThinV);
        Eigen::VectorXd s = svd.singularValues().reverse();
        const Eigen::VectorXd sk = s.head(k);
        const double change = (sk - prev).cwiseAbs().maxCoeff();
        prev = sk;
        if (change <= opt.conv_tol * std::max(sk.maxCoeff(), 1e-300) || it == opt.max_iterations) {
            if (change > opt.conv_tol * std::max(sk.maxCoeff(), 1e-300) * 1e3)
                throw Error(ErrorFamily::Linear, "EigsolverFailure", "subspace iteration did not converge");
            const Eigen::MatrixXd V = X * svd.matrixV();  // columns ordered by decreasing Ritz value
            rep.iterations = it;
            for (int i = 0; i < k; ++i) {
                rep.singular_values.push_back(sk[i]);
                if (sk[i] < rep.kernel_tol) {
                    ++rep.near_kernel_dim;
                    rep.kernel_basis.push_back(V.col(b - 1 - i));
                }
            }
            rep.isomorphism = sk[0] > rep.kernel_tol;
            return rep;
        }
    }
    throw Error(ErrorFamily::Linear, "EigsolverFailure", "subspace iteration did not converge");
}

SpectralReport verify_isomorphism(const OperatorAssembly& op, const SpectralOptions& opt) {
    return verify_isomorphism(op.matrix, opt);
}

double chart_kernel_tol(const GaussChart& chart) {
    const ParamGrid& g = chart.grid;
    double area = 0;
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) area += g.weight_s(i) * g.weight_phi() * chart.ref.sqrt_g(g.p(i), j);
    const double l2 = area / (2 * std::numbers::pi);
    return 1.0 / (l2 * l2);
}

TTildeScan scan_T_tilde(const GaussChart& chart, const std::vector<double>& values, const SpectralOptions& opt_in) {
    SpectralOptions opt = opt_in;
    if (opt.kernel_tol <= 0) opt.kernel_tol = chart_kernel_tol(chart);
    const BoundaryCoefficients bc = boundary_coefficients(chart, assemble_linearization(chart));
    TTildeScan scan;
    for (double c1 : values)
        for (double c2 : values) {
            const SpectralReport r = verify_isomorphism(assemble_T_tilde(chart, c1, c2, bc), opt);
            scan.tried.emplace_back(c1, c2, r.singular_values.front());
            if (r.isomorphism) {
                scan.c1 = c1;
                scan.c2 = c2;
                scan.found = true;
                scan.report = r;
                return scan;
            }
        }
    return scan;
}

ConstrainedOperator constrain(const Unknowns& U, const Linearization& lin, const GeometryCache& ref) {
    const ParamGrid& g = U.g;
    ConstrainedOperator co;
    std::vector<int> pos(U.n_red, -1);
    for (int r = 0; r < U.n_red; ++r) {
        if (lin.op.row_tags[r] == RowTag::Interior) {
            pos[r] = static_cast<int>(co.real_index.size());
            co.real_index.push_back(r);
        } else {
            pos[r] = static_cast<int>(co.ghost_index.size());
            co.ghost_index.push_back(r);
        }
    }
    const int ni = static_cast<int>(co.real_index.size()), ng = static_cast<int>(co.ghost_index.size());
    Eigen::MatrixXd JII = Eigen::MatrixXd::Zero(ni, ni), JIG = Eigen::MatrixXd::Zero(ni, ng);
    Eigen::MatrixXd JGI = Eigen::MatrixXd::Zero(ng, ni), JGG = Eigen::MatrixXd::Zero(ng, ng);
    for (int r = 0; r < U.n_red; ++r) {
        const bool ri = lin.op.row_tags[r] == RowTag::Interior;
        for (SpMat::InnerIterator it(lin.op.matrix, r); it; ++it) {
            const int c = static_cast<int>(it.col());
            const bool ci = lin.op.row_tags[c] == RowTag::Interior;
            (ri ? (ci ? JII : JIG) : (ci ? JGI : JGG))(pos[r], pos[c]) += it.value();
        }
    }
    Eigen::FullPivLU<Eigen::MatrixXd> lu(JGG);
    if (!lu.isInvertible()) throw Error(ErrorFamily::Linear, "EigsolverFailure", "boundary rows do not determine the ghost values");
    co.ghost_solve = -lu.solve(JGI);
    co.T_res = JII + JIG * co.ghost_solve;
    co.weights.resize(ni);
    for (int a = 0; a < ni; ++a) {
        const int f = U.red_to_full[co.real_index[a]];
        const int p = f / g.cols(), j = f % g.cols();
        co.weights[a] = g.weight_s(p - ParamGrid::kGhost) * g.weight_phi() * ref.sqrt_g(p, j);
    }
    const Eigen::VectorXd sw = co.weights.cwiseSqrt();
    co.T = sw.asDiagonal() * co.T_res * sw.cwiseInverse().asDiagonal();
    return co;
}

NearKernel near_kernel(const GaussChart& chart, const SpectralOptions& opt, const LinearizationOptions& lopt) {
    NearKernel nk;
    const Unknowns U(chart.grid);
    nk.lin = assemble_linearization(chart, lopt);
    nk.op = constrain(U, nk.lin, chart.ref);
    Eigen::BDCSVD<Eigen::MatrixXd> svd(nk.op.T, Eigen::ComputeFullV);
    if (svd.info() != Eigen::Success) throw Error(ErrorFamily::Linear, "EigsolverFailure", "dense SVD failed");
    const Eigen::VectorXd s = svd.singularValues();
    const int n = static_cast<int>(s.size());
    SpectralReport& rep = nk.report;
    rep.method = "dense SVD of the constrained operator";
    rep.sigma_max = s[0];
    rep.kernel_tol = opt.kernel_tol > 0 ? opt.kernel_tol : chart_kernel_tol(chart);
    const Eigen::VectorXd isw = nk.op.weights.cwiseSqrt().cwiseInverse();
    for (int i = n - 1; i >= 0; --i) {
        if (static_cast<int>(rep.singular_values.size()) < opt.k || s[i] < rep.kernel_tol) rep.singular_values.push_back(s[i]);
        if (s[i] < rep.kernel_tol) {
            ++rep.near_kernel_dim;
            // back to unweighted fields; orthonormal in the weighted inner product
            rep.kernel_basis.push_back(isw.cwiseProduct(svd.matrixV().col(i)));
        }
    }
    rep.isomorphism = rep.near_kernel_dim == 0;
    return nk;
}

Eigen::VectorXd translation_field(const GaussChart& chart, const Unknowns& U, const Vec3& e) {
    const Field pr = xi_pairing(chart, HeightField::zero(chart.grid));
    Eigen::VectorXd phi(U.n_red);
    for (int r = 0; r < U.n_red; ++r) {
        const int p = row_of(U, r), j = col_of(U, r);
        phi[r] = e.dot(at(chart.nubar, p, j)) / pr(std::clamp(p, chart.grid.p(0), chart.grid.p(chart.grid.n_s - 1)), j);
    }
    return phi;
}

Eigen::VectorXd dilation_field(const GaussChart& chart, const Unknowns& U, const Vec3& centre) {
    const Field pr = xi_pairing(chart, HeightField::zero(chart.grid));
    Eigen::VectorXd phi(U.n_red);
    for (int r = 0; r < U.n_red; ++r) {
        const int p = row_of(U, r), j = col_of(U, r);
        phi[r] = (at(chart.fbar, p, j) - centre).dot(at(chart.nubar, p, j)) /
                 pr(std::clamp(p, chart.grid.p(0), chart.grid.p(chart.grid.n_s - 1)), j);
    }
    return phi;
}

double relative_residual(const NearKernel& nk, const Eigen::VectorXd& phi_real) {
    const Eigen::VectorXd sw = nk.op.weights.cwiseSqrt();
    const Eigen::VectorXd y = sw.cwiseProduct(nk.op.T_res * phi_real);
    return y.norm() / (nk.report.sigma_max * sw.cwiseProduct(phi_real).norm());
}

Eigen::VectorXd restrict_to_real(const ConstrainedOperator& co, const Eigen::VectorXd& reduced) {
    Eigen::VectorXd o(co.real_index.size());
    for (std::size_t a = 0; a < co.real_index.size(); ++a) o[a] = reduced[co.real_index[a]];
    return o;
}

double kernel_capture(const NearKernel& nk, const Eigen::VectorXd& phi) {
    const Eigen::VectorXd& W = nk.op.weights;
    double cap = 0;
    for (const auto& k : nk.report.kernel_basis) {
        const double a = k.dot(W.cwiseProduct(phi));
        cap += a * a;
    }
    return cap / phi.dot(W.cwiseProduct(phi));
}

}  // namespace wfb
