#include "wfb/flow.hpp"

#include <Eigen/SparseLU>
#include <algorithm>
#include <cmath>
#include <sstream>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

using Trip = Eigen::Triplet<double>;

// D(g_w, gbar) on padded rows [p_lo, p_hi], as a full x full matrix.
SpMat d_matrix(const Unknowns& U, const GeometryCache& gw, const GeometryCache& gref, int p_lo, int p_hi) {
    const ParamGrid& g = U.g;
    const double h = g.h();
    const Diff D(g);
    std::vector<Trip> t;
    for (int p = p_lo; p <= p_hi; ++p)
        for (int j = 0; j < g.cols(); ++j) {
            const double iss = gw.iss(p, j), isp = gw.isp(p, j), ipp = gw.ipp(p, j);
            const auto& G = gref.christoffel;
            const double cs = -(iss * G[0](p, j) + 2 * isp * G[1](p, j) + ipp * G[2](p, j));
            const double cp = -(iss * G[3](p, j) + 2 * isp * G[4](p, j) + ipp * G[5](p, j));
            const int row = U.full(p, j);
            t.emplace_back(row, U.full(p + 1, j), iss / (h * h) + cs / (2 * h));
            t.emplace_back(row, U.full(p, j), -2 * iss / (h * h));
            t.emplace_back(row, U.full(p - 1, j), iss / (h * h) - cs / (2 * h));
            if (g.axisymmetric) continue;
            for (int m = 0; m < g.cols(); ++m) {
                const double d1 = D.D1()(j, m), d2 = D.D2()(j, m);
                t.emplace_back(row, U.full(p, m), cp * d1 + ipp * d2);
                t.emplace_back(row, U.full(p + 1, m), isp * d1 / h);
                t.emplace_back(row, U.full(p - 1, m), -isp * d1 / h);
            }
        }
    SpMat M(U.n_full, U.n_full);
    M.setFromTriplets(t.begin(), t.end());
    return M;
}

struct GhostMap {
    std::vector<int> node_of_row;  // boundary node index per reduced row, -1 on interior rows
};

GhostMap ghost_map(const Unknowns& U, const std::vector<BoundaryNode>& bnodes) {
    GhostMap gm;
    gm.node_of_row.assign(U.n_red, -1);
    for (int k = 0; k < static_cast<int>(bnodes.size()); ++k) {
        const auto [r1, r2] = boundary_ghost_rows(U, bnodes[k].i, bnodes[k].j);
        gm.node_of_row[r1] = k;
        gm.node_of_row[r2] = k;
    }
    return gm;
}

// Sparse rows of the boundary operators, full x red, one row per boundary node.
void boundary_rows(const Unknowns& U, const ChartEval& ev, const SpMat& DP, SpMat& B1, SpMat& B2) {
    const ParamGrid& g = U.g;
    const double h = g.h();
    const Diff D(g);
    const auto& bn = ev.geom.boundary;
    const int nb = static_cast<int>(bn.size());
    std::vector<Trip> t1, t2;
    for (int k = 0; k < nb; ++k) {
        const int p = g.p(bn[k].i), j = bn[k].j;
        const Eigen::Vector3d& mu = ev.mu[k];
        t1.emplace_back(k, U.full(p + 1, j), mu[0] / (2 * h));
        t1.emplace_back(k, U.full(p - 1, j), -mu[0] / (2 * h));
        if (!g.axisymmetric)
            for (int m = 0; m < g.cols(); ++m) t1.emplace_back(k, U.full(p, m), mu[1] * D.D1()(j, m));
        t2.emplace_back(k, U.full(p + 1, j), bn[k].eta_s / (2 * h));
        t2.emplace_back(k, U.full(p - 1, j), -bn[k].eta_s / (2 * h));
        if (!g.axisymmetric)
            for (int m = 0; m < g.cols(); ++m) t2.emplace_back(k, U.full(p, m), bn[k].eta_p * D.D1()(j, m));
    }
    SpMat S1(nb, U.n_full), S2(nb, U.n_full);
    S1.setFromTriplets(t1.begin(), t1.end());
    S2.setFromTriplets(t2.begin(), t2.end());
    B1 = S1 * U.P;
    B2 = S2 * DP;
}

OperatorAssembly assemble_impl(const GaussChart& chart, const ChartEval& ev, bool interior) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const int p_lo = g.has_pole() ? g.p(0) : 1;
    const SpMat D = d_matrix(U, ev.geom, chart.ref, p_lo, g.rows() - 2);
    const SpMat DP = U.P * (U.R * (D * U.P));  // padded D u, pole ghosts mirrored
    SpMat A;
    if (interior) A = D * DP;
    SpMat B1, B2;
    boundary_rows(U, ev, DP, B1, B2);

    OperatorAssembly out;
    out.grid = g;
    out.row_tags = default_row_tags(U);
    out.method = "frozen-coefficient";
    std::ostringstream id;
    id << std::hex << chart.hash();
    out.chart_id = id.str();
    const GhostMap gm = ghost_map(U, ev.geom.boundary);
    std::vector<Trip> t;
    for (int r = 0; r < U.n_red; ++r) {
        const RowTag tag = out.row_tags[r];
        if (tag == RowTag::Interior) {
            if (!interior) continue;
            for (SpMat::InnerIterator it(A, U.red_to_full[r]); it; ++it) t.emplace_back(r, it.col(), it.value());
        } else {
            const SpMat& B = tag == RowTag::B1 ? B1 : B2;
            for (SpMat::InnerIterator it(B, gm.node_of_row[r]); it; ++it) t.emplace_back(r, it.col(), it.value());
        }
    }
    out.matrix.resize(U.n_red, U.n_red);
    out.matrix.setFromTriplets(t.begin(), t.end());
    out.matrix.prune(0.0);
    return out;
}

FlowState state_from(const GaussChart& chart, const HeightField& w, const ChartEval& ev, double t, long step) {
    FlowState s;
    s.t = t;
    s.step = step;
    s.w = w;
    s.energy = ev.energy;
    s.grad_norm = ev.dE_norm;
    s.b1_norm = ev.B1.size() ? ev.B1.cwiseAbs().maxCoeff() : 0.0;
    s.b2_norm = ev.B2.size() ? ev.B2.cwiseAbs().maxCoeff() : 0.0;
    const Field q = ev.dE * ev.dE * ev.pairing * ev.pairing;
    s.dissipation = 0.5 * integrate(ev.geom, q);
    s.c0_norm = norm_c0(chart, w);
    s.c1_norm = norm_c1(chart, w);
    return s;
}

bool is_chart_exit(const Error& e) {
    return e.code() == "ChartExit" || e.code() == "PairingDegenerate" || e.code() == "OutsideTubularNeighborhood";
}

}  // namespace

const char* termination_name(Termination t) {
    switch (t) {
        case Termination::Converged: return "Converged";
        case Termination::TimeExhausted: return "TimeExhausted";
        case Termination::ChartExit: return "ChartExit";
        case Termination::SolverFailure: return "SolverFailure";
    }
    return "?";
}

FlowState make_state(const GaussChart& chart, const HeightField& w, double t, long step) {
    return state_from(chart, w, evaluate(chart, w), t, step);
}

OperatorAssembly assemble_principal(const GaussChart& chart, const HeightField& w, const ChartEval* ev) {
    if (ev) return assemble_impl(chart, *ev, true);
    const ChartEval own = evaluate(chart, w);
    return assemble_impl(chart, own, true);
}

SpMat principal_factor(const GaussChart& chart, const ChartEval& ev) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const int p_lo = g.has_pole() ? g.p(0) : 1;
    const SpMat D = d_matrix(U, ev.geom, chart.ref, p_lo, g.rows() - 2);
    return U.P * (U.R * (D * U.P));
}

LowerOrder lower_order_rhs(const GaussChart& chart, const HeightField& w, const OperatorAssembly& A, const ChartEval& ev) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const Eigen::VectorXd y = A.matrix * U.pack(w.w);
    LowerOrder lo;
    lo.F0 = g.zeros();
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) {
            const int p = g.p(i);
            lo.F0(p, j) = ev.dE(p, j) - y[U.red(p, j)];
        }
    const int nb = static_cast<int>(ev.geom.boundary.size());
    lo.F1.resize(nb);
    lo.F2.resize(nb);
    for (int k = 0; k < nb; ++k) {
        const auto [r1, r2] = boundary_ghost_rows(U, ev.geom.boundary[k].i, ev.geom.boundary[k].j);
        lo.F1[k] = ev.B1[k] - y[r1];
        lo.F2[k] = ev.B2[k] - y[r2];
    }
    return lo;
}

LowerOrder lower_order_rhs(const GaussChart& chart, const HeightField& w) {
    const ChartEval ev = evaluate(chart, w);
    return lower_order_rhs(chart, w, assemble_impl(chart, ev, true), ev);
}

FlowState step(const GaussChart& chart, const FlowState& state, const FlowConfig& cfg, double dt) {
    const ParamGrid& g = chart.grid;
    const Unknowns U(g);
    const double bc_tol = cfg.bc_tol > 0 ? cfg.bc_tol : chart.tol_constraint;
    const ChartEval ev_n = evaluate(chart, state.w);
    const OperatorAssembly A = assemble_impl(chart, ev_n, true);
    const LowerOrder lo = lower_order_rhs(chart, state.w, A, ev_n);
    const Eigen::VectorXd x_n = U.pack(state.w.w);
    const bool implicit = cfg.scheme == Scheme::SemiImplicit;

    // interior rows are fixed for the whole step
    std::vector<Trip> interior;
    Eigen::VectorXd rhs = Eigen::VectorXd::Zero(U.n_red);
    for (int r = 0; r < U.n_red; ++r) {
        if (A.row_tags[r] != RowTag::Interior) continue;
        const int f = U.red_to_full[r];
        const int p = f / g.cols(), j = f % g.cols();
        interior.emplace_back(r, r, 1.0);
        if (implicit) {
            for (SpMat::InnerIterator it(A.matrix, r); it; ++it) interior.emplace_back(r, it.col(), dt * it.value());
            rhs[r] = x_n[r] - dt * lo.F0(p, j);
        } else {
            rhs[r] = x_n[r] - dt * ev_n.dE(p, j);
        }
    }

    OperatorAssembly Ak = A;
    ChartEval evk = ev_n;
    Eigen::VectorXd xk = x_n;
    double res = 0.0;
    for (int it = 0; it < cfg.picard_max; ++it) {
        // boundary rows: B(w_k) x = B(w_k) w_k - Bres(w_k), i.e. -F(w_k)
        std::vector<Trip> t = interior;
        const Eigen::VectorXd y = Ak.matrix * xk;
        const GhostMap gm = ghost_map(U, evk.geom.boundary);
        for (int r = 0; r < U.n_red; ++r) {
            const RowTag tag = Ak.row_tags[r];
            if (tag == RowTag::Interior) continue;
            for (SpMat::InnerIterator e(Ak.matrix, r); e; ++e) t.emplace_back(r, e.col(), e.value());
            const int k = gm.node_of_row[r];
            rhs[r] = y[r] - (tag == RowTag::B1 ? evk.B1[k] : evk.B2[k]);
        }
        Eigen::SparseMatrix<double> M(U.n_red, U.n_red);
        M.setFromTriplets(t.begin(), t.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu;
        lu.analyzePattern(M);
        lu.factorize(M);
        if (lu.info() != Eigen::Success) throw Error(ErrorFamily::Flow, "LinearSolveFailed", "sparse LU factorization failed");
        xk = lu.solve(rhs);
        if (!xk.allFinite()) throw Error(ErrorFamily::Flow, "NonFiniteState", "time step produced non-finite values");
        const double rel = (M * xk - rhs).norm() / std::max(rhs.norm(), 1e-300);
        if (!(rel < cfg.lin_tol)) {
            std::ostringstream os;
            os << "relative residual " << rel << " of the sparse solve exceeds " << cfg.lin_tol;
            throw Error(ErrorFamily::Flow, "LinearSolveFailed", os.str());
        }
        HeightField wk{U.unpack(xk)};
        evk = evaluate(chart, wk);
        res = evk.B1.cwiseAbs().maxCoeff() + evk.B2.cwiseAbs().maxCoeff();
        if (res < bc_tol) {
            FlowState s = state_from(chart, wk, evk, state.t + dt, state.step + 1);
            s.dt = dt;
            s.picard_iterations = it + 1;
            const Field slope = 0.5 * ev_n.dE * ev_n.pairing * ev_n.pairing;
            s.predicted_change = integrate(ev_n.geom, slope * (wk.w - state.w.w));
            return s;
        }
        Ak = assemble_impl(chart, evk, false);
    }
    std::ostringstream os;
    os << "boundary rows did not settle: residual " << res << " after " << cfg.picard_max << " iterations";
    throw Error(ErrorFamily::Flow, "BoundaryIterationStalled", os.str());
}

FlowTrace run_flow(const GaussChart& chart, const HeightField& w0, const FlowConfig& cfg) {
    if (!(cfg.dt > 0) || !(cfg.grad_tol > 0))
        throw Error(ErrorFamily::Input, "InvalidFlowConfig", "dt and grad_tol must be positive");
    const double bc_tol = cfg.bc_tol > 0 ? cfg.bc_tol : chart.tol_constraint;
    const double dt_ceiling = cfg.dt_max > 0 ? cfg.dt_max : 16 * cfg.dt;
    double dt_max = dt_ceiling;
    FlowTrace tr;
    FlowState s = make_state(chart, w0, 0.0, 0);
    if (s.b1_norm + s.b2_norm > 10 * bc_tol) {
        std::ostringstream os;
        os << "initial boundary residual " << s.b1_norm + s.b2_norm << " exceeds 10 * " << bc_tol
           << "; project the initial data onto the constraint first";
        throw Error(ErrorFamily::Flow, "IncompatibleInitialData", os.str());
    }
    auto record = [&](const FlowState& x) {
        tr.samples.push_back({x.t, x.step, x.dt, x.energy, x.grad_norm, x.b1_norm, x.b2_norm, x.dissipation, x.c0_norm, x.c1_norm});
    };
    auto snap = [&](const FlowState& x) {
        if (cfg.snapshot_interval > 0 && x.step % cfg.snapshot_interval == 0) tr.snapshots.push_back({x.step, x.t, x.w.w});
    };
    s.dt = cfg.dt;
    record(s);
    snap(s);
    double dt = cfg.dt;
    int clean = 0;
    double window_grad = -1;  // |grad| at the start of the current window, -1 until its first step
    const double dt_floor = std::max(cfg.dt_min, 1e-2 * cfg.dt);
    int good_windows = 0;
    double probe_grad = 0, probe_dt = 0;  // pending halved trial step
    bool warned_u1 = false;
    bool last_recorded = true;
    for (;;) {
        if (s.grad_norm < cfg.grad_tol) {
            tr.reason = Termination::Converged;
            break;
        }
        // summed step sizes drift, so a remainder far below dt counts as arrival
        if (cfg.t_end - s.t <= 1e-6 * dt || s.step >= cfg.max_steps) {
            tr.reason = Termination::TimeExhausted;
            break;
        }
        const double left = cfg.t_end - s.t;
        const double dt_try = left < dt * (1 + 1e-6) ? left : dt;
        FlowState next;
        bool ok = false;
        std::string why;
        try {
            next = step(chart, s, cfg, dt_try);
            // an overshooting step lowers W by far less than its slope predicts
            const double slack = cfg.eps_step * (1 + std::abs(s.energy));
            const double drop = next.energy - s.energy;
            ok = !(drop > slack) && !(drop > cfg.armijo * std::min(next.predicted_change, 0.0) + slack);
            if (!ok) {
                std::ostringstream os;
                if (drop > slack)
                    os << "energy rose by " << drop;
                else
                    os << "insufficient decrease " << drop << " against predicted " << next.predicted_change;
                why = os.str();
            }
        } catch (const Error& e) {
            if (is_chart_exit(e)) {
                tr.reason = Termination::ChartExit;
                tr.message = e.what();
                break;
            }
            why = e.what();
        }
        if (!ok) {
            ++tr.rejected_steps;
            clean = 0;
            window_grad = -1;
            probe_grad = 0;
            dt = 0.5 * dt_try;
            std::ostringstream os;
            os << "t=" << s.t << " step " << s.step << ": rejected (" << why << "), dt -> " << dt;
            tr.dt_log.push_back(os.str());
            if (dt < cfg.dt_min) {
                tr.reason = Termination::SolverFailure;
                tr.message = why;
                break;
            }
            continue;
        }
        s = std::move(next);
        ++tr.accepted_steps;
        if (!warned_u1 && chart.a_c1 > 0 && s.c1_norm > chart.a_c1) {
            std::ostringstream os;
            os << "t=" << s.t << ": discrete C1 norm " << s.c1_norm << " exceeds the calibrated bound " << chart.a_c1;
            tr.dt_log.push_back(os.str());
            warned_u1 = true;
        }
        last_recorded = s.step % std::max(1, cfg.monitor_interval) == 0;
        if (last_recorded) record(s);
        snap(s);
        auto log_dt = [&](const std::string& why) {
            std::ostringstream os;
            os << "t=" << s.t << " step " << s.step << ": " << why << "dt -> " << dt;
            tr.dt_log.push_back(os.str());
        };
        if (probe_grad > 0) {
            // Large steps leave a fast-mode residue that pins |grad| at a dt-dependent
            // level. A halved step clears most of it at once; genuine slow decay does not
            // react like that, and is better served by a larger step.
            std::ostringstream os;
            if (s.grad_norm < 0.9 * probe_grad) {
                dt_max = dt;
                os << "step residue, |grad| " << probe_grad << " -> " << s.grad_norm << ", cap ";
            } else {
                dt = std::min(2 * probe_dt, dt_max);
                os << "slow decay at |grad| " << s.grad_norm << ", ";
            }
            log_dt(os.str());
            probe_grad = 0;
            good_windows = 0;
            clean = 0;
            window_grad = -1;
        }
        if (window_grad < 0) {
            // the first step at a new dt jumps, so the window starts after it
            window_grad = s.grad_norm;
            clean = 0;
        } else if (++clean >= cfg.grow_after) {
            const bool stalled = !(s.grad_norm < cfg.stall_ratio * window_grad);
            const double was = dt;
            if (stalled && dt > dt_floor) {
                probe_grad = s.grad_norm;
                probe_dt = dt;
                dt = std::max(0.5 * dt, dt_floor);
                std::ostringstream os;
                os << "stalled at |grad| " << s.grad_norm << ", probe ";
                log_dt(os.str());
            } else if (!stalled) {
                // the cap lifts only after sustained descent under it
                if (dt >= dt_max && dt_max < dt_ceiling && ++good_windows >= 2) {
                    dt_max = std::min(2 * dt_max, dt_ceiling);
                    good_windows = 0;
                }
                if (dt < dt_max) {
                    dt = std::min(2 * dt, dt_max);
                    log_dt("");
                }
            }
            clean = 0;
            window_grad = dt != was ? -1 : s.grad_norm;
        }
    }
    if (!last_recorded) record(s);
    tr.final_state = std::move(s);
    return tr;
}

DissipationReport energy_dissipation_check(const FlowTrace& trace, double skip_fraction) {
    const auto& S = trace.samples;
    if (S.size() < 3) throw Error(ErrorFamily::Flow, "InsufficientSamples", "dissipation check needs at least 3 samples");
    DissipationReport rep;
    std::vector<double> rels;
    const std::size_t first = std::max<std::size_t>(1, static_cast<std::size_t>(skip_fraction * S.size()));
    for (std::size_t k = first; k + 1 < S.size(); ++k) {
        const double t0 = S[k - 1].t, t1 = S[k].t, t2 = S[k + 1].t;
        // derivative at t1 of the quadratic through the three samples
        const double a = t1 - t0, b = t2 - t1;
        const double fd = (-b / (a * (a + b))) * S[k - 1].energy + ((b - a) / (a * b)) * S[k].energy +
                          (a / (b * (a + b))) * S[k + 1].energy;
        const double diss = S[k].dissipation;
        const double dev = std::abs(fd + diss);
        rep.max_abs_deviation = std::max(rep.max_abs_deviation, dev);
        // relative deviations only where the energy change is resolved above roundoff
        const double change = diss * (t2 - t0);
        if (change > 1e4 * 2.2e-16 * (1 + std::abs(S[k].energy))) {
            rels.push_back(dev / diss);
            ++rep.samples_used;
        }
    }
    if (!rels.empty()) {
        rep.max_rel_deviation = *std::max_element(rels.begin(), rels.end());
        std::nth_element(rels.begin(), rels.begin() + rels.size() / 2, rels.end());
        rep.median_rel_deviation = rels[rels.size() / 2];
    }
    return rep;
}

}  // namespace wfb
