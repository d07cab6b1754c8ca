#pragma once

#include <string>
#include <vector>

#include "wfb/gauss_chart.hpp"
#include "wfb/operator.hpp"

namespace wfb {

enum class Scheme { SemiImplicit, Explicit };

struct FlowConfig {
    double dt = 1e-4;
    double t_end = 1.0;
    Scheme scheme = Scheme::SemiImplicit;
    double grad_tol = 1e-6;  // on |deltaE|_{L2(d mu)}
    int monitor_interval = 1;
    int snapshot_interval = 0;  // 0 disables in-memory snapshots
    double dt_max = 0.0;        // <= 0 selects 16 dt
    double dt_min = 1e-14;
    long max_steps = 10000000;
    double eps_step = 1e-8;  // allowed energy increase, relative to 1 + |W|
    int grow_after = 20;     // clean steps per dt decision window
    double stall_ratio = 0.95;  // grad reduced by less than this over a window halves dt instead of growing it
    double armijo = 0.1;     // accept only W drops of at least this fraction of the first-order prediction
    int picard_max = 30;     // boundary-row fixed point per step
    double bc_tol = 0.0;     // <= 0 selects the chart's tol_constraint
    double lin_tol = 1e-9;   // relative residual accepted from the sparse solve
};

struct FlowState {
    double t = 0;
    long step = 0;
    double dt = 0;
    HeightField w;
    double energy = 0, grad_norm = 0, b1_norm = 0, b2_norm = 0;
    double dissipation = 0;  // 1/2 int deltaE^2 <xi,nu>^2 d mu
    double c0_norm = 0, c1_norm = 0;
    int picard_iterations = 0;
    double predicted_change = 0;  // dW(w_prev)[w - w_prev], set by step()
};

struct FlowSample {
    double t;
    long step;
    double dt, energy, grad_norm, b1_norm, b2_norm, dissipation, c0_norm, c1_norm;
};

struct Snapshot {
    long step;
    double t;
    Field w;
};

enum class Termination { Converged, TimeExhausted, ChartExit, SolverFailure };
const char* termination_name(Termination t);

struct FlowTrace {
    std::vector<FlowSample> samples;
    std::vector<Snapshot> snapshots;
    Termination reason = Termination::TimeExhausted;
    std::string message;
    FlowState final_state;
    std::vector<std::string> dt_log;
    long rejected_steps = 0;
    long accepted_steps = 0;
};

// A state's diagnostics from one chart evaluation.
FlowState make_state(const GaussChart& chart, const HeightField& w, double t = 0.0, long step = 0);

// Interior rows: A(w) = D(w)^2 with D(w) u = g_w^{ij}(d_ij u - Gbar^k_ij d_k u).
// Ghost rows: B1(w) = d_{mu^(1)} and B2(w) = d_{eta_w} D(w).
OperatorAssembly assemble_principal(const GaussChart& chart, const HeightField& w, const ChartEval* ev = nullptr);

// D(w) on padded rows as a (full x reduced) matrix, pole ghost rows mirrored;
// A(w) is D applied to this.
SpMat principal_factor(const GaussChart& chart, const ChartEval& ev);

struct LowerOrder {
    Field F0;               // real rows
    Eigen::VectorXd F1, F2;  // per boundary node
};
LowerOrder lower_order_rhs(const GaussChart& chart, const HeightField& w, const OperatorAssembly& A, const ChartEval& ev);
LowerOrder lower_order_rhs(const GaussChart& chart, const HeightField& w);

// One time step of size dt from `state`.
FlowState step(const GaussChart& chart, const FlowState& state, const FlowConfig& cfg, double dt);

FlowTrace run_flow(const GaussChart& chart, const HeightField& w0, const FlowConfig& cfg);

struct DissipationReport {
    int samples_used = 0;
    double max_rel_deviation = 0;
    double max_abs_deviation = 0;
    double median_rel_deviation = 0;
};

// Compares (E_{k+1} - E_{k-1}) / (t_{k+1} - t_{k-1}) with minus the dissipation at
// sample k, skipping the first `skip_fraction` of the trace.
DissipationReport energy_dissipation_check(const FlowTrace& trace, double skip_fraction = 0.2);

}  // namespace wfb
