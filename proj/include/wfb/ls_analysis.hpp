#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wfb/flow.hpp"
#include "wfb/ls_abstract.hpp"

namespace wfb {

// How the energy gap of a pair is measured. Discrete differences the quadrature
// energy W_h directly. Consistent integrates the first variation built from deltaE,
// whose gradient is the one the pairs report. W_h carries an O(h^2) gradient of its
// own at the discrete equilibrium, which makes its gap linear in |grad| close to it.
enum class GapMeasure { Consistent, Discrete };

// Pairs (|W(t) - E_star|, |grad W|_{L2}) from the last tail_fraction of the samples.
// Consistent: W(t) - E_star = (W(T) - E_star) + int_t^T dissipation.
LSFit fit_theta_along_flow(const FlowTrace& trace, double E_star, double tail_fraction = 0.5, double tau = 0.02,
                           GapMeasure gap = GapMeasure::Consistent);

// int_0^1 dW(w_s)[w1 - w0] ds on the segment w_s = w0 + s (w1 - w0), 4-point Gauss
double consistent_gap(const GaussChart& chart, const HeightField& w0, const HeightField& w1);

// Norm that places a draw in its shell. H2 is (int w^2 + (Delta w)^2)^(1/2) on the
// reference, the scale of the second variation; under C0 the gap of a fixed-size draw
// spreads over decades with its frequency content and skews the envelope slope.
enum class ShellNorm { H2, C0 };

double h2_norm(const GaussChart& chart, const Field& u);

struct PerturbationSampling {
    int samples = 200;
    std::vector<double> shell_edges = {1e-5, 1e-4, 1e-3, 1e-2};  // log-uniform per shell
    ShellNorm norm = ShellNorm::H2;
    int radial_modes = 4;   // s^m cos(k pi s), k = 0..radial_modes-1
    int angular_modes = 2;  // m = 0..angular_modes, ignored on axisymmetric grids
    std::uint64_t seed = 1;
    double tau = 0.02;
    double critical_tol = 1e-6;  // on |deltaE(base)|_{L2}
    double projection_tol = 0.0;
    GapMeasure gap = GapMeasure::Consistent;
    int threads = 1;  // samples are indexed, so results do not depend on this
};

// A random smooth band-limited field with C^0 norm `amplitude` on real rows.
Field band_limited_field(const ParamGrid& g, const PerturbationSampling& cfg, double amplitude, std::uint64_t stream);

// Samples base + perturbation, projected to the constraint, against E_star = W(base).
LSFit fit_theta_by_perturbation(const GaussChart& chart, const PerturbationSampling& cfg);
LSFit fit_theta_by_perturbation(const GaussChart& chart, const HeightField& base, const PerturbationSampling& cfg);

// (|W - W(base)|, |grad W|) along base + a * direction, each projected
std::vector<SamplePair> sample_direction(const GaussChart& chart, const HeightField& base, const Field& direction,
                                         const std::vector<double>& amplitudes, double projection_tol = 0.0,
                                         GapMeasure gap = GapMeasure::Consistent);

struct StabilityRun {
    ParamGrid grid;
    double amplitude = 0;
    HeightField w0;
    FlowTrace trace;
};

struct StabilityPair {
    double amplitude, deficit, distance;
};

struct StabilityReport {
    double gamma = 0, C = 0;
    std::vector<StabilityPair> pairs;  // sorted by deficit
    bool monotone = false;
    int runs_used = 0;
    std::string caveat;
};

// distance <= C deficit^gamma by the upper 0.98 quantile line in log-log.
StabilityReport stability_exponent(const std::vector<StabilityRun>& runs, double E_star, double tau = 0.98);

// Runs the flow from project(bump(amplitude)) for every amplitude.
std::vector<StabilityRun> stability_ladder(const GaussChart& chart, const std::vector<double>& amplitudes,
                                           const FlowConfig& cfg, double bump_radius = 0.6, int threads = 1);

// smooth compactly supported radial bump, amplitude a, centred at the pole
HeightField pole_bump(const ParamGrid& g, double a, double radius);

}  // namespace wfb
