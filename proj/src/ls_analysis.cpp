#include "wfb/ls_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>
#include <thread>

#include "wfb/errors.hpp"

namespace wfb {

namespace {

constexpr double kEps = std::numeric_limits<double>::epsilon();

Error analysis_error(const std::string& code, const std::string& what) {
    return Error(ErrorFamily::Analysis, code, what);
}

bool all_degenerate(const std::vector<SamplePair>& pairs, double E_star) {
    const double thr = 1e-14 * std::max(1.0, std::abs(E_star));
    return std::all_of(pairs.begin(), pairs.end(), [&](const SamplePair& p) { return p.gap <= thr; });
}

double real_c0(const ParamGrid& g, const Field& u) {
    double m = 0;
    for (int i = 0; i < g.n_s; ++i) m = std::max(m, u.row(g.p(i)).cwiseAbs().maxCoeff());
    return m;
}

// fn(0..n-1) on up to `threads` workers; the lowest failing index is rethrown
template <class Fn>
void parallel_for(int n, int threads, Fn fn) {
    std::vector<std::exception_ptr> err(n);
    auto work = [&](int start, int stride) {
        for (int i = start; i < n; i += stride) try {
                fn(i);
            } catch (...) {
                err[i] = std::current_exception();
            }
    };
    const int t = std::clamp(threads, 1, std::max(1, n));
    if (t == 1) {
        work(0, 1);
    } else {
        std::vector<std::thread> pool;
        for (int k = 0; k < t; ++k) pool.emplace_back(work, k, t);
        for (auto& th : pool) th.join();
    }
    for (auto& e : err)
        if (e) std::rethrow_exception(e);
}

}  // namespace

LSFit fit_theta_along_flow(const FlowTrace& trace, double E_star, double tail_fraction, double tau, GapMeasure gap) {
    const auto& s = trace.samples;
    if (s.empty()) throw analysis_error("DegenerateSamples", "empty trace");
    const std::size_t first = static_cast<std::size_t>(std::floor((1 - tail_fraction) * s.size()));
    // |grad W|_{L2} = sqrt(dissipation / 2)
    std::vector<double> tail(s.size(), 0.0);
    for (std::size_t k = s.size() - 1; k-- > 0;)
        tail[k] = tail[k + 1] + 0.5 * (s[k].dissipation + s[k + 1].dissipation) * (s[k + 1].t - s[k].t);
    const double end_gap = s.back().energy - E_star;
    std::vector<SamplePair> pairs;
    for (std::size_t k = first; k < s.size(); ++k) {
        const double g = gap == GapMeasure::Consistent ? end_gap + tail[k] : s[k].energy - E_star;
        pairs.push_back({std::abs(g), std::sqrt(0.5 * s[k].dissipation)});
    }
    if (all_degenerate(pairs, E_star)) throw analysis_error("DegenerateSamples", "every tail energy lies within 1e-14 of E_star");
    return envelope_fit(pairs, tau, 64 * kEps * std::abs(E_star));
}

double consistent_gap(const GaussChart& chart, const HeightField& w0, const HeightField& w1) {
    static const double node[4] = {-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526};
    static const double weight[4] = {0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538};
    const Field v = w1.w - w0.w;
    EvalOptions eo;
    eo.check_pairing = false;
    double total = 0;
    for (int q = 0; q < 4; ++q) {
        const double s = 0.5 * (1 + node[q]);
        const ChartEval ev = evaluate(chart, HeightField{w0.w + s * v}, eo);
        // dW[v] = int grad W <xi, nu> v d mu, with grad W = deltaE <xi, nu> / 2
        const Field integrand = 0.5 * ev.dE * ev.pairing * ev.pairing * v;
        total += 0.5 * weight[q] * integrate(ev.geom, integrand);
    }
    return total;
}

Field band_limited_field(const ParamGrid& g, const PerturbationSampling& cfg, double amplitude, std::uint64_t stream) {
    std::seed_seq sq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32),
                     static_cast<std::uint32_t>(stream), static_cast<std::uint32_t>(stream >> 32)};
    std::mt19937_64 rng(sq);
    std::normal_distribution<double> nd;
    const int mmax = g.axisymmetric ? 0 : std::min(cfg.angular_modes, g.n_phi / 2 - 1);
    Field u = g.zeros();
    for (int m = 0; m <= mmax; ++m)
        for (int k = 0; k < cfg.radial_modes; ++k) {
            // decaying spectrum keeps the draw smooth
            const double damp = 1.0 / ((1.0 + k) * (1.0 + k) * (1.0 + m) * (1.0 + m));
            const double a = damp * nd(rng), b = m > 0 ? damp * nd(rng) : 0.0;
            for (int p = 0; p < g.rows(); ++p) {
                const double s = g.s(p - ParamGrid::kGhost);
                const double radial = std::pow(std::abs(s), m) * std::cos(k * std::numbers::pi * s);
                for (int j = 0; j < g.cols(); ++j)
                    u(p, j) += radial * (a * std::cos(m * g.phi(j)) + b * std::sin(m * g.phi(j)));
            }
        }
    const double n = real_c0(g, u);
    if (n > 0) u *= amplitude / n;
    return u;
}

double h2_norm(const GaussChart& chart, const Field& u) {
    HeightField h{u};
    complete_height_field(chart.grid, h);
    const Field lap = laplace_beltrami(h.w, chart.ref);
    return std::sqrt(integrate(chart.ref, h.w.cwiseProduct(h.w) + lap.cwiseProduct(lap)));
}

std::vector<SamplePair> sample_direction(const GaussChart& chart, const HeightField& base, const Field& direction,
                                         const std::vector<double>& amplitudes, double projection_tol, GapMeasure gap) {
    const double E0 = evaluate(chart, base).energy;
    std::vector<SamplePair> out;
    for (double a : amplitudes) {
        HeightField w{base.w + a * direction};
        complete_height_field(chart.grid, w);
        w = project_to_constraint(chart, w, projection_tol);
        const ChartEval ev = evaluate(chart, w);
        const double g = gap == GapMeasure::Consistent ? consistent_gap(chart, base, w) : ev.energy - E0;
        out.push_back({std::abs(g), ev.grad_norm});
    }
    return out;
}

LSFit fit_theta_by_perturbation(const GaussChart& chart, const HeightField& base, const PerturbationSampling& cfg) {
    const ChartEval ev0 = evaluate(chart, base);
    if (!(ev0.dE_norm < cfg.critical_tol)) {
        std::ostringstream os;
        os << "|deltaE(base)| = " << ev0.dE_norm << " is not below " << cfg.critical_tol;
        throw analysis_error("NotCritical", os.str());
    }
    if (cfg.shell_edges.size() < 2) throw Error(ErrorFamily::Input, "ValidationError", "shell_edges needs two or more entries");
    const int shells = static_cast<int>(cfg.shell_edges.size()) - 1;
    std::mt19937_64 rng(cfg.seed);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::vector<double> amps(cfg.samples);
    for (int i = 0; i < cfg.samples; ++i) {
        const int sh = i % shells;
        const double lo = std::log(cfg.shell_edges[sh]), hi = std::log(cfg.shell_edges[sh + 1]);
        amps[i] = std::exp(lo + (hi - lo) * uni(rng));
    }
    std::vector<SamplePair> pairs(cfg.samples);
    parallel_for(cfg.samples, cfg.threads, [&](int i) {
        const double amp = amps[i];
        Field v = band_limited_field(chart.grid, cfg, amp, static_cast<std::uint64_t>(i));
        if (cfg.norm == ShellNorm::H2) v *= amp / h2_norm(chart, v);
        HeightField w{base.w + v};
        complete_height_field(chart.grid, w);
        w = project_to_constraint(chart, w, cfg.projection_tol);
        const ChartEval ev = evaluate(chart, w);
        const double g = cfg.gap == GapMeasure::Consistent ? consistent_gap(chart, base, w) : ev.energy - ev0.energy;
        pairs[i] = {std::abs(g), ev.grad_norm};
    });
    if (all_degenerate(pairs, ev0.energy))
        throw analysis_error("DegenerateSamples", "every perturbed energy lies within 1e-14 of the reference");
    return envelope_fit(pairs, cfg.tau, 64 * kEps * std::abs(ev0.energy));
}

LSFit fit_theta_by_perturbation(const GaussChart& chart, const PerturbationSampling& cfg) {
    return fit_theta_by_perturbation(chart, HeightField::zero(chart.grid), cfg);
}

StabilityReport stability_exponent(const std::vector<StabilityRun>& runs, double E_star, double tau) {
    StabilityReport rep;
    rep.caveat =
        "distance is measured between height fields in the shared chart; it bounds the infimum over "
        "reparametrisations from above";
    const double slack = 1e-12 * std::max(1.0, std::abs(E_star));
    for (const auto& r : runs) {
        if (r.trace.reason != Termination::Converged || r.trace.samples.empty()) continue;
        const double deficit = r.trace.samples.front().energy - E_star;
        if (deficit < -slack) {
            std::ostringstream os;
            os << "initial energy lies " << -deficit << " below E_star";
            throw analysis_error("NegativeDeficit", os.str());
        }
        const Field diff = r.w0.w - r.trace.final_state.w.w;
        rep.pairs.push_back({r.amplitude, std::max(deficit, 0.0), norm_ck(r.grid, diff, 4)});
    }
    rep.runs_used = static_cast<int>(rep.pairs.size());
    std::sort(rep.pairs.begin(), rep.pairs.end(), [](const StabilityPair& a, const StabilityPair& b) {
        return a.deficit < b.deficit || (a.deficit == b.deficit && a.amplitude < b.amplitude);
    });
    int distinct = rep.pairs.empty() ? 0 : 1;
    for (std::size_t k = 1; k < rep.pairs.size(); ++k)
        if (rep.pairs[k].deficit > rep.pairs[k - 1].deficit * (1 + 1e-9) + slack) ++distinct;
    if (rep.runs_used < 5 || distinct < 2) {
        std::ostringstream os;
        os << rep.runs_used << " converged runs at " << distinct << " distinct deficits; need 5 runs and 2 amplitudes";
        throw analysis_error("InsufficientRuns", os.str());
    }
    rep.monotone = true;
    for (std::size_t k = 1; k < rep.pairs.size(); ++k)
        rep.monotone = rep.monotone && rep.pairs[k].distance >= rep.pairs[k - 1].distance;
    std::vector<double> x, y;
    for (const auto& p : rep.pairs)
        if (p.deficit > slack && p.distance > 0) {
            x.push_back(std::log(p.deficit));
            y.push_back(std::log(p.distance));
        }
    const QuantileLine line = quantile_line(x, y, tau);
    rep.gamma = line.slope;
    rep.C = std::exp(line.intercept);
    return rep;
}

HeightField pole_bump(const ParamGrid& g, double a, double radius) {
    HeightField w = HeightField::zero(g);
    for (int p = 0; p < g.rows(); ++p) {
        const double t = g.s(p - ParamGrid::kGhost) / radius;
        const double b = std::abs(t) < 1 ? std::exp(1.0 - 1.0 / (1 - t * t)) : 0.0;
        w.w.row(p).setConstant(a * b);
    }
    complete_height_field(g, w);
    return w;
}

std::vector<StabilityRun> stability_ladder(const GaussChart& chart, const std::vector<double>& amplitudes,
                                           const FlowConfig& cfg, double bump_radius, int threads) {
    std::vector<StabilityRun> runs(amplitudes.size());
    parallel_for(static_cast<int>(amplitudes.size()), threads, [&](int k) {
        StabilityRun& r = runs[k];
        r.grid = chart.grid;
        r.amplitude = amplitudes[k];
        r.w0 = project_to_constraint(chart, pole_bump(chart.grid, r.amplitude, bump_radius), 1e-11);
        r.trace = run_flow(chart, r.w0, cfg);
    });
    return runs;
}

}  // namespace wfb
