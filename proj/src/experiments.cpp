#include "opk/experiments.hpp"

#include "opk/error.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <limits>
#include <numbers>
#include <thread>

namespace opk {

namespace {

constexpr double kPi = std::numbers::pi;

struct LineFit {
    double slope = 0.0;
    double intercept = 0.0;
    double slope_se = 0.0;
};

LineFit fit_line(std::span<const double> x, std::span<const double> y) {
    const std::size_t n = x.size();
    if (n < 2) throw NumericalError("line fit needs at least 2 points");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= n;
    my /= n;
    double sxx = 0.0, sxy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        sxx += (x[i] - mx) * (x[i] - mx);
        sxy += (x[i] - mx) * (y[i] - my);
    }
    LineFit f;
    f.slope = sxy / sxx;
    f.intercept = my - f.slope * mx;
    if (n > 2) {
        double rss = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double r = y[i] - f.intercept - f.slope * x[i];
            rss += r * r;
        }
        f.slope_se = std::sqrt(rss / static_cast<double>(n - 2) / sxx);
    }
    return f;
}

ModelParams with_mode(ModelParams p, RateMode mode) {
    p.rate_mode = mode;
    return p;
}

double mode_coefficient(const ModelParams& p, RateMode mode) {
    return diffusion_coefficient(with_mode(p, mode), p.kernel());
}

// Magnitude of the first Fourier mode of bin values on [0,1), skipping NaN bins.
double first_mode(std::span<const double> values) {
    double s = 0.0, c = 0.0;
    std::size_t used = 0;
    const double n = static_cast<double>(values.size());
    for (std::size_t b = 0; b < values.size(); ++b) {
        if (std::isnan(values[b])) continue;
        const double x = (b + 0.5) / n;
        s += values[b] * std::sin(2.0 * kPi * x);
        c += values[b] * std::cos(2.0 * kPi * x);
        ++used;
    }
    if (used == 0) return 0.0;
    return 2.0 * std::hypot(s, c) / static_cast<double>(used);
}

std::vector<double> bin_average(std::span<const double> cells, int bins) {
    const std::size_t per = cells.size() / bins;
    std::vector<double> out(bins, 0.0);
    for (int b = 0; b < bins; ++b) {
        for (std::size_t k = 0; k < per; ++k) out[b] += cells[b * per + k];
        out[b] /= static_cast<double>(per);
    }
    return out;
}

} // namespace

std::string_view to_string(ExperimentKind kind) {
    switch (kind) {
        case ExperimentKind::VarianceVsKappa: return "variance-vs-kappa";
        case ExperimentKind::PhaseScan: return "phase-scan";
        case ExperimentKind::Crossover: return "crossover";
        case ExperimentKind::ParticleVsKinetic: return "particle-vs-kinetic";
        case ExperimentKind::KineticVsMacro: return "kinetic-vs-macro";
        case ExperimentKind::EntropyAudit: return "entropy-audit";
    }
    return "variance-vs-kappa";
}

ExperimentKind parse_experiment_kind(std::string_view text) {
    std::string t(text);
    std::replace(t.begin(), t.end(), '_', '-');
    for (auto k : {ExperimentKind::VarianceVsKappa, ExperimentKind::PhaseScan, ExperimentKind::Crossover,
                   ExperimentKind::ParticleVsKinetic, ExperimentKind::KineticVsMacro, ExperimentKind::EntropyAudit}) {
        if (t == to_string(k)) return k;
    }
    throw ParamError("unknown experiment kind '" + std::string(text) + "'");
}

std::string_view to_string(PhaseClass c) {
    switch (c) {
        case PhaseClass::Equilibrated: return "equilibrated";
        case PhaseClass::Diverging: return "diverging";
        case PhaseClass::Inconclusive: return "inconclusive";
    }
    return "inconclusive";
}

std::vector<RateMode> resolved_modes(const ExperimentSpec& spec) {
    if (!spec.modes.empty()) return spec.modes;
    switch (spec.kind) {
        case ExperimentKind::VarianceVsKappa:
        case ExperimentKind::PhaseScan: return {spec.base.rate_mode};
        default: return {RateMode::Symmetric, RateMode::NonSymmetric};
    }
}

std::vector<double> resolved_sweep(const ExperimentSpec& spec) {
    validate_spec(spec);
    if (!spec.sweep.empty()) return spec.sweep;
    std::vector<double> out;
    switch (spec.kind) {
        case ExperimentKind::VarianceVsKappa:
            for (int k = 1; k <= 9; ++k) out.push_back(0.1 * k);
            break;
        case ExperimentKind::PhaseScan:
            for (int k = 0; k < 10; ++k) out.push_back(0.55 + 0.1 * k);
            break;
        case ExperimentKind::Crossover: out = {0.25, 0.5, 1.0, 2.0, 4.0, 8.0}; break;
        case ExperimentKind::KineticVsMacro: out = {0.2, 0.1, 0.05}; break;
        case ExperimentKind::ParticleVsKinetic:
        case ExperimentKind::EntropyAudit: break;
    }
    return out;
}

void validate_spec(const ExperimentSpec& spec) {
    validate_params(spec.base);
    if (spec.replicas < 1) throw ParamError("replica count must be at least 1");
    if (spec.sweep.size() > 1) {
        const bool up = spec.sweep[1] > spec.sweep[0];
        for (std::size_t i = 1; i < spec.sweep.size(); ++i) {
            if (up ? !(spec.sweep[i] > spec.sweep[i - 1]) : !(spec.sweep[i] < spec.sweep[i - 1]))
                throw ParamError("sweep values must be strictly monotone");
        }
    }
    if (spec.kinetic_cells < 16) throw ParamError("kinetic_cells must be at least 16");
    if (spec.checkpoints < 1) throw ParamError("checkpoints must be at least 1");
    if (spec.bins < 4) throw ParamError("bins must be at least 4");
    if (spec.agents < 2) throw ParamError("agents must be at least 2");
    if (!(spec.consensus_tol > 0.0 && spec.consensus_tol < 1.0)) throw ParamError("consensus_tol must lie in (0, 1)");
}

void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body) {
    if (count == 0) return;
    std::size_t workers = threads > 0 ? static_cast<std::size_t>(threads) : std::thread::hardware_concurrency();
    workers = std::clamp<std::size_t>(workers, 1, count);
    std::vector<std::exception_ptr> errors(count);
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) {
            try {
                body(i);
            } catch (...) {
                errors[i] = std::current_exception();
            }
        }
    } else {
        std::atomic<std::size_t> next{0};
        std::vector<std::jthread> pool;
        for (std::size_t w = 0; w < workers; ++w) {
            pool.emplace_back([&] {
                for (std::size_t i = next++; i < count; i = next++) {
                    try {
                        body(i);
                    } catch (...) {
                        errors[i] = std::current_exception();
                    }
                }
            });
        }
    }
    for (auto& e : errors)
        if (e) std::rethrow_exception(e);
}

double bimodal_density(double phi) {
    return 0.5 * gaussian_density(0.5, -1.2, phi) + 0.5 * gaussian_density(0.5, 1.2, phi);
}

double sample_bimodal(Rng& rng) {
    std::bernoulli_distribution coin(0.5);
    std::normal_distribution<double> normal(0.0, 0.5);
    const double center = coin(rng) ? 1.2 : -1.2;
    return center + normal(rng);
}

// ---------------------------------------------------------------- equilibria

Equilibration equilibrate_kinetic(const ModelParams& p, const ExperimentSpec& spec, double t_max) {
    const auto grid = OpinionGrid::centered(0.0, default_half_width(p), spec.kinetic_cells);
    auto state = KineticState::from_function(grid, bimodal_density);
    const double window = spec.equilibration_window / p.gamma;
    Equilibration out;
    double previous = moments(state).variance;
    std::size_t steps = 0;
    while (state.t < t_max) {
        KineticRunOptions o;
        o.t_end = std::min(t_max, state.t + window);
        o.compute_residual = false;
        auto run = run_to_time(std::move(state), p, o);
        steps += run.steps;
        state = std::move(run.state);
        if (run.saturated) {
            out.run.saturated = true;
            break;
        }
        const double v = moments(state).variance;
        if (std::abs(v - previous) < spec.equilibration_tol * v) {
            out.equilibrated = true;
            break;
        }
        previous = v;
    }
    KineticRunOptions final;
    final.t_end = state.t;
    out.run.trace = run_to_time(state, p, final).trace;
    out.run.state = std::move(state);
    out.run.steps = steps;
    return out;
}

std::vector<VarianceTable> variance_vs_kappa(const ExperimentSpec& spec) {
    const auto sweep = resolved_sweep(spec);
    const auto modes = resolved_modes(spec);
    const double t_max = (spec.t_end_over_gamma > 0.0 ? spec.t_end_over_gamma : 200.0) / spec.base.gamma;
    std::vector<VarianceTable> tables(modes.size());
    std::vector<VarianceRow> rows(modes.size() * sweep.size());
    parallel_for(rows.size(), spec.threads, [&](std::size_t task) {
        const auto mode = modes[task / sweep.size()];
        auto p = with_mode(spec.base, mode);
        p.kappa = sweep[task % sweep.size()] * critical_kappa(p);
        VarianceRow& row = rows[task];
        row.kappa = p.kappa;
        row.sigma2_analytic = equilibrium_sigma2(p);
        const auto eq = equilibrate_kinetic(p, spec, t_max);
        row.sigma2_kinetic = moments(eq.run.state).variance;
        row.rel_err = std::abs(row.sigma2_kinetic - row.sigma2_analytic) / row.sigma2_analytic;
        row.fit_distance = gaussian_fit_distance(eq.run.state);
        row.t_final = eq.run.state.t;
        row.equilibrated = eq.equilibrated && !eq.run.saturated;
    });
    for (std::size_t m = 0; m < modes.size(); ++m) {
        tables[m].mode = modes[m];
        tables[m].rows.assign(rows.begin() + m * sweep.size(), rows.begin() + (m + 1) * sweep.size());
    }
    return tables;
}

// ---------------------------------------------------------------- phase scan

PhaseRow classify_phase(const ModelParams& p, const ExperimentSpec& spec) {
    const double sigma0 = 5.0 * p.zeta;
    const auto grid = OpinionGrid::centered(0.0, 8.0 * sigma0, spec.kinetic_cells);
    auto state = KineticState::from_function(grid, [&](double x) { return gaussian_density(sigma0, 0.0, x); });
    KineticRunOptions o;
    o.t_end = (spec.t_end_over_gamma > 0.0 ? spec.t_end_over_gamma : 20.0) / p.gamma;
    o.trace_every = o.t_end / 60.0;
    o.compute_residual = false;
    const auto run = run_to_time(std::move(state), p, o);

    PhaseRow row;
    row.kappa = p.kappa;
    row.saturated = run.saturated;
    row.final_variance = run.trace.back().variance;
    std::vector<double> t, v;
    const double tail_start = run.trace.back().t * (2.0 / 3.0);
    for (const auto& r : run.trace) {
        if (r.t >= tail_start) {
            t.push_back(r.t);
            v.push_back(r.variance);
        }
    }
    if (t.size() >= 3) {
        const auto fit = fit_line(t, v);
        row.slope = fit.slope;
        row.tstat = fit.slope_se > 0.0 ? fit.slope / fit.slope_se : std::copysign(INFINITY, fit.slope);
        row.tail_growth = (v.back() - v.front()) / v.front();
    }
    constexpr double kMinGrowth = 1e-3;
    if (run.saturated) {
        row.cls = PhaseClass::Diverging;
    } else if (row.slope > 0.0 && row.tail_growth > kMinGrowth) {
        row.cls = row.tstat > spec.divergence_tstat ? PhaseClass::Diverging : PhaseClass::Inconclusive;
    } else {
        row.cls = PhaseClass::Equilibrated;
    }
    return row;
}

bool PhaseScan::brackets() const {
    if (!last_equilibrated || !first_diverging) return false;
    if (!(*last_equilibrated < kappa_crit && kappa_crit < *first_diverging)) return false;
    for (const auto& r : rows) {
        if (r.kappa > *last_equilibrated && r.kappa < *first_diverging) return false;
    }
    return true;
}

std::vector<PhaseScan> phase_scan(const ExperimentSpec& spec) {
    const auto sweep = resolved_sweep(spec);
    const auto modes = resolved_modes(spec);
    std::vector<PhaseRow> rows(modes.size() * sweep.size());
    parallel_for(rows.size(), spec.threads, [&](std::size_t task) {
        auto p = with_mode(spec.base, modes[task / sweep.size()]);
        p.kappa = sweep[task % sweep.size()] * critical_kappa(p);
        rows[task] = classify_phase(p, spec);
    });
    std::vector<PhaseScan> scans(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) {
        auto& s = scans[m];
        s.mode = modes[m];
        s.kappa_crit = critical_kappa(spec.base.zeta, modes[m]);
        s.rows.assign(rows.begin() + m * sweep.size(), rows.begin() + (m + 1) * sweep.size());
        std::vector<const PhaseRow*> sorted;
        for (const auto& r : s.rows) sorted.push_back(&r);
        std::sort(sorted.begin(), sorted.end(), [](auto a, auto b) { return a->kappa < b->kappa; });
        for (const auto* r : sorted) {
            if (r->cls == PhaseClass::Diverging) {
                s.first_diverging = r->kappa;
                break;
            }
            if (r->cls == PhaseClass::Equilibrated) s.last_equilibrated = r->kappa;
        }
    }
    return scans;
}

// ---------------------------------------------------------------- crossover

ConsensusTime single_mode_consensus(const ModelParams& p, RateMode mode, double rho0, int cells, double tol,
                                    double t_end) {
    DensityPreset preset;
    preset.rho0 = rho0;
    const MacroGrid grid{1, cells};
    auto state = MacroState::make(grid, Boundary::Periodic, make_density(preset, grid),
                                  [](double x, double) { return std::sin(2.0 * kPi * x); });
    MacroRunOptions o;
    o.t_end = t_end;
    o.stop_below_fraction = tol;
    o.rho_min = std::min(preset.rho_min, rho0);
    const auto run = run_macro(std::move(state), mode, mode_coefficient(p, mode), o);
    return consensus_time(run.trace, tol);
}

CrossoverResult crossover_experiment(const ExperimentSpec& spec) {
    const auto& p = spec.base;
    if (!(p.kappa < p.zeta * p.zeta)) throw ParamError("crossover needs kappa < zeta^2");
    auto sweep = resolved_sweep(spec);
    CrossoverResult out;
    out.rho_star = crossover_density(p);
    out.rows.resize(sweep.size());
    auto evaluate = [&](double rho0) {
        CrossoverRow row;
        row.rho0 = rho0;
        const auto ts = single_mode_consensus(p, RateMode::Symmetric, rho0, spec.macro_cells, spec.consensus_tol,
                                              spec.macro_t_end);
        const auto ta = single_mode_consensus(p, RateMode::NonSymmetric, rho0, spec.macro_cells,
                                              spec.consensus_tol, spec.macro_t_end);
        row.t_sym = ts.time;
        row.t_asym = ta.time;
        row.censored = ts.censored || ta.censored;
        return row;
    };
    parallel_for(sweep.size(), spec.threads, [&](std::size_t i) { out.rows[i] = evaluate(sweep[i]); });

    std::vector<CrossoverRow> sorted = out.rows;
    std::sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) { return a.rho0 < b.rho0; });
    for (std::size_t i = 1; i < sorted.size(); ++i) {
        const auto& a = sorted[i - 1];
        const auto& b = sorted[i];
        if (a.censored || b.censored) continue;
        const double fa = a.t_sym - a.t_asym;
        const double fb = b.t_sym - b.t_asym;
        if ((fa > 0.0) == (fb > 0.0)) continue;
        double lo = std::log(a.rho0), hi = std::log(b.rho0);
        const bool lo_positive = fa > 0.0;
        while (hi - lo > 1e-5 && out.bisection_steps < 60) {
            const double mid = 0.5 * (lo + hi);
            const auto row = evaluate(std::exp(mid));
            if (row.censored) throw NumericalError("censored consensus time during bisection");
            ++out.bisection_steps;
            ((row.t_sym - row.t_asym > 0.0) == lo_positive ? lo : hi) = mid;
        }
        out.rho_crossing = std::exp(0.5 * (lo + hi));
        break;
    }
    return out;
}

// ---------------------------------------------------------------- particles vs kinetic

std::vector<ParticleComparison> particle_vs_kinetic(const ExperimentSpec& spec) {
    validate_spec(spec);
    const auto modes = resolved_modes(spec);
    const double t_end = (spec.t_end_over_gamma > 0.0 ? spec.t_end_over_gamma : 20.0) / spec.base.gamma;
    const double every = t_end / spec.checkpoints;
    const std::size_t reps = static_cast<std::size_t>(spec.replicas);
    const std::size_t rows = static_cast<std::size_t>(spec.checkpoints) + 1;

    // variance[(mode * 2 + scheme) * reps + replica][checkpoint]
    std::vector<std::vector<double>> variance(modes.size() * 2 * reps);
    std::vector<std::vector<KineticTraceRow>> kinetic(modes.size());
    const std::size_t particle_tasks = variance.size();
    parallel_for(particle_tasks + modes.size(), spec.threads, [&](std::size_t task) {
        if (task >= particle_tasks) {
            const std::size_t m = task - particle_tasks;
            const auto p = with_mode(spec.base, modes[m]);
            const auto grid = OpinionGrid::centered(0.0, default_half_width(p), spec.kinetic_cells);
            KineticRunOptions o;
            o.t_end = t_end;
            o.trace_every = every;
            o.compute_residual = false;
            kinetic[m] = run_to_time(KineticState::from_function(grid, bimodal_density), p, o).trace;
            return;
        }
        const std::size_t m = task / (2 * reps);
        const bool sde = (task / reps) % 2 == 1;
        const auto p = with_mode(spec.base, modes[m]);
        Rng rng = make_stream(spec.seed, task);
        ParticleEnsemble ens;
        ens.seed = derive_seed(spec.seed, task);
        ens.opinions.resize(spec.agents);
        for (auto& x : ens.opinions) x = sample_bimodal(rng);
        SimScheme scheme = spec.scheme;
        scheme.scheme = sde ? Scheme::MeanFieldSDE : Scheme::CollisionMC;
        ParticleRunOptions o;
        o.t_end = t_end;
        o.trace_every = every;
        const auto run = run_particles(std::move(ens), p, scheme, o, rng);
        auto& out = variance[task];
        for (const auto& r : run.trace) out.push_back(r.variance);
    });

    std::vector<ParticleComparison> result(modes.size());
    for (std::size_t m = 0; m < modes.size(); ++m) {
        auto& cmp = result[m];
        cmp.mode = modes[m];
        if (kinetic[m].size() != rows) throw NumericalError("kinetic trace has the wrong number of checkpoints");
        for (std::size_t k = 0; k < rows; ++k) {
            ParticleCheckpoint c;
            c.t = kinetic[m][k].t;
            c.kinetic = kinetic[m][k].variance;
            for (int s = 0; s < 2; ++s) {
                double mean = 0.0, sq = 0.0;
                for (std::size_t r = 0; r < reps; ++r) {
                    const auto& v = variance[(m * 2 + s) * reps + r];
                    if (v.size() != rows) throw NumericalError("particle trace has the wrong number of checkpoints");
                    mean += v[k];
                }
                mean /= static_cast<double>(reps);
                for (std::size_t r = 0; r < reps; ++r) {
                    const double d = variance[(m * 2 + s) * reps + r][k] - mean;
                    sq += d * d;
                }
                const double se = reps > 1 ? std::sqrt(sq / static_cast<double>(reps - 1) / reps) : 0.0;
                const double z = se > 0.0 ? (mean - c.kinetic) / se : (mean == c.kinetic ? 0.0 : INFINITY);
                (s == 0 ? c.mc_mean : c.sde_mean) = mean;
                (s == 0 ? c.mc_se : c.sde_se) = se;
                (s == 0 ? c.mc_z : c.sde_z) = z;
            }
            cmp.max_mc_z = std::max(cmp.max_mc_z, std::abs(c.mc_z));
            cmp.max_sde_z = std::max(cmp.max_sde_z, std::abs(c.sde_z));
            cmp.mc_flags += std::abs(c.mc_z) > 3.0;
            cmp.sde_flags += std::abs(c.sde_z) > 3.0;
            cmp.rows.push_back(c);
        }
    }
    return result;
}

// ---------------------------------------------------------------- spatial limit

LimitResult kinetic_vs_macro(const ExperimentSpec& spec) {
    const auto eps = resolved_sweep(spec);
    const auto modes = resolved_modes(spec);
    if (spec.base.spatial_dim != 1) throw ParamError("spatial particle limit runs in dimension 1");
    const int bins = spec.bins;
    const int refine = 4;
    const int checkpoints = std::max(1, spec.diffusive_checkpoints);
    const double tau_every = spec.diffusive_time / checkpoints;

    LimitResult out;
    out.rows.resize(modes.size() * eps.size());
    std::vector<std::vector<LimitSnapshot>> snaps(out.rows.size());
    parallel_for(out.rows.size(), spec.threads, [&](std::size_t task) {
        const auto mode = modes[task / eps.size()];
        auto p = with_mode(spec.base, mode);
        p.epsilon = eps[task % eps.size()];
        const double sigma2 = equilibrium_sigma2(p);
        Rng rng = make_stream(spec.seed, task);

        ParticleEnsemble ens;
        ens.seed = derive_seed(spec.seed, task);
        const std::vector<double> flat{1.0};
        ens.positions = sample_positions(flat, spec.agents, rng);
        ens.opinions.resize(spec.agents);
        std::normal_distribution<double> normal(0.0, std::sqrt(sigma2));
        for (std::size_t i = 0; i < spec.agents; ++i)
            ens.opinions[i] = std::sin(2.0 * kPi * ens.positions[i]) + normal(rng);

        // Macro problem on the particles' own binned density.
        const auto initial_fields = estimate_fields(ens, bins);
        std::vector<double> rho(static_cast<std::size_t>(bins) * refine);
        for (std::size_t c = 0; c < rho.size(); ++c) rho[c] = std::max(initial_fields.rho[c / refine], 1e-3);
        auto macro = MacroState::make(MacroGrid{1, bins * refine}, Boundary::Periodic, rho,
                                      [](double x, double) { return std::sin(2.0 * kPi * x); });
        const double coefficient = mode_coefficient(p, mode);

        SimScheme scheme = spec.scheme;
        ParticleRunOptions o;
        const double scale = 1.0 / (p.epsilon * p.epsilon);
        o.t_end = spec.diffusive_time * scale;
        o.trace_every = tau_every * scale;
        o.bins = bins;
        const auto run = run_particles(std::move(ens), p, scheme, o, rng);

        LimitRow& row = out.rows[task];
        row.mode = mode;
        row.epsilon = p.epsilon;
        row.steps = run.steps;
        double num = 0.0, den = 0.0;
        std::vector<double> tau, log_particle, log_macro;
        for (std::size_t k = 0; k < run.trace.size(); ++k) {
            const double t_prime = k * tau_every;
            if (k > 0) {
                MacroRunOptions mo;
                mo.t_end = t_prime;
                macro = run_macro(std::move(macro), mode, coefficient, mo).state;
            }
            const auto macro_bins = bin_average(macro.phi, bins);
            const auto& phi_hat = run.trace[k].phi;
            double mean = 0.0;
            for (double v : macro_bins) mean += v;
            mean /= bins;
            for (int b = 0; b < bins; ++b) {
                if (std::isnan(phi_hat[b])) {
                    ++row.empty_bins;
                    continue;
                }
                if (k == 0) continue;
                num += (phi_hat[b] - macro_bins[b]) * (phi_hat[b] - macro_bins[b]);
                den += (macro_bins[b] - mean) * (macro_bins[b] - mean);
            }
            tau.push_back(t_prime);
            log_particle.push_back(std::log(first_mode(phi_hat)));
            log_macro.push_back(std::log(first_mode(macro_bins)));
            snaps[task].push_back({mode, p.epsilon, t_prime, phi_hat, macro_bins});
        }
        row.discrepancy = den > 0.0 ? std::sqrt(num / den) : 0.0;
        row.rate_particle = -fit_line(tau, log_particle).slope;
        row.rate_macro = -fit_line(tau, log_macro).slope;
        row.rate_rel_err = std::abs(row.rate_particle - row.rate_macro) / row.rate_macro;
    });
    for (auto& s : snaps) out.snapshots.insert(out.snapshots.end(), s.begin(), s.end());
    return out;
}

// ---------------------------------------------------------------- entropy audit

double entropy_derivative_error(const MacroState& initial, RateMode mode, double coefficient, double dt, int steps) {
    MacroState s = initial;
    double worst = 0.0;
    double scale = 0.0;
    for (int n = 0; n < steps; ++n) {
        const double e0 = entropy(s, mode);
        const double rhs = dissipation_rhs(s, mode, coefficient);
        s = step_macro(s, mode, coefficient, dt);
        const double e1 = entropy(s, mode);
        worst = std::max(worst, std::abs((e1 - e0) / dt - rhs));
        scale = std::max(scale, std::abs(rhs));
    }
    return scale > 0.0 ? worst / scale : 0.0;
}

std::vector<EntropyRow> entropy_audit(const ExperimentSpec& spec) {
    validate_spec(spec);
    const auto modes = resolved_modes(spec);
    const DensityKind presets[] = {DensityKind::Uniform, DensityKind::Step, DensityKind::GaussBump,
                                   DensityKind::TwoCluster};
    std::vector<EntropyRow> rows(modes.size() * 4);
    parallel_for(rows.size(), spec.threads, [&](std::size_t task) {
        EntropyRow& row = rows[task];
        row.mode = modes[task / 4];
        row.preset = presets[task % 4];
        const double coefficient = mode_coefficient(spec.base, row.mode);
        DensityPreset preset;
        preset.kind = row.preset;

        Rng rng = make_stream(spec.seed, task);
        std::uniform_real_distribution<double> coef(-1.0, 1.0);
        double a[3], b[3];
        for (int k = 0; k < 3; ++k) {
            a[k] = coef(rng);
            b[k] = coef(rng);
        }
        auto phi0 = [&](double x, double) {
            double v = 0.0;
            for (int k = 0; k < 3; ++k) v += (a[k] * std::sin(2.0 * kPi * (k + 1) * x) + b[k] * std::cos(2.0 * kPi * (k + 1) * x)) / (k + 1);
            return v;
        };
        auto make = [&](int cells) {
            const MacroGrid grid{1, cells};
            return MacroState::make(grid, Boundary::Periodic, make_density(preset, grid), phi0);
        };

        const auto s0 = make(spec.macro_cells);
        MacroRunOptions o;
        o.t_end = 0.5;
        o.trace_every = 0.0;
        const auto run = run_macro(s0, row.mode, coefficient, o);
        row.conservation_rel = std::abs(run.trace.back().conserved - run.trace.front().conserved) /
                               conserved_scale(s0, row.mode);
        row.monotone = true;
        for (std::size_t k = 1; k < run.trace.size(); ++k)
            if (run.trace[k].entropy > run.trace[k - 1].entropy) row.monotone = false;

        const double dt = 0.5 * max_stable_macro_dt(s0, row.mode, coefficient);
        const int steps = 50;
        row.deriv_err = entropy_derivative_error(s0, row.mode, coefficient, dt, steps);
        row.deriv_err_half_dt = entropy_derivative_error(s0, row.mode, coefficient, dt / 2, 2 * steps);
        row.deriv_err_refined = entropy_derivative_error(make(2 * spec.macro_cells), row.mode, coefficient, dt / 4,
                                                         4 * steps);
    });
    return rows;
}

// ---------------------------------------------------------------- tables

ExperimentOutput run_experiment(const ExperimentSpec& spec) {
    validate_spec(spec);
    ExperimentOutput out;
    auto& t = out.table;
    auto mode_name = [](RateMode m) { return std::string(to_string(m)); };
    switch (spec.kind) {
        case ExperimentKind::VarianceVsKappa: {
            t.columns = {"mode", "kappa", "sigma2_analytic", "sigma2_kinetic", "rel_err", "fit_distance", "t_final",
                         "equilibrated"};
            double worst = 0.0;
            for (const auto& table : variance_vs_kappa(spec)) {
                for (const auto& r : table.rows) {
                    t.rows.push_back({mode_name(table.mode), r.kappa, r.sigma2_analytic, r.sigma2_kinetic, r.rel_err,
                                      r.fit_distance, r.t_final, r.equilibrated ? 1.0 : 0.0});
                    worst = std::max(worst, r.rel_err);
                    if (!r.equilibrated)
                        out.flags.push_back("not equilibrated: " + mode_name(table.mode) + " kappa=" +
                                            std::to_string(r.kappa));
                }
            }
            out.headline.emplace_back("max_rel_err", worst);
            break;
        }
        case ExperimentKind::PhaseScan: {
            t.columns = {"mode", "kappa", "kappa_crit", "class", "slope", "tstat", "tail_growth", "final_variance",
                         "saturated"};
            for (const auto& scan : phase_scan(spec)) {
                for (const auto& r : scan.rows) {
                    t.rows.push_back({mode_name(scan.mode), r.kappa, scan.kappa_crit, std::string(to_string(r.cls)),
                                      r.slope, r.tstat, r.tail_growth, r.final_variance, r.saturated ? 1.0 : 0.0});
                    if (r.cls == PhaseClass::Inconclusive)
                        out.flags.push_back("inconclusive trend: " + mode_name(scan.mode) + " kappa=" +
                                            std::to_string(r.kappa));
                }
                const auto nan = std::numeric_limits<double>::quiet_NaN();
                out.headline.emplace_back(mode_name(scan.mode) + "_kappa_crit", scan.kappa_crit);
                out.headline.emplace_back(mode_name(scan.mode) + "_last_equilibrated",
                                          scan.last_equilibrated.value_or(nan));
                out.headline.emplace_back(mode_name(scan.mode) + "_first_diverging",
                                          scan.first_diverging.value_or(nan));
                out.headline.emplace_back(mode_name(scan.mode) + "_brackets", scan.brackets() ? 1.0 : 0.0);
            }
            break;
        }
        case ExperimentKind::Crossover: {
            t.columns = {"rho0", "t_sym", "t_asym", "faster", "censored"};
            const auto res = crossover_experiment(spec);
            for (const auto& r : res.rows) {
                t.rows.push_back({r.rho0, r.t_sym, r.t_asym,
                                  std::string(r.t_sym < r.t_asym ? "symmetric" : "nonsymmetric"),
                                  r.censored ? 1.0 : 0.0});
                if (r.censored) out.flags.push_back("censored consensus time at rho0=" + std::to_string(r.rho0));
            }
            out.headline.emplace_back("rho_star", res.rho_star);
            if (res.rho_crossing) {
                out.headline.emplace_back("rho_crossing", *res.rho_crossing);
                out.headline.emplace_back("rel_err", std::abs(*res.rho_crossing - res.rho_star) / res.rho_star);
            } else {
                out.flags.push_back("no crossing inside the sweep");
            }
            break;
        }
        case ExperimentKind::ParticleVsKinetic: {
            t.columns = {"mode", "t", "kinetic", "mc_mean", "mc_se", "mc_z", "sde_mean", "sde_se", "sde_z"};
            for (const auto& cmp : particle_vs_kinetic(spec)) {
                for (const auto& r : cmp.rows)
                    t.rows.push_back({mode_name(cmp.mode), r.t, r.kinetic, r.mc_mean, r.mc_se, r.mc_z, r.sde_mean,
                                      r.sde_se, r.sde_z});
                out.headline.emplace_back(mode_name(cmp.mode) + "_max_mc_z", cmp.max_mc_z);
                out.headline.emplace_back(mode_name(cmp.mode) + "_max_sde_z", cmp.max_sde_z);
                if (cmp.mc_flags)
                    out.flags.push_back(mode_name(cmp.mode) + ": " + std::to_string(cmp.mc_flags) +
                                        " CollisionMC checkpoints with |z| > 3");
                if (cmp.sde_flags)
                    out.flags.push_back(mode_name(cmp.mode) + ": " + std::to_string(cmp.sde_flags) +
                                        " MeanFieldSDE checkpoints with |z| > 3");
            }
            break;
        }
        case ExperimentKind::KineticVsMacro: {
            t.columns = {"mode", "epsilon", "discrepancy", "rate_particle", "rate_macro", "rate_rel_err",
                         "empty_bins"};
            for (const auto& r : kinetic_vs_macro(spec).rows) {
                t.rows.push_back({mode_name(r.mode), r.epsilon, r.discrepancy, r.rate_particle, r.rate_macro,
                                  r.rate_rel_err, static_cast<double>(r.empty_bins)});
                out.headline.emplace_back(mode_name(r.mode) + "_discrepancy_eps_" + std::to_string(r.epsilon),
                                          r.discrepancy);
                if (r.empty_bins)
                    out.flags.push_back("under-populated bins at epsilon=" + std::to_string(r.epsilon));
            }
            break;
        }
        case ExperimentKind::EntropyAudit: {
            t.columns = {"preset", "mode", "conservation_rel", "monotone", "deriv_err", "deriv_err_half_dt",
                         "deriv_err_refined"};
            for (const auto& r : entropy_audit(spec)) {
                t.rows.push_back({std::string(to_string(r.preset)), mode_name(r.mode), r.conservation_rel,
                                  r.monotone ? 1.0 : 0.0, r.deriv_err, r.deriv_err_half_dt, r.deriv_err_refined});
                if (!r.monotone)
                    out.flags.push_back("entropy increased: " + std::string(to_string(r.preset)) + " " +
                                        mode_name(r.mode));
            }
            break;
        }
    }
    return out;
}

} // namespace opk
