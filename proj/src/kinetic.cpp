#include "opk/kinetic.hpp"

#include "opk/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace opk {

namespace {

// Accumulates out_plain[i] = sum_j w_j f_j G((i-j)h) and, if requested,
// out_first[i] = sum_j w_j f_j (i-j)h G((i-j)h). The j-outer / i-inner order is
// a contiguous axpy, which vectorises without reassociating any sum.
void convolve_nodes(const OpinionGrid& grid, std::span<const double> f, double zeta, double* out_plain,
                    double* out_first) {
    const int n = grid.nodes();
    const double h = grid.spacing();
    std::vector<double> tg(2 * n - 1);
    std::vector<double> tp(out_first ? 2 * n - 1 : 0);
    for (int m = 0; m < 2 * n - 1; ++m) {
        const double u = (m - (n - 1)) * h;
        tg[m] = interaction_kernel(u, zeta);
        if (out_first) tp[m] = u * tg[m];
    }
    if (out_plain) std::fill(out_plain, out_plain + n, 0.0);
    if (out_first) std::fill(out_first, out_first + n, 0.0);
    for (int j = 0; j < n; ++j) {
        const double c = grid.weight(j) * f[j];
        if (c == 0.0) continue;
        const double* a = tg.data() + (n - 1) - j;
        if (out_plain) {
            for (int i = 0; i < n; ++i) out_plain[i] += c * a[i];
        }
        if (out_first) {
            const double* b = tp.data() + (n - 1) - j;
            for (int i = 0; i < n; ++i) out_first[i] += c * b[i];
        }
    }
}

// Interface fluxes of the conservative scheme, J[k] between nodes k and k+1.
std::vector<double> interface_fluxes(const OpinionGrid& grid, std::span<const double> f, std::span<const double> drift,
                                     std::span<const double> diffusion, const ModelParams& p) {
    const int n = grid.nodes();
    const double h = grid.spacing();
    const double half_kappa = 0.5 * p.kappa;
    std::vector<double> flux(n - 1);
    for (int k = 0; k + 1 < n; ++k) {
        const double advective = 0.5 * (drift[k] * f[k] + drift[k + 1] * f[k + 1]);
        const double diffusive = half_kappa * (diffusion[k + 1] * f[k + 1] - diffusion[k] * f[k]) / h;
        flux[k] = p.gamma * (advective + diffusive);
    }
    return flux;
}

std::vector<double> divergence(const OpinionGrid& grid, std::span<const double> flux) {
    const int n = grid.nodes();
    std::vector<double> out(n);
    for (int i = 0; i < n; ++i) {
        const double right = i + 1 < n ? flux[i] : 0.0;
        const double left = i > 0 ? flux[i - 1] : 0.0;
        out[i] = (right - left) / grid.weight(i);
    }
    return out;
}

double trapezoid(const OpinionGrid& grid, std::span<const double> values) {
    double s = 0.0;
    for (int i = 0; i < grid.nodes(); ++i) s += grid.weight(i) * values[i];
    return s;
}

std::vector<double> rhs_from(const KineticState& state, const ConvolvedFields& fields, const ModelParams& p) {
    if (fields.floored_mass > kFlooredMassLimit) {
        throw NumericalError("non-symmetric denominator underflow: floored cells carry mass fraction " +
                             std::to_string(fields.floored_mass));
    }
    const auto flux = interface_fluxes(state.grid, state.f, fields.drift, fields.diffusion, p);
    return divergence(state.grid, flux);
}

std::vector<double> rhs(const KineticState& state, const ModelParams& p) {
    return rhs_from(state, convolved_fields(state, p), p);
}

double stable_dt_from(const ConvolvedFields& fields, double h, const ModelParams& p, double safety) {
    double b_max = 0.0;
    double a_max = 0.0;
    for (std::size_t i = 0; i < fields.diffusion.size(); ++i) {
        b_max = std::max(b_max, std::abs(fields.diffusion[i]));
        a_max = std::max(a_max, std::abs(fields.drift[i]));
    }
    double dt = std::numeric_limits<double>::infinity();
    if (p.kappa > 0.0 && b_max > 0.0) dt = std::min(dt, safety * h * h / (p.gamma * p.kappa * b_max));
    if (a_max > 0.0) dt = std::min(dt, safety * h / (p.gamma * a_max));
    return dt;
}

// Heun step given the first-stage derivative.
KineticState heun(const KineticState& state, const ModelParams& p, double dt, const std::vector<double>& k1) {
    const int n = state.grid.nodes();
    KineticState stage = state;
    for (int i = 0; i < n; ++i) stage.f[i] = state.f[i] + dt * k1[i];
    const auto k2 = rhs(stage, p);

    KineticState next = state;
    for (int i = 0; i < n; ++i) {
        double v = 0.5 * (state.f[i] + stage.f[i] + dt * k2[i]);
        if (v < 0.0) {
            v = 0.0;
            ++next.clipped;
        }
        next.f[i] = v;
    }
    next.t = state.t + dt;
    return next;
}

} // namespace

OpinionGrid::OpinionGrid(double lo, double hi, int cells) : lo_(lo), hi_(hi), cells_(cells) {
    if (cells < 2) throw ParamError("opinion grid needs at least 2 cells");
    if (!(hi > lo)) throw ParamError("opinion grid needs hi > lo");
    dx_ = (hi - lo) / cells;
}

OpinionGrid OpinionGrid::centered(double center, double half_width, int cells) {
    return OpinionGrid(center - half_width, center + half_width, cells);
}

KineticState KineticState::from_function(const OpinionGrid& grid, const std::function<double(double)>& density) {
    KineticState s;
    s.grid = grid;
    s.f.resize(grid.nodes());
    for (int i = 0; i < grid.nodes(); ++i) s.f[i] = density(grid.node(i));
    return s;
}

double default_half_width(const ModelParams& p) {
    double widest = p.zeta;
    for (auto mode : {RateMode::Symmetric, RateMode::NonSymmetric}) {
        if (p.kappa < critical_kappa(p.zeta, mode))
            widest = std::max(widest, std::sqrt(equilibrium_sigma2(p.zeta, p.kappa, mode)));
    }
    return 8.0 * widest;
}

std::vector<double> convolve(const KineticState& state, double zeta, Moment moment) {
    std::vector<double> out(state.grid.nodes());
    if (moment == Moment::Plain)
        convolve_nodes(state.grid, state.f, zeta, out.data(), nullptr);
    else
        convolve_nodes(state.grid, state.f, zeta, nullptr, out.data());
    return out;
}

ConvolvedFields convolved_fields(const KineticState& state, const ModelParams& p) {
    const int n = state.grid.nodes();
    ConvolvedFields c;
    c.g_conv.resize(n);
    c.pg_conv.resize(n);
    convolve_nodes(state.grid, state.f, p.zeta, c.g_conv.data(), c.pg_conv.data());
    if (p.rate_mode == RateMode::Symmetric) {
        c.drift = c.pg_conv;
        c.diffusion = c.g_conv;
        return c;
    }
    c.drift.resize(n);
    c.diffusion.resize(n);
    double floored = 0.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double mass = state.grid.weight(i) * std::abs(state.f[i]);
        total += mass;
        double denom = c.g_conv[i];
        if (!(denom >= kDenominatorFloor)) {
            denom = kDenominatorFloor;
            floored += mass;
        }
        c.drift[i] = c.pg_conv[i] / denom;
        c.diffusion[i] = c.g_conv[i] / denom;
    }
    c.floored_mass = total > 0.0 ? floored / total : 0.0;
    return c;
}

std::vector<double> apply_q(const KineticState& state, const ModelParams& p) { return rhs(state, p); }

GibbsData gibbs_measure(const KineticState& state, const ModelParams& p) {
    if (!(p.kappa > 0.0)) throw NumericalError("Gibbs map undefined for kappa = 0");
    const int n = state.grid.nodes();
    const auto g = convolve(state, p.zeta, Moment::Plain);
    const double power = 2.0 * p.zeta * p.zeta / p.kappa;
    const double z2 = p.zeta * p.zeta;
    GibbsData out;
    out.v_pot.resize(n);
    out.m_gibbs.resize(n);
    std::vector<double> log_weight(n, -std::numeric_limits<double>::infinity());
    double peak = -std::numeric_limits<double>::infinity();
    for (int i = 0; i < n; ++i) {
        if (g[i] > 0.0) {
            const double lg = std::log(g[i]);
            out.v_pot[i] = -z2 * lg;
            log_weight[i] = power * lg;
            peak = std::max(peak, log_weight[i]);
        } else {
            out.v_pot[i] = std::numeric_limits<double>::infinity();
        }
    }
    if (!std::isfinite(peak)) throw NumericalError("Gibbs map undefined: G*f vanishes on the grid");
    for (int i = 0; i < n; ++i) out.m_gibbs[i] = std::exp(log_weight[i] - peak);
    const double z = trapezoid(state.grid, out.m_gibbs);
    for (auto& m : out.m_gibbs) m /= z;
    out.log_z = peak + std::log(z);
    return out;
}

double equilibrium_residual(const KineticState& state, const ModelParams& p) {
    const auto gibbs = gibbs_measure(state, p);
    const int n = state.grid.nodes();
    double residual = 0.0;
    if (p.rate_mode == RateMode::Symmetric) {
        const auto g = convolve(state, p.zeta, Moment::Plain);
        std::vector<double> gf(n);
        for (int i = 0; i < n; ++i) gf[i] = g[i] * state.f[i];
        const double b = trapezoid(state.grid, gf);
        for (int i = 0; i < n; ++i) residual += state.grid.weight(i) * std::abs(gf[i] - b * gibbs.m_gibbs[i]);
    } else {
        const double mass = trapezoid(state.grid, state.f);
        for (int i = 0; i < n; ++i)
            residual += state.grid.weight(i) * std::abs(state.f[i] - mass * gibbs.m_gibbs[i]);
    }
    return residual;
}

std::vector<double> apply_linearized_q(std::span<const double> perturbation, const OpinionGrid& grid, double sigma,
                                       double mu, const ModelParams& p) {
    if (p.rate_mode != RateMode::NonSymmetric)
        throw ParamError("linearised operator is defined for the non-symmetric rate only");
    const int n = grid.nodes();
    if (static_cast<int>(perturbation.size()) != n) throw ParamError("perturbation size does not match grid");
    std::vector<double> base(n);
    for (int i = 0; i < n; ++i) base[i] = gaussian_density(sigma, mu, grid.node(i));

    std::vector<double> g_base(n), pg_base(n), g_pert(n), pg_pert(n);
    convolve_nodes(grid, base, p.zeta, g_base.data(), pg_base.data());
    convolve_nodes(grid, perturbation, p.zeta, g_pert.data(), pg_pert.data());

    // Everything except the diffusion part is a drift-like product at the nodes.
    std::vector<double> lin(n);
    for (int i = 0; i < n; ++i) {
        const double gb = std::max(g_base[i], kDenominatorFloor);
        lin[i] = pg_pert[i] * base[i] / gb + pg_base[i] * perturbation[i] / gb -
                 pg_base[i] * g_pert[i] * base[i] / (gb * gb);
    }
    const double h = grid.spacing();
    std::vector<double> flux(n - 1);
    for (int k = 0; k + 1 < n; ++k) {
        flux[k] = p.gamma * (0.5 * (lin[k] + lin[k + 1]) + 0.5 * p.kappa * (perturbation[k + 1] - perturbation[k]) / h);
    }
    return divergence(grid, flux);
}

double max_stable_dt(const KineticState& state, const ModelParams& p, double safety) {
    return stable_dt_from(convolved_fields(state, p), state.grid.spacing(), p, safety);
}

KineticState step(const KineticState& state, const ModelParams& p, double dt) {
    if (dt < 0.0) throw ParamError("time step must be non-negative");
    if (dt == 0.0) return state;
    const auto fields = convolved_fields(state, p);
    const double limit = stable_dt_from(fields, state.grid.spacing(), p, kCflSafety);
    if (dt > limit * (1.0 + 1e-12))
        throw CflError("kinetic time step " + std::to_string(dt) + " exceeds CFL bound " + std::to_string(limit), limit);
    return heun(state, p, dt, rhs_from(state, fields, p));
}

Moments moments(const KineticState& state) {
    const auto& g = state.grid;
    Moments m;
    double first = 0.0;
    for (int i = 0; i < g.nodes(); ++i) {
        m.mass += g.weight(i) * state.f[i];
        first += g.weight(i) * g.node(i) * state.f[i];
    }
    if (!(m.mass != 0.0)) throw NumericalError("zero mass: mean and variance undefined");
    m.mean = first / m.mass;
    double second = 0.0;
    for (int i = 0; i < g.nodes(); ++i) {
        const double d = g.node(i) - m.mean;
        second += g.weight(i) * d * d * state.f[i];
    }
    m.variance = second / m.mass;
    return m;
}

double gaussian_fit_distance(const KineticState& state) {
    const auto m = moments(state);
    const double sigma = std::sqrt(m.variance);
    double dist = 0.0;
    for (int i = 0; i < state.grid.nodes(); ++i) {
        const double fit = m.mass * gaussian_density(sigma, m.mean, state.grid.node(i));
        dist += state.grid.weight(i) * std::abs(state.f[i] - fit);
    }
    return dist;
}

double boundary_mass_fraction(const KineticState& state) {
    const auto& g = state.grid;
    const int n = g.nodes();
    double edge = 0.0;
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
        const double m = g.weight(i) * std::abs(state.f[i]);
        total += m;
        if (i < 2 || i >= n - 2) edge += m;
    }
    return total > 0.0 ? edge / total : 0.0;
}

KineticRun run_to_time(KineticState state, const ModelParams& p, const KineticRunOptions& options) {
    validate_params(p);
    const double safety = std::min(options.cfl_safety, kCflSafety);
    KineticRun run;

    auto record = [&](const KineticState& s) {
        const auto m = moments(s);
        KineticTraceRow row{s.t, m.mass, m.mean, m.variance, std::numeric_limits<double>::quiet_NaN()};
        if (options.compute_residual && p.kappa > 0.0) row.residual = equilibrium_residual(s, p);
        run.trace.push_back(row);
    };

    const double t0 = state.t;
    const double t_end = options.t_end;
    std::size_t next_index = 1;
    auto next_trace_time = [&]() {
        if (options.trace_every <= 0.0) return t_end;
        return std::min(t_end, t0 + next_index * options.trace_every);
    };

    record(state);
    double target = next_trace_time();
    while (state.t < t_end) {
        const auto fields = convolved_fields(state, p);
        const double dt_cfl = stable_dt_from(fields, state.grid.spacing(), p, safety);
        const double remaining = target - state.t;
        const bool lands = dt_cfl >= remaining;
        state = heun(state, p, lands ? remaining : dt_cfl, rhs_from(state, fields, p));
        if (lands) state.t = target;
        ++run.steps;
        if (boundary_mass_fraction(state) > options.saturation_threshold) {
            run.saturated = true;
            record(state);
            break;
        }
        if (lands) {
            record(state);
            ++next_index;
            target = next_trace_time();
        }
    }
    run.state = std::move(state);
    return run;
}

} // namespace opk
