#include "opk/macro.hpp"

#include "opk/error.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace opk {

namespace {

double face_weight(double a, double b, FaceAverage face) {
    const double a2 = a * a;
    const double b2 = b * b;
    if (face == FaceAverage::Arithmetic) return 0.5 * (a2 + b2);
    const double s = a2 + b2;
    return s > 0.0 ? 2.0 * a2 * b2 / s : 0.0;
}

// Face right of (or above) each cell along each axis; zero on closed boundaries.
struct Faces {
    int dim = 1;
    int cells = 0;
    std::vector<double> w[2];
};

std::size_t neighbour(const MacroGrid& g, std::size_t c, int axis) {
    const int n = g.cells;
    if (axis == 0) {
        const int i = static_cast<int>(c % n);
        return c - i + (i + 1) % n;
    }
    const std::size_t j = c / n;
    return (c % n) + ((j + 1) % n) * n;
}

bool on_last_face(const MacroGrid& g, std::size_t c, int axis) {
    const int n = g.cells;
    if (axis == 0) return static_cast<int>(c % n) == n - 1;
    return static_cast<int>(c / n) == n - 1;
}

Faces build_faces(const MacroState& s, FaceAverage face) {
    Faces f;
    f.dim = s.grid.dim;
    f.cells = s.grid.cells;
    const std::size_t size = s.grid.size();
    for (int axis = 0; axis < s.grid.dim; ++axis) {
        f.w[axis].resize(size);
        for (std::size_t c = 0; c < size; ++c) {
            if (s.boundary == Boundary::ZeroFlux && on_last_face(s.grid, c, axis)) {
                f.w[axis][c] = 0.0;
                continue;
            }
            f.w[axis][c] = face_weight(s.rho[c], s.rho[neighbour(s.grid, c, axis)], face);
        }
    }
    return f;
}

// Weighted divergence: dphi/dt per cell.
void rhs(const MacroState& s, const Faces& faces, std::span<const double> phi, RateMode mode, double coefficient,
         std::vector<double>& out) {
    const std::size_t size = s.grid.size();
    const double scale = coefficient / (s.grid.spacing() * s.grid.spacing());
    out.assign(size, 0.0);
    for (int axis = 0; axis < s.grid.dim; ++axis) {
        const auto& w = faces.w[axis];
        for (std::size_t c = 0; c < size; ++c) {
            if (w[c] == 0.0) continue;
            const std::size_t nb = neighbour(s.grid, c, axis);
            const double flux = scale * w[c] * (phi[nb] - phi[c]);
            out[c] += flux;
            out[nb] -= flux;
        }
    }
    for (std::size_t c = 0; c < size; ++c) {
        const double r = s.rho[c];
        out[c] /= mode == RateMode::Symmetric ? r : r * r;
    }
}

double weight(double rho, RateMode mode) { return mode == RateMode::Symmetric ? rho : rho * rho; }

void check_state(const MacroState& s, RateMode mode, double rho_min) {
    if (s.rho.size() != s.grid.size() || s.phi.size() != s.grid.size())
        throw ParamError("macro state fields do not match the grid");
    for (std::size_t c = 0; c < s.rho.size(); ++c) {
        if (!(s.rho[c] > 0.0)) throw ParamError("macro density must be positive");
        if (mode == RateMode::NonSymmetric && s.rho[c] < rho_min)
            throw ParamError("macro density below rho_min in non-symmetric mode");
    }
}

} // namespace

std::string_view to_string(Boundary b) { return b == Boundary::Periodic ? "periodic" : "zeroflux"; }

Boundary parse_boundary(std::string_view text) {
    if (text == "periodic") return Boundary::Periodic;
    if (text == "zeroflux" || text == "zero-flux" || text == "neumann") return Boundary::ZeroFlux;
    throw ParamError("unknown boundary '" + std::string(text) + "'");
}

FaceAverage parse_face_average(std::string_view text) {
    if (text == "harmonic") return FaceAverage::Harmonic;
    if (text == "arithmetic") return FaceAverage::Arithmetic;
    throw ParamError("unknown face average '" + std::string(text) + "'");
}

std::string_view to_string(DensityKind k) {
    switch (k) {
        case DensityKind::Uniform: return "uniform";
        case DensityKind::Step: return "step";
        case DensityKind::GaussBump: return "gaussbump";
        case DensityKind::TwoCluster: return "twocluster";
    }
    return "uniform";
}

DensityKind parse_density_kind(std::string_view text) {
    if (text == "uniform") return DensityKind::Uniform;
    if (text == "step") return DensityKind::Step;
    if (text == "gaussbump" || text == "bump") return DensityKind::GaussBump;
    if (text == "twocluster") return DensityKind::TwoCluster;
    throw ParamError("unknown density preset '" + std::string(text) + "'");
}

double MacroGrid::cell_volume() const {
    const double h = spacing();
    return dim == 1 ? h : h * h;
}

std::vector<double> make_density(const DensityPreset& d, const MacroGrid& grid) {
    if (grid.dim != 1 && grid.dim != 2) throw ParamError("macro grid dimension must be 1 or 2");
    if (grid.cells < 2) throw ParamError("macro grid needs at least 2 cells");
    auto bump = [&](double x, double center) {
        double r = x - center;
        r -= std::round(r);
        return d.bump_height * std::exp(-0.5 * r * r / (d.bump_width * d.bump_width));
    };
    std::vector<double> line(grid.cells);
    for (int i = 0; i < grid.cells; ++i) {
        const double x = grid.center(i);
        switch (d.kind) {
            case DensityKind::Uniform: line[i] = d.rho0; break;
            case DensityKind::Step: line[i] = (x >= d.edge_lo && x < d.edge_hi) ? d.rho_hi : d.rho_lo; break;
            case DensityKind::GaussBump: line[i] = d.rho0 + bump(x, d.bump_center); break;
            case DensityKind::TwoCluster:
                line[i] = d.rho0 + bump(x, d.bump_center - 0.5 * d.cluster_separation) +
                          bump(x, d.bump_center + 0.5 * d.cluster_separation);
                break;
        }
        if (!(line[i] >= d.rho_min)) throw ParamError("density preset falls below rho_min");
    }
    std::vector<double> rho(grid.size());
    for (std::size_t c = 0; c < rho.size(); ++c) rho[c] = line[c % grid.cells];
    return rho;
}

MacroState MacroState::make(const MacroGrid& grid, Boundary boundary, std::vector<double> rho,
                            const std::function<double(double, double)>& phi0) {
    MacroState s;
    s.grid = grid;
    s.boundary = boundary;
    s.rho = std::move(rho);
    if (s.rho.size() != grid.size()) throw ParamError("density does not match the macro grid");
    s.phi.resize(grid.size());
    for (std::size_t c = 0; c < s.phi.size(); ++c) {
        const double x = grid.center(static_cast<int>(c % grid.cells));
        const double y = grid.dim == 2 ? grid.center(static_cast<int>(c / grid.cells)) : 0.0;
        s.phi[c] = phi0(x, y);
    }
    return s;
}

double macro_coefficient(const AnalyticSummary& c) { return c.c_diff; }

double max_stable_macro_dt(const MacroState& state, RateMode mode, double coefficient, FaceAverage face,
                           double safety) {
    const auto faces = build_faces(state, face);
    const std::size_t size = state.grid.size();
    std::vector<double> load(size, 0.0);
    for (int axis = 0; axis < state.grid.dim; ++axis) {
        for (std::size_t c = 0; c < size; ++c) {
            load[c] += faces.w[axis][c];
            load[neighbour(state.grid, c, axis)] += faces.w[axis][c];
        }
    }
    double worst = 0.0;
    for (std::size_t c = 0; c < size; ++c) worst = std::max(worst, coefficient * load[c] / weight(state.rho[c], mode));
    const double h = state.grid.spacing();
    return worst > 0.0 ? safety * h * h / worst : std::numeric_limits<double>::infinity();
}

MacroState step_macro(const MacroState& state, RateMode mode, double coefficient, double dt, FaceAverage face,
                      double rho_min) {
    check_state(state, mode, rho_min);
    if (dt < 0.0) throw ParamError("macro dt must be non-negative");
    const double limit = max_stable_macro_dt(state, mode, coefficient, face);
    if (dt > limit * (1.0 + 1e-12))
        throw CflError("macro step dt=" + std::to_string(dt) + " exceeds the stable bound " + std::to_string(limit),
                       limit);
    const auto faces = build_faces(state, face);
    std::vector<double> k1, k2;
    rhs(state, faces, state.phi, mode, coefficient, k1);
    std::vector<double> mid(state.phi.size());
    for (std::size_t c = 0; c < mid.size(); ++c) mid[c] = state.phi[c] + dt * k1[c];
    rhs(state, faces, mid, mode, coefficient, k2);
    MacroState next = state;
    for (std::size_t c = 0; c < mid.size(); ++c) next.phi[c] = state.phi[c] + 0.5 * dt * (k1[c] + k2[c]);
    next.t = state.t + dt;
    return next;
}

MacroState step_macro(const MacroState& state, const ModelParams& p, const AnalyticSummary& c, double dt) {
    return step_macro(state, p.rate_mode, macro_coefficient(c), dt);
}

double conserved_quantity(const MacroState& s, RateMode mode) {
    double sum = 0.0;
    for (std::size_t c = 0; c < s.phi.size(); ++c) sum += weight(s.rho[c], mode) * s.phi[c];
    return sum * s.grid.cell_volume();
}

double conserved_scale(const MacroState& s, RateMode mode) {
    double sum = 0.0;
    for (std::size_t c = 0; c < s.phi.size(); ++c) sum += std::abs(weight(s.rho[c], mode) * s.phi[c]);
    return sum * s.grid.cell_volume();
}

double entropy(const MacroState& s, RateMode mode) {
    double sum = 0.0;
    for (std::size_t c = 0; c < s.phi.size(); ++c) sum += weight(s.rho[c], mode) * s.phi[c] * s.phi[c];
    return sum * s.grid.cell_volume();
}

double dissipation_rhs(const MacroState& s, RateMode, double coefficient, FaceAverage face) {
    const auto faces = build_faces(s, face);
    const double h = s.grid.spacing();
    double sum = 0.0;
    for (int axis = 0; axis < s.grid.dim; ++axis) {
        for (std::size_t c = 0; c < s.phi.size(); ++c) {
            if (faces.w[axis][c] == 0.0) continue;
            const double g = (s.phi[neighbour(s.grid, c, axis)] - s.phi[c]) / h;
            sum += faces.w[axis][c] * g * g;
        }
    }
    return -2.0 * coefficient * sum * s.grid.cell_volume();
}

double amplitude(const MacroState& s, RateMode mode) {
    double wsum = 0.0;
    double wphi = 0.0;
    for (std::size_t c = 0; c < s.phi.size(); ++c) {
        const double w = weight(s.rho[c], mode);
        wsum += w;
        wphi += w * s.phi[c];
    }
    const double mean = wphi / wsum;
    double amp = 0.0;
    for (double v : s.phi) amp = std::max(amp, std::abs(v - mean));
    return amp;
}

double face_flux(const MacroState& s, double coefficient, int cell, FaceAverage face) {
    if (cell < 0 || cell >= s.grid.cells) throw ParamError("face index out of range");
    const std::size_t c = static_cast<std::size_t>(cell);
    if (s.boundary == Boundary::ZeroFlux && on_last_face(s.grid, c, 0)) return 0.0;
    const std::size_t nb = neighbour(s.grid, c, 0);
    return coefficient * face_weight(s.rho[c], s.rho[nb], face) * (s.phi[nb] - s.phi[c]) / s.grid.spacing();
}

std::optional<double> front_position(const MacroState& s, double level, double from, double to) {
    const int n = s.grid.cells;
    for (int i = 0; i + 1 < n; ++i) {
        const double x0 = s.grid.center(i);
        const double x1 = s.grid.center(i + 1);
        if (x0 < from || x1 >= to) continue;
        const double a = s.phi[i] - level;
        const double b = s.phi[i + 1] - level;
        if (a == 0.0) return x0;
        if ((a < 0.0) != (b < 0.0) && b != 0.0) return x0 + (x1 - x0) * a / (a - b);
    }
    return std::nullopt;
}

ConsensusTime consensus_time(std::span<const MacroTraceRow> trace, double tol_fraction) {
    if (trace.empty()) throw ParamError("consensus time needs a non-empty trace");
    if (!(tol_fraction > 0.0 && tol_fraction < 1.0)) throw ParamError("tol_fraction must lie in (0, 1)");
    const double a0 = trace.front().amplitude;
    if (a0 == 0.0) return {trace.front().t, false};
    const double target = tol_fraction * a0;
    for (std::size_t k = 1; k < trace.size(); ++k) {
        if (trace[k].amplitude <= target) {
            const auto& lo = trace[k - 1];
            const auto& hi = trace[k];
            const double span = lo.amplitude - hi.amplitude;
            const double frac = span > 0.0 ? (lo.amplitude - target) / span : 1.0;
            return {lo.t + frac * (hi.t - lo.t), false};
        }
    }
    return {trace.back().t, true};
}

MacroRun run_macro(MacroState state, RateMode mode, double coefficient, const MacroRunOptions& options) {
    check_state(state, mode, options.rho_min);
    if (!(coefficient >= 0.0)) throw ParamError("macro coefficient must be non-negative");
    MacroRun run;
    const double base_dt =
        options.dt > 0.0 ? options.dt
                         : max_stable_macro_dt(state, mode, coefficient, options.face, options.cfl_safety);
    auto record = [&](const MacroState& s) {
        MacroTraceRow row;
        row.t = s.t;
        row.conserved = conserved_quantity(s, mode);
        row.entropy = entropy(s, mode);
        row.dissipation_rhs = dissipation_rhs(s, mode, coefficient, options.face);
        row.amplitude = amplitude(s, mode);
        run.trace.push_back(row);
        return row.amplitude;
    };

    const double a0 = record(state);
    const double t0 = state.t;
    std::size_t next_index = 1;
    auto next_trace = [&]() {
        if (options.trace_every <= 0.0) return options.t_end;
        return std::min(options.t_end, t0 + next_index * options.trace_every);
    };
    double target = next_trace();
    while (state.t < options.t_end) {
        const double remaining = target - state.t;
        const bool lands = remaining <= base_dt;
        const double dt = lands ? remaining : base_dt;
        state = step_macro(state, mode, coefficient, dt, options.face, options.rho_min);
        if (lands) state.t = target;
        ++run.steps;
        const bool every = options.trace_every <= 0.0;
        if (lands || every) {
            const double amp = record(state);
            if (lands) {
                ++next_index;
                target = next_trace();
            }
            if (options.stop_below_fraction > 0.0 && amp <= options.stop_below_fraction * a0) break;
        }
    }
    run.state = std::move(state);
    return run;
}

} // namespace opk
