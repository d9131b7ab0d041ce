#pragma once

// Finite-volume solver for the macroscopic mean-opinion equations on a
// static density rho(alpha):
//
//   Symmetric:      d(rho phi)/dt = C_s div(rho^2 grad phi)
//   Non-symmetric:  d phi/dt      = (C_a / rho^2) div(rho^2 grad phi)
//
// Cells on [0,1)^n (n = 1 or 2), periodic or zero-flux. Fluxes use a face
// value of rho^2 (harmonic mean by default), so the weighted sums
// sum(rho phi) and sum(rho^2 phi) telescope exactly.

#include "opk/model.hpp"

#include <functional>
#include <optional>
#include <span>
#include <vector>

namespace opk {

enum class Boundary { Periodic, ZeroFlux };
enum class FaceAverage { Harmonic, Arithmetic };

std::string_view to_string(Boundary b);
Boundary parse_boundary(std::string_view text);
FaceAverage parse_face_average(std::string_view text);

struct MacroGrid {
    int dim = 1;
    int cells = 128;  ///< per axis

    double spacing() const { return 1.0 / cells; }
    std::size_t size() const { return dim == 1 ? cells : static_cast<std::size_t>(cells) * cells; }
    double cell_volume() const;
    /// Cell centre along one axis.
    double center(int i) const { return (i + 0.5) * spacing(); }
};

enum class DensityKind { Uniform, Step, GaussBump, TwoCluster };

std::string_view to_string(DensityKind k);
DensityKind parse_density_kind(std::string_view text);

struct DensityPreset {
    DensityKind kind = DensityKind::Uniform;
    double rho0 = 1.0;             ///< Uniform level; background for the bump and clusters
    double rho_lo = 0.5;           ///< Step
    double rho_hi = 2.0;           ///< Step: value on [edge_lo, edge_hi)
    double edge_lo = 0.0;
    double edge_hi = 0.5;
    double bump_height = 2.0;      ///< GaussBump / TwoCluster peak above rho0
    double bump_width = 0.1;
    double bump_center = 0.5;
    double cluster_separation = 0.5;
    double rho_min = 1e-3;
};

/// Cell densities along the first axis (constant in the second when dim = 2).
std::vector<double> make_density(const DensityPreset& preset, const MacroGrid& grid);

struct MacroState {
    MacroGrid grid;
    Boundary boundary = Boundary::Periodic;
    std::vector<double> rho;
    std::vector<double> phi;
    double t = 0.0;

    /// phi0 is evaluated at cell centres (second argument is 0 in 1D).
    static MacroState make(const MacroGrid& grid, Boundary boundary, std::vector<double> rho,
                           const std::function<double(double, double)>& phi0);
};

/// The diffusion coefficient of the matching mode: C_s or C_a.
double macro_coefficient(const AnalyticSummary& c);

/// Largest stable step: safety * dx^2 / max_i (C sum_faces rho_f^2 / w_i), w = rho or rho^2.
double max_stable_macro_dt(const MacroState& state, RateMode mode, double coefficient,
                           FaceAverage face = FaceAverage::Harmonic, double safety = 0.4);

/// One Heun (RK2) step. Throws CflError above the stable step and ParamError
/// when rho falls below the floor in non-symmetric mode.
MacroState step_macro(const MacroState& state, RateMode mode, double coefficient, double dt,
                      FaceAverage face = FaceAverage::Harmonic, double rho_min = 1e-3);
MacroState step_macro(const MacroState& state, const ModelParams& p, const AnalyticSummary& c, double dt);

/// sum(rho phi) dV (symmetric) or sum(rho^2 phi) dV (non-symmetric).
double conserved_quantity(const MacroState& state, RateMode mode);
/// Scale used to normalise conservation errors: sum |w phi| dV.
double conserved_scale(const MacroState& state, RateMode mode);
/// sum(rho phi^2) dV or sum(rho^2 phi^2) dV.
double entropy(const MacroState& state, RateMode mode);
/// Exact time derivative of the semi-discrete entropy: -2 C sum_faces rho_f^2 |grad phi|^2 dV.
double dissipation_rhs(const MacroState& state, RateMode mode, double coefficient,
                       FaceAverage face = FaceAverage::Harmonic);
/// max |phi - weighted mean|, weights rho (symmetric) or rho^2.
double amplitude(const MacroState& state, RateMode mode);

/// Opinion flux C rho_f^2 (phi_{i+1} - phi_i) / dx through the face right of cell i (1D).
double face_flux(const MacroState& state, double coefficient, int cell, FaceAverage face = FaceAverage::Harmonic);

/// First alpha in [from, to) where phi crosses `level` along the first axis (1D), by linear interpolation.
std::optional<double> front_position(const MacroState& state, double level, double from = 0.0, double to = 1.0);

struct MacroTraceRow {
    double t = 0.0;
    double conserved = 0.0;
    double entropy = 0.0;
    double dissipation_rhs = 0.0;
    double amplitude = 0.0;
};

struct ConsensusTime {
    double time = 0.0;
    bool censored = false;
};

/// First t with amplitude <= tol_fraction * initial amplitude (linear interpolation).
ConsensusTime consensus_time(std::span<const MacroTraceRow> trace, double tol_fraction);

struct MacroRunOptions {
    double t_end = 0.0;
    double trace_every = 0.0;      ///< <= 0 records every step
    double dt = 0.0;               ///< <= 0 uses the CFL bound
    double cfl_safety = 0.4;
    FaceAverage face = FaceAverage::Harmonic;
    double rho_min = 1e-3;
    double stop_below_fraction = 0.0;  ///< > 0 stops once amplitude drops below this fraction
};

struct MacroRun {
    MacroState state;
    std::vector<MacroTraceRow> trace;
    std::size_t steps = 0;
};

MacroRun run_macro(MacroState state, RateMode mode, double coefficient, const MacroRunOptions& options);

} // namespace opk
