#pragma once

// Spatially homogeneous grazing-limit Fokker-Planck solver.
//
//   df/dt = Q(f),  Q(f) = gamma d/dphi { A_f f + (kappa/2) d/dphi (B_f f) }
//
// Symmetric rate:      A_f = (phi G) * f,              B_f = G * f
// Non-symmetric rate:  A_f = ((phi G) * f) / (G * f),  B_f = 1
//
// The opinion axis is discretised with M cells (M + 1 nodes, trapezoid
// weights). Q is applied in conservative flux form with zero-flux boundaries,
// so the trapezoid mass is invariant up to rounding.

#include "opk/model.hpp"

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace opk {

class OpinionGrid {
public:
    OpinionGrid() = default;
    OpinionGrid(double lo, double hi, int cells);

    /// Grid on [center - half_width, center + half_width].
    static OpinionGrid centered(double center, double half_width, int cells);

    double lo() const { return lo_; }
    double hi() const { return hi_; }
    int cells() const { return cells_; }
    int nodes() const { return cells_ + 1; }
    double spacing() const { return dx_; }
    double node(int i) const { return lo_ + i * dx_; }
    /// Trapezoid weight of node i.
    double weight(int i) const { return (i == 0 || i == cells_) ? 0.5 * dx_ : dx_; }

private:
    double lo_ = 0.0;
    double hi_ = 1.0;
    int cells_ = 1;
    double dx_ = 1.0;
};

struct KineticState {
    OpinionGrid grid;
    std::vector<double> f;     ///< density per node
    double t = 0.0;
    std::size_t clipped = 0;   ///< negative values clipped to zero so far

    static KineticState from_function(const OpinionGrid& grid, const std::function<double(double)>& density);
};

/// Half-width 8 * max(sigma_s, sigma_a, zeta) over the equilibria that exist for `p`.
double default_half_width(const ModelParams& p);

/// Default number of cells.
inline constexpr int kDefaultCells = 512;

enum class Moment { Plain, FirstMoment };

/// Node values of (G * f) or ((phi G) * f) by direct trapezoid summation.
std::vector<double> convolve(const KineticState& state, double zeta, Moment moment);

struct ConvolvedFields {
    std::vector<double> g_conv;
    std::vector<double> pg_conv;
    std::vector<double> drift;       ///< A_f
    std::vector<double> diffusion;   ///< B_f
    double floored_mass = 0.0;       ///< mass fraction in cells where G*f hit the floor
};

/// Denominator floor used in non-symmetric mode.
inline constexpr double kDenominatorFloor = 1e-300;
/// Floored cells may carry at most this fraction of the mass.
inline constexpr double kFlooredMassLimit = 1e-6;

ConvolvedFields convolved_fields(const KineticState& state, const ModelParams& p);

/// Q(f) per node. Throws NumericalError if floored denominators carry mass.
std::vector<double> apply_q(const KineticState& state, const ModelParams& p);

struct GibbsData {
    std::vector<double> v_pot;    ///< potential, up to an additive constant
    std::vector<double> m_gibbs;  ///< normalised Gibbs density
    double log_z = 0.0;           ///< log of the partition constant
};

/// M_f proportional to (G * f)^{2 zeta^2 / kappa}, evaluated in log space.
GibbsData gibbs_measure(const KineticState& state, const ModelParams& p);

/// Symmetric: || (G*f) f - B_f M_f ||_1 with B_f = \int (G*f) f.
/// Non-symmetric: || f - m M_f ||_1 with m the mass of f.
double equilibrium_residual(const KineticState& state, const ModelParams& p);

/// Linearisation of the non-symmetric operator around F_{sigma,mu} applied to
/// `perturbation` (node values on `grid`). Rejects symmetric mode.
std::vector<double> apply_linearized_q(std::span<const double> perturbation, const OpinionGrid& grid,
                                       double sigma, double mu, const ModelParams& p);

inline constexpr double kCflSafety = 0.4;

/// Largest stable explicit step for the current state.
double max_stable_dt(const KineticState& state, const ModelParams& p, double safety = kCflSafety);

/// One Heun (RK2) step. Throws CflError if dt exceeds max_stable_dt.
KineticState step(const KineticState& state, const ModelParams& p, double dt);

struct Moments {
    double mass = 0.0;
    double mean = 0.0;
    double variance = 0.0;
};

/// Trapezoid moments. Throws NumericalError on zero mass.
Moments moments(const KineticState& state);

/// || f - m F_{sqrt(v), mean} ||_1 for the moment-matched Gaussian.
double gaussian_fit_distance(const KineticState& state);

/// Fraction of the mass held by the two outermost nodes at each end.
double boundary_mass_fraction(const KineticState& state);

struct KineticTraceRow {
    double t = 0.0;
    double mass = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    double residual = 0.0;
};

struct KineticRunOptions {
    double t_end = 0.0;
    double trace_every = 0.0;        ///< <= 0 traces only the endpoints
    double cfl_safety = kCflSafety;
    double saturation_threshold = 1e-8;
    bool compute_residual = true;
};

struct KineticRun {
    KineticState state;
    std::vector<KineticTraceRow> trace;
    bool saturated = false;          ///< stopped because boundary cells filled up
    std::size_t steps = 0;
};

KineticRun run_to_time(KineticState state, const ModelParams& p, const KineticRunOptions& options);

} // namespace opk
