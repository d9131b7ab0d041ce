#pragma once

// Experiment drivers tying the kinetic, particle and macroscopic scales
// together. Every driver is a pure function of its spec (including the master
// seed): sweep points and replicas may run on several threads, but results
// are written by index and reduced in order.

#include "opk/kinetic.hpp"
#include "opk/macro.hpp"
#include "opk/model.hpp"
#include "opk/particles.hpp"

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace opk {

enum class ExperimentKind { VarianceVsKappa, PhaseScan, Crossover, ParticleVsKinetic, KineticVsMacro, EntropyAudit };

std::string_view to_string(ExperimentKind kind);
ExperimentKind parse_experiment_kind(std::string_view text);

struct ExperimentSpec {
    ExperimentKind kind = ExperimentKind::VarianceVsKappa;
    ModelParams base;
    std::vector<double> sweep;       ///< kappa, rho0 or epsilon values; empty selects the kind's default
    std::vector<RateMode> modes;     ///< empty: base mode for single-mode kinds, both otherwise
    int replicas = 16;
    std::uint64_t seed = 1;
    int threads = 0;                 ///< 0 = hardware concurrency

    // kinetic
    int kinetic_cells = kDefaultCells;
    double t_end_over_gamma = 0.0;   ///< run length in units of 1/gamma; 0 selects the kind's default
    double equilibration_window = 5.0;  ///< in units of 1/gamma
    double equilibration_tol = 1e-5;
    double divergence_tstat = 5.0;
    int checkpoints = 20;

    // particles
    std::size_t agents = 10000;
    SimScheme scheme;

    // macro
    int macro_cells = 128;
    double consensus_tol = 0.01;
    double macro_t_end = 1000.0;

    // spatial limit
    int bins = 32;
    double diffusive_time = 1.5;     ///< horizon in t' = eps^2 t
    int diffusive_checkpoints = 6;
};

/// Default sweep for the kind, or the spec's own values after validation.
std::vector<double> resolved_sweep(const ExperimentSpec& spec);
std::vector<RateMode> resolved_modes(const ExperimentSpec& spec);
void validate_spec(const ExperimentSpec& spec);

/// Runs body(i) for i in [0, count) on up to `threads` workers. Exceptions are
/// rethrown on the caller (the one from the lowest index).
void parallel_for(std::size_t count, int threads, const std::function<void(std::size_t)>& body);

// Bimodal mixture used as non-Gaussian initial data: 0.5 F_{0.5,-1.2} + 0.5 F_{0.5,1.2}.
double bimodal_density(double phi);
double sample_bimodal(Rng& rng);

struct VarianceRow {
    double kappa = 0.0;
    double sigma2_analytic = 0.0;
    double sigma2_kinetic = 0.0;
    double rel_err = 0.0;
    double fit_distance = 0.0;
    double t_final = 0.0;
    bool equilibrated = false;
};

struct VarianceTable {
    RateMode mode = RateMode::Symmetric;
    std::vector<VarianceRow> rows;
};

struct Equilibration {
    KineticRun run;
    bool equilibrated = false;
};

/// Runs the kinetic solver from bimodal data until the variance changes by
/// less than equilibration_tol (relative) over one window, or t_max.
Equilibration equilibrate_kinetic(const ModelParams& p, const ExperimentSpec& spec, double t_max);

std::vector<VarianceTable> variance_vs_kappa(const ExperimentSpec& spec);

enum class PhaseClass { Equilibrated, Diverging, Inconclusive };
std::string_view to_string(PhaseClass c);

struct PhaseRow {
    double kappa = 0.0;
    PhaseClass cls = PhaseClass::Inconclusive;
    double slope = 0.0;      ///< fitted d(variance)/dt over the final third
    double tstat = 0.0;
    double tail_growth = 0.0;  ///< relative variance change over the final third
    double final_variance = 0.0;
    bool saturated = false;
};

struct PhaseScan {
    RateMode mode = RateMode::Symmetric;
    double kappa_crit = 0.0;
    std::vector<PhaseRow> rows;
    std::optional<double> last_equilibrated;
    std::optional<double> first_diverging;
    bool brackets() const;   ///< last_equilibrated < kappa_crit < first_diverging, adjacent on the grid
};

/// Wide Gaussian start (sigma0 = 5 zeta) on a domain of half-width 8 sigma0.
PhaseRow classify_phase(const ModelParams& p, const ExperimentSpec& spec);
std::vector<PhaseScan> phase_scan(const ExperimentSpec& spec);

struct CrossoverRow {
    double rho0 = 0.0;
    double t_sym = 0.0;
    double t_asym = 0.0;
    bool censored = false;
};

struct CrossoverResult {
    std::vector<CrossoverRow> rows;
    std::optional<double> rho_crossing;
    double rho_star = 0.0;
    int bisection_steps = 0;
};

/// Consensus time of a single sine mode on uniform rho0.
ConsensusTime single_mode_consensus(const ModelParams& p, RateMode mode, double rho0, int cells, double tol,
                                    double t_end);
CrossoverResult crossover_experiment(const ExperimentSpec& spec);

struct ParticleCheckpoint {
    double t = 0.0;
    double kinetic = 0.0;
    double mc_mean = 0.0, mc_se = 0.0, mc_z = 0.0;
    double sde_mean = 0.0, sde_se = 0.0, sde_z = 0.0;
};

struct ParticleComparison {
    RateMode mode = RateMode::Symmetric;
    std::vector<ParticleCheckpoint> rows;
    double max_mc_z = 0.0;
    double max_sde_z = 0.0;
    std::size_t mc_flags = 0;   ///< checkpoints with |z| > 3
    std::size_t sde_flags = 0;
};

std::vector<ParticleComparison> particle_vs_kinetic(const ExperimentSpec& spec);

struct LimitRow {
    RateMode mode = RateMode::Symmetric;
    double epsilon = 0.0;
    double discrepancy = 0.0;   ///< relative L2 of binned phi against the macro solution
    double rate_particle = 0.0; ///< fitted decay rate of the first Fourier mode, in t'
    double rate_macro = 0.0;
    double rate_rel_err = 0.0;
    std::size_t empty_bins = 0;
    std::size_t steps = 0;
};

struct LimitSnapshot {
    RateMode mode = RateMode::Symmetric;
    double epsilon = 0.0;
    double t_diffusive = 0.0;
    std::vector<double> phi_particle;
    std::vector<double> phi_macro;
};

struct LimitResult {
    std::vector<LimitRow> rows;
    std::vector<LimitSnapshot> snapshots;
};

LimitResult kinetic_vs_macro(const ExperimentSpec& spec);

struct EntropyRow {
    DensityKind preset = DensityKind::Uniform;
    RateMode mode = RateMode::Symmetric;
    double conservation_rel = 0.0;
    bool monotone = false;
    double deriv_err = 0.0;          ///< at (J, dt)
    double deriv_err_half_dt = 0.0;  ///< at (J, dt/2)
    double deriv_err_refined = 0.0;  ///< at (2J, dt/4)
};

/// Max over steps of |(E_{n+1} - E_n)/dt - dissipation_rhs_n|, relative to max |dissipation_rhs|.
double entropy_derivative_error(const MacroState& initial, RateMode mode, double coefficient, double dt, int steps);

std::vector<EntropyRow> entropy_audit(const ExperimentSpec& spec);

// Generic table output for the CLI.
using Cell = std::variant<double, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
};

struct ExperimentOutput {
    Table table;
    std::vector<std::pair<std::string, double>> headline;
    std::vector<std::string> flags;
};

ExperimentOutput run_experiment(const ExperimentSpec& spec);

} // namespace opk
