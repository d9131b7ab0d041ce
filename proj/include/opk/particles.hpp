#pragma once

// Stochastic N-agent simulation of the pre-limit model.
//
// Two schemes advance an ensemble:
//  * CollisionMC  - direct-simulation Monte Carlo of the jump process. Each
//    step, every agent draws a partner j != i and interacts with probability
//    dt * G(phi_i - phi_j) [* F_eps(alpha_i - alpha_j) * window factor] / H_i.
//    The update is one-sided: only agent i moves.
//  * MeanFieldSDE - Euler-Maruyama for the mean-field diffusion whose
//    Fokker-Planck limit is the kinetic equation.
//
// Positions, when present, live on the periodic unit interval and never move.
// Steps are synchronous: every agent sees the pre-step state.

#include "opk/model.hpp"

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <utility>
#include <vector>

namespace opk {

using Rng = std::mt19937_64;

/// Independent stream `index` derived from `master` by SplitMix64 mixing.
Rng make_stream(std::uint64_t master, std::uint64_t index);
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index);

struct ParticleEnsemble {
    std::vector<double> opinions;
    std::vector<double> positions;  ///< empty for the homogeneous model
    std::uint64_t seed = 0;
    double t = 0.0;

    std::size_t size() const { return opinions.size(); }
    bool spatial() const { return !positions.empty(); }
};

enum class Scheme { CollisionMC, MeanFieldSDE };
enum class FieldMethod { Auto, Exact, Binned };

std::string_view to_string(Scheme scheme);
Scheme parse_scheme(std::string_view text);
FieldMethod parse_field_method(std::string_view text);

struct SimScheme {
    Scheme scheme = Scheme::CollisionMC;
    double dt = 0.0;                       ///< <= 0 selects the adaptive default
    double target_acceptance = 0.2;        ///< adaptive CollisionMC: max acceptance probability
    double sde_dt = 0.05;                  ///< adaptive MeanFieldSDE step
    std::size_t rejection_cap_warnings = 0;
    FieldMethod field_method = FieldMethod::Auto;
    std::size_t exact_field_limit = 2000;  ///< Auto uses exact sums up to this many agents
    double opinion_bin_fraction = 1.0 / 32.0;  ///< binned sums: opinion cell width / zeta
    double position_bin_fraction = 1.0 / 6.0;  ///< binned sums: position cell width / epsilon
};

/// phi_i + gamma (phi_j - phi_i) + eta.
inline double interact(double phi_i, double phi_j, double gamma, double eta) {
    return phi_i + gamma * (phi_j - phi_i) + eta;
}

double sample_noise(const NoiseSpec& noise, Rng& rng);

/// Wrapped spatial kernel F_eps on the unit torus at separation d.
double wrapped_spatial_kernel(double d, double epsilon, const SpatialKernelSpec& kernel);

/// Per-agent kernel sums over the ensemble (self term included):
///   g[i]  = (1/N) sum_j G(phi_j - phi_i) [F_eps(alpha_i - alpha_j)]
///   pg[i] = (1/N) sum_j (phi_j - phi_i) G(phi_j - phi_i) [F_eps(alpha_i - alpha_j)]
struct KernelSums {
    std::vector<double> g;
    std::vector<double> pg;
};

KernelSums kernel_sums(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme);
KernelSums exact_kernel_sums(const ParticleEnsemble& ens, const ModelParams& p);
KernelSums binned_kernel_sums(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme);

/// Spatial neighbour windows on the torus; built once because positions are static.
class SpatialIndex {
public:
    SpatialIndex() = default;
    SpatialIndex(std::span<const double> positions, double radius);

    std::size_t window_size(std::size_t agent) const { return length_[agent]; }
    /// k-th member of agent's window, 0 <= k < window_size(agent). Includes the agent itself.
    std::size_t member(std::size_t agent, std::size_t k) const {
        return order_[(start_[agent] + k) % order_.size()];
    }
    double radius() const { return radius_; }
    bool empty() const { return order_.empty(); }

private:
    std::vector<std::size_t> order_;
    std::vector<std::size_t> start_;
    std::vector<std::size_t> length_;
    double radius_ = 0.0;
};

SpatialIndex build_spatial_index(const ParticleEnsemble& ens, const ModelParams& p);

struct SdeCoefficients {
    std::vector<double> drift;
    std::vector<double> diffusion;
};

SdeCoefficients sde_coefficients(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme);

/// Upper bound on dt * (acceptance probability) per unit dt over all agents.
double max_acceptance_rate(const ParticleEnsemble& ens, const ModelParams& p, std::span<const double> h,
                           const SpatialIndex* index);

ParticleEnsemble collision_step(const ParticleEnsemble& ens, const ModelParams& p, SimScheme& scheme, Rng& rng,
                                const SpatialIndex* index = nullptr);

ParticleEnsemble sde_step(const ParticleEnsemble& ens, const ModelParams& p, SimScheme& scheme, Rng& rng);

struct FieldEstimate {
    std::vector<double> rho;  ///< histogram density per bin
    std::vector<double> phi;  ///< mean opinion per bin, NaN where empty
    std::size_t empty_bins = 0;
};

FieldEstimate estimate_fields(const ParticleEnsemble& ens, int bins);

struct ParticleTraceRow {
    double t = 0.0;
    double mean = 0.0;
    double variance = 0.0;
    std::vector<double> rho;
    std::vector<double> phi;
};

struct ParticleRunOptions {
    double t_end = 0.0;
    double trace_every = 0.0;
    int bins = 0;  ///< spatial runs: bins for per-row field estimates (0 = none)
};

struct ParticleRun {
    ParticleEnsemble ensemble;
    std::vector<ParticleTraceRow> trace;
    std::size_t steps = 0;
};

ParticleRun run_particles(ParticleEnsemble ens, const ModelParams& p, SimScheme& scheme,
                          const ParticleRunOptions& options, Rng& rng);

/// Sample mean and (1/N) variance.
std::pair<double, double> sample_moments(std::span<const double> values);

/// Positions drawn from a piecewise-constant density given per cell on [0,1).
std::vector<double> sample_positions(std::span<const double> cell_density, std::size_t n, Rng& rng);

} // namespace opk
