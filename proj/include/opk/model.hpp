#pragma once

// Model constants and closed-form quantities of the kinetic opinion model.
//
// Interaction kernel in opinion space is the Gaussian G_zeta(u) = exp(-u^2 / (2 zeta^2)).
// Two interaction-rate conventions are supported: a symmetric rate (pair (i,j)
// interacts as often as (j,i)) and a non-symmetric rate normalised by the
// agent's mean kernel mass.

#include <cmath>
#include <optional>
#include <string_view>

namespace opk {

enum class RateMode { Symmetric, NonSymmetric };
enum class NoiseLaw { Gaussian, Uniform };
enum class KernelShape { Gaussian, Indicator };

std::string_view to_string(RateMode mode);
std::string_view to_string(NoiseLaw law);
std::string_view to_string(KernelShape shape);

/// Zero-mean interaction noise. The uniform law has half-width sqrt(3 variance).
struct NoiseSpec {
    NoiseLaw law = NoiseLaw::Gaussian;
    double variance = 0.0;

    double uniform_half_width() const;
};

/// Radial spatial interaction kernel F(|alpha|) in dimension `dim`.
/// `mass_scale` multiplies the unit-mass profile; anything other than 1 makes
/// the kernel non-normalised and is rejected by spatial_diffusivity().
struct SpatialKernelSpec {
    KernelShape shape = KernelShape::Gaussian;
    int dim = 1;
    double mass_scale = 1.0;

    /// F(r) for r >= 0.
    double profile(double r) const;
    /// Radius beyond which F is negligible (Gaussian) or zero (indicator).
    double support_radius() const;
};

struct ModelParams {
    double gamma = 0.05;    ///< consensus strength, (0, 1/2]
    double kappa = 0.5;     ///< noise-to-consensus ratio Sigma^2 / gamma
    double zeta = 1.0;      ///< opinion interaction scale
    RateMode rate_mode = RateMode::Symmetric;
    double epsilon = 0.1;   ///< spatial interaction range
    int spatial_dim = 1;
    NoiseLaw noise_law = NoiseLaw::Gaussian;
    KernelShape kernel_shape = KernelShape::Gaussian;

    /// Noise variance Sigma^2 = kappa * gamma.
    double noise_variance() const { return kappa * gamma; }
    NoiseSpec noise() const { return {noise_law, noise_variance()}; }
    SpatialKernelSpec kernel() const { return {kernel_shape, spatial_dim, 1.0}; }
};

/// Closed-form summary for one parameter set.
struct AnalyticSummary {
    double sigma2_eq = 0.0;   ///< equilibrium variance of the selected mode
    double kappa_crit = 0.0;  ///< critical kappa of the selected mode
    double c_norm = 0.0;      ///< diffusion coefficient divided by gamma*D
    double c_diff = 0.0;      ///< diffusion coefficient including gamma*D
    double spatial_d = 0.0;   ///< D of the spatial kernel
    std::optional<double> rho_star;  ///< crossover density, defined for kappa < zeta^2
};

/// Returns `p` unchanged or throws ParamError naming the first violated constraint.
const ModelParams& validate_params(const ModelParams& p);

/// Symmetric: zeta^2; non-symmetric: 2 zeta^2.
double critical_kappa(const ModelParams& p);
double critical_kappa(double zeta, RateMode mode);

/// Variance of the Gaussian equilibrium. Throws SupercriticalError when
/// kappa >= critical_kappa. kappa = 0 gives 0 (Dirac consensus).
double equilibrium_sigma2(const ModelParams& p);
double equilibrium_sigma2(double zeta, double kappa, RateMode mode);

/// Macroscopic diffusion coefficient divided by gamma*D, evaluated from the
/// equilibrium variance: zeta^3 / (2 s_s + zeta^2)^{3/2} (symmetric) or
/// zeta^2 / (s_a + zeta^2) (non-symmetric).
double normalized_diffusion_coefficient(double zeta, double kappa, RateMode mode);

/// Same quantity from the variance-free forms (sqrt(zeta^2 - kappa)/zeta)^3 and
/// (2 zeta^2 - kappa) / (2 zeta^2).
double rewritten_diffusion_coefficient(double zeta, double kappa, RateMode mode);

/// gamma * D * normalized_diffusion_coefficient.
double diffusion_coefficient(const ModelParams& p, const SpatialKernelSpec& kernel);

/// rho* = C_a / C_s. Requires kappa < zeta^2.
double crossover_density(const ModelParams& p);
double crossover_density(double zeta, double kappa);

/// Unit-mass Gaussian density F_{sigma,mu}(phi).
double gaussian_density(double sigma, double mu, double phi);

/// Opinion interaction kernel G_zeta(u).
inline double interaction_kernel(double u, double zeta) {
    const double x = u / zeta;
    return std::exp(-0.5 * x * x);
}

/// (G_zeta * F_{sigma,mu})(phi) in closed form; sigma = 0 is a Dirac input.
double gaussian_convolution_closed_form(double sigma, double zeta, double mu, double phi);

/// D = (1/2n) \int F(|a|) |a|^2 da by adaptive quadrature. Throws ParamError if
/// the kernel does not carry unit mass to 1e-10.
double spatial_diffusivity(const SpatialKernelSpec& kernel);

/// Radial mass \int F(|a|) da of the kernel (quadrature).
double spatial_kernel_mass(const SpatialKernelSpec& kernel);

AnalyticSummary analytic_summary(const ModelParams& p);

RateMode parse_rate_mode(std::string_view text);
NoiseLaw parse_noise_law(std::string_view text);
KernelShape parse_kernel_shape(std::string_view text);

} // namespace opk

