#include "opk/model.hpp"

#include "opk/error.hpp"

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <string>

namespace opk {

namespace {

constexpr double kUnitMassTol = 1e-10;

std::string lower(std::string_view text) {
    std::string out(text);
    for (auto& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return out;
}

// \int_{R^n} F(|a|) |a|^moment da through the radial integral.
double radial_moment(const SpatialKernelSpec& k, int moment) {
    using boost::math::quadrature::gauss_kronrod;
    const double sphere = k.dim == 1 ? 2.0 : 2.0 * std::numbers::pi;
    const int power = moment + k.dim - 1;
    auto integrand = [&](double r) { return k.profile(r) * std::pow(r, power); };
    double err = 0.0;
    double value = 0.0;
    if (k.shape == KernelShape::Indicator) {
        value = gauss_kronrod<double, 61>::integrate(integrand, 0.0, 1.0, 15, 1e-14, &err);
    } else {
        value = gauss_kronrod<double, 61>::integrate(integrand, 0.0, std::numeric_limits<double>::infinity(),
                                                     15, 1e-14, &err);
    }
    return sphere * value;
}

} // namespace

std::string_view to_string(RateMode mode) {
    return mode == RateMode::Symmetric ? "symmetric" : "nonsymmetric";
}

std::string_view to_string(NoiseLaw law) {
    return law == NoiseLaw::Gaussian ? "gaussian" : "uniform";
}

std::string_view to_string(KernelShape shape) {
    return shape == KernelShape::Gaussian ? "gaussian" : "indicator";
}

RateMode parse_rate_mode(std::string_view text) {
    const auto t = lower(text);
    if (t == "symmetric" || t == "sym") return RateMode::Symmetric;
    if (t == "nonsymmetric" || t == "non-symmetric" || t == "asym" || t == "nonsym") return RateMode::NonSymmetric;
    throw ParamError("unknown rate mode '" + std::string(text) + "'");
}

NoiseLaw parse_noise_law(std::string_view text) {
    const auto t = lower(text);
    if (t == "gaussian" || t == "normal") return NoiseLaw::Gaussian;
    if (t == "uniform") return NoiseLaw::Uniform;
    throw ParamError("unknown noise law '" + std::string(text) + "'");
}

KernelShape parse_kernel_shape(std::string_view text) {
    const auto t = lower(text);
    if (t == "gaussian") return KernelShape::Gaussian;
    if (t == "indicator") return KernelShape::Indicator;
    throw ParamError("unknown spatial kernel '" + std::string(text) + "'");
}

double NoiseSpec::uniform_half_width() const { return std::sqrt(3.0 * variance); }

double SpatialKernelSpec::profile(double r) const {
    if (shape == KernelShape::Indicator) {
        if (r > 1.0) return 0.0;
        return mass_scale * (dim == 1 ? 0.5 : 1.0 / std::numbers::pi);
    }
    const double norm = dim == 1 ? 1.0 / std::sqrt(2.0 * std::numbers::pi) : 1.0 / (2.0 * std::numbers::pi);
    return mass_scale * norm * std::exp(-0.5 * r * r);
}

double SpatialKernelSpec::support_radius() const {
    return shape == KernelShape::Indicator ? 1.0 : 6.0;
}

const ModelParams& validate_params(const ModelParams& p) {
    if (!(p.gamma > 0.0)) throw ParamError("gamma must be positive");
    if (p.gamma > 0.5) throw ParamError("gamma exceeds 1/2");
    if (!(p.zeta > 0.0)) throw ParamError("zeta must be positive");
    if (!(p.kappa >= 0.0)) throw ParamError("kappa must be non-negative");
    if (!(p.epsilon > 0.0)) throw ParamError("epsilon must be positive");
    if (p.spatial_dim != 1 && p.spatial_dim != 2) throw ParamError("spatial_dim must be 1 or 2");
    if (!std::isfinite(p.gamma) || !std::isfinite(p.kappa) || !std::isfinite(p.zeta) || !std::isfinite(p.epsilon))
        throw ParamError("model parameters must be finite");
    return p;
}

double critical_kappa(double zeta, RateMode mode) {
    if (!(zeta > 0.0)) throw ParamError("zeta must be positive");
    const double z2 = zeta * zeta;
    return mode == RateMode::Symmetric ? z2 : 2.0 * z2;
}

double critical_kappa(const ModelParams& p) { return critical_kappa(p.zeta, p.rate_mode); }

double equilibrium_sigma2(double zeta, double kappa, RateMode mode) {
    if (kappa < 0.0) throw ParamError("kappa must be non-negative");
    if (kappa >= critical_kappa(zeta, mode)) throw SupercriticalError("supercritical kappa: no Gaussian equilibrium");
    if (kappa == 0.0) return 0.0;
    const double z2 = zeta * zeta;
    if (mode == RateMode::Symmetric) return z2 / (2.0 * (z2 / kappa - 1.0));
    return z2 / (2.0 * z2 / kappa - 1.0);
}

double equilibrium_sigma2(const ModelParams& p) { return equilibrium_sigma2(p.zeta, p.kappa, p.rate_mode); }

double normalized_diffusion_coefficient(double zeta, double kappa, RateMode mode) {
    const double s2 = equilibrium_sigma2(zeta, kappa, mode);
    const double z2 = zeta * zeta;
    if (mode == RateMode::Symmetric) return zeta * z2 / std::pow(2.0 * s2 + z2, 1.5);
    return z2 / (s2 + z2);
}

double rewritten_diffusion_coefficient(double zeta, double kappa, RateMode mode) {
    if (kappa >= critical_kappa(zeta, mode)) throw SupercriticalError("supercritical kappa: no Gaussian equilibrium");
    const double z2 = zeta * zeta;
    if (mode == RateMode::Symmetric) {
        const double r = std::sqrt(z2 - kappa) / zeta;
        return r * r * r;
    }
    return (2.0 * z2 - kappa) / (2.0 * z2);
}

double diffusion_coefficient(const ModelParams& p, const SpatialKernelSpec& kernel) {
    return p.gamma * spatial_diffusivity(kernel) * normalized_diffusion_coefficient(p.zeta, p.kappa, p.rate_mode);
}

double crossover_density(double zeta, double kappa) {
    if (kappa >= zeta * zeta) throw SupercriticalError("supercritical kappa: crossover needs kappa < zeta^2");
    return normalized_diffusion_coefficient(zeta, kappa, RateMode::NonSymmetric) /
           normalized_diffusion_coefficient(zeta, kappa, RateMode::Symmetric);
}

double crossover_density(const ModelParams& p) { return crossover_density(p.zeta, p.kappa); }

double gaussian_density(double sigma, double mu, double phi) {
    const double x = (phi - mu) / sigma;
    return std::exp(-0.5 * x * x) / (std::sqrt(2.0 * std::numbers::pi) * sigma);
}

double gaussian_convolution_closed_form(double sigma, double zeta, double mu, double phi) {
    const double s2 = sigma * sigma + zeta * zeta;
    const double d = phi - mu;
    return zeta / std::sqrt(s2) * std::exp(-0.5 * d * d / s2);
}

double spatial_kernel_mass(const SpatialKernelSpec& kernel) { return radial_moment(kernel, 0); }

double spatial_diffusivity(const SpatialKernelSpec& kernel) {
    if (kernel.dim != 1 && kernel.dim != 2) throw ParamError("spatial kernel dimension must be 1 or 2");
    const double mass = spatial_kernel_mass(kernel);
    if (std::abs(mass - 1.0) > kUnitMassTol)
        throw ParamError("spatial kernel is not normalised (mass " + std::to_string(mass) + ")");
    return radial_moment(kernel, 2) / (2.0 * kernel.dim);
}

AnalyticSummary analytic_summary(const ModelParams& p) {
    validate_params(p);
    AnalyticSummary s;
    s.kappa_crit = critical_kappa(p);
    s.sigma2_eq = equilibrium_sigma2(p);
    s.c_norm = normalized_diffusion_coefficient(p.zeta, p.kappa, p.rate_mode);
    s.spatial_d = spatial_diffusivity(p.kernel());
    s.c_diff = p.gamma * s.spatial_d * s.c_norm;
    if (p.kappa < p.zeta * p.zeta) s.rho_star = crossover_density(p);
    return s;
}

} // namespace opk
