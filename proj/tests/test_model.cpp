#include "oracle_values.hpp"

#include "opk/error.hpp"
#include "opk/model.hpp"

#include <doctest.h>

#include <cmath>
#include <limits>

using namespace opk;
using doctest::Approx;

namespace {

ModelParams params(double zeta, double kappa, RateMode mode) {
    ModelParams p;
    p.zeta = zeta;
    p.kappa = kappa;
    p.rate_mode = mode;
    return p;
}

} // namespace

TEST_SUITE("model") {

TEST_CASE("validation") {
    CHECK_NOTHROW(validate_params(params(1, 0.5, RateMode::Symmetric)));
    ModelParams p;
    p.gamma = 0.7;
    CHECK_THROWS_WITH_AS(validate_params(p), "gamma exceeds 1/2", ParamError);
    p = ModelParams{};
    p.zeta = 0.0;
    CHECK_THROWS_WITH_AS(validate_params(p), "zeta must be positive", ParamError);
    p = ModelParams{};
    p.kappa = -1.0;
    CHECK_THROWS_AS(validate_params(p), ParamError);
    p = ModelParams{};
    p.epsilon = 0.0;
    CHECK_THROWS_AS(validate_params(p), ParamError);
    p = ModelParams{};
    p.gamma = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(validate_params(p), ParamError);
}

TEST_CASE("equilibrium variance") {
    CHECK(equilibrium_sigma2(1, 0.5, RateMode::Symmetric) == Approx(oracle::kSigma2Sym).epsilon(1e-14));
    CHECK(equilibrium_sigma2(1, 0.5, RateMode::NonSymmetric) == Approx(oracle::kSigma2Asym).epsilon(1e-14));
    CHECK(equilibrium_sigma2(1, 0.0, RateMode::Symmetric) == 0.0);
    CHECK_THROWS_AS(equilibrium_sigma2(1, 1.0, RateMode::Symmetric), SupercriticalError);
    CHECK_THROWS_AS(equilibrium_sigma2(1, 2.5, RateMode::NonSymmetric), SupercriticalError);
    CHECK_NOTHROW(equilibrium_sigma2(1, 1.5, RateMode::NonSymmetric));
}

TEST_CASE("critical kappa") {
    CHECK(critical_kappa(1, RateMode::Symmetric) == 1.0);
    CHECK(critical_kappa(1, RateMode::NonSymmetric) == 2.0);
    CHECK(critical_kappa(2, RateMode::Symmetric) == 4.0);
}

TEST_CASE("normalized diffusion coefficients") {
    CHECK(normalized_diffusion_coefficient(1, 0.5, RateMode::Symmetric) == Approx(oracle::kCNormSym).epsilon(1e-13));
    CHECK(normalized_diffusion_coefficient(1, 0.5, RateMode::NonSymmetric) == Approx(oracle::kCNormAsym).epsilon(1e-13));
    CHECK(normalized_diffusion_coefficient(2, 1, RateMode::Symmetric) == Approx(oracle::kCNormSymZeta2).epsilon(1e-13));
    CHECK(normalized_diffusion_coefficient(2, 1, RateMode::NonSymmetric) == Approx(oracle::kCNormAsymZeta2).epsilon(1e-13));
    for (auto mode : {RateMode::Symmetric, RateMode::NonSymmetric}) {
        CHECK(normalized_diffusion_coefficient(1, 0.0, mode) == Approx(1.0));
        CHECK(rewritten_diffusion_coefficient(1, 0.0, mode) == Approx(1.0));
    }
}

TEST_CASE("crossover density") {
    CHECK(crossover_density(1, 0.5) == Approx(oracle::kRhoStar).epsilon(1e-12));
    CHECK(crossover_density(2, 1) == Approx(oracle::kRhoStarZeta2).epsilon(1e-12));
    CHECK(crossover_density(1, 0.0) == Approx(1.0));
    CHECK_THROWS_AS(crossover_density(1, 1.0), SupercriticalError);
}

TEST_CASE("gaussian convolution closed form") {
    CHECK(gaussian_convolution_closed_form(1, 1, 0, 0) == Approx(oracle::kConvAtMean).epsilon(1e-12));
    CHECK(gaussian_convolution_closed_form(0, 1, 0, 0) == 1.0);
    CHECK(gaussian_convolution_closed_form(1, 1, 0, 1e3) == Approx(0.0));
    CHECK(interaction_kernel(1.0, 1.0) == Approx(oracle::kGAtZeta).epsilon(1e-15));
}

TEST_CASE("spatial diffusivity") {
    CHECK(spatial_diffusivity({KernelShape::Gaussian, 1, 1.0}) == Approx(oracle::kDGauss1).epsilon(1e-10));
    CHECK(spatial_diffusivity({KernelShape::Indicator, 1, 1.0}) == Approx(oracle::kDIndicator1).epsilon(1e-10));
    CHECK(spatial_diffusivity({KernelShape::Gaussian, 2, 1.0}) == Approx(oracle::kDGauss2).epsilon(1e-10));
    CHECK(spatial_kernel_mass({KernelShape::Indicator, 2, 1.0}) == Approx(1.0).epsilon(1e-10));
    CHECK_THROWS_AS(spatial_diffusivity({KernelShape::Gaussian, 1, 2.0}), ParamError);
}

TEST_CASE("analytic summary") {
    const auto s = analytic_summary(params(1, 0.5, RateMode::Symmetric));
    CHECK(s.sigma2_eq == Approx(0.5));
    CHECK(s.kappa_crit == 1.0);
    CHECK(s.spatial_d == Approx(0.5));
    CHECK(s.c_diff == Approx(0.05 * 0.5 * oracle::kCNormSym));
    REQUIRE(s.rho_star);
    CHECK(*s.rho_star == Approx(oracle::kRhoStar));
    CHECK_FALSE(analytic_summary(params(1, 1.5, RateMode::NonSymmetric)).rho_star);
}

TEST_CASE("property: orderings over the subcritical range") {
    for (int i = 0; i < 40; ++i) {
        const double zeta = std::pow(10.0, -1.0 + 2.0 * i / 39.0);
        for (double frac : {0.05, 0.3, 0.6, 0.95}) {
            const double kappa = frac * zeta * zeta;
            CHECK(equilibrium_sigma2(zeta, kappa, RateMode::Symmetric) >
                  equilibrium_sigma2(zeta, kappa, RateMode::NonSymmetric));
            CHECK(normalized_diffusion_coefficient(zeta, kappa, RateMode::NonSymmetric) >
                  normalized_diffusion_coefficient(zeta, kappa, RateMode::Symmetric));
            CHECK(crossover_density(zeta, kappa) > 1.0);
        }
    }
}

TEST_CASE("parsing") {
    CHECK(parse_rate_mode("nonsymmetric") == RateMode::NonSymmetric);
    CHECK(parse_rate_mode("symmetric") == RateMode::Symmetric);
    CHECK_THROWS_AS(parse_rate_mode("sideways"), ParamError);
    CHECK(parse_noise_law("uniform") == NoiseLaw::Uniform);
    CHECK(parse_kernel_shape("indicator") == KernelShape::Indicator);
}

}
