#include "oracle_values.hpp"

#include "opk/error.hpp"
#include "opk/experiments.hpp"

#include <doctest.h>

#include <atomic>
#include <cmath>

using namespace opk;
using doctest::Approx;

TEST_SUITE("experiments") {

TEST_CASE("kind names round-trip") {
    for (auto k : {ExperimentKind::VarianceVsKappa, ExperimentKind::PhaseScan, ExperimentKind::Crossover,
                   ExperimentKind::ParticleVsKinetic, ExperimentKind::KineticVsMacro, ExperimentKind::EntropyAudit})
        CHECK(parse_experiment_kind(to_string(k)) == k);
    CHECK(parse_experiment_kind("phase_scan") == ExperimentKind::PhaseScan);
    CHECK_THROWS_AS(parse_experiment_kind("nope"), ParamError);
}

TEST_CASE("spec validation") {
    ExperimentSpec s;
    s.sweep = {0.1, 0.3, 0.2};
    CHECK_THROWS_AS(validate_spec(s), ParamError);
    s.sweep = {0.3, 0.2, 0.1};
    CHECK_NOTHROW(validate_spec(s));
    s.replicas = 0;
    CHECK_THROWS_AS(validate_spec(s), ParamError);
    ExperimentSpec d;
    d.kind = ExperimentKind::PhaseScan;
    CHECK(resolved_sweep(d).size() == 10);
    CHECK(resolved_modes(d).size() == 1);
    d.kind = ExperimentKind::Crossover;
    CHECK(resolved_modes(d).size() == 2);
}

TEST_CASE("parallel_for covers every index and rethrows the lowest failure") {
    std::vector<std::atomic<int>> hits(100);
    parallel_for(100, 4, [&](std::size_t i) { hits[i]++; });
    for (auto& h : hits) CHECK(h.load() == 1);
    try {
        parallel_for(50, 3, [](std::size_t i) {
            if (i == 17 || i == 40) throw std::runtime_error(std::to_string(i));
        });
        FAIL("expected an exception");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()) == "17");
    }
}

TEST_CASE("bimodal initial data") {
    double mass = 0.0, second = 0.0;
    const double h = 1e-3;
    for (double x = -10; x < 10; x += h) {
        mass += h * bimodal_density(x);
        second += h * x * x * bimodal_density(x);
    }
    CHECK(mass == Approx(1.0).epsilon(1e-8));
    CHECK(second == Approx(1.2 * 1.2 + 0.25).epsilon(1e-8));
    Rng rng(2);
    double s = 0.0;
    for (int i = 0; i < 100000; ++i) s += sample_bimodal(rng);
    CHECK(std::abs(s / 100000) < 0.02);
}

TEST_CASE("variance table rows") {
    ExperimentSpec s;
    s.kind = ExperimentKind::VarianceVsKappa;
    s.sweep = {0.3, 0.7};
    s.kinetic_cells = 256;
    s.threads = 1;
    for (auto mode : {RateMode::Symmetric, RateMode::NonSymmetric}) {
        s.base.rate_mode = mode;
        const auto tables = variance_vs_kappa(s);
        REQUIRE(tables.size() == 1);
        for (const auto& r : tables[0].rows) {
            CHECK(r.equilibrated);
            CHECK(r.rel_err <= 0.02);
        }
    }
    // symmetric spreads more at the same kappa
    for (double kappa : {0.1, 0.5, 0.9})
        CHECK(equilibrium_sigma2(1, kappa, RateMode::Symmetric) > equilibrium_sigma2(1, kappa, RateMode::NonSymmetric));
}

TEST_CASE("phase classification") {
    ExperimentSpec s;
    s.kinetic_cells = 256;
    ModelParams p;
    p.kappa = 0.0;
    CHECK(classify_phase(p, s).cls == PhaseClass::Equilibrated);
    p.kappa = 0.5;
    CHECK(classify_phase(p, s).cls == PhaseClass::Equilibrated);
    p.kappa = 1.5;
    CHECK(classify_phase(p, s).cls == PhaseClass::Diverging);
}

TEST_CASE("crossover ordering and location") {
    ModelParams p;
    const double tol = 0.01;
    const auto lo_s = single_mode_consensus(p, RateMode::Symmetric, 0.5, 64, tol, 1000);
    const auto lo_a = single_mode_consensus(p, RateMode::NonSymmetric, 0.5, 64, tol, 1000);
    CHECK(lo_a.time < lo_s.time);
    const auto hi_s = single_mode_consensus(p, RateMode::Symmetric, 4.0, 64, tol, 1000);
    const auto hi_a = single_mode_consensus(p, RateMode::NonSymmetric, 4.0, 64, tol, 1000);
    CHECK(hi_s.time < hi_a.time);

    ExperimentSpec s;
    s.kind = ExperimentKind::Crossover;
    s.macro_cells = 64;
    const auto r = crossover_experiment(s);
    REQUIRE(r.rho_crossing);
    CHECK(*r.rho_crossing == Approx(oracle::kRhoStar).epsilon(0.02));
    CHECK(r.rho_star == Approx(oracle::kRhoStar).epsilon(1e-12));
}

TEST_CASE("small-N particle bands bracket the kinetic curve") {
    ExperimentSpec s;
    s.kind = ExperimentKind::ParticleVsKinetic;
    s.agents = 100;
    s.replicas = 16;
    s.checkpoints = 5;
    s.t_end_over_gamma = 4.0;
    s.kinetic_cells = 256;
    s.modes = {RateMode::Symmetric};
    s.scheme.exact_field_limit = 1000;
    const auto cmp = particle_vs_kinetic(s);
    REQUIRE(cmp.size() == 1);
    CHECK(cmp[0].rows.size() == 6);
    CHECK(cmp[0].max_sde_z < 4.0);
    CHECK(cmp[0].max_mc_z < 4.0);
}

TEST_CASE("experiments are deterministic") {
    ExperimentSpec s;
    s.kind = ExperimentKind::ParticleVsKinetic;
    s.agents = 200;
    s.replicas = 3;
    s.checkpoints = 2;
    s.t_end_over_gamma = 1.0;
    s.kinetic_cells = 128;
    s.modes = {RateMode::NonSymmetric};
    s.threads = 2;
    const auto a = run_experiment(s);
    s.threads = 1;
    const auto b = run_experiment(s);
    CHECK(a.table.rows == b.table.rows);
}

}
