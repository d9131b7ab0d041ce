#include "opk/particles.hpp"

#include "opk/error.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace opk {

namespace {

constexpr double kIsolationFloor = 1e-300;
// Opinion-kernel taps beyond this many zeta are dropped in binned sums (e^-32).
constexpr double kOpinionCutoff = 8.0;

std::uint64_t splitmix64(std::uint64_t& state) {
    std::uint64_t z = (state += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

double wrap_unit(double x) {
    x -= std::floor(x);
    return x >= 1.0 ? 0.0 : x;
}

// Signed minimal-image separation on the unit torus.
double torus_delta(double a, double b) {
    double d = a - b;
    d -= std::round(d);
    return d;
}

void require_1d_spatial(const ParticleEnsemble& ens, const ModelParams& p) {
    if (ens.spatial() && p.spatial_dim != 1)
        throw ParamError("spatial particle model supports dimension 1 only");
    if (ens.spatial() && ens.positions.size() != ens.opinions.size())
        throw ParamError("positions and opinions differ in length");
}

struct OpinionBins {
    double lo = 0.0;
    double h = 1.0;
    int n = 0;
};

OpinionBins opinion_bins(std::span<const double> opinions, double h) {
    const auto [mn, mx] = std::minmax_element(opinions.begin(), opinions.end());
    OpinionBins b;
    b.h = h;
    b.lo = *mn - 2.0 * h;
    b.n = static_cast<int>(std::floor((*mx + 2.0 * h - b.lo) / h)) + 2;
    return b;
}

// Tables over opinion offsets d = -(n-1)..(n-1): G(dh) and -(dh) G(dh).
void opinion_tables(const OpinionBins& b, double zeta, std::vector<double>& tg, std::vector<double>& tp) {
    tg.assign(2 * b.n - 1, 0.0);
    tp.assign(2 * b.n - 1, 0.0);
    for (int m = 0; m < 2 * b.n - 1; ++m) {
        const double u = (m - (b.n - 1)) * b.h;
        tg[m] = interaction_kernel(u, zeta);
        tp[m] = -u * tg[m];
    }
}

// out_g[k] += sum_m w[m] tg[k-m], out_p[k] += sum_m w[m] tp[k-m] with a tap cutoff.
void opinion_convolve(const OpinionBins& b, const double* w, const std::vector<double>& tg,
                      const std::vector<double>& tp, int taps, double* out_g, double* out_p) {
    for (int m = 0; m < b.n; ++m) {
        const double c = w[m];
        if (c == 0.0) continue;
        const int k0 = std::max(0, m - taps);
        const int k1 = std::min(b.n - 1, m + taps);
        const double* ag = tg.data() + (b.n - 1) - m;
        const double* ap = tp.data() + (b.n - 1) - m;
        for (int k = k0; k <= k1; ++k) {
            out_g[k] += c * ag[k];
            out_p[k] += c * ap[k];
        }
    }
}

} // namespace

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t index) {
    std::uint64_t state = master ^ (0xD1B54A32D192ED03ULL * (index + 1));
    splitmix64(state);
    return splitmix64(state);
}

Rng make_stream(std::uint64_t master, std::uint64_t index) { return Rng(derive_seed(master, index)); }

std::string_view to_string(Scheme scheme) {
    return scheme == Scheme::CollisionMC ? "collision" : "sde";
}

Scheme parse_scheme(std::string_view text) {
    std::string t(text);
    for (auto& c : t) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    if (t == "collision" || t == "collisionmc" || t == "mc") return Scheme::CollisionMC;
    if (t == "sde" || t == "meanfieldsde") return Scheme::MeanFieldSDE;
    throw ParamError("unknown particle scheme '" + std::string(text) + "'");
}

FieldMethod parse_field_method(std::string_view text) {
    if (text == "auto") return FieldMethod::Auto;
    if (text == "exact") return FieldMethod::Exact;
    if (text == "binned") return FieldMethod::Binned;
    throw ParamError("unknown field method '" + std::string(text) + "'");
}

double sample_noise(const NoiseSpec& noise, Rng& rng) {
    if (noise.variance <= 0.0) return 0.0;
    if (noise.law == NoiseLaw::Gaussian) {
        std::normal_distribution<double> normal(0.0, std::sqrt(noise.variance));
        return normal(rng);
    }
    const double a = noise.uniform_half_width();
    std::uniform_real_distribution<double> uniform(-a, a);
    return uniform(rng);
}

double wrapped_spatial_kernel(double d, double epsilon, const SpatialKernelSpec& kernel) {
    const double reach = kernel.support_radius() * epsilon;
    const int images = static_cast<int>(std::ceil(reach)) + 1;
    double sum = 0.0;
    for (int m = -images; m <= images; ++m) {
        const double r = std::abs(d + m);
        if (r > reach) continue;
        sum += kernel.profile(r / epsilon) / epsilon;
    }
    return sum;
}

KernelSums exact_kernel_sums(const ParticleEnsemble& ens, const ModelParams& p) {
    require_1d_spatial(ens, p);
    const std::size_t n = ens.size();
    KernelSums s;
    s.g.assign(n, 0.0);
    s.pg.assign(n, 0.0);
    const auto kernel = p.kernel();
    const double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
        double g = 0.0;
        double pg = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
            const double u = ens.opinions[j] - ens.opinions[i];
            double w = interaction_kernel(u, p.zeta);
            if (ens.spatial())
                w *= wrapped_spatial_kernel(torus_delta(ens.positions[i], ens.positions[j]), p.epsilon, kernel);
            g += w;
            pg += u * w;
        }
        s.g[i] = g * inv_n;
        s.pg[i] = pg * inv_n;
    }
    return s;
}

KernelSums binned_kernel_sums(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme) {
    require_1d_spatial(ens, p);
    const std::size_t n = ens.size();
    const double inv_n = 1.0 / static_cast<double>(n);
    const auto bins = opinion_bins(ens.opinions, scheme.opinion_bin_fraction * p.zeta);
    std::vector<double> tg, tp;
    opinion_tables(bins, p.zeta, tg, tp);
    const int taps = static_cast<int>(std::ceil(kOpinionCutoff * p.zeta / bins.h));

    KernelSums s;
    s.g.resize(n);
    s.pg.resize(n);

    if (!ens.spatial()) {
        std::vector<double> w(bins.n, 0.0), cg(bins.n, 0.0), cp(bins.n, 0.0);
        for (double phi : ens.opinions) {
            const double x = (phi - bins.lo) / bins.h;
            const int k = static_cast<int>(x);
            const double t = x - k;
            w[k] += (1.0 - t) * inv_n;
            w[k + 1] += t * inv_n;
        }
        opinion_convolve(bins, w.data(), tg, tp, taps, cg.data(), cp.data());
        for (std::size_t i = 0; i < n; ++i) {
            const double x = (ens.opinions[i] - bins.lo) / bins.h;
            const int k = static_cast<int>(x);
            const double t = x - k;
            s.g[i] = (1.0 - t) * cg[k] + t * cg[k + 1];
            s.pg[i] = (1.0 - t) * cp[k] + t * cp[k + 1];
        }
        return s;
    }

    // Spatial: periodic position bins x opinion bins, separable convolution.
    const auto kernel = p.kernel();
    const int na = std::max(4, static_cast<int>(std::ceil(1.0 / (scheme.position_bin_fraction * p.epsilon))));
    const double ha = 1.0 / na;
    const int nb = bins.n;
    std::vector<double> w(static_cast<std::size_t>(na) * nb, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        const double xa = wrap_unit(ens.positions[i]) * na;
        const int a0 = std::min(static_cast<int>(xa), na - 1);
        const double ta = xa - a0;
        const int a1 = (a0 + 1) % na;
        const double xb = (ens.opinions[i] - bins.lo) / bins.h;
        const int b0 = static_cast<int>(xb);
        const double tb = xb - b0;
        w[a0 * nb + b0] += (1.0 - ta) * (1.0 - tb) * inv_n;
        w[a0 * nb + b0 + 1] += (1.0 - ta) * tb * inv_n;
        w[a1 * nb + b0] += ta * (1.0 - tb) * inv_n;
        w[a1 * nb + b0 + 1] += ta * tb * inv_n;
    }

    // Position convolution with the wrapped kernel.
    const double reach = std::min(kernel.support_radius() * p.epsilon, 0.5);
    std::vector<int> offsets;
    if (2 * static_cast<int>(std::ceil(reach / ha)) + 1 >= na) {
        for (int d = 0; d < na; ++d) offsets.push_back(d);
    } else {
        const int dmax = static_cast<int>(std::ceil(reach / ha));
        for (int d = -dmax; d <= dmax; ++d) offsets.push_back(d);
    }
    std::vector<double> weights(offsets.size());
    for (std::size_t k = 0; k < offsets.size(); ++k)
        weights[k] = wrapped_spatial_kernel(offsets[k] * ha, p.epsilon, kernel);

    std::vector<double> wa(w.size(), 0.0);
    for (int a = 0; a < na; ++a) {
        double* dst = wa.data() + static_cast<std::size_t>(a) * nb;
        for (std::size_t k = 0; k < offsets.size(); ++k) {
            const int src_a = ((a - offsets[k]) % na + na) % na;
            const double* src = w.data() + static_cast<std::size_t>(src_a) * nb;
            const double c = weights[k];
            for (int b = 0; b < nb; ++b) dst[b] += c * src[b];
        }
    }

    std::vector<double> cg(w.size(), 0.0), cp(w.size(), 0.0);
    for (int a = 0; a < na; ++a) {
        const std::size_t off = static_cast<std::size_t>(a) * nb;
        opinion_convolve(bins, wa.data() + off, tg, tp, taps, cg.data() + off, cp.data() + off);
    }

    for (std::size_t i = 0; i < n; ++i) {
        const double xa = wrap_unit(ens.positions[i]) * na;
        const int a0 = std::min(static_cast<int>(xa), na - 1);
        const double ta = xa - a0;
        const int a1 = (a0 + 1) % na;
        const double xb = (ens.opinions[i] - bins.lo) / bins.h;
        const int b0 = static_cast<int>(xb);
        const double tb = xb - b0;
        auto at = [&](const std::vector<double>& v) {
            return (1.0 - ta) * ((1.0 - tb) * v[a0 * nb + b0] + tb * v[a0 * nb + b0 + 1]) +
                   ta * ((1.0 - tb) * v[a1 * nb + b0] + tb * v[a1 * nb + b0 + 1]);
        };
        s.g[i] = at(cg);
        s.pg[i] = at(cp);
    }
    return s;
}

KernelSums kernel_sums(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme) {
    switch (scheme.field_method) {
        case FieldMethod::Exact: return exact_kernel_sums(ens, p);
        case FieldMethod::Binned: return binned_kernel_sums(ens, p, scheme);
        case FieldMethod::Auto: break;
    }
    return ens.size() <= scheme.exact_field_limit ? exact_kernel_sums(ens, p) : binned_kernel_sums(ens, p, scheme);
}

SpatialIndex::SpatialIndex(std::span<const double> positions, double radius) : radius_(radius) {
    const std::size_t n = positions.size();
    order_.resize(n);
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::vector<double> wrapped(n);
    for (std::size_t i = 0; i < n; ++i) wrapped[i] = wrap_unit(positions[i]);
    std::stable_sort(order_.begin(), order_.end(), [&](std::size_t a, std::size_t b) { return wrapped[a] < wrapped[b]; });
    std::vector<double> sorted(n);
    for (std::size_t k = 0; k < n; ++k) sorted[k] = wrapped[order_[k]];

    start_.assign(n, 0);
    length_.assign(n, n);
    if (radius >= 0.5) return;
    auto lower = [&](double x) {
        return static_cast<std::size_t>(std::lower_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
    };
    auto upper = [&](double x) {
        return static_cast<std::size_t>(std::upper_bound(sorted.begin(), sorted.end(), x) - sorted.begin());
    };
    for (std::size_t i = 0; i < n; ++i) {
        double lo = wrapped[i] - radius;
        double hi = wrapped[i] + radius;
        if (lo < 0.0) lo += 1.0;
        if (hi >= 1.0) hi -= 1.0;
        const std::size_t first = lower(lo);
        const std::size_t last = upper(hi);
        start_[i] = first % n;
        length_[i] = lo <= hi ? last - first : (n - first) + last;
    }
}

SpatialIndex build_spatial_index(const ParticleEnsemble& ens, const ModelParams& p) {
    const double radius = std::min(p.kernel().support_radius() * p.epsilon, 0.5);
    return SpatialIndex(ens.positions, radius);
}

SdeCoefficients sde_coefficients(const ParticleEnsemble& ens, const ModelParams& p, const SimScheme& scheme) {
    const auto sums = kernel_sums(ens, p, scheme);
    const std::size_t n = ens.size();
    SdeCoefficients c;
    c.drift.resize(n);
    c.diffusion.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
        if (p.rate_mode == RateMode::Symmetric) {
            c.drift[i] = p.gamma * sums.pg[i];
            c.diffusion[i] = std::sqrt(p.gamma * p.kappa * std::max(sums.g[i], 0.0));
        } else {
            if (!(sums.g[i] > kIsolationFloor))
                throw NumericalError("isolated agent: interaction mass below floor in non-symmetric SDE");
            c.drift[i] = p.gamma * sums.pg[i] / sums.g[i];
            c.diffusion[i] = std::sqrt(p.gamma * p.kappa);
        }
    }
    return c;
}

double max_acceptance_rate(const ParticleEnsemble& ens, const ModelParams& p, std::span<const double> h,
                           const SpatialIndex* index) {
    const std::size_t n = ens.size();
    const double f0 = ens.spatial() ? wrapped_spatial_kernel(0.0, p.epsilon, p.kernel()) : 1.0;
    double worst = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double hi = h.empty() ? 1.0 : h[i];
        double window = 1.0;
        if (ens.spatial() && index) window = static_cast<double>(index->window_size(i) - 1) / static_cast<double>(n - 1);
        worst = std::max(worst, window * f0 / hi);
    }
    return worst;
}

ParticleEnsemble collision_step(const ParticleEnsemble& ens, const ModelParams& p, SimScheme& scheme, Rng& rng,
                                const SpatialIndex* index) {
    require_1d_spatial(ens, p);
    const std::size_t n = ens.size();
    if (n < 2) throw ParamError("collision step needs at least 2 agents");
    const double dt = scheme.dt > 0.0 ? scheme.dt : scheme.target_acceptance;
    const double cap = std::min(scheme.target_acceptance, 1.0);

    SpatialIndex local;
    if (ens.spatial() && !index) {
        local = build_spatial_index(ens, p);
        index = &local;
    }

    std::vector<double> h;
    if (p.rate_mode == RateMode::NonSymmetric) h = kernel_sums(ens, p, scheme).g;

    const auto kernel = p.kernel();
    const auto noise = p.noise();
    const double f0 = ens.spatial() ? wrapped_spatial_kernel(0.0, p.epsilon, kernel) : 1.0;
    const double inv_nm1 = 1.0 / static_cast<double>(n - 1);
    std::uniform_real_distribution<double> unit(0.0, 1.0);

    ParticleEnsemble next = ens;
    for (std::size_t i = 0; i < n; ++i) {
        const double hi = h.empty() ? 1.0 : h[i];
        if (!(hi > kIsolationFloor)) throw NumericalError("isolated agent: interaction mass below floor");
        double window = 1.0;
        std::size_t members = n;
        if (ens.spatial()) {
            members = index->window_size(i);
            if (members < 2) continue;
            window = static_cast<double>(members - 1) * inv_nm1;
        }
        // Bound on the per-proposal acceptance; agents above the cap take
        // several independent proposals with a proportionally shorter step.
        const double bound = dt * window * f0 / hi;
        const double substeps = std::max(1.0, std::ceil(bound / cap - 1e-9));
        if (substeps > 1.0) ++scheme.rejection_cap_warnings;
        if (substeps > 4096.0) {
            throw CflError("collision step: acceptance bound " + std::to_string(bound) + " needs dt <= " +
                               std::to_string(dt * 4096.0 * cap / bound),
                           dt * 4096.0 * cap / bound);
        }
        const int k_sub = static_cast<int>(substeps);
        const double sub_dt = dt / substeps;

        double phi = ens.opinions[i];
        for (int s = 0; s < k_sub; ++s) {
            std::size_t j = 0;
            double rate = 0.0;
            if (ens.spatial()) {
                std::uniform_int_distribution<std::size_t> pick(0, members - 2);
                j = index->member(i, pick(rng));
                if (j == i) j = index->member(i, members - 1);
                rate = window * interaction_kernel(phi - ens.opinions[j], p.zeta) *
                       wrapped_spatial_kernel(torus_delta(ens.positions[i], ens.positions[j]), p.epsilon, kernel);
            } else {
                std::uniform_int_distribution<std::size_t> pick(0, n - 2);
                j = pick(rng);
                if (j >= i) ++j;
                rate = interaction_kernel(phi - ens.opinions[j], p.zeta);
            }
            const double accept = sub_dt * rate / hi;
            if (unit(rng) < accept) phi = interact(phi, ens.opinions[j], p.gamma, sample_noise(noise, rng));
        }
        next.opinions[i] = phi;
    }
    next.t = ens.t + dt;
    return next;
}

ParticleEnsemble sde_step(const ParticleEnsemble& ens, const ModelParams& p, SimScheme& scheme, Rng& rng) {
    require_1d_spatial(ens, p);
    const double dt = scheme.dt > 0.0 ? scheme.dt : scheme.sde_dt;
    const auto c = sde_coefficients(ens, p, scheme);
    std::normal_distribution<double> normal(0.0, 1.0);
    const double sqrt_dt = std::sqrt(dt);
    ParticleEnsemble next = ens;
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const double z = normal(rng);
        next.opinions[i] = ens.opinions[i] + c.drift[i] * dt + c.diffusion[i] * sqrt_dt * z;
    }
    next.t = ens.t + dt;
    return next;
}

FieldEstimate estimate_fields(const ParticleEnsemble& ens, int bins) {
    if (!ens.spatial()) throw ParamError("field estimates need a spatial ensemble");
    if (bins < 4) throw ParamError("field estimates need at least 4 bins");
    FieldEstimate out;
    std::vector<std::size_t> count(bins, 0);
    std::vector<double> sum(bins, 0.0);
    for (std::size_t i = 0; i < ens.size(); ++i) {
        const int b = std::min(bins - 1, static_cast<int>(wrap_unit(ens.positions[i]) * bins));
        ++count[b];
        sum[b] += ens.opinions[i];
    }
    const double width = 1.0 / bins;
    out.rho.resize(bins);
    out.phi.resize(bins);
    for (int b = 0; b < bins; ++b) {
        out.rho[b] = static_cast<double>(count[b]) / (static_cast<double>(ens.size()) * width);
        if (count[b] == 0) {
            out.phi[b] = std::numeric_limits<double>::quiet_NaN();
            ++out.empty_bins;
        } else {
            out.phi[b] = sum[b] / static_cast<double>(count[b]);
        }
    }
    return out;
}

std::pair<double, double> sample_moments(std::span<const double> values) {
    if (values.empty()) return {std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN()};
    double mean = 0.0;
    for (double v : values) mean += v;
    mean /= static_cast<double>(values.size());
    double var = 0.0;
    for (double v : values) var += (v - mean) * (v - mean);
    return {mean, var / static_cast<double>(values.size())};
}

ParticleRun run_particles(ParticleEnsemble ens, const ModelParams& p, SimScheme& scheme,
                          const ParticleRunOptions& options, Rng& rng) {
    validate_params(p);
    require_1d_spatial(ens, p);
    if (ens.size() < 2) throw ParamError("particle run needs at least 2 agents");
    ParticleRun run;
    SpatialIndex index;
    if (ens.spatial()) index = build_spatial_index(ens, p);

    auto record = [&](const ParticleEnsemble& e) {
        ParticleTraceRow row;
        row.t = e.t;
        std::tie(row.mean, row.variance) = sample_moments(e.opinions);
        if (e.spatial() && options.bins > 0) {
            auto fields = estimate_fields(e, options.bins);
            row.rho = std::move(fields.rho);
            row.phi = std::move(fields.phi);
        }
        run.trace.push_back(std::move(row));
    };

    const double base_dt = scheme.dt > 0.0 ? scheme.dt
                           : scheme.scheme == Scheme::CollisionMC ? scheme.target_acceptance
                                                                  : scheme.sde_dt;
    const double t0 = ens.t;
    std::size_t next_index = 1;
    auto next_trace_time = [&]() {
        if (options.trace_every <= 0.0) return options.t_end;
        return std::min(options.t_end, t0 + next_index * options.trace_every);
    };

    record(ens);
    double target = next_trace_time();
    SimScheme stepping = scheme;
    while (ens.t < options.t_end) {
        const double remaining = target - ens.t;
        // Snap to the trace time when within a small fraction of a step.
        const bool lands = remaining <= base_dt * (1.0 + 1e-9);
        stepping.dt = lands ? remaining : base_dt;
        if (scheme.scheme == Scheme::CollisionMC)
            ens = collision_step(ens, p, stepping, rng, ens.spatial() ? &index : nullptr);
        else
            ens = sde_step(ens, p, stepping, rng);
        if (lands) ens.t = target;
        ++run.steps;
        if (lands) {
            record(ens);
            ++next_index;
            target = next_trace_time();
        }
    }
    scheme.rejection_cap_warnings = stepping.rejection_cap_warnings;
    run.ensemble = std::move(ens);
    return run;
}

std::vector<double> sample_positions(std::span<const double> cell_density, std::size_t n, Rng& rng) {
    const std::size_t cells = cell_density.size();
    if (cells == 0) throw ParamError("position density needs at least one cell");
    std::vector<double> cdf(cells + 1, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
        if (cell_density[c] < 0.0) throw ParamError("position density must be non-negative");
        cdf[c + 1] = cdf[c] + cell_density[c];
    }
    if (!(cdf.back() > 0.0)) throw ParamError("position density has zero mass");
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::vector<double> out(n);
    const double width = 1.0 / static_cast<double>(cells);
    for (std::size_t k = 0; k < n; ++k) {
        const double u = unit(rng) * cdf.back();
        const auto it = std::upper_bound(cdf.begin(), cdf.end(), u);
        const std::size_t c = std::min<std::size_t>(cells - 1, static_cast<std::size_t>(it - cdf.begin()) - 1);
        const double frac = cell_density[c] > 0.0 ? (u - cdf[c]) / cell_density[c] : 0.5;
        out[k] = wrap_unit((static_cast<double>(c) + frac) * width);
    }
    return out;
}

} // namespace opk
