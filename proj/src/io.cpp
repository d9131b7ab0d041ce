#include "opk/io.hpp"

#include "opk/error.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <charconv>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <numbers>
#include <sstream>

namespace opk {

namespace {

using nlohmann::json;

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

double to_double(const std::string& key, const std::string& v) {
    double out = 0.0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ParamError("config key '" + key + "': expected a number, got '" + v + "'");
    return out;
}

long long to_int(const std::string& key, const std::string& v) {
    long long out = 0;
    const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc() || ptr != v.data() + v.size())
        throw ParamError("config key '" + key + "': expected an integer, got '" + v + "'");
    return out;
}

bool to_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
    if (v == "false" || v == "0" || v == "no" || v == "off") return false;
    throw ParamError("config key '" + key + "': expected a boolean, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

bool known_key(const std::string& key) {
    for (const auto& k : config_keys())
        if (k.name == key) return true;
    return false;
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json params_json(const RunConfig& c) {
    json j = json::object();
    for (const auto& [k, v] : c.values) j[k] = v;
    return j;
}

void write_json(const std::filesystem::path& path, const json& j) {
    std::ofstream out(path);
    if (!out) throw NumericalError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

std::ofstream open_csv(const std::filesystem::path& path) {
    std::ofstream out(path);
    if (!out) throw NumericalError("cannot write " + path.string());
    return out;
}

json summary_skeleton(const std::string& command, const RunConfig& c) {
    json j;
    j["schema"] = kSummarySchema;
    j["command"] = command;
    j["params"] = params_json(c);
    j["headline"] = json::object();
    j["flags"] = json::array();
    return j;
}

std::filesystem::path prepare_out_dir(const RunConfig& c) {
    auto dir = output_directory(c);
    std::filesystem::create_directories(dir);
    return dir;
}

// ---------------------------------------------------------------- subcommands

json analytic_json(const ModelParams& p) {
    json j;
    j["mode"] = std::string(to_string(p.rate_mode));
    j["zeta"] = p.zeta;
    j["kappa"] = p.kappa;
    j["gamma"] = p.gamma;
    j["kappa_crit"] = critical_kappa(p);
    j["spatial_d"] = spatial_diffusivity(p.kernel());
    j["supercritical"] = p.kappa >= critical_kappa(p);
    j["sigma2"] = nullptr;
    j["c_norm"] = nullptr;
    j["c_diff"] = nullptr;
    j["rho_star"] = nullptr;
    if (p.kappa < critical_kappa(p)) {
        const auto s = analytic_summary(p);
        j["sigma2"] = s.sigma2_eq;
        j["c_norm"] = s.c_norm;
        j["c_diff"] = s.c_diff;
        if (s.rho_star) j["rho_star"] = *s.rho_star;
    } else if (p.kappa < p.zeta * p.zeta) {
        j["rho_star"] = crossover_density(p.zeta, p.kappa);
    }
    return j;
}

int cmd_analytic(const RunConfig& c) {
    const auto a = analytic_json(c.params);
    std::cout << a.dump(2) << '\n';
    auto summary = summary_skeleton("analytic", c);
    summary["headline"] = a;
    write_json(prepare_out_dir(c) / "summary.json", summary);
    return kExitOk;
}

int cmd_kinetic(const RunConfig& c) {
    const auto& p = c.params;
    const double half = c.half_width > 0.0 ? c.half_width : default_half_width(p);
    const auto grid = OpinionGrid::centered(c.init_mean, half, c.cells);
    KineticState state;
    if (c.init == "bimodal") {
        state = KineticState::from_function(grid, [&](double x) { return bimodal_density(x - c.init_mean); });
    } else if (c.init == "gaussian") {
        state = KineticState::from_function(grid, [&](double x) { return gaussian_density(c.init_sigma, c.init_mean, x); });
    } else {
        throw ParamError("init must be bimodal or gaussian");
    }
    KineticRunOptions o;
    o.t_end = c.t_end > 0.0 ? c.t_end : 40.0 / p.gamma;
    o.trace_every = c.trace_every > 0.0 ? c.trace_every : o.t_end / 100.0;
    const auto run = run_to_time(std::move(state), p, o);

    const auto dir = prepare_out_dir(c);
    write_kinetic_csv(dir / "kinetic_trace.csv", c, run.trace);
    auto summary = summary_skeleton("kinetic-run", c);
    const auto m = moments(run.state);
    auto& h = summary["headline"];
    h["t_final"] = run.state.t;
    h["mass"] = m.mass;
    h["mean"] = m.mean;
    h["variance"] = m.variance;
    h["fit_distance"] = gaussian_fit_distance(run.state);
    h["residual"] = number_or_null(run.trace.back().residual);
    h["steps"] = run.steps;
    h["clipped"] = run.state.clipped;
    h["saturated"] = run.saturated;
    if (p.kappa < critical_kappa(p)) {
        const double s2 = equilibrium_sigma2(p);
        h["sigma2_analytic"] = s2;
        h["rel_err"] = std::abs(m.variance - s2) / s2;
    }
    if (run.saturated) summary["flags"].push_back("boundary saturated: variance diverging");
    write_json(dir / "summary.json", summary);
    return kExitOk;
}

int cmd_particle(const RunConfig& c) {
    const auto& p = c.params;
    Rng rng = make_stream(c.seed, 0);
    ParticleEnsemble ens;
    ens.seed = derive_seed(c.seed, 0);
    ens.opinions.resize(c.agents);
    if (c.spatial) {
        const auto rho = make_density(c.density, MacroGrid{1, c.bins});
        ens.positions = sample_positions(rho, c.agents, rng);
    }
    std::normal_distribution<double> normal(0.0, c.init_sigma);
    for (std::size_t i = 0; i < c.agents; ++i) {
        if (c.spatial && c.phi_init == "sine") {
            ens.opinions[i] = c.init_mean + c.phi_amplitude * std::sin(2.0 * std::numbers::pi * ens.positions[i]) +
                              normal(rng);
        } else if (c.init == "bimodal") {
            ens.opinions[i] = c.init_mean + sample_bimodal(rng);
        } else if (c.init == "gaussian") {
            ens.opinions[i] = c.init_mean + normal(rng);
        } else {
            throw ParamError("init must be bimodal or gaussian");
        }
    }
    SimScheme scheme = c.scheme;
    ParticleRunOptions o;
    o.t_end = c.t_end > 0.0 ? c.t_end : 20.0 / p.gamma;
    o.trace_every = c.trace_every > 0.0 ? c.trace_every : o.t_end / 20.0;
    o.bins = c.spatial ? c.bins : 0;
    const auto run = run_particles(std::move(ens), p, scheme, o, rng);

    const auto dir = prepare_out_dir(c);
    write_particle_csv(dir / "particle_trace.csv", c, run.trace);
    if (c.dump_state) {
        auto out = open_csv(dir / "final_state.csv");
        out << "# schema=opk.particle-state.v1\n";
        out << (run.ensemble.spatial() ? "opinion,position\n" : "opinion\n");
        for (std::size_t i = 0; i < run.ensemble.size(); ++i) {
            out << format_double(run.ensemble.opinions[i]);
            if (run.ensemble.spatial()) out << ',' << format_double(run.ensemble.positions[i]);
            out << '\n';
        }
    }
    auto summary = summary_skeleton("particle-run", c);
    auto& h = summary["headline"];
    h["t_final"] = run.ensemble.t;
    h["mean"] = run.trace.back().mean;
    h["variance"] = run.trace.back().variance;
    h["steps"] = run.steps;
    h["substepped_agents"] = scheme.rejection_cap_warnings;
    if (p.kappa < critical_kappa(p)) h["sigma2_analytic"] = equilibrium_sigma2(p);
    write_json(dir / "summary.json", summary);
    return kExitOk;
}

int cmd_macro(const RunConfig& c) {
    const auto& p = c.params;
    const auto mode = p.rate_mode;
    auto kernel = p.kernel();
    kernel.dim = c.macro_grid.dim;
    const double coefficient = diffusion_coefficient(p, kernel);
    const auto& d = c.density;
    auto phi0 = [&](double x, double) {
        if (c.phi_init == "sine") return c.phi_amplitude * std::sin(2.0 * std::numbers::pi * x);
        if (c.phi_init == "constant") return c.phi_amplitude;
        if (c.phi_init == "step") return (x >= d.edge_lo && x < d.edge_hi) ? c.phi_amplitude : 0.0;
        throw ParamError("phi_init must be sine, constant or step");
    };
    auto state = MacroState::make(c.macro_grid, c.boundary, make_density(d, c.macro_grid), phi0);
    const auto initial = state;

    MacroRunOptions o;
    const double k2 = 4.0 * std::numbers::pi * std::numbers::pi;
    o.t_end = c.t_end > 0.0 ? c.t_end : 5.0 / (coefficient * k2);
    o.trace_every = c.trace_every > 0.0 ? c.trace_every : o.t_end / 200.0;
    o.dt = c.macro_dt;
    o.face = c.face;
    o.rho_min = d.rho_min;
    const auto run = run_macro(std::move(state), mode, coefficient, o);

    const auto dir = prepare_out_dir(c);
    write_macro_csv(dir / "macro_trace.csv", c, run.trace);
    {
        auto out = open_csv(dir / "macro_final.csv");
        write_csv_header(out, "opk.macro-field.v1", c,
                         c.macro_grid.dim == 1 ? std::vector<std::string>{"alpha", "rho", "phi"}
                                               : std::vector<std::string>{"alpha", "beta", "rho", "phi"});
        const auto& s = run.state;
        for (std::size_t k = 0; k < s.phi.size(); ++k) {
            out << format_double(s.grid.center(static_cast<int>(k % s.grid.cells)));
            if (s.grid.dim == 2) out << ',' << format_double(s.grid.center(static_cast<int>(k / s.grid.cells)));
            out << ',' << format_double(s.rho[k]) << ',' << format_double(s.phi[k]) << '\n';
        }
    }
    auto summary = summary_skeleton("macro-run", c);
    auto& h = summary["headline"];
    h["coefficient"] = coefficient;
    h["steps"] = run.steps;
    const double scale = conserved_scale(initial, mode);
    h["conservation_rel"] =
        scale > 0.0 ? std::abs(run.trace.back().conserved - run.trace.front().conserved) / scale : 0.0;
    bool monotone = true;
    for (std::size_t k = 1; k < run.trace.size(); ++k)
        if (run.trace[k].entropy > run.trace[k - 1].entropy) monotone = false;
    h["entropy_monotone"] = monotone;
    const auto ct = consensus_time(run.trace, c.experiment.consensus_tol);
    h["consensus_time"] = ct.time;
    h["consensus_censored"] = ct.censored;
    if (ct.censored) summary["flags"].push_back("consensus not reached within t_end");
    if (!monotone) summary["flags"].push_back("entropy increased");
    write_json(dir / "summary.json", summary);
    return kExitOk;
}

int cmd_experiment(const RunConfig& c, const std::string& kind_text) {
    ExperimentSpec spec = c.experiment;
    spec.kind = parse_experiment_kind(kind_text);
    const auto result = run_experiment(spec);
    const auto dir = prepare_out_dir(c);
    const std::string name(to_string(spec.kind));
    write_table_csv(dir / (name + ".csv"), c, result.table);
    auto summary = summary_skeleton("experiment " + name, c);
    for (const auto& [k, v] : result.headline) summary["headline"][k] = number_or_null(v);
    for (const auto& f : result.flags) summary["flags"].push_back(f);
    if (spec.kind == ExperimentKind::VarianceVsKappa || spec.kind == ExperimentKind::Crossover) {
        ModelParams p = spec.base;
        for (auto mode : {RateMode::Symmetric, RateMode::NonSymmetric}) {
            p.rate_mode = mode;
            if (p.kappa < critical_kappa(p))
                summary["analytic"][std::string(to_string(mode))] = analytic_json(p);
        }
    }
    write_json(dir / "summary.json", summary);
    for (const auto& f : result.flags) std::cerr << "flag: " << f << '\n';
    if (spec.kind == ExperimentKind::VarianceVsKappa && !result.flags.empty()) return kExitNumerical;
    return kExitOk;
}

} // namespace

const std::vector<ConfigKey>& config_keys() {
    static const std::vector<ConfigKey> keys = {
        {"gamma", "0.05", "consensus strength in (0, 1/2]"},
        {"kappa", "0.5", "noise-to-consensus ratio"},
        {"zeta", "1", "opinion interaction scale"},
        {"rate_mode", "symmetric", "symmetric | nonsymmetric"},
        {"epsilon", "0.1", "spatial interaction range"},
        {"spatial_dim", "1", "spatial dimension (1 or 2)"},
        {"noise_law", "gaussian", "gaussian | uniform"},
        {"kernel_shape", "gaussian", "gaussian | indicator"},
        {"seed", "1", "master seed"},
        {"out_dir", "out", "output directory (OPK_OUT_DIR overrides)"},
        {"threads", "0", "worker threads for sweeps and replicas (0 = hardware)"},
        {"t_end", "0", "run length (0 = command default)"},
        {"trace_every", "0", "trace interval (0 = command default)"},
        {"cells", "512", "kinetic opinion cells"},
        {"half_width", "0", "kinetic domain half-width (0 = automatic)"},
        {"init", "bimodal", "initial opinions: bimodal | gaussian"},
        {"init_sigma", "1", "initial opinion spread (gaussian init, spatial noise)"},
        {"init_mean", "0", "initial opinion centre"},
        {"agents", "10000", "number of agents"},
        {"scheme", "collision", "collision | sde"},
        {"dt", "0", "particle step (0 = adaptive)"},
        {"target_acceptance", "0.2", "maximum acceptance per proposal"},
        {"sde_dt", "0.05", "default MeanFieldSDE step"},
        {"field_method", "auto", "kernel sums: auto | exact | binned"},
        {"exact_field_limit", "2000", "auto uses exact sums up to this many agents"},
        {"opinion_bin_fraction", "0.03125", "binned sums: opinion cell / zeta"},
        {"position_bin_fraction", "0.16666666666666666", "binned sums: position cell / epsilon"},
        {"spatial", "false", "particle-run with positions on the torus"},
        {"bins", "32", "position bins for field estimates"},
        {"dump_state", "false", "write the final particle state"},
        {"macro_cells", "128", "macro cells per axis"},
        {"macro_dim", "1", "macro grid dimension"},
        {"boundary", "periodic", "periodic | zeroflux"},
        {"face_average", "harmonic", "harmonic | arithmetic"},
        {"density", "uniform", "uniform | step | gaussbump | twocluster"},
        {"rho0", "1", "uniform / background density"},
        {"rho_lo", "0.5", "step density outside the step"},
        {"rho_hi", "2", "step density inside the step"},
        {"edge_lo", "0", "step start"},
        {"edge_hi", "0.5", "step end"},
        {"bump_height", "2", "bump peak above rho0"},
        {"bump_width", "0.1", "bump width"},
        {"bump_center", "0.5", "bump centre"},
        {"cluster_separation", "0.5", "two-cluster separation"},
        {"rho_min", "0.001", "density floor"},
        {"phi_init", "sine", "macro initial opinion: sine | constant | step"},
        {"phi_amplitude", "1", "initial opinion amplitude"},
        {"macro_dt", "0", "macro step (0 = CFL bound)"},
        {"sweep", "", "comma-separated sweep values (kappa / kappa_c, rho0 or epsilon)"},
        {"modes", "", "comma-separated rate modes"},
        {"replicas", "16", "replicas per configuration"},
        {"t_end_over_gamma", "0", "experiment run length in units of 1/gamma (0 = default)"},
        {"equilibration_window", "5", "equilibration window in units of 1/gamma"},
        {"equilibration_tol", "1e-05", "relative variance change treated as equilibrated"},
        {"divergence_tstat", "5", "t-statistic for the divergence trend"},
        {"checkpoints", "20", "particle-vs-kinetic checkpoints"},
        {"consensus_tol", "0.01", "consensus amplitude fraction"},
        {"macro_t_end", "1000", "crossover macro run cap"},
        {"diffusive_time", "1.5", "spatial-limit horizon in diffusive time"},
        {"diffusive_checkpoints", "6", "spatial-limit checkpoints"},
    };
    return keys;
}

KeyValues read_config_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParamError("cannot open config file " + path.string());
    KeyValues out;
    std::string line;
    int number = 0;
    while (std::getline(in, line)) {
        ++number;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw ParamError(path.string() + ":" + std::to_string(number) + ": expected key=value");
        const auto key = trim(line.substr(0, eq));
        if (!known_key(key)) throw ParamError("unknown config key '" + key + "'");
        out[key] = trim(line.substr(eq + 1));
    }
    return out;
}

RunConfig resolve_config(const KeyValues& merged) {
    RunConfig c;
    for (const auto& k : config_keys()) c.values[k.name] = k.default_value;
    for (const auto& [k, v] : merged) {
        if (!known_key(k)) throw ParamError("unknown config key '" + k + "'");
        c.values[k] = v;
    }
    auto str = [&](const char* k) -> const std::string& { return c.values.at(k); };
    auto num = [&](const char* k) { return to_double(k, str(k)); };
    auto integer = [&](const char* k) { return to_int(k, str(k)); };
    auto positive_int = [&](const char* k) {
        const auto v = integer(k);
        if (v < 0) throw ParamError(std::string("config key '") + k + "' must be non-negative");
        return v;
    };

    auto& p = c.params;
    p.gamma = num("gamma");
    p.kappa = num("kappa");
    p.zeta = num("zeta");
    p.rate_mode = parse_rate_mode(str("rate_mode"));
    p.epsilon = num("epsilon");
    p.spatial_dim = static_cast<int>(integer("spatial_dim"));
    p.noise_law = parse_noise_law(str("noise_law"));
    p.kernel_shape = parse_kernel_shape(str("kernel_shape"));
    validate_params(p);

    c.seed = static_cast<std::uint64_t>(positive_int("seed"));
    c.out_dir = str("out_dir");
    c.threads = static_cast<int>(positive_int("threads"));
    c.t_end = num("t_end");
    c.trace_every = num("trace_every");
    c.cells = static_cast<int>(positive_int("cells"));
    c.half_width = num("half_width");
    c.init = str("init");
    c.init_sigma = num("init_sigma");
    c.init_mean = num("init_mean");
    if (c.cells < 16) throw ParamError("cells must be at least 16");
    if (!(c.init_sigma > 0.0)) throw ParamError("init_sigma must be positive");

    c.agents = static_cast<std::size_t>(positive_int("agents"));
    c.scheme.scheme = parse_scheme(str("scheme"));
    c.scheme.dt = num("dt");
    c.scheme.target_acceptance = num("target_acceptance");
    c.scheme.sde_dt = num("sde_dt");
    c.scheme.field_method = parse_field_method(str("field_method"));
    c.scheme.exact_field_limit = static_cast<std::size_t>(positive_int("exact_field_limit"));
    c.scheme.opinion_bin_fraction = num("opinion_bin_fraction");
    c.scheme.position_bin_fraction = num("position_bin_fraction");
    if (!(c.scheme.target_acceptance > 0.0 && c.scheme.target_acceptance <= 1.0))
        throw ParamError("target_acceptance must lie in (0, 1]");
    if (!(c.scheme.sde_dt > 0.0)) throw ParamError("sde_dt must be positive");
    if (!(c.scheme.opinion_bin_fraction > 0.0) || !(c.scheme.position_bin_fraction > 0.0))
        throw ParamError("bin fractions must be positive");
    c.spatial = to_bool("spatial", str("spatial"));
    c.bins = static_cast<int>(positive_int("bins"));
    c.dump_state = to_bool("dump_state", str("dump_state"));

    c.macro_grid.cells = static_cast<int>(positive_int("macro_cells"));
    c.macro_grid.dim = static_cast<int>(integer("macro_dim"));
    if (c.macro_grid.dim != 1 && c.macro_grid.dim != 2) throw ParamError("macro_dim must be 1 or 2");
    if (c.macro_grid.cells < 4) throw ParamError("macro_cells must be at least 4");
    c.boundary = parse_boundary(str("boundary"));
    c.face = parse_face_average(str("face_average"));
    auto& d = c.density;
    d.kind = parse_density_kind(str("density"));
    d.rho0 = num("rho0");
    d.rho_lo = num("rho_lo");
    d.rho_hi = num("rho_hi");
    d.edge_lo = num("edge_lo");
    d.edge_hi = num("edge_hi");
    d.bump_height = num("bump_height");
    d.bump_width = num("bump_width");
    d.bump_center = num("bump_center");
    d.cluster_separation = num("cluster_separation");
    d.rho_min = num("rho_min");
    c.phi_init = str("phi_init");
    c.phi_amplitude = num("phi_amplitude");
    c.macro_dt = num("macro_dt");

    auto& e = c.experiment;
    e.base = p;
    for (const auto& v : split_list(str("sweep"))) e.sweep.push_back(to_double("sweep", v));
    for (const auto& v : split_list(str("modes"))) e.modes.push_back(parse_rate_mode(v));
    e.replicas = static_cast<int>(integer("replicas"));
    e.seed = c.seed;
    e.threads = c.threads;
    e.kinetic_cells = c.cells;
    e.t_end_over_gamma = num("t_end_over_gamma");
    e.equilibration_window = num("equilibration_window");
    e.equilibration_tol = num("equilibration_tol");
    e.divergence_tstat = num("divergence_tstat");
    e.checkpoints = static_cast<int>(integer("checkpoints"));
    e.agents = c.agents;
    e.scheme = c.scheme;
    e.macro_cells = c.macro_grid.cells;
    e.consensus_tol = num("consensus_tol");
    e.macro_t_end = num("macro_t_end");
    e.bins = c.bins;
    e.diffusive_time = num("diffusive_time");
    e.diffusive_checkpoints = static_cast<int>(integer("diffusive_checkpoints"));
    validate_spec(e);
    return c;
}

RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides) {
    KeyValues merged;
    if (!file.empty()) merged = read_config_file(file);
    for (const auto& [k, v] : overrides) merged[k] = v;
    return resolve_config(merged);
}

std::filesystem::path output_directory(const RunConfig& config) {
    if (const char* env = std::getenv("OPK_OUT_DIR"); env && *env) return env;
    return config.out_dir;
}

std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, ptr);
}

void write_csv_header(std::ostream& out, const char* schema, const RunConfig& config,
                      const std::vector<std::string>& columns) {
    out << "# schema=" << schema << '\n';
    for (const auto& [k, v] : config.values) out << "# " << k << '=' << v << '\n';
    for (std::size_t i = 0; i < columns.size(); ++i) out << (i ? "," : "") << columns[i];
    out << '\n';
}

void write_kinetic_csv(const std::filesystem::path& path, const RunConfig& config,
                       const std::vector<KineticTraceRow>& rows) {
    auto out = open_csv(path);
    write_csv_header(out, kKineticSchema, config, {"t", "mass", "mean", "variance", "residual"});
    for (const auto& r : rows)
        out << format_double(r.t) << ',' << format_double(r.mass) << ',' << format_double(r.mean) << ','
            << format_double(r.variance) << ',' << format_double(r.residual) << '\n';
}

void write_macro_csv(const std::filesystem::path& path, const RunConfig& config, const std::vector<MacroTraceRow>& rows) {
    auto out = open_csv(path);
    write_csv_header(out, kMacroSchema, config, {"t", "conserved", "entropy", "dissipation_rhs", "amplitude"});
    for (const auto& r : rows)
        out << format_double(r.t) << ',' << format_double(r.conserved) << ',' << format_double(r.entropy) << ','
            << format_double(r.dissipation_rhs) << ',' << format_double(r.amplitude) << '\n';
}

void write_particle_csv(const std::filesystem::path& path, const RunConfig& config,
                        const std::vector<ParticleTraceRow>& rows) {
    auto out = open_csv(path);
    std::vector<std::string> columns{"t", "mean", "variance"};
    const std::size_t bins = rows.empty() ? 0 : rows.front().rho.size();
    for (std::size_t b = 0; b < bins; ++b) columns.push_back("rho_" + std::to_string(b));
    for (std::size_t b = 0; b < bins; ++b) columns.push_back("phi_" + std::to_string(b));
    write_csv_header(out, kParticleSchema, config, columns);
    for (const auto& r : rows) {
        out << format_double(r.t) << ',' << format_double(r.mean) << ',' << format_double(r.variance);
        for (double v : r.rho) out << ',' << format_double(v);
        for (double v : r.phi) out << ',' << format_double(v);
        out << '\n';
    }
}

void write_table_csv(const std::filesystem::path& path, const RunConfig& config, const Table& table) {
    auto out = open_csv(path);
    write_csv_header(out, kExperimentSchema, config, table.columns);
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) {
            if (i) out << ',';
            if (const auto* d = std::get_if<double>(&row[i]))
                out << format_double(*d);
            else
                out << std::get<std::string>(row[i]);
        }
        out << '\n';
    }
}

int run_cli(int argc, char** argv) {
    CLI::App app{"Opinion kinetics: analytic closed forms, kinetic, particle and macroscopic solvers"};
    app.fallthrough();
    app.require_subcommand(1);
    std::string config_file;
    app.add_option("-c,--config", config_file, "key=value configuration file");

    KeyValues flags;
    std::vector<std::pair<std::string, CLI::Option*>> options;
    for (const auto& k : config_keys()) {
        std::string names = "--" + k.name;
        if (k.name == "rate_mode") names += ",--mode";
        auto* opt = app.add_option(names, flags[k.name], k.help + " [" + k.default_value + "]");
        options.emplace_back(k.name, opt);
    }

    auto* analytic = app.add_subcommand("analytic", "print the closed-form summary as JSON");
    auto* kinetic = app.add_subcommand("kinetic-run", "homogeneous kinetic solver run");
    auto* particle = app.add_subcommand("particle-run", "stochastic particle run");
    auto* macro = app.add_subcommand("macro-run", "macroscopic mean-opinion run");
    auto* experiment = app.add_subcommand("experiment", "run an experiment driver");
    std::string kind;
    experiment->add_option("kind", kind,
                           "variance-vs-kappa | phase-scan | crossover | particle-vs-kinetic | kinetic-vs-macro | "
                           "entropy-audit")
        ->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        KeyValues overrides;
        for (const auto& [name, opt] : options)
            if (opt->count() > 0) overrides[name] = flags[name];
        const auto config = parse_config(config_file, overrides);
        if (analytic->parsed()) return cmd_analytic(config);
        if (kinetic->parsed()) return cmd_kinetic(config);
        if (particle->parsed()) return cmd_particle(config);
        if (macro->parsed()) return cmd_macro(config);
        if (experiment->parsed()) return cmd_experiment(config, kind);
    } catch (const ParamError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return kExitConfig;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << '\n';
        return kExitNumerical;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitNumerical;
    }
    return kExitConfig;
}

} // namespace opk
