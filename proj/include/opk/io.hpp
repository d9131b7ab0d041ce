#pragma once

// Run configuration, CSV/JSON output and the command-line front end.
//
// Configuration is a flat key=value map. Defaults are overridden by a config
// file (one key=value per line, '#' comments), which is overridden by
// --key value flags. Unknown keys and malformed values raise ParamError.

#include "opk/experiments.hpp"
#include "opk/kinetic.hpp"
#include "opk/macro.hpp"
#include "opk/model.hpp"
#include "opk/particles.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

namespace opk {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitNumerical = 3;

inline constexpr const char* kKineticSchema = "opk.kinetic-trace.v1";
inline constexpr const char* kMacroSchema = "opk.macro-trace.v1";
inline constexpr const char* kParticleSchema = "opk.particle-trace.v1";
inline constexpr const char* kExperimentSchema = "opk.experiment-table.v1";
inline constexpr const char* kSummarySchema = "opk.summary.v1";

struct ConfigKey {
    std::string name;
    std::string default_value;
    std::string help;
};

/// Every recognised key with its default, in output order.
const std::vector<ConfigKey>& config_keys();

using KeyValues = std::map<std::string, std::string>;

/// Reads key=value lines. Throws ParamError on unknown keys or syntax errors.
KeyValues read_config_file(const std::filesystem::path& path);

struct RunConfig {
    KeyValues values;  ///< fully resolved, one entry per key

    ModelParams params;
    SimScheme scheme;
    std::uint64_t seed = 1;
    std::filesystem::path out_dir;
    int threads = 0;

    double t_end = 0.0;         ///< 0 selects a per-command default
    double trace_every = 0.0;

    // kinetic-run
    int cells = kDefaultCells;
    double half_width = 0.0;    ///< 0 = default_half_width
    std::string init = "bimodal";
    double init_sigma = 1.0;
    double init_mean = 0.0;

    // particle-run
    std::size_t agents = 10000;
    bool spatial = false;
    int bins = 32;
    bool dump_state = false;

    // macro-run
    MacroGrid macro_grid;
    Boundary boundary = Boundary::Periodic;
    FaceAverage face = FaceAverage::Harmonic;
    DensityPreset density;
    std::string phi_init = "sine";
    double phi_amplitude = 1.0;
    double macro_dt = 0.0;

    ExperimentSpec experiment;
};

/// Defaults, then `file` (if non-empty), then `overrides`. Validates the model parameters.
RunConfig parse_config(const std::filesystem::path& file, const KeyValues& overrides);
RunConfig resolve_config(const KeyValues& merged);

/// Output directory: OPK_OUT_DIR if set, else the configured one.
std::filesystem::path output_directory(const RunConfig& config);

/// Shortest round-trip decimal form; NaN as "nan".
std::string format_double(double v);

/// Schema line, resolved-config comment block, then the column header.
void write_csv_header(std::ostream& out, const char* schema, const RunConfig& config,
                      const std::vector<std::string>& columns);

void write_kinetic_csv(const std::filesystem::path& path, const RunConfig& config,
                       const std::vector<KineticTraceRow>& rows);
void write_macro_csv(const std::filesystem::path& path, const RunConfig& config, const std::vector<MacroTraceRow>& rows);
void write_particle_csv(const std::filesystem::path& path, const RunConfig& config,
                        const std::vector<ParticleTraceRow>& rows);
void write_table_csv(const std::filesystem::path& path, const RunConfig& config, const Table& table);

/// Parses argv and runs the selected subcommand. Returns the exit status.
int run_cli(int argc, char** argv);

} // namespace opk
