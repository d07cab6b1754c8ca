#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"
#include "wfb/flow.hpp"

namespace wfb::cli {

enum class Command { GeomCheck, FlowRun, FlowStability, LsFit, LsAbstract, LinopSpectrum };

// "flow" + "run" -> FlowRun; nullopt for anything unknown
std::optional<Command> parse_command(const std::string& group, const std::string& action);
std::string command_name(Command c);  // "flow run"
std::string command_slug(Command c);  // "flow_run"

struct ConfigIssue {
    std::string code;   // ParseError or ValidationError
    std::string field;  // section.key, or [section] for a whole block
    int line = 0, column = 0;  // 1-based; 0 when the field is absent from the text
    std::string message;
    std::string str() const;
};

struct ScenarioConfig {
    // sections present and every key as written, for canonicalisation and error locations
    std::set<std::string> blocks;
    struct Located {
        std::string value;
        int line = 0, column = 0;
    };
    std::map<std::string, Located> entries;

    // [support]
    std::string support_kind = "plane";  // plane | sphere | ellipsoid
    Vec3 support_point = Vec3::Zero(), support_normal = Vec3::UnitZ(), support_center = Vec3::Zero();
    double support_radius = 1.0;
    Vec3 support_axes = Vec3::Ones();
    double support_tube = 0.5;
    int support_orientation = 1;

    // [reference]
    std::string reference = "hemisphere";  // hemisphere | equatorial_disk | spherical_cap | catenoid_band
    double ref_radius = 1.0;
    double cap_angle_deg = 60.0;
    Vec3 ref_center = Vec3::Zero();

    // [grid]
    Topology topology = Topology::Disk;
    int n_s = 32, n_phi = 1;
    bool axisymmetric = true;

    // [chart]
    double alpha0 = 0.1, r_bar = 0.06;
    double tol_fbc = 0.0, tol_constraint = 1e-10, eps_c1 = 0.25;

    // [flow]
    FlowConfig flow = [] {
        FlowConfig f;
        f.t_end = 50;
        return f;
    }();
    std::string flow_init;  // snapshot to start from, empty for none

    // [perturbation]
    std::string perturbation = "pole_bump";  // pole_bump | angular_bump | band_limited | none
    double amplitude = 0.01, bump_radius = 0.6, bump_center = 0.5;
    int band = 2, perturbation_radial_modes = 4;
    std::optional<std::uint64_t> perturbation_seed;

    // [analysis]
    std::optional<std::uint64_t> seed;
    int samples = 200, radial_modes = 4, angular_modes = 2;
    std::vector<double> shell_edges = {1e-5, 1e-4, 1e-3, 1e-2};
    std::string shell_norm = "h2", gap = "consistent";
    double tau = 0.02, critical_tol = 1e-5, tail_fraction = 0.5;
    std::vector<double> ladder = {0.002, 0.005, 0.01, 0.02, 0.04};
    double ladder_radius = 0.6;
    std::optional<double> e_star;
    double kernel_tol = 0.0;
    int singular_values = 6;
    std::vector<double> scan = {1, 4, 16, 64, 256};
    std::string functional = "x4_y2";  // x4_y2 | parabola | quadratic
    std::vector<double> matrix = {3, 1, 0, 1, 2, 0.5, 0, 0.5, 1};
    std::string diffeo = "none";  // none | rotation | shear
    double angle = 0.7;
    std::vector<double> radii = {1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 1e-6};
    int samples_per_shell = 200;
    double adapted_fraction = 0.5, rank_tol = 1e-6;

    // [output]
    std::string output_dir;
};

struct ParseResult {
    ScenarioConfig config;
    std::vector<ConfigIssue> issues;  // every problem found, in text order
    bool ok() const { return issues.empty(); }
};

ParseResult parse_config(const std::string& text);
// blocks and seeds the command needs
std::vector<ConfigIssue> validate_for(const ScenarioConfig& cfg, Command cmd);

// sorted section.key=value lines with whitespace collapsed; its FNV-1a hash
std::string canonical_text(const ScenarioConfig& cfg);
std::uint64_t config_hash(const ScenarioConfig& cfg);
std::string hex64(std::uint64_t v);

// Fixed little-endian layout: magic, version, grid dims, chart hash, state scalars,
// padded w row by row, FNV-1a checksum of everything before it.
constexpr std::uint32_t kSnapshotVersion = 1;
void write_snapshot(const std::string& path, const FlowState& s, const ParamGrid& g, std::uint64_t chart_hash);
// expect_hash = 0 accepts any chart
FlowState read_snapshot(const std::string& path, const ParamGrid& expect, std::uint64_t expect_hash = 0);

// temp file + rename
void write_atomic(const std::string& path, const std::string& content);

struct RunOptions {
    std::string out_dir;                  // overrides [output] dir and the environment root
    std::optional<std::uint64_t> seed;   // overrides both seeds
    int threads = 1;
    std::string config_path;             // recorded only
};

struct RunReport {
    std::string command, config_hash, artifact_version, status = "ok";
    int exit_code = 0;
    std::string error_family, error_code, error_message;
    std::vector<ConfigIssue> issues;
    double wall_time_s = 0;
    std::string out_dir;
    std::vector<std::string> files;
    nlohmann::json result = nlohmann::json::object();
    nlohmann::json to_json() const;
};

// Environment variable naming the default output root.
constexpr const char* kOutRootEnv = "WFB_OUT_ROOT";

std::string resolve_out_dir(Command cmd, const ScenarioConfig& cfg, const RunOptions& opt);

// Runs the pipeline and writes its outputs and report.json; never throws for
// library errors, which land in the report with their exit code.
RunReport run(Command cmd, ScenarioConfig cfg, const RunOptions& opt);
// Parses the text first; config issues give exit code 3 and still a report.
RunReport run_text(Command cmd, const std::string& config_text, const RunOptions& opt);
// Reads opt.config_path; an unreadable file is an Io failure with a report.
RunReport run_file(Command cmd, const RunOptions& opt);

std::string artifact_version();

}  // namespace wfb::cli
