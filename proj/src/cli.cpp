#include "wfb/cli.hpp"

#include <bit>
#include <charconv>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numbers>
#include <sstream>

#include "wfb/errors.hpp"
#include "wfb/linearized.hpp"
#include "wfb/ls_abstract.hpp"
#include "wfb/ls_analysis.hpp"

#ifndef WFB_VERSION
#define WFB_VERSION "0.1.0"
#endif

namespace wfb::cli {

namespace fs = std::filesystem;
using nlohmann::json;

std::string artifact_version() { return WFB_VERSION; }

std::optional<Command> parse_command(const std::string& group, const std::string& action) {
    static const std::map<std::string, Command> table = {
        {"geom check", Command::GeomCheck},   {"flow run", Command::FlowRun},   {"flow stability", Command::FlowStability},
        {"ls fit", Command::LsFit},           {"ls abstract", Command::LsAbstract}, {"linop spectrum", Command::LinopSpectrum}};
    const auto it = table.find(group + " " + action);
    if (it == table.end()) return std::nullopt;
    return it->second;
}

std::string command_name(Command c) {
    switch (c) {
        case Command::GeomCheck: return "geom check";
        case Command::FlowRun: return "flow run";
        case Command::FlowStability: return "flow stability";
        case Command::LsFit: return "ls fit";
        case Command::LsAbstract: return "ls abstract";
        case Command::LinopSpectrum: return "linop spectrum";
    }
    return "?";
}

std::string command_slug(Command c) {
    std::string s = command_name(c);
    for (char& ch : s)
        if (ch == ' ') ch = '_';
    return s;
}

std::string ConfigIssue::str() const {
    std::ostringstream os;
    os << code;
    if (line > 0) os << " at " << line << ":" << column;
    if (!field.empty()) os << " [" << field << "]";
    os << ": " << message;
    return os.str();
}

// ---------------------------------------------------------------- parsing

namespace {

std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r");
    return s.substr(a, b - a + 1);
}

std::vector<std::string> tokens(const std::string& s) {
    std::istringstream in(s);
    std::vector<std::string> out;
    for (std::string t; in >> t;) out.push_back(t);
    return out;
}

std::optional<double> to_double(const std::string& s) {
    double v = 0;
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end || !std::isfinite(v)) return std::nullopt;
    return v;
}

std::optional<long long> to_int(const std::string& s) {
    long long v = 0;
    const auto* end = s.data() + s.size();
    const auto r = std::from_chars(s.data(), end, v);
    if (r.ec != std::errc() || r.ptr != end) return std::nullopt;
    return v;
}

// a setter returns an empty string or the reason the value was refused
using Setter = std::function<std::string(ScenarioConfig&, const std::string&)>;

Setter real(double ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        const auto d = to_double(v);
        if (!d) return "expected a number, got '" + v + "'";
        c.*m = *d;
        return "";
    };
}

Setter real_in(std::function<double&(ScenarioConfig&)> ref) {
    return [ref](ScenarioConfig& c, const std::string& v) -> std::string {
        const auto d = to_double(v);
        if (!d) return "expected a number, got '" + v + "'";
        ref(c) = *d;
        return "";
    };
}

Setter integer_in(std::function<void(ScenarioConfig&, long long)> put) {
    return [put](ScenarioConfig& c, const std::string& v) -> std::string {
        const auto d = to_int(v);
        if (!d) return "expected an integer, got '" + v + "'";
        put(c, *d);
        return "";
    };
}

Setter integer(int ScenarioConfig::*m) {
    return integer_in([m](ScenarioConfig& c, long long v) { c.*m = static_cast<int>(v); });
}

Setter seed(std::optional<std::uint64_t> ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        std::uint64_t x = 0;
        const auto* end = v.data() + v.size();
        const auto r = std::from_chars(v.data(), end, x);
        if (r.ec != std::errc() || r.ptr != end) return "expected a nonnegative integer seed, got '" + v + "'";
        c.*m = x;
        return "";
    };
}

Setter boolean(bool ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        if (v == "true" || v == "yes" || v == "1") c.*m = true;
        else if (v == "false" || v == "no" || v == "0") c.*m = false;
        else return "expected true or false, got '" + v + "'";
        return "";
    };
}

Setter choice(std::string ScenarioConfig::*m, std::vector<std::string> allowed) {
    return [m, allowed](ScenarioConfig& c, const std::string& v) -> std::string {
        for (const auto& a : allowed)
            if (a == v) {
                c.*m = v;
                return "";
            }
        std::string msg = "expected one of";
        for (const auto& a : allowed) msg += " " + a;
        return msg + ", got '" + v + "'";
    };
}

Setter text(std::string ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        c.*m = v;
        return "";
    };
}

Setter list(std::vector<double> ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        std::vector<double> out;
        for (const auto& t : tokens(v)) {
            const auto d = to_double(t);
            if (!d) return "expected numbers, got '" + t + "'";
            out.push_back(*d);
        }
        c.*m = out;
        return "";
    };
}

Setter vec3(Vec3 ScenarioConfig::*m) {
    return [m](ScenarioConfig& c, const std::string& v) -> std::string {
        const auto t = tokens(v);
        if (t.size() != 3) return "expected three numbers";
        Vec3 x;
        for (int k = 0; k < 3; ++k) {
            const auto d = to_double(t[k]);
            if (!d) return "expected numbers, got '" + t[k] + "'";
            x[k] = *d;
        }
        c.*m = x;
        return "";
    };
}

const std::map<std::string, Setter>& schema() {
    static const std::map<std::string, Setter> s = [] {
        std::map<std::string, Setter> m;
        m["support.kind"] = choice(&ScenarioConfig::support_kind, {"plane", "sphere", "ellipsoid"});
        m["support.point"] = vec3(&ScenarioConfig::support_point);
        m["support.normal"] = vec3(&ScenarioConfig::support_normal);
        m["support.center"] = vec3(&ScenarioConfig::support_center);
        m["support.radius"] = real(&ScenarioConfig::support_radius);
        m["support.axes"] = vec3(&ScenarioConfig::support_axes);
        m["support.tube"] = real(&ScenarioConfig::support_tube);
        m["support.orientation"] = integer(&ScenarioConfig::support_orientation);

        m["reference.kind"] =
            choice(&ScenarioConfig::reference, {"hemisphere", "equatorial_disk", "spherical_cap", "catenoid_band"});
        m["reference.radius"] = real(&ScenarioConfig::ref_radius);
        m["reference.angle_deg"] = real(&ScenarioConfig::cap_angle_deg);
        m["reference.center"] = vec3(&ScenarioConfig::ref_center);

        m["grid.topology"] = [](ScenarioConfig& c, const std::string& v) -> std::string {
            if (v == "disk") c.topology = Topology::Disk;
            else if (v == "annulus") c.topology = Topology::Annulus;
            else return "expected disk or annulus, got '" + v + "'";
            return "";
        };
        m["grid.n_s"] = integer(&ScenarioConfig::n_s);
        m["grid.n_phi"] = integer(&ScenarioConfig::n_phi);
        m["grid.axisymmetric"] = boolean(&ScenarioConfig::axisymmetric);

        m["chart.alpha0"] = real(&ScenarioConfig::alpha0);
        m["chart.r_bar"] = real(&ScenarioConfig::r_bar);
        m["chart.tol_fbc"] = real(&ScenarioConfig::tol_fbc);
        m["chart.tol_constraint"] = real(&ScenarioConfig::tol_constraint);
        m["chart.eps_c1"] = real(&ScenarioConfig::eps_c1);

        auto fl = [](double FlowConfig::*f) { return real_in([f](ScenarioConfig& c) -> double& { return c.flow.*f; }); };
        m["flow.dt"] = fl(&FlowConfig::dt);
        m["flow.t_end"] = fl(&FlowConfig::t_end);
        m["flow.grad_tol"] = fl(&FlowConfig::grad_tol);
        m["flow.dt_max"] = fl(&FlowConfig::dt_max);
        m["flow.dt_min"] = fl(&FlowConfig::dt_min);
        m["flow.eps_step"] = fl(&FlowConfig::eps_step);
        m["flow.armijo"] = fl(&FlowConfig::armijo);
        m["flow.bc_tol"] = fl(&FlowConfig::bc_tol);
        m["flow.lin_tol"] = fl(&FlowConfig::lin_tol);
        m["flow.max_steps"] = integer_in([](ScenarioConfig& c, long long v) { c.flow.max_steps = static_cast<long>(v); });
        m["flow.monitor_interval"] = integer_in([](ScenarioConfig& c, long long v) { c.flow.monitor_interval = static_cast<int>(v); });
        m["flow.grow_after"] = integer_in([](ScenarioConfig& c, long long v) { c.flow.grow_after = static_cast<int>(v); });
        m["flow.stall_ratio"] = fl(&FlowConfig::stall_ratio);
        m["flow.picard_max"] = integer_in([](ScenarioConfig& c, long long v) { c.flow.picard_max = static_cast<int>(v); });
        m["flow.scheme"] = [](ScenarioConfig& c, const std::string& v) -> std::string {
            if (v == "semi_implicit") c.flow.scheme = Scheme::SemiImplicit;
            else if (v == "explicit") c.flow.scheme = Scheme::Explicit;
            else return "expected semi_implicit or explicit, got '" + v + "'";
            return "";
        };
        m["flow.init"] = text(&ScenarioConfig::flow_init);

        m["perturbation.type"] =
            choice(&ScenarioConfig::perturbation, {"pole_bump", "angular_bump", "band_limited", "none"});
        m["perturbation.amplitude"] = real(&ScenarioConfig::amplitude);
        m["perturbation.radius"] = real(&ScenarioConfig::bump_radius);
        m["perturbation.center"] = real(&ScenarioConfig::bump_center);
        m["perturbation.band"] = integer(&ScenarioConfig::band);
        m["perturbation.radial_modes"] = integer(&ScenarioConfig::perturbation_radial_modes);
        m["perturbation.seed"] = seed(&ScenarioConfig::perturbation_seed);

        m["analysis.seed"] = seed(&ScenarioConfig::seed);
        m["analysis.samples"] = integer(&ScenarioConfig::samples);
        m["analysis.radial_modes"] = integer(&ScenarioConfig::radial_modes);
        m["analysis.angular_modes"] = integer(&ScenarioConfig::angular_modes);
        m["analysis.shell_edges"] = list(&ScenarioConfig::shell_edges);
        m["analysis.shell_norm"] = choice(&ScenarioConfig::shell_norm, {"h2", "c0"});
        m["analysis.gap"] = choice(&ScenarioConfig::gap, {"consistent", "discrete"});
        m["analysis.tau"] = real(&ScenarioConfig::tau);
        m["analysis.critical_tol"] = real(&ScenarioConfig::critical_tol);
        m["analysis.tail_fraction"] = real(&ScenarioConfig::tail_fraction);
        m["analysis.ladder"] = list(&ScenarioConfig::ladder);
        m["analysis.ladder_radius"] = real(&ScenarioConfig::ladder_radius);
        m["analysis.e_star"] = [](ScenarioConfig& c, const std::string& v) -> std::string {
            const auto d = to_double(v);
            if (!d) return "expected a number, got '" + v + "'";
            c.e_star = *d;
            return "";
        };
        m["analysis.kernel_tol"] = real(&ScenarioConfig::kernel_tol);
        m["analysis.singular_values"] = integer(&ScenarioConfig::singular_values);
        m["analysis.scan"] = list(&ScenarioConfig::scan);
        m["analysis.functional"] = choice(&ScenarioConfig::functional, {"x4_y2", "parabola", "quadratic"});
        m["analysis.matrix"] = list(&ScenarioConfig::matrix);
        m["analysis.diffeo"] = choice(&ScenarioConfig::diffeo, {"none", "rotation", "shear"});
        m["analysis.angle"] = real(&ScenarioConfig::angle);
        m["analysis.radii"] = list(&ScenarioConfig::radii);
        m["analysis.samples_per_shell"] = integer(&ScenarioConfig::samples_per_shell);
        m["analysis.adapted_fraction"] = real(&ScenarioConfig::adapted_fraction);
        m["analysis.rank_tol"] = real(&ScenarioConfig::rank_tol);

        m["output.dir"] = text(&ScenarioConfig::output_dir);
        return m;
    }();
    return s;
}

const std::set<std::string> kSections = {"support", "reference", "grid", "chart", "flow", "perturbation", "analysis", "output"};

void range_checks(ParseResult& r) {
    const ScenarioConfig& c = r.config;
    auto bad = [&](const std::string& field, const std::string& msg) {
        const auto it = c.entries.find(field);
        ConfigIssue is{"ValidationError", field, 0, 0, msg};
        if (it != c.entries.end()) {
            is.line = it->second.line;
            is.column = it->second.column;
        }
        r.issues.push_back(is);
    };
    auto positive = [&](const std::string& field, double v) {
        if (!(v > 0)) bad(field, "must be positive");
    };
    auto increasing_positive = [&](const std::string& field, const std::vector<double>& v, std::size_t at_least) {
        if (v.size() < at_least) {
            bad(field, "needs at least " + std::to_string(at_least) + " entries");
            return;
        }
        for (std::size_t k = 0; k < v.size(); ++k)
            if (!(v[k] > 0) || (k > 0 && !(v[k] > v[k - 1]))) {
                bad(field, "entries must be positive and strictly increasing");
                return;
            }
    };
    if (c.n_s < 4) bad("grid.n_s", "must be at least 4");
    if (c.n_phi < 1) bad("grid.n_phi", "must be at least 1");
    if (c.axisymmetric && c.n_phi != 1) bad("grid.n_phi", "axisymmetric grids carry a single column");
    const bool annulus = c.reference == "catenoid_band";
    if (c.entries.count("grid.topology") && (c.topology == Topology::Annulus) != annulus)
        bad("grid.topology", std::string("reference ") + c.reference + " needs topology " + (annulus ? "annulus" : "disk"));
    positive("reference.radius", c.ref_radius);
    if (!(c.cap_angle_deg > 0 && c.cap_angle_deg < 180)) bad("reference.angle_deg", "must lie in (0, 180)");
    positive("support.radius", c.support_radius);
    positive("support.tube", c.support_tube);
    if (c.support_normal.norm() == 0) bad("support.normal", "must be nonzero");
    for (int k = 0; k < 3; ++k)
        if (!(c.support_axes[k] > 0)) {
            bad("support.axes", "semi-axes must be positive");
            break;
        }
    positive("chart.alpha0", c.alpha0);
    positive("chart.r_bar", c.r_bar);
    positive("chart.eps_c1", c.eps_c1);
    positive("flow.dt", c.flow.dt);
    positive("flow.t_end", c.flow.t_end);
    positive("flow.grad_tol", c.flow.grad_tol);
    if (c.flow.monitor_interval < 1) bad("flow.monitor_interval", "must be at least 1");
    if (c.flow.max_steps < 1) bad("flow.max_steps", "must be at least 1");
    if (c.amplitude < 0) bad("perturbation.amplitude", "must be nonnegative");
    positive("perturbation.radius", c.bump_radius);
    if (c.band < 0) bad("perturbation.band", "must be nonnegative");
    if (c.perturbation_radial_modes < 1) bad("perturbation.radial_modes", "must be at least 1");
    if (c.samples < 1) bad("analysis.samples", "must be at least 1");
    if (c.radial_modes < 1) bad("analysis.radial_modes", "must be at least 1");
    if (c.angular_modes < 0) bad("analysis.angular_modes", "must be nonnegative");
    if (!(c.tau > 0 && c.tau < 1)) bad("analysis.tau", "must lie in (0, 1)");
    if (!(c.tail_fraction > 0 && c.tail_fraction <= 1)) bad("analysis.tail_fraction", "must lie in (0, 1]");
    positive("analysis.critical_tol", c.critical_tol);
    increasing_positive("analysis.shell_edges", c.shell_edges, 2);
    increasing_positive("analysis.ladder", c.ladder, 1);
    increasing_positive("analysis.scan", c.scan, 1);
    positive("analysis.ladder_radius", c.ladder_radius);
    if (c.singular_values < 1) bad("analysis.singular_values", "must be at least 1");
    const auto dim = static_cast<std::size_t>(std::llround(std::sqrt(static_cast<double>(c.matrix.size()))));
    if (c.matrix.empty() || dim * dim != c.matrix.size()) bad("analysis.matrix", "needs n*n entries");
    for (double x : c.radii)
        if (!(x > 0)) {
            bad("analysis.radii", "entries must be positive");
            break;
        }
    if (c.radii.empty()) bad("analysis.radii", "needs at least 1 entry");
    if (c.samples_per_shell < 1) bad("analysis.samples_per_shell", "must be at least 1");
    if (!(c.adapted_fraction >= 0 && c.adapted_fraction <= 1)) bad("analysis.adapted_fraction", "must lie in [0, 1]");
    positive("analysis.rank_tol", c.rank_tol);
}

}  // namespace

ParseResult parse_config(const std::string& text) {
    ParseResult r;
    ScenarioConfig& c = r.config;
    struct Pending {
        std::string field, value;
        int line, column;
    };
    std::vector<Pending> pending;
    std::istringstream in(text);
    std::string raw, section;
    bool section_known = false;
    int line = 0;
    auto issue = [&](const std::string& code, const std::string& field, int col, const std::string& msg) {
        r.issues.push_back({code, field, line, col, msg});
    };
    while (std::getline(in, raw)) {
        ++line;
        const std::string body = raw.substr(0, raw.find('#'));
        const auto first = body.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        const int col = static_cast<int>(first) + 1;
        const std::string s = trim(body);
        if (s.front() == '[') {
            if (s.back() != ']') {
                issue("ParseError", "", col, "unterminated section header");
                section.clear();
                section_known = false;
                continue;
            }
            section = trim(s.substr(1, s.size() - 2));
            section_known = kSections.count(section) > 0;
            if (section.empty() || section.find_first_of(" \t=") != std::string::npos)
                issue("ParseError", "", col, "malformed section name");
            else if (!section_known)
                issue("ValidationError", "[" + section + "]", col, "unknown section");
            else if (!c.blocks.insert(section).second)
                issue("ParseError", "[" + section + "]", col, "section repeated");
            continue;
        }
        const auto eq = body.find('=');
        if (eq == std::string::npos) {
            issue("ParseError", "", col, "expected 'key = value'");
            continue;
        }
        const std::string key = trim(body.substr(0, eq));
        const std::string value = trim(body.substr(eq + 1));
        if (key.empty() || key.find_first_of(" \t") != std::string::npos) {
            issue("ParseError", "", col, "malformed key");
            continue;
        }
        if (section.empty()) {
            issue("ParseError", key, col, "key outside any section");
            continue;
        }
        const auto vpos = body.find_first_not_of(" \t", eq + 1);
        const int vcol = vpos == std::string::npos ? static_cast<int>(eq) + 2 : static_cast<int>(vpos) + 1;
        const std::string field = section + "." + key;
        if (value.empty()) {
            issue("ParseError", field, vcol, "empty value");
            continue;
        }
        if (!section_known) continue;  // reported once at the header
        if (c.entries.count(field)) {
            issue("ParseError", field, col, "duplicate key");
            continue;
        }
        c.entries[field] = {value, line, vcol};
        pending.push_back({field, value, line, vcol});
    }
    for (const auto& p : pending) {
        const auto it = schema().find(p.field);
        if (it == schema().end()) {
            r.issues.push_back({"ValidationError", p.field, p.line, p.column, "unknown key"});
            continue;
        }
        const std::string why = it->second(c, p.value);
        if (!why.empty()) r.issues.push_back({"ValidationError", p.field, p.line, p.column, why});
    }
    if (!c.entries.count("grid.topology")) c.topology = c.reference == "catenoid_band" ? Topology::Annulus : Topology::Disk;
    range_checks(r);
    std::stable_sort(r.issues.begin(), r.issues.end(), [](const ConfigIssue& a, const ConfigIssue& b) {
        const int la = a.line ? a.line : 1 << 30, lb = b.line ? b.line : 1 << 30;
        return la < lb || (la == lb && a.column < b.column);
    });
    return r;
}

std::vector<ConfigIssue> validate_for(const ScenarioConfig& cfg, Command cmd) {
    std::vector<std::string> need;
    switch (cmd) {
        case Command::GeomCheck: need = {"reference", "grid", "support"}; break;
        case Command::FlowRun: need = {"reference", "grid", "support", "chart", "flow", "perturbation"}; break;
        case Command::FlowStability: need = {"reference", "grid", "support", "chart", "flow", "analysis"}; break;
        case Command::LsFit: need = {"reference", "grid", "support", "chart", "flow", "perturbation", "analysis"}; break;
        case Command::LsAbstract: need = {"analysis"}; break;
        case Command::LinopSpectrum: need = {"reference", "grid", "support", "chart", "analysis"}; break;
    }
    std::vector<ConfigIssue> out;
    for (const auto& b : need)
        if (!cfg.blocks.count(b)) out.push_back({"ValidationError", "[" + b + "]", 0, 0, "block required by " + command_name(cmd)});
    if ((cmd == Command::LsFit || cmd == Command::LsAbstract) && !cfg.seed)
        out.push_back({"ValidationError", "analysis.seed", 0, 0, command_name(cmd) + " samples randomly and needs a seed"});
    if ((cmd == Command::FlowRun || cmd == Command::LsFit) && cfg.perturbation == "band_limited" && !cfg.perturbation_seed)
        out.push_back({"ValidationError", "perturbation.seed", 0, 0, "band_limited perturbations need a seed"});
    return out;
}

std::string canonical_text(const ScenarioConfig& cfg) {
    std::string out;
    for (const auto& [k, v] : cfg.entries) {  // std::map keeps keys sorted
        out += k + "=";
        const auto t = tokens(v.value);
        for (std::size_t i = 0; i < t.size(); ++i) out += (i ? " " : "") + t[i];
        out += "\n";
    }
    return out;
}

namespace {

struct Fnv {
    std::uint64_t h = 1469598103934665603ull;
    void add(const unsigned char* b, std::size_t n) {
        for (std::size_t k = 0; k < n; ++k) {
            h ^= b[k];
            h *= 1099511628211ull;
        }
    }
};

}  // namespace

std::uint64_t config_hash(const ScenarioConfig& cfg) {
    const std::string t = canonical_text(cfg);
    Fnv f;
    f.add(reinterpret_cast<const unsigned char*>(t.data()), t.size());
    return f.h;
}

std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

// ---------------------------------------------------------------- files

void write_atomic(const std::string& path, const std::string& content) {
    const fs::path target(path);
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error(ErrorFamily::Io, "WriteFailed", "cannot open " + tmp.string());
        out.write(content.data(), static_cast<std::streamsize>(content.size()));
        if (!out) throw Error(ErrorFamily::Io, "WriteFailed", "short write to " + tmp.string());
    }
    std::error_code ec;
    fs::rename(tmp, target, ec);
    if (ec) throw Error(ErrorFamily::Io, "WriteFailed", "cannot rename onto " + target.string() + ": " + ec.message());
}

namespace {

constexpr char kMagic[8] = {'W', 'F', 'B', 'S', 'N', 'A', 'P', '\0'};

struct Bytes {
    std::string b;
    void u32(std::uint32_t v) {
        for (int k = 0; k < 4; ++k) b.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void u64(std::uint64_t v) {
        for (int k = 0; k < 8; ++k) b.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
    }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
};

struct Reader {
    const std::string& b;
    std::size_t at = 0;
    std::uint64_t u(int n) {
        std::uint64_t v = 0;
        for (int k = 0; k < n; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[at + k])) << (8 * k);
        at += n;
        return v;
    }
    std::uint32_t u32() { return static_cast<std::uint32_t>(u(4)); }
    std::uint64_t u64() { return u(8); }
    double f64() { return std::bit_cast<double>(u(8)); }
};

constexpr std::size_t kHeaderBytes = 8 + 4 * 6 + 8 + 8 * 10;

Error corrupt(const std::string& what) { return Error(ErrorFamily::Io, "CorruptSnapshot", what); }

}  // namespace

void write_snapshot(const std::string& path, const FlowState& s, const ParamGrid& g, std::uint64_t chart_hash) {
    if (s.w.w.rows() != g.rows() || s.w.w.cols() != g.cols())
        throw Error(ErrorFamily::Io, "VersionMismatch", "state does not match the grid it is written for");
    Bytes o;
    o.b.append(kMagic, 8);
    o.u32(kSnapshotVersion);
    o.u32(static_cast<std::uint32_t>(g.topology));
    o.u32(static_cast<std::uint32_t>(g.n_s));
    o.u32(static_cast<std::uint32_t>(g.n_phi));
    o.u32(g.axisymmetric ? 1 : 0);
    o.u32(0);
    o.u64(chart_hash);
    o.f64(s.t);
    o.u64(static_cast<std::uint64_t>(s.step));
    for (double v : {s.dt, s.energy, s.grad_norm, s.b1_norm, s.b2_norm, s.dissipation, s.c0_norm, s.c1_norm}) o.f64(v);
    for (int p = 0; p < g.rows(); ++p)
        for (int j = 0; j < g.cols(); ++j) o.f64(s.w.w(p, j));
    Fnv f;
    f.add(reinterpret_cast<const unsigned char*>(o.b.data()), o.b.size());
    o.u64(f.h);
    write_atomic(path, o.b);
}

FlowState read_snapshot(const std::string& path, const ParamGrid& expect, std::uint64_t expect_hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(ErrorFamily::Io, "ReadFailed", "cannot open " + path);
    const std::string b((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (b.size() < kHeaderBytes + 8) throw corrupt(path + " is truncated");
    if (b.compare(0, 8, std::string(kMagic, 8)) != 0) throw corrupt(path + " is not a snapshot");
    Reader r{b, 8};
    const std::uint32_t version = r.u32();
    if (version != kSnapshotVersion)
        throw Error(ErrorFamily::Io, "VersionMismatch", "snapshot version " + std::to_string(version) + ", expected " +
                                                            std::to_string(kSnapshotVersion));
    const auto topo = r.u32(), ns = r.u32(), nphi = r.u32(), axi = r.u32();
    r.u32();
    const std::uint64_t hash = r.u64();
    const std::size_t rows = ns + 2 * ParamGrid::kGhost;
    const std::size_t want = kHeaderBytes + 8 * rows * nphi + 8;
    if (b.size() != want) throw corrupt(path + " has " + std::to_string(b.size()) + " bytes, expected " + std::to_string(want));
    Fnv f;
    f.add(reinterpret_cast<const unsigned char*>(b.data()), b.size() - 8);
    Reader tail{b, b.size() - 8};
    if (tail.u64() != f.h) throw corrupt(path + " fails its checksum");
    if (topo != static_cast<std::uint32_t>(expect.topology) || static_cast<int>(ns) != expect.n_s ||
        static_cast<int>(nphi) != expect.n_phi || (axi != 0) != expect.axisymmetric) {
        std::ostringstream os;
        os << "snapshot grid " << ns << "x" << nphi << " does not match " << expect.describe();
        throw Error(ErrorFamily::Io, "VersionMismatch", os.str());
    }
    if (expect_hash != 0 && hash != expect_hash)
        throw Error(ErrorFamily::Io, "VersionMismatch", "snapshot was written for chart " + hex64(hash));
    FlowState s;
    s.t = r.f64();
    s.step = static_cast<long>(r.u64());
    double* fields[] = {&s.dt, &s.energy, &s.grad_norm, &s.b1_norm, &s.b2_norm, &s.dissipation, &s.c0_norm, &s.c1_norm};
    for (double* v : fields) *v = r.f64();
    s.w = HeightField::zero(expect);
    for (int p = 0; p < expect.rows(); ++p)
        for (int j = 0; j < expect.cols(); ++j) s.w.w(p, j) = r.f64();
    return s;
}

// ---------------------------------------------------------------- pipelines

namespace {

// shortest round-trip decimal, so equal doubles print equal bytes
std::string num(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

class Csv {
public:
    explicit Csv(const std::string& header) : s_(header + "\n") {}
    template <class... T>
    void row(const T&... v) {
        bool first = true;
        ((s_ += (first ? "" : ","), s_ += cell(v), first = false), ...);
        s_ += "\n";
    }
    const std::string& str() const { return s_; }

private:
    static std::string cell(double v) { return num(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(long v) { return std::to_string(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(const std::string& v) { return v; }
    static std::string cell(const char* v) { return v; }
    std::string s_;
};

struct Outputs {
    std::string dir;
    std::vector<std::string>& files;
    void put(const std::string& name, const std::string& content) {
        write_atomic((fs::path(dir) / name).string(), content);
        files.push_back(name);
    }
};

SupportSurface make_support(const ScenarioConfig& c) {
    if (c.support_kind == "sphere") return SupportSurface::sphere(c.support_center, c.support_radius, c.support_orientation);
    if (c.support_kind == "ellipsoid")
        return SupportSurface::ellipsoid(c.support_axes[0], c.support_axes[1], c.support_axes[2], c.support_tube,
                                         c.support_orientation);
    return SupportSurface::plane(c.support_point, c.support_normal.normalized(), c.support_orientation);
}

double cap_angle(const ScenarioConfig& c) { return c.cap_angle_deg * std::numbers::pi / 180.0; }

Immersion make_reference(const ScenarioConfig& c, const ParamGrid& g) {
    if (c.reference == "equatorial_disk") return make_immersion(g, samplers::equatorial_disk(c.ref_radius), c.reference);
    if (c.reference == "spherical_cap") return make_immersion(g, samplers::spherical_cap(cap_angle(c), c.ref_radius), c.reference);
    if (c.reference == "catenoid_band") return make_immersion(g, samplers::catenoid_band(c.ref_radius), c.reference);
    return make_immersion(g, samplers::hemisphere(c.ref_radius, c.ref_center), c.reference);
}

// |H| and W of the analytic reference
double exact_abs_H(const ScenarioConfig& c) {
    return c.reference == "hemisphere" || c.reference == "spherical_cap" ? 2.0 / c.ref_radius : 0.0;
}
double exact_W(const ScenarioConfig& c) {
    if (c.reference == "hemisphere") return 2 * std::numbers::pi;
    if (c.reference == "spherical_cap") return 2 * std::numbers::pi * (1 - std::cos(cap_angle(c)));
    return 0.0;
}

ParamGrid make_grid(const ScenarioConfig& c) { return ParamGrid::make(c.topology, c.n_s, c.n_phi, c.axisymmetric); }

GaussChart make_chart(const ScenarioConfig& c) {
    ChartOptions co;
    co.eps_c1 = c.eps_c1;
    co.tol_fbc = c.tol_fbc;
    co.tol_constraint = c.tol_constraint;
    return build_gauss_chart(make_reference(c, make_grid(c)), make_support(c), c.alpha0, c.r_bar, co);
}

PerturbationSampling sampling_of(const ScenarioConfig& c, int threads) {
    PerturbationSampling ps;
    ps.samples = c.samples;
    ps.shell_edges = c.shell_edges;
    ps.radial_modes = c.radial_modes;
    ps.angular_modes = c.angular_modes;
    ps.seed = c.seed.value_or(1);
    ps.tau = c.tau;
    ps.critical_tol = c.critical_tol;
    ps.norm = c.shell_norm == "c0" ? ShellNorm::C0 : ShellNorm::H2;
    ps.gap = c.gap == "discrete" ? GapMeasure::Discrete : GapMeasure::Consistent;
    ps.threads = threads;
    return ps;
}

HeightField initial_field(const ScenarioConfig& c, const GaussChart& chart) {
    const ParamGrid& g = chart.grid;
    if (!c.flow_init.empty()) return read_snapshot(c.flow_init, g, chart.hash()).w;
    HeightField w = HeightField::zero(g);
    if (c.perturbation == "none" || c.amplitude == 0) return w;
    if (c.perturbation == "pole_bump") {
        w = pole_bump(g, c.amplitude, c.bump_radius);
    } else if (c.perturbation == "angular_bump") {
        for (int p = 0; p < g.rows(); ++p)
            for (int j = 0; j < g.cols(); ++j) {
                const double t = (g.s(p - ParamGrid::kGhost) - c.bump_center) / c.bump_radius;
                const double b = std::abs(t) < 1 ? std::exp(1.0 - 1.0 / (1 - t * t)) : 0.0;
                w.w(p, j) = c.amplitude * b * std::cos(c.band * g.phi(j));
            }
    } else {
        PerturbationSampling ps;
        ps.seed = *c.perturbation_seed;
        ps.radial_modes = c.perturbation_radial_modes;
        ps.angular_modes = c.band;
        w.w = band_limited_field(g, ps, c.amplitude, 0);
    }
    complete_height_field(g, w);
    return project_to_constraint(chart, w, 1e-11);
}

std::string trace_csv(const FlowTrace& tr) {
    Csv csv("step,t,dt,energy,grad_norm,dissipation,b1_norm,b2_norm,c0_norm,c1_norm");
    for (const auto& s : tr.samples)
        csv.row(s.step, s.t, s.dt, s.energy, s.grad_norm, s.dissipation, s.b1_norm, s.b2_norm, s.c0_norm, s.c1_norm);
    return csv.str();
}

json fit_json(const std::string& estimator, const LSFit& f) {
    return {{"schema", "wfb.fit/1"}, {"estimator", estimator}, {"theta", f.theta},     {"C", f.C},
            {"slope", f.slope},      {"intercept", f.intercept}, {"tau", f.tau}, {"violation_fraction", f.violation_fraction},
            {"samples", f.samples.size()}, {"used", f.used}};
}

void add_pairs(Csv& csv, const std::string& label, const std::vector<SamplePair>& pairs) {
    for (std::size_t k = 0; k < pairs.size(); ++k) csv.row(label, k, pairs[k].gap, pairs[k].grad);
}

void geom_check(const ScenarioConfig& c, Outputs& out, json& res) {
    const ParamGrid g = make_grid(c);
    const Immersion imm = make_reference(c, g);
    const GeometryCache geom = build_geometry(imm);
    const double H0 = exact_abs_H(c);
    Csv csv("i,j,s,phi,x,y,z,H,H_exact,H_error,A0_norm2");
    double herr = 0;
    for (int i = 0; i < g.n_s; ++i)
        for (int j = 0; j < g.cols(); ++j) {
            const int p = g.p(i);
            const double H = geom.H(p, j), e = std::abs(std::abs(H) - H0);
            herr = std::max(herr, e);
            csv.row(i, j, g.s(i), g.phi(j), geom.f[0](p, j), geom.f[1](p, j), geom.f[2](p, j), H, H0, e, geom.A0_norm2(p, j));
        }
    out.put("geom_nodes.csv", csv.str());
    const double W = willmore_energy(geom), W0 = exact_W(c);
    res["H_exact"] = H0;
    res["H_max_error"] = herr;
    res["W"] = W;
    res["W_exact"] = W0;
    res["W_error"] = std::abs(W - W0);
    if (W0 != 0) res["W_rel_error"] = std::abs(W - W0) / W0;

    const GaussChart chart = make_chart(c);
    const ChartEval ev = evaluate(chart, HeightField::zero(g));
    res["chart"] = {{"hash", hex64(chart.hash())},
                    {"alpha0", chart.alpha0},
                    {"r_bar", chart.r_bar},
                    {"fbc_residual_d", chart.fbc_residual_d},
                    {"fbc_residual_orth", chart.fbc_residual_orth},
                    {"fbc_residual_third", chart.fbc_residual_third},
                    {"c1_perturbation", chart.c1_perturbation},
                    {"deltaE_norm", ev.dE_norm},
                    {"B1_max", ev.B1.size() ? ev.B1.cwiseAbs().maxCoeff() : 0.0},
                    {"B2_max", ev.B2.size() ? ev.B2.cwiseAbs().maxCoeff() : 0.0},
                    {"warnings", chart.warnings}};
}

// Converged and TimeExhausted are outcomes; the other terminations are failures.
void raise_for(const FlowTrace& tr) {
    if (tr.reason == Termination::ChartExit) throw Error(ErrorFamily::Chart, "ChartExit", tr.message);
    if (tr.reason == Termination::SolverFailure) throw Error(ErrorFamily::Flow, "SolverFailure", tr.message);
}

json trace_json(const FlowTrace& tr) {
    json j = {{"termination", termination_name(tr.reason)},
              {"message", tr.message},
              {"accepted_steps", tr.accepted_steps},
              {"rejected_steps", tr.rejected_steps},
              {"final_t", tr.final_state.t},
              {"final_energy", tr.final_state.energy},
              {"final_grad_norm", tr.final_state.grad_norm}};
    if (!tr.samples.empty()) j["initial_energy"] = tr.samples.front().energy;
    return j;
}

void flow_run(const ScenarioConfig& c, Outputs& out, json& res, std::string& status) {
    const GaussChart chart = make_chart(c);
    const FlowTrace tr = run_flow(chart, initial_field(c, chart), c.flow);
    out.put("trace.csv", trace_csv(tr));
    std::string log;
    for (const auto& l : tr.dt_log) log += l + "\n";
    out.put("dt_log.txt", log);
    write_snapshot((fs::path(out.dir) / "final.wfbs").string(), tr.final_state, chart.grid, chart.hash());
    out.files.push_back("final.wfbs");
    res = trace_json(tr);
    res["chart_hash"] = hex64(chart.hash());
    res["dt_log"] = tr.dt_log;
    try {
        const DissipationReport d = energy_dissipation_check(tr);
        res["dissipation_check"] = {{"samples_used", d.samples_used},
                                    {"max_rel_deviation", d.max_rel_deviation},
                                    {"median_rel_deviation", d.median_rel_deviation}};
    } catch (const Error& e) {
        res["dissipation_check"] = {{"skipped", e.what()}};
    }
    status = termination_name(tr.reason);
    raise_for(tr);
}

void flow_stability(const ScenarioConfig& c, Outputs& out, json& res, int threads) {
    const GaussChart chart = make_chart(c);
    const auto runs = stability_ladder(chart, c.ladder, c.flow, c.ladder_radius, threads);
    Csv rc("amplitude,termination,steps,initial_energy,final_energy");
    double E_star = std::numeric_limits<double>::infinity();
    for (const auto& r : runs) {
        rc.row(r.amplitude, std::string(termination_name(r.trace.reason)), r.trace.accepted_steps,
               r.trace.samples.empty() ? 0.0 : r.trace.samples.front().energy, r.trace.final_state.energy);
        if (r.trace.reason == Termination::Converged) E_star = std::min(E_star, r.trace.final_state.energy);
    }
    out.put("runs.csv", rc.str());
    if (c.e_star) E_star = *c.e_star;
    if (!std::isfinite(E_star)) throw Error(ErrorFamily::Analysis, "InsufficientRuns", "no run of the ladder converged");
    const StabilityReport rep = stability_exponent(runs, E_star);
    Csv sc("amplitude,deficit,distance");
    for (const auto& p : rep.pairs) sc.row(p.amplitude, p.deficit, p.distance);
    out.put("stability.csv", sc.str());
    res = {{"gamma", rep.gamma}, {"C", rep.C},           {"monotone", rep.monotone},
           {"runs_used", rep.runs_used}, {"E_star", E_star}, {"caveat", rep.caveat}};
}

void ls_fit(const ScenarioConfig& c, Outputs& out, json& res, int threads) {
    const GaussChart chart = make_chart(c);
    const FlowTrace tr = run_flow(chart, initial_field(c, chart), c.flow);
    raise_for(tr);
    out.put("trace.csv", trace_csv(tr));
    if (tr.reason != Termination::Converged)
        throw Error(ErrorFamily::Analysis, "NotCritical", std::string("the flow to the base state ended with ") +
                                                              termination_name(tr.reason));
    const GapMeasure gap = c.gap == "discrete" ? GapMeasure::Discrete : GapMeasure::Consistent;
    const LSFit flow = fit_theta_along_flow(tr, tr.final_state.energy, c.tail_fraction, c.tau, gap);
    const LSFit pert = fit_theta_by_perturbation(chart, tr.final_state.w, sampling_of(c, threads));
    Csv csv("estimator,index,gap,grad");
    add_pairs(csv, "flow", flow.samples);
    add_pairs(csv, "perturbation", pert.samples);
    out.put("ls_pairs.csv", csv.str());
    out.put("fits.jsonl", fit_json("flow", flow).dump() + "\n" + fit_json("perturbation", pert).dump() + "\n");
    res = {{"flow", fit_json("flow", flow)},
           {"perturbation", fit_json("perturbation", pert)},
           {"delta_theta", std::abs(flow.theta - pert.theta)},
           {"E_star", tr.final_state.energy},
           {"base", trace_json(tr)}};
}

void ls_abstract(const ScenarioConfig& c, Outputs& out, json& res) {
    AnalyticFunctional f;
    if (c.functional == "parabola") {
        f = quartic_parabola();
    } else if (c.functional == "quadratic") {
        const int n = static_cast<int>(std::llround(std::sqrt(static_cast<double>(c.matrix.size()))));
        Eigen::MatrixXd A(n, n);
        for (int a = 0; a < n; ++a)
            for (int b = 0; b < n; ++b) A(a, b) = c.matrix[a * n + b];
        f = quadratic_functional(A);
    } else {
        f = quartic_x4_y2();
    }
    ShellSampling s;
    s.radii = c.radii;
    s.samples_per_shell = c.samples_per_shell;
    s.seed = *c.seed;
    s.tau = c.tau;
    s.adapted_fraction = c.adapted_fraction;
    s.rank_tol = c.rank_tol;
    const Eigen::VectorXd v0 = Eigen::VectorXd::Zero(f.n);
    Csv csv("set,index,gap,grad");
    std::string lines;
    if (c.diffeo == "none") {
        const LSFit fit = estimate_theta(f, v0, s);
        add_pairs(csv, "original", fit.samples);
        lines = fit_json(f.name, fit).dump() + "\n";
        res = {{"functional", f.name}, {"fit", fit_json(f.name, fit)}};
    } else {
        if (f.n < 2) {
            throw Error(ErrorFamily::Input, "ValidationError", "diffeomorphisms act on the first two coordinates; n = 1");
        }
        const Diffeo phi = c.diffeo == "rotation" ? rotation_diffeo(c.angle) : shear_diffeo();
        const InvarianceReport inv = diffeo_invariance_test(f, v0, phi, s);
        add_pairs(csv, "original", inv.original.samples);
        add_pairs(csv, "transformed", inv.transformed.samples);
        lines = fit_json(f.name, inv.original).dump() + "\n" + fit_json(f.name + "_pulled_back", inv.transformed).dump() + "\n";
        res = {{"functional", f.name},
               {"diffeo", c.diffeo},
               {"fit", fit_json(f.name, inv.original)},
               {"transformed", fit_json(f.name + "_pulled_back", inv.transformed)},
               {"delta_theta", inv.delta_theta}};
    }
    const ReductionResult red = kernel_split(f, v0, s.rank_tol);
    res["kernel_dim"] = red.dim();
    out.put("ls_abstract_pairs.csv", csv.str());
    out.put("fits.jsonl", lines);
}

void linop_spectrum(const ScenarioConfig& c, Outputs& out, json& res) {
    const GaussChart chart = make_chart(c);
    SpectralOptions so;
    so.k = c.singular_values;
    so.kernel_tol = c.kernel_tol;
    const NearKernel nk = near_kernel(chart, so);
    const Unknowns U(chart.grid);
    Csv csv("operator,c1,c2,index,sigma");
    for (std::size_t k = 0; k < nk.report.singular_values.size(); ++k)
        csv.row("constrained", 0.0, 0.0, k, nk.report.singular_values[k]);
    json inv = json::object();
    const std::pair<const char*, Eigen::VectorXd> fields[] = {
        {"translation_x", translation_field(chart, U, Vec3::UnitX())},
        {"translation_y", translation_field(chart, U, Vec3::UnitY())},
        {"translation_z", translation_field(chart, U, Vec3::UnitZ())},
        {"dilation", dilation_field(chart, U, c.ref_center)}};
    for (const auto& [name, v] : fields) {
        const Eigen::VectorXd phi = restrict_to_real(nk.op, v);
        if (phi.norm() == 0) continue;
        inv[name] = {{"relative_residual", relative_residual(nk, phi)}, {"kernel_capture", kernel_capture(nk, phi)}};
    }
    const TTildeScan scan = scan_T_tilde(chart, c.scan, so);
    for (const auto& [c1, c2, smin] : scan.tried) csv.row("T_tilde_scan", c1, c2, 0, smin);
    if (scan.found)
        for (std::size_t k = 0; k < scan.report.singular_values.size(); ++k)
            csv.row("T_tilde", scan.c1, scan.c2, k, scan.report.singular_values[k]);
    out.put("spectrum.csv", csv.str());
    res = {{"near_kernel_dim", nk.report.near_kernel_dim},
           {"kernel_tol", nk.report.kernel_tol},
           {"sigma_max", nk.report.sigma_max},
           {"singular_values", nk.report.singular_values},
           {"invariance_fields", inv},
           {"T_tilde", {{"found", scan.found}, {"c1", scan.c1}, {"c2", scan.c2},
                        {"sigma_min", scan.report.singular_values.empty() ? 0.0 : scan.report.singular_values.front()}}}};
}

std::string family_name(ErrorFamily f) {
    switch (f) {
        case ErrorFamily::Input: return "Input";
        case ErrorFamily::Geometry: return "Geometry";
        case ErrorFamily::Support: return "Support";
        case ErrorFamily::Chart: return "Chart";
        case ErrorFamily::Flow: return "Flow";
        case ErrorFamily::Linear: return "Linear";
        case ErrorFamily::Analysis: return "Analysis";
        case ErrorFamily::Io: return "Io";
    }
    return "?";
}

void finish(RunReport& rep, std::chrono::steady_clock::time_point t0) {
    rep.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (rep.out_dir.empty()) return;
    try {
        fs::create_directories(rep.out_dir);
        write_atomic((fs::path(rep.out_dir) / "report.json").string(), rep.to_json().dump(2) + "\n");
    } catch (const std::exception& e) {
        // the report is the last word; there is nowhere else to put it
        rep.error_message += std::string(rep.error_message.empty() ? "" : "; ") + "report not written: " + e.what();
        if (rep.exit_code == 0) rep.exit_code = exit_code_for(ErrorFamily::Io);
    }
}

}  // namespace

json RunReport::to_json() const {
    json iss = json::array();
    for (const auto& i : issues)
        iss.push_back({{"code", i.code}, {"field", i.field}, {"line", i.line}, {"column", i.column}, {"message", i.message}});
    json err = nullptr;
    if (!error_code.empty()) err = {{"family", error_family}, {"code", error_code}, {"message", error_message}};
    return {{"schema", "wfb.run_report/1"},
            {"command", command},
            {"artifact_version", artifact_version},
            {"config_hash", config_hash},
            {"status", status},
            {"exit_code", exit_code},
            {"error", err},
            {"issues", iss},
            {"wall_time_s", wall_time_s},
            {"files", files},
            {"result", result}};
}

std::string resolve_out_dir(Command cmd, const ScenarioConfig& cfg, const RunOptions& opt) {
    if (!opt.out_dir.empty()) return opt.out_dir;
    if (!cfg.output_dir.empty()) return cfg.output_dir;
    const char* root = std::getenv(kOutRootEnv);
    const std::string base = root && *root ? root : "wfb_out";
    return (fs::path(base) / (command_slug(cmd) + "-" + hex64(config_hash(cfg)).substr(0, 8))).string();
}

RunReport run(Command cmd, ScenarioConfig cfg, const RunOptions& opt) {
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.command = command_name(cmd);
    rep.artifact_version = artifact_version();
    if (opt.seed) {
        // the override is part of the effective configuration and of its hash
        cfg.seed = cfg.perturbation_seed = *opt.seed;
        cfg.entries["analysis.seed"].value = std::to_string(*opt.seed);
        cfg.entries["perturbation.seed"].value = std::to_string(*opt.seed);
    }
    rep.config_hash = hex64(config_hash(cfg));
    rep.out_dir = resolve_out_dir(cmd, cfg, opt);
    rep.issues = validate_for(cfg, cmd);
    if (!rep.issues.empty()) {
        rep.status = "invalid_config";
        rep.exit_code = exit_code_for(ErrorFamily::Input);
        rep.error_family = "Input";
        rep.error_code = "ValidationError";
        rep.error_message = rep.issues.front().str();
        finish(rep, t0);
        return rep;
    }
    try {
        fs::create_directories(rep.out_dir);
        Outputs out{rep.out_dir, rep.files};
        const int threads = std::max(1, opt.threads);
        switch (cmd) {
            case Command::GeomCheck: geom_check(cfg, out, rep.result); break;
            case Command::FlowRun: flow_run(cfg, out, rep.result, rep.status); break;
            case Command::FlowStability: flow_stability(cfg, out, rep.result, threads); break;
            case Command::LsFit: ls_fit(cfg, out, rep.result, threads); break;
            case Command::LsAbstract: ls_abstract(cfg, out, rep.result); break;
            case Command::LinopSpectrum: linop_spectrum(cfg, out, rep.result); break;
        }
    } catch (const Error& e) {
        rep.status = "error";
        rep.exit_code = exit_code_for(e.family());
        rep.error_family = family_name(e.family());
        rep.error_code = e.code();
        rep.error_message = e.what();
    } catch (const fs::filesystem_error& e) {
        rep.status = "error";
        rep.exit_code = exit_code_for(ErrorFamily::Io);
        rep.error_family = "Io";
        rep.error_code = "WriteFailed";
        rep.error_message = e.what();
    } catch (const std::exception& e) {
        rep.status = "error";
        rep.exit_code = 1;
        rep.error_family = "Internal";
        rep.error_code = "InternalError";
        rep.error_message = e.what();
    }
    finish(rep, t0);
    return rep;
}

RunReport run_text(Command cmd, const std::string& config_text, const RunOptions& opt) {
    ParseResult pr = parse_config(config_text);
    if (pr.ok()) return run(cmd, std::move(pr.config), opt);
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.command = command_name(cmd);
    rep.artifact_version = artifact_version();
    rep.config_hash = hex64(config_hash(pr.config));
    rep.out_dir = resolve_out_dir(cmd, pr.config, opt);
    rep.issues = pr.issues;
    rep.status = "invalid_config";
    rep.exit_code = exit_code_for(ErrorFamily::Input);
    rep.error_family = "Input";
    rep.error_code = pr.issues.front().code;
    rep.error_message = pr.issues.front().str();
    finish(rep, t0);
    return rep;
}

RunReport run_file(Command cmd, const RunOptions& opt) {
    std::ifstream in(opt.config_path, std::ios::binary);
    if (in) {
        const std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
        return run_text(cmd, text, opt);
    }
    const auto t0 = std::chrono::steady_clock::now();
    RunReport rep;
    rep.command = command_name(cmd);
    rep.artifact_version = artifact_version();
    rep.out_dir = resolve_out_dir(cmd, ScenarioConfig{}, opt);
    rep.status = "error";
    rep.exit_code = exit_code_for(ErrorFamily::Io);
    rep.error_family = "Io";
    rep.error_code = "ReadFailed";
    rep.error_message = "cannot read config " + opt.config_path;
    finish(rep, t0);
    return rep;
}

}  // namespace wfb::cli
