#include <lrim/io.hpp>
#include <lrim/lrim.hpp>

#include <CLI11.hpp>

#include <atomic>
#include <cstdio>
#include <iostream>
#include <numeric>
#include <sstream>
#include <thread>
#include <variant>

using namespace lrim;

namespace {

enum ExitCode { exit_ok = 0, exit_usage = 1, exit_gate = 2 };

struct GateFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string command;
    double alpha = 0.25;
    std::vector<double> alphas;
    double alpha_from = 0.05, alpha_to = 0.5;
    int alpha_steps = 10;
    int mesh = 4096;
    int orbit_points = 0;
    double x_min = 1e-10;
    double tol = 1e-10;
    std::string density_method = "auto";
    int max_iter = 0;
    std::string obs = "x";
    std::string phi = "x";
    std::string method;
    int terms = 2000;
    double series_tol = 1e-10;
    double z = 1.0;
    long long points = 1 << 20;
    int forward_terms = 60;
    std::vector<double> eps{1e-2, 5e-3};
    double gate = 0.03;
    std::string cone = "all";
    int k_max = 20;
    int grid = 512;
    double x_check = -1.0;
    std::string kind = "orbit";
    int ell_max = 10000;
    std::vector<int> ells{10, 30, 100, 300};
    std::vector<int> ms{10, 30, 100, 300};
    int lags = 200;
    int orbits = 32;
    long long orbit_len = 1'000'000;
    long long burn_in = 10'000;
    std::uint64_t seed = 1;
    int workers = 0;
    std::string cache_dir;
    std::string out;
    std::string format = "csv";
    bool quiet = false;
};

/// Every field that affects results; output path, format and cache location
/// are left out so the hash names the experiment.
json config_json(const RunConfig& c) {
    return json{{"command", c.command},   {"alpha", c.alpha},
                {"alphas", c.alphas},     {"alpha_from", c.alpha_from},
                {"alpha_to", c.alpha_to}, {"alpha_steps", c.alpha_steps},
                {"mesh", c.mesh},         {"orbit_points", c.orbit_points},
                {"x_min", c.x_min},       {"tol", c.tol},
                {"density_method", c.density_method}, {"max_iter", c.max_iter},
                {"obs", c.obs},           {"phi", c.phi},
                {"method", c.method},     {"terms", c.terms},
                {"series_tol", c.series_tol}, {"z", c.z},
                {"points", c.points},     {"forward_terms", c.forward_terms},
                {"eps", c.eps},
                {"gate", c.gate},         {"cone", c.cone},
                {"k_max", c.k_max},       {"grid", c.grid},
                {"x_check", c.x_check},   {"kind", c.kind},
                {"ell_max", c.ell_max},   {"ells", c.ells},
                {"ms", c.ms},             {"lags", c.lags},
                {"orbits", c.orbits},     {"orbit_len", c.orbit_len},
                {"burn_in", c.burn_in},   {"seed", c.seed}};
}

// ---------------------------------------------------------------------------
// Output

using Cell = std::variant<double, long long, std::string>;

struct Table {
    std::vector<std::string> columns;
    std::vector<std::vector<Cell>> rows;
    json summary = json::object();
};

std::string cell_text(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return format_double(*d);
    if (const auto* i = std::get_if<long long>(&c)) return std::to_string(*i);
    return std::get<std::string>(c);
}

json cell_json(const Cell& c) {
    if (const auto* d = std::get_if<double>(&c)) return std::isfinite(*d) ? json(*d) : json(format_double(*d));
    if (const auto* i = std::get_if<long long>(&c)) return *i;
    return std::get<std::string>(c);
}

json metadata(const RunConfig& cfg) {
    const json conf = config_json(cfg);
    return json{{"schema_version", schema_version},
                {"code_version", code_version},
                {"command", cfg.command},
                {"config_hash", sha256_hex(conf.dump())},
                {"config", conf}};
}

std::string render(const RunConfig& cfg, const Table& t) {
    const json meta = metadata(cfg);
    if (cfg.format == "json") {
        json rows = json::array();
        for (const auto& r : t.rows) {
            json row = json::array();
            for (const auto& c : r) row.push_back(cell_json(c));
            rows.push_back(std::move(row));
        }
        return json{{"metadata", meta}, {"summary", t.summary}, {"columns", t.columns}, {"rows", rows}}.dump() + "\n";
    }
    std::ostringstream os;
    os << "# schema_version=" << schema_version << "\n";
    os << "# code_version=" << code_version << "\n";
    os << "# command=" << cfg.command << "\n";
    os << "# config_hash=" << meta["config_hash"].get<std::string>() << "\n";
    os << "# config=" << meta["config"].dump() << "\n";
    for (const auto& [k, v] : t.summary.items()) os << "# " << k << "=" << (v.is_string() ? v.get<std::string>() : v.dump()) << "\n";
    for (std::size_t i = 0; i < t.columns.size(); ++i) os << (i ? "," : "") << t.columns[i];
    os << "\n";
    for (const auto& r : t.rows) {
        for (std::size_t i = 0; i < r.size(); ++i) os << (i ? "," : "") << cell_text(r[i]);
        os << "\n";
    }
    return os.str();
}

void emit(const RunConfig& cfg, const Table& t) {
    const std::string text = render(cfg, t);
    if (cfg.out.empty() || cfg.out == "-") {
        std::cout << text;
    } else {
        write_file_atomic(cfg.out, text);
    }
}

void note(const RunConfig& cfg, const std::string& line) {
    if (!cfg.quiet) std::cerr << line << "\n";
}

std::string summary_line(const json& s) {
    std::string line;
    for (const auto& [k, v] : s.items()) {
        if (!line.empty()) line += " ";
        line += k + "=" + (v.is_string() ? v.get<std::string>() : v.dump());
    }
    return line;
}

// ---------------------------------------------------------------------------
// Shared setup

struct Setup {
    MapParams p{0.0};
    MeshPtr mesh;
    std::shared_ptr<TransferOperator> op;
    DensityRecord d;
};

DensityCache cache_of(const RunConfig& cfg) {
    return cfg.cache_dir.empty() ? DensityCache() : DensityCache(cfg.cache_dir);
}

Setup prepare(const RunConfig& cfg, double alpha, bool require_converged = true) {
    Setup s;
    s.p = MapParams(alpha);
    s.mesh = build_mesh(s.p, cfg.mesh, cfg.orbit_points > 0 ? cfg.orbit_points : -1, cfg.x_min);
    s.op = std::make_shared<TransferOperator>(s.p, s.mesh);
    const DensityMethod method = cfg.density_method == "auto"
                                     ? (alpha == 0.0 ? DensityMethod::power : DensityMethod::direct)
                                     : density_method_from_string(cfg.density_method);
    const auto cached = load_or_compute_density(*s.op, cfg.tol, method, cache_of(cfg), cfg.max_iter);
    note(cfg, std::string("density ") + (cached.hit ? "cache hit " : "computed ") + cached.key);
    s.d = cached.record;
    if (require_converged && !s.d.converged) {
        throw GateFailure("density did not converge (residual " + format_double(s.d.residual) + ")");
    }
    return s;
}

/// Rejects unknown observable names before any density work.
void check_observable(const std::string& spec) {
    if (spec != "right0") observables::parse(spec);
}

Observable observable(const std::string& spec, const Setup& s) {
    if (spec == "right0") return zero_mean_right_observable(s.d.density);
    return observables::parse(spec);
}

double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

// ---------------------------------------------------------------------------
// Commands

int cmd_density(const RunConfig& cfg) {
    const auto s = prepare(cfg, cfg.alpha, false);
    Table t;
    t.columns = {"x", "rho", "x_alpha_rho"};
    const auto& x = s.mesh->nodes();
    const auto& u = s.d.density.values();
    double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const double rho = u[i] * std::pow(x[i], -s.d.density.exponent());
        const double env = std::pow(x[i], cfg.alpha) * rho;
        lo = std::min(lo, env);
        hi = std::max(hi, env);
        t.rows.push_back({x[i], rho, env});
    }
    t.summary = {{"alpha", cfg.alpha},      {"nodes", static_cast<long long>(x.size())},
                 {"iterations", s.d.iterations}, {"residual", s.d.residual},
                 {"converged", s.d.converged},   {"method", to_string(s.d.method)},
                 {"envelope_min", lo},       {"envelope_max", hi},
                 {"envelope_ratio", hi / lo}};
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return s.d.converged ? exit_ok : exit_gate;
}

int cmd_response(const RunConfig& cfg) {
    check_observable(cfg.obs);
    const auto s = prepare(cfg, cfg.alpha);
    const auto psi = observable(cfg.obs, s);
    SeriesOptions opt;
    opt.max_terms = cfg.terms;
    opt.tol = cfg.series_tol;
    opt.points = static_cast<std::size_t>(cfg.points);
    const std::string method = cfg.method.empty() ? "series" : cfg.method;
    ResponseResult r;
    if (method == "series") {
        r = response_series(*s.op, s.d, psi, opt);
    } else if (method == "forward") {
        r = response_series_forward(*s.op, s.d, psi, cfg.terms, opt);
    } else if (method == "susceptibility") {
        r = susceptibility(*s.op, s.d, psi, cfg.z, cfg.terms, opt);
    } else {
        throw std::invalid_argument("unknown response method: " + method);
    }
    Table t;
    t.columns = {"k", "term", "term_error"};
    for (std::size_t k = 0; k < r.terms.size(); ++k) {
        t.rows.push_back({static_cast<long long>(k), r.terms[k], k < r.term_errors.size() ? r.term_errors[k] : 0.0});
    }
    t.summary = {{"alpha", cfg.alpha},         {"observable", psi.id},
                 {"method", to_string(r.method)}, {"value", r.value},
                 {"k_used", r.k_used},          {"tail_estimate", r.tail_estimate},
                 {"decay_exponent", r.decay_exponent}, {"decaying", r.decaying}};
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return exit_ok;
}

int cmd_validate(const RunConfig& cfg) {
    check_observable(cfg.obs);
    if (cfg.eps.empty()) throw std::invalid_argument("validate: --eps needs at least one value");
    const auto s = prepare(cfg, cfg.alpha);
    const auto psi = observable(cfg.obs, s);
    SeriesOptions opt;
    opt.max_terms = cfg.terms;
    opt.tol = cfg.series_tol;
    opt.points = static_cast<std::size_t>(cfg.points);

    std::vector<double> eps = cfg.eps;
    std::sort(eps.begin(), eps.end(), std::greater<>());
    std::vector<double> fd;
    bool one_sided = false;
    for (double e : eps) {
        const auto r = finite_difference_response(s.p, psi, e, s.mesh, cfg.tol);
        fd.push_back(r.value);
        one_sided = one_sided || r.one_sided;
    }
    const double reference = fd.back();

    Table t;
    t.columns = {"method", "value", "reference", "rel_diff"};
    for (std::size_t i = 0; i < eps.size(); ++i) {
        t.rows.push_back({"fd_eps=" + format_double(eps[i]), fd[i], reference, rel_diff(fd[i], reference)});
    }
    double worst = 0.0;
    const auto series = response_series(*s.op, s.d, psi, opt);
    worst = std::max(worst, rel_diff(series.value, reference));
    t.rows.push_back({"series", series.value, reference, rel_diff(series.value, reference)});
    if (cfg.points > 0 && cfg.forward_terms > 0) {
        // Forward and backward terms agree one by one, so the forward series
        // is checked against the backward partial sum over the same terms.
        const int K = std::min(series.k_used, cfg.forward_terms);
        const auto fwd = response_series_forward(*s.op, s.d, psi, K, opt);
        const double partial = -std::accumulate(series.terms.begin(), series.terms.begin() + K, 0.0);
        const double fwd_partial = -std::accumulate(fwd.terms.begin(), fwd.terms.begin() + K, 0.0);
        double var = 0.0;
        for (double e : fwd.term_errors) var += e * e;
        const double se = std::sqrt(var);
        // Quadrature noise of the pushed-forward points counts against the gate.
        const double d = rel_diff(fwd_partial, partial);
        const double allowed = std::max(cfg.gate, 5.0 * se / std::max(std::abs(partial), 1e-300));
        worst = std::max(worst, d * cfg.gate / allowed);
        t.rows.push_back({"forward_first_" + std::to_string(K), fwd_partial, partial, d});
        t.summary["forward_standard_error"] = se;
    }
    if (psi.periodic && psi.differentiable()) {
        const auto chi = susceptibility(*s.op, s.d, psi, 1.0, cfg.terms, opt);
        worst = std::max(worst, rel_diff(chi.value, reference));
        t.rows.push_back({"susceptibility", chi.value, reference, rel_diff(chi.value, reference)});
    }
    const bool pass = worst <= cfg.gate;
    t.summary.update({{"alpha", cfg.alpha},     {"observable", psi.id},
                 {"fd_reference_eps", eps.back()}, {"one_sided", one_sided},
                 {"series_k_used", series.k_used}, {"series_tail", series.tail_estimate},
                 {"gated_rel_diff", worst},  {"gate", cfg.gate},
                 {"pass", pass}});
    if (eps.size() >= 2) {
        const double e1 = eps[eps.size() - 2], e2 = eps.back();
        const double order = one_sided ? 1.0 : 2.0;
        const double ratio = std::pow(e1 / e2, order);
        t.summary["richardson"] = (ratio * fd.back() - fd[fd.size() - 2]) / (ratio - 1.0);
        t.summary["fd_pair_rel_diff"] = rel_diff(fd[fd.size() - 2], fd.back());
    }
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return pass ? exit_ok : exit_gate;
}

int cmd_cones(const RunConfig& cfg) {
    const MapParams p(cfg.alpha);
    const auto cal = calibrate(p, cfg.grid);
    const auto& cp = cal.params;
    Table t;
    bool pass = true;
    if (cfg.cone == "omega") {
        t.columns = {"y", "omega1", "omega2", "omega3", "omega1_bar", "omega2_bar"};
        for (double y : omega_grid(cfg.grid)) {
            const auto o = omega_factors(p, y, cp);
            t.rows.push_back({y, o.omega1, o.omega2, o.omega3, o.omega1_bar, o.omega2_bar});
        }
        const auto& e = cal.extremes;
        pass = e.max_omega1 <= 1.0 + omega_rounding && e.max_omega2 <= 1.0 + omega_rounding &&
               e.max_omega3 <= 1.0 + omega_rounding;
        t.summary = {{"max_omega1", e.max_omega1}, {"max_omega2", e.max_omega2}, {"max_omega3", e.max_omega3},
                     {"min_omega1_bar", e.min_omega1_bar}, {"min_omega2_bar", e.min_omega2_bar}};
    } else {
        const auto s = prepare(cfg, cfg.alpha);
        std::vector<ConeId> cones;
        if (cfg.cone == "all") {
            cones = {ConeId::Cstar, ConeId::Cstar1, ConeId::C2, ConeId::C3};
        } else {
            cones = {cone_id_from_string(cfg.cone)};
        }
        t.columns = {"cone", "k", "image", "verdict", "worst_margin", "worst_node", "worst_inequality", "half_mass_margin"};
        for (ConeId c : cones) {
            for (const auto& r : invariance_experiment(*s.op, s.d, c, cp, cfg.k_max, cfg.x_check)) {
                std::string which;
                double wm = std::numeric_limits<double>::infinity();
                for (const auto& q : r.inequalities) {
                    if (q.worst_margin < wm) {
                        wm = q.worst_margin;
                        which = q.name;
                    }
                }
                pass = pass && r.verdict;
                t.rows.push_back({to_string(c), static_cast<long long>(r.k), r.image, r.verdict ? "pass" : "fail",
                                  r.worst_margin, r.worst_node, which, r.half_mass_margin});
            }
        }
    }
    t.summary["alpha"] = cfg.alpha;
    t.summary["a"] = cp.a;
    t.summary["b1"] = cp.b1;
    t.summary["b2"] = cp.b2;
    t.summary["b3"] = cp.b3;
    t.summary["b1_bar"] = cp.b1_bar;
    t.summary["b2_bar"] = cp.b2_bar;
    t.summary["pass"] = pass;
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return pass ? exit_ok : exit_gate;
}

int cmd_decay(const RunConfig& cfg) {
    const MapParams p(cfg.alpha);
    Table t;
    bool pass = true;
    if (cfg.kind == "orbit") {
        const auto s = neutral_orbit(p, cfg.ell_max);
        t.columns = {"ell", "x_ell", "bound", "margin"};
        for (int l = 1; l <= cfg.ell_max; ++l) {
            const double b = s.upper.empty() ? std::numeric_limits<double>::quiet_NaN() : s.upper[l];
            t.rows.push_back({static_cast<long long>(l), s.x_ell[l], b, (b - s.x_ell[l]) / b});
        }
        pass = s.upper_ok;
        t.summary = {{"fitted_exponent", s.fitted_exponent}, {"upper_ok", s.upper_ok},
                     {"upper_margin", s.upper_margin}, {"lower_constant", s.lower_constant}};
        if (cfg.alpha > 0.0) t.summary["target_exponent"] = -1.0 / cfg.alpha;
    } else if (cfg.kind == "distortion") {
        const auto g = distortion_grid(p, cfg.ells, cfg.ms);
        t.columns = {"ell", "m", "lambda", "scaled"};
        for (const auto& q : g.points) t.rows.push_back({static_cast<long long>(q.ell), static_cast<long long>(q.m), q.lambda, q.scaled});
        t.summary = {{"c_min", g.c_min}, {"c_max", g.c_max}, {"spread", g.spread}};
    } else if (cfg.kind == "correlation") {
        check_observable(cfg.obs);
        check_observable(cfg.phi);
        const auto s = prepare(cfg, cfg.alpha);
        const auto psi = observable(cfg.obs, s);
        const auto phi = observable(cfg.phi, s);
        CorrelationOptions o;
        o.mc_orbits = cfg.orbits;
        o.mc_orbit_len = cfg.orbit_len;
        o.mc_burn_in = cfg.burn_in;
        o.seed = cfg.seed;
        const auto method = correlation_method_from_string(cfg.method.empty() ? "operator" : cfg.method);
        const auto c = correlation_decay(*s.op, s.d, psi, phi, cfg.lags, method, o);
        t.columns = {"n", "C_n", "se"};
        for (std::size_t n = 0; n < c.values.size(); ++n) {
            t.rows.push_back({static_cast<long long>(n), c.values[n], c.errors.empty() ? 0.0 : c.errors[n]});
        }
        t.summary = {{"method", to_string(method)}, {"psi", psi.id}, {"phi", phi.id},
                     {"degenerate", c.degenerate}, {"exponent", c.fit.exponent},
                     {"exponent_ci_low", c.fit.ci_low}, {"exponent_ci_high", c.fit.ci_high},
                     {"rate", c.fit.rate}, {"fit_n_lo", c.fit.n_lo}, {"fit_n_hi", c.fit.n_hi}};
    } else if (cfg.kind == "birkhoff") {
        const auto psi = observables::parse(cfg.obs);
        const auto r = birkhoff_average(p, psi, cfg.orbits, cfg.orbit_len, cfg.burn_in, cfg.seed);
        t.columns = {"mean", "standard_error", "samples", "batches"};
        t.rows.push_back({r.mean, r.standard_error, static_cast<long long>(r.samples), static_cast<long long>(r.batches)});
        t.summary = {{"observable", psi.id}, {"mean", r.mean}, {"standard_error", r.standard_error}};
    } else {
        throw std::invalid_argument("unknown decay kind: " + cfg.kind);
    }
    t.summary["alpha"] = cfg.alpha;
    t.summary["kind"] = cfg.kind;
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return pass ? exit_ok : exit_gate;
}

int cmd_sweep(const RunConfig& cfg) {
    std::vector<double> alphas = cfg.alphas;
    if (alphas.empty()) {
        if (cfg.alpha_steps < 1) throw std::invalid_argument("sweep: --steps must be >= 1");
        for (int i = 0; i <= cfg.alpha_steps; ++i) {
            alphas.push_back(cfg.alpha_from + (cfg.alpha_to - cfg.alpha_from) * i / cfg.alpha_steps);
        }
    }
    for (double a : alphas) MapParams{a};
    check_observable(cfg.obs);
    const auto psi_spec = cfg.obs;
    struct Row {
        double value = 0.0, tail = 0.0, exponent = 0.0;
        int k_used = 0;
        bool decaying = false;
        std::string error;
    };
    std::vector<Row> rows(alphas.size());
    std::atomic<std::size_t> next{0};
    const unsigned w = cfg.workers > 0 ? static_cast<unsigned>(cfg.workers)
                                       : std::max(1u, std::min<unsigned>(std::thread::hardware_concurrency(), static_cast<unsigned>(alphas.size())));
    RunConfig quiet = cfg;
    quiet.quiet = true;
    auto work = [&] {
        for (std::size_t i = next++; i < alphas.size(); i = next++) {
            try {
                const auto s = prepare(quiet, alphas[i]);
                SeriesOptions opt;
                opt.max_terms = cfg.terms;
                opt.tol = cfg.series_tol;
                const auto r = response_series(*s.op, s.d, observable(psi_spec, s), opt);
                rows[i] = {r.value, r.tail_estimate, r.decay_exponent, r.k_used, r.decaying, ""};
            } catch (const std::exception& e) {
                rows[i].error = e.what();
            }
        }
    };
    std::vector<std::thread> pool;
    for (unsigned j = 0; j < w; ++j) pool.emplace_back(work);
    for (auto& th : pool) th.join();

    Table t;
    t.columns = {"alpha", "d_alpha_expectation", "tail_estimate", "k_used", "decaying"};
    bool pass = true;
    for (std::size_t i = 0; i < alphas.size(); ++i) {
        if (!rows[i].error.empty()) {
            pass = false;
            note(cfg, "alpha " + format_double(alphas[i]) + ": " + rows[i].error);
            t.rows.push_back({alphas[i], std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::quiet_NaN(),
                              0LL, "error"});
            continue;
        }
        t.rows.push_back({alphas[i], rows[i].value, rows[i].tail, static_cast<long long>(rows[i].k_used),
                          rows[i].decaying ? "yes" : "no"});
    }
    t.summary = {{"observable", psi_spec}, {"points", static_cast<long long>(alphas.size())}, {"pass", pass}};
    emit(cfg, t);
    note(cfg, summary_line(t.summary));
    return pass ? exit_ok : exit_gate;
}

// ---------------------------------------------------------------------------
// Command line

/// Effective options of one subcommand as a TOML section that --config
/// reads back.
std::string config_text(const CLI::App* sub) {
    std::ostringstream os;
    os << "# lrim configuration, schema " << schema_version << "\n[" << sub->get_name() << "]\n";
    for (const CLI::Option* o : sub->get_options()) {
        const std::string name = o->get_single_name();
        if (name.empty() || name == "help" || name == "h") continue;
        std::vector<std::string> vals = o->count() > 0 ? o->results() : std::vector<std::string>{};
        if (vals.empty()) {
            std::string d = o->get_default_str();
            if (d.empty()) continue;
            if (d.front() == '[' && d.back() == ']') {
                std::stringstream ss(d.substr(1, d.size() - 2));
                for (std::string item; std::getline(ss, item, ',');) vals.push_back(item);
            } else {
                vals.push_back(d);
            }
        }
        const bool text = o->get_type_name().rfind("TEXT", 0) == 0;
        auto quote = [&](const std::string& v) { return text ? "\"" + v + "\"" : v; };
        os << name << "=";
        if (o->get_expected_max() > 1) {
            os << "[";
            for (std::size_t i = 0; i < vals.size(); ++i) os << (i ? "," : "") << quote(vals[i]);
            os << "]";
        } else {
            os << quote(vals.back());
        }
        os << "\n";
    }
    return os.str();
}

void add_density_options(CLI::App* sub, RunConfig& c) {
    sub->add_option("--alpha", c.alpha, "map parameter in [0, 1)")->capture_default_str();
    sub->add_option("--mesh", c.mesh, "graded mesh size n (>= 64)")->capture_default_str();
    sub->add_option("--orbit-points", c.orbit_points, "neutral orbit points added to the mesh (0 = auto)")->capture_default_str();
    sub->add_option("--xmin", c.x_min, "smallest mesh node")->capture_default_str();
    sub->add_option("--tol", c.tol, "density tolerance")->capture_default_str();
    sub->add_option("--density-method", c.density_method, "auto | power | direct (auto: power at alpha = 0)")
        ->capture_default_str()
        ->check(CLI::IsMember({"auto", "power", "direct"}));
    sub->add_option("--max-iter", c.max_iter, "power iteration cap (0 = auto)")->capture_default_str();
}

void add_series_options(CLI::App* sub, RunConfig& c) {
    sub->add_option("--obs", c.obs, "observable: const, x, x^k, cosm, ind:a:b, sind:a:b:w, right0")->capture_default_str();
    sub->add_option("--terms", c.terms, "maximum number of series terms")->capture_default_str();
    sub->add_option("--series-tol", c.series_tol, "stop once the fitted tail is below this")->capture_default_str();
    sub->add_option("--points", c.points, "forward/susceptibility quadrature points (validate: 0 skips forward)")->capture_default_str();
}

} // namespace

int main(int argc, char** argv) {
    RunConfig cfg;
    CLI::App app{"Linear response of intermittent maps: densities, response series, cones and decay"};
    app.fallthrough();
    app.require_subcommand(1);
    app.set_config("--config", "", "TOML configuration file (flags override it)");
    app.add_option("--cache-dir", cfg.cache_dir, "density cache directory (default $LRIM_CACHE_DIR or .lrim_cache)");
    app.add_option("--out", cfg.out, "output file (default stdout)");
    app.add_option("--format", cfg.format, "csv | json")->capture_default_str()->check(CLI::IsMember({"csv", "json"}));
    app.add_flag("--quiet", cfg.quiet, "no summary line on stderr");
    std::string write_config;
    app.add_option("--write-config", write_config, "write the effective configuration to this file and exit");

    auto* density = app.add_subcommand("density", "invariant density on the graded mesh");
    add_density_options(density, cfg);

    auto* response = app.add_subcommand("response", "linear response by the backward series, forward series or susceptibility");
    add_density_options(response, cfg);
    add_series_options(response, cfg);
    response->add_option("--method", cfg.method, "series | forward | susceptibility")
        ->check(CLI::IsMember({"series", "forward", "susceptibility"}));
    response->add_option("--z", cfg.z, "susceptibility argument in [-1, 1]")->capture_default_str();

    auto* validate = app.add_subcommand("validate", "compare response methods with finite differences");
    add_density_options(validate, cfg);
    add_series_options(validate, cfg);
    validate->add_option("--eps", cfg.eps, "finite-difference steps")->delimiter(',')->capture_default_str();
    validate->add_option("--forward-terms", cfg.forward_terms, "forward series terms compared with the backward series (0 skips)")
        ->capture_default_str();
    validate->add_option("--gate", cfg.gate, "largest accepted relative difference")->capture_default_str();

    auto* cones = app.add_subcommand("cones", "cone invariance of L^k 1 and N L^k 1, or the Omega factors");
    add_density_options(cones, cfg);
    cones->add_option("--cone", cfg.cone, "Cstar | Cstar1 | C2 | C3 | all | omega")->capture_default_str()
        ->check(CLI::IsMember({"Cstar", "Cstar1", "C2", "C3", "all", "omega"}));
    cones->add_option("--k", cfg.k_max, "largest iterate k")->capture_default_str();
    cones->add_option("--grid", cfg.grid, "y-grid size for the Omega factors")->capture_default_str();
    cones->add_option("--xcheck", cfg.x_check, "smallest node checked (default 10 x_min)")->capture_default_str();

    auto* decay = app.add_subcommand("decay", "neutral orbit, distortion, correlation decay, Birkhoff averages");
    add_density_options(decay, cfg);
    decay->add_option("--kind", cfg.kind, "orbit | distortion | correlation | birkhoff")->capture_default_str()
        ->check(CLI::IsMember({"orbit", "distortion", "correlation", "birkhoff"}));
    decay->add_option("--ell-max", cfg.ell_max, "orbit length")->capture_default_str();
    decay->add_option("--ells", cfg.ells, "distortion l values")->delimiter(',')->capture_default_str();
    decay->add_option("--ms", cfg.ms, "distortion m values")->delimiter(',')->capture_default_str();
    decay->add_option("--psi", cfg.obs, "observable psi")->capture_default_str();
    decay->add_option("--phi", cfg.phi, "observable phi (correlations)")->capture_default_str();
    decay->add_option("--lags", cfg.lags, "largest lag N")->capture_default_str();
    decay->add_option("--method", cfg.method, "operator | montecarlo")->check(CLI::IsMember({"operator", "montecarlo"}));
    decay->add_option("--orbits", cfg.orbits, "Monte Carlo orbits")->capture_default_str();
    decay->add_option("--orbit-len", cfg.orbit_len, "Monte Carlo orbit length")->capture_default_str();
    decay->add_option("--burn-in", cfg.burn_in, "discarded initial points")->capture_default_str();
    decay->add_option("--seed", cfg.seed, "random seed")->capture_default_str();

    auto* sweep = app.add_subcommand("sweep", "response curve over an alpha grid");
    add_density_options(sweep, cfg);
    add_series_options(sweep, cfg);
    sweep->add_option("--alphas", cfg.alphas, "explicit alpha list")->delimiter(',');
    sweep->add_option("--from", cfg.alpha_from, "first alpha")->capture_default_str();
    sweep->add_option("--to", cfg.alpha_to, "last alpha")->capture_default_str();
    sweep->add_option("--steps", cfg.alpha_steps, "number of intervals")->capture_default_str();
    sweep->add_option("--workers", cfg.workers, "worker threads (0 = hardware)")->capture_default_str();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return exit_usage;
    }

    CLI::App* chosen = app.get_subcommands().front();
    if (!write_config.empty()) {
        try {
            write_file_atomic(write_config, config_text(chosen));
        } catch (const std::exception& e) {
            std::cerr << "error: " << e.what() << "\n";
            return exit_usage;
        }
        return exit_ok;
    }

    cfg.command = chosen->get_name();
    try {
        if (chosen == density) return cmd_density(cfg);
        if (chosen == response) return cmd_response(cfg);
        if (chosen == validate) return cmd_validate(cfg);
        if (chosen == cones) return cmd_cones(cfg);
        if (chosen == decay) return cmd_decay(cfg);
        return cmd_sweep(cfg);
    } catch (const GateFailure& e) {
        std::cerr << "gate failure: " << e.what() << "\n";
        return exit_gate;
    } catch (const std::invalid_argument& e) {
        std::cerr << "error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::domain_error& e) {
        std::cerr << "domain error: " << e.what() << "\n";
        return exit_usage;
    } catch (const std::exception& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return exit_gate;
    }
}
