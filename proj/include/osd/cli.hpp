#pragma once

// Command-line layer: fit, design, evaluate, sequential, synth. Kept in a
// header so the test suite can drive `run` in-process.

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "osd/criteria.hpp"
#include "osd/error.hpp"
#include "osd/evalbench.hpp"
#include "osd/io.hpp"
#include "osd/optimizer.hpp"
#include "osd/risk.hpp"
#include "osd/sequential.hpp"
#include "osd/synth.hpp"

namespace osd::cli {

enum Exit : int { kOk = 0, kUsage = 2, kFitFailure = 3, kDiverged = 4, kInfeasible = 5 };

inline int exit_code(ErrorKind k) {
    switch (k) {
        case ErrorKind::Infeasible: return kInfeasible;
        case ErrorKind::NotDifferentiable:
        case ErrorKind::DegenerateCriterion: return kDiverged;
        case ErrorKind::SingularHessian:
        case ErrorKind::NoConvergence:
        case ErrorKind::OutOfDomain:
        case ErrorKind::EmptySample:
        case ErrorKind::NotPSD:
        case ErrorKind::SingularMatrix:
        case ErrorKind::UnreliableEstimate: return kFitFailure;
        default: return kUsage;
    }
}

inline const std::vector<std::string>& default_battery() {
    static const std::vector<std::string> b = {"A", "c", "D", "E", "d-er", "d-s", "phi:0.5", "phi:5", "phi:10"};
    return b;
}

struct RunConfig {
    std::string command;
    std::string input;
    std::string model = "finpop";
    std::string criterion = "A";
    std::string family = "po-wr";
    std::optional<double> n;
    std::string batches;  // sequential: comma list or a single size
    int stages = 0;
    int replications = 0;
    std::uint64_t seed = 1;
    double tol = 1e-10;
    int max_iter = 100;
    std::optional<double> eps;
    std::string out = ".";
    std::string theta0_path;
    std::vector<std::string> rows;
    std::vector<std::string> cols;
    bool rows_given = false;
    std::size_t n_units = 1000;
};

namespace detail {

inline Matrix load_matrix(const std::string& path) { return read_matrix_csv(path); }

inline CriterionSpec criterion_for(const std::string& token, const RiskProblem* pr) {
    return parse_criterion(token, pr, [](const std::string& p) { return load_matrix(p); });
}

/// Syntax check without data; V and bare c are resolved once the model is loaded.
inline void check_criterion_token(const std::string& token) {
    if (token == "V" || token == "c") return;
    (void)parse_criterion(token, nullptr, [](const std::string&) { return Matrix::identity(1); });
}

inline std::vector<double> parse_batches(const std::string& s) {
    std::vector<double> out;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const std::size_t comma = s.find(',', pos);
        const std::string item = s.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos);
        out.push_back(parse_double(item, "--n"));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

inline std::map<std::string, std::string> read_config_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::Schema, "cannot open config file '" + path + "'");
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto trim = [](std::string t) {
            const auto b = t.find_first_not_of(" \t\r");
            if (b == std::string::npos) return std::string();
            return t.substr(b, t.find_last_not_of(" \t\r") - b + 1);
        };
        line = trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw Error(ErrorKind::Schema, path + ":" + std::to_string(line_no) + ": expected key=value");
        kv[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
}

inline bool flag_present(const std::vector<std::string>& args, const std::string& name) {
    for (const auto& a : args)
        if (a == name || a.starts_with(name + "=")) return true;
    return false;
}

inline void write_file(const RunConfig& cfg, const std::string& name, const std::string& text) {
    write_text((std::filesystem::path(cfg.out) / name).string(), text);
}

inline std::string theta_csv(const std::vector<std::string>& names, std::span<const double> theta) {
    std::ostringstream out;
    for (std::size_t j = 0; j < names.size(); ++j) out << (j ? "," : "") << names[j];
    out << '\n';
    for (std::size_t j = 0; j < theta.size(); ++j) out << (j ? "," : "") << format_double(theta[j]);
    out << '\n';
    return out.str();
}

inline std::string gradients_csv(const std::vector<std::string>& ids, const std::vector<std::string>& names,
                                 const GradientSet& g) {
    std::ostringstream out;
    out << "id";
    for (const auto& n : names) out << ",g_" << n;
    out << '\n';
    for (std::size_t i = 0; i < g.units(); ++i) {
        out << ids[i];
        for (std::size_t j = 0; j < g.dim(); ++j) out << ',' << format_double(g.psi(i, j));
        out << '\n';
    }
    return out.str();
}

inline std::string trace_csv(const SolveTrace& tr) {
    std::ostringstream out;
    out << "iteration,objective,status\n";
    out << "0," << format_double(tr.initial_objective) << ",initial\n";
    for (std::size_t t = 0; t < tr.objective_per_iter.size(); ++t) {
        const bool last = t + 1 == tr.objective_per_iter.size();
        out << t + 1 << ',' << format_double(tr.objective_per_iter[t]) << ','
            << (last ? std::string(to_string(tr.status)) : std::string("improved")) << '\n';
    }
    if (tr.objective_per_iter.empty()) out << "1,," << to_string(tr.status) << '\n';
    return out.str();
}

struct Loaded {
    Dataset data;
    RiskProblem problem;
};

inline Loaded load(const RunConfig& cfg) {
    Dataset d = read_dataset(cfg.input, *parse_model(cfg.model));
    RiskProblem pr = make_problem(d);
    return {std::move(d), std::move(pr)};
}

inline Vector fit_or_read_theta(const RunConfig& cfg, const RiskProblem& pr) {
    if (!cfg.theta0_path.empty()) {
        const CsvTable t = read_csv(cfg.theta0_path);
        if (t.rows.size() != 1 || t.header.size() != pr.dim())
            throw Error(ErrorKind::Schema, cfg.theta0_path + ": expected one row of " + std::to_string(pr.dim()) + " values");
        Vector theta(pr.dim());
        for (std::size_t j = 0; j < pr.dim(); ++j) theta[j] = parse_double(t.rows[0][j], cfg.theta0_path);
        return theta;
    }
    return fit_full(pr, pr.default_theta_init(), cfg.tol, cfg.max_iter).theta0;
}

inline double budget_or_default(const RunConfig& cfg, std::size_t N) {
    return cfg.n ? *cfg.n : std::ceil(0.01 * static_cast<double>(N));
}

inline SolverOptions solver_options(const RunConfig& cfg) {
    SolverOptions o;
    o.max_iter = cfg.max_iter;
    if (cfg.eps) o.eps = *cfg.eps;
    return o;
}

}  // namespace detail

inline int cmd_fit(const RunConfig& cfg, std::ostream& out) {
    const auto [d, pr] = detail::load(cfg);
    const FitResult f = fit_full(pr, pr.default_theta_init(), cfg.tol, cfg.max_iter);
    detail::write_file(cfg, "theta0.csv", detail::theta_csv(pr.parameter_names(), f.theta0));
    detail::write_file(cfg, "gradients.csv", detail::gradients_csv(d.ids, pr.parameter_names(), gradient_set(pr, f.theta0)));
    out << "fit: " << f.iterations << " Newton iterations, theta0 =";
    for (double t : f.theta0) out << ' ' << format_double(t);
    out << '\n';
    return kOk;
}

inline int cmd_design(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const auto [d, pr] = detail::load(cfg);
    const CriterionSpec spec = detail::criterion_for(cfg.criterion, &pr);
    const Vector theta0 = detail::fit_or_read_theta(cfg, pr);
    const GradientSet g = gradient_set(pr, theta0);
    const double n = detail::budget_or_default(cfg, pr.size());
    const SolveTrace tr = fixed_point_solve(spec, g, *parse_family(cfg.family), n, std::nullopt, detail::solver_options(cfg));
    detail::write_file(cfg, "trace.csv", detail::trace_csv(tr));
    if (tr.status == SolveStatus::Infeasible) {
        std::vector<std::string> ids;
        for (std::size_t i : tr.zero_ids) ids.push_back(d.ids[i]);
        std::string list;
        for (std::size_t k = 0; k < ids.size() && k < 20; ++k) list += (k ? "," : "") + ids[k];
        if (ids.size() > 20) list += ",...";
        err << "design: infeasible: zero coefficients at ids " << list << '\n';
        return kInfeasible;
    }
    detail::write_file(cfg, "scheme.csv", scheme_csv(tr.final_scheme, d.ids));
    out << "design " << label(spec) << ": " << to_string(tr.status) << " after " << tr.iterations
        << " iteration(s), objective " << format_double(tr.final_objective()) << '\n';
    switch (tr.status) {
        case SolveStatus::Diverged:
        case SolveStatus::NotDifferentiable:
            err << "design: " << to_string(tr.status) << ": " << tr.message << '\n';
            return kDiverged;
        case SolveStatus::MaxIter: err << "design: iteration limit reached before convergence\n"; return kOk;
        default: return kOk;
    }
}

inline int cmd_evaluate(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    const std::vector<std::string>& row_tokens = cfg.rows_given ? cfg.rows : default_battery();
    const std::vector<std::string>& col_tokens = cfg.cols.empty() ? row_tokens : cfg.cols;
    const auto [d, pr] = detail::load(cfg);
    std::vector<CriterionSpec> rows, cols;
    for (const auto& t : row_tokens) rows.push_back(detail::criterion_for(t, &pr));
    for (const auto& t : col_tokens) cols.push_back(detail::criterion_for(t, &pr));
    const Vector theta0 = detail::fit_or_read_theta(cfg, pr);
    const GradientSet g = gradient_set(pr, theta0);
    const double n = detail::budget_or_default(cfg, pr.size());
    SolverOptions opt = SolverOptions::tight();
    if (cfg.eps) opt = detail::solver_options(cfg);
    const EfficiencyTable t = efficiency_table(g, *parse_family(cfg.family), n, rows, cols, opt);
    detail::write_file(cfg, "efficiency.csv", t.to_csv());
    const std::string text = t.to_text();
    detail::write_file(cfg, "efficiency.txt", text);
    out << text;
    for (std::size_t i = 0; i < t.rows.size(); ++i)
        if (!t.notes[i].empty()) err << "evaluate: " << t.rows[i] << ": " << t.notes[i] << '\n';
    return kOk;
}

inline int cmd_sequential(const RunConfig& cfg, std::ostream& out, std::ostream& err) {
    std::vector<double> batches = detail::parse_batches(cfg.batches);
    if (cfg.stages > 0 && batches.size() == 1) batches.assign(static_cast<std::size_t>(cfg.stages), batches[0]);
    if (cfg.stages > 0 && batches.size() != static_cast<std::size_t>(cfg.stages))
        throw Error(ErrorKind::InvalidInput, "--n lists " + std::to_string(batches.size()) + " batch sizes for " +
                                                 std::to_string(cfg.stages) + " stages");
    const auto [d, pr] = detail::load(cfg);
    const CriterionSpec spec = detail::criterion_for(cfg.criterion, &pr);
    const DesignFamily family = *parse_family(cfg.family);
    AuxConfig aux;
    aux.tol = cfg.tol;
    aux.max_iter = cfg.max_iter;
    aux.solver = detail::solver_options(cfg);

    std::vector<StageRecord> recs;
    int code = kOk;
    try {
        run_k_stages(pr, spec, family, batches, cfg.seed, aux, &recs);
    } catch (const Error& e) {
        err << "sequential: " << e.what() << '\n';
        code = exit_code(e.kind());
    }
    for (const auto& r : recs)
        detail::write_file(cfg, "stage_" + std::to_string(r.stage) + "_scheme.csv", scheme_csv(r.scheme, d.ids));
    detail::write_file(cfg, "stage_log.csv", stage_log_csv(recs, pr.parameter_names()));
    if (code != kOk) return code;
    out << "sequential: " << recs.size() << " stage(s), final theta =";
    for (double t : recs.back().theta_hat) out << ' ' << format_double(t);
    out << '\n';

    if (cfg.replications > 0) {
        const Vector theta0 = fit_full(pr, pr.default_theta_init(), cfg.tol, cfg.max_iter).theta0;
        const LearningCurve lc = learning_curve(pr, spec, family, batches, cfg.seed, cfg.replications, theta0, aux);
        detail::write_file(cfg, "learning_curve.csv", learning_curve_csv(lc, batches));
        out << "learning curve: final/first error ratio " << format_double(lc.final_over_first()) << " over "
            << lc.replications << " replication(s)";
        if (lc.failures) out << ", " << lc.failures << " failed";
        out << '\n';
    }
    return kOk;
}

inline int cmd_synth(const RunConfig& cfg, std::ostream& out) {
    const Dataset d = synth(*parse_model(cfg.model), cfg.n_units, cfg.seed);
    detail::write_file(cfg, "data.csv", dataset_csv(d));
    out << "synth: " << d.size() << ' ' << cfg.model << " units\n";
    return kOk;
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code. Diagnostics go to `err`.
inline int run(std::vector<std::string> args, std::ostream& out, std::ostream& err) {
    RunConfig cfg;
    CLI::App app{"Optimal subsampling designs", "osd"};
    app.require_subcommand(1);
    std::string config_path;

    const std::vector<std::string> models = {"finpop", "lognormal", "qblogit"};
    const std::vector<std::string> families = {"po-wr", "po-wor", "multi"};
    auto common = [&](CLI::App* s, bool needs_input) {
        s->add_option("--config", config_path, "flat key=value file; flags take precedence");
        auto* in = s->add_option("--input", cfg.input, "population CSV")->check(CLI::ExistingFile);
        if (needs_input) in->required();
        s->add_option("--model", cfg.model, "finpop | lognormal | qblogit")->check(CLI::IsMember(models));
        s->add_option("--seed", cfg.seed);
        s->add_option("--tol", cfg.tol, "Newton tolerance")->check(CLI::PositiveNumber);
        s->add_option("--max-iter", cfg.max_iter)->check(CLI::PositiveNumber);
        s->add_option("--out", cfg.out, "output directory");
    };
    auto design_opts = [&](CLI::App* s) {
        s->add_option("--criterion", cfg.criterion);
        s->add_option("--family", cfg.family)->check(CLI::IsMember(families));
        s->add_option("--eps", cfg.eps, "fixed-point tolerance")->check(CLI::PositiveNumber);
        s->add_option("--theta0", cfg.theta0_path, "theta0.csv from a previous fit");
    };

    CLI::App* fit = app.add_subcommand("fit", "full-data estimate and gradients");
    common(fit, true);
    CLI::App* design = app.add_subcommand("design", "optimal scheme for one criterion");
    common(design, true);
    design_opts(design);
    design->add_option("--n", cfg.n, "expected subsample size (default 1% of N)")->check(CLI::PositiveNumber);
    CLI::App* evaluate = app.add_subcommand("evaluate", "relative efficiency table");
    common(evaluate, true);
    design_opts(evaluate);
    evaluate->add_option("--n", cfg.n)->check(CLI::PositiveNumber);
    auto* rows_opt = evaluate->add_option("--rows", cfg.rows, "row criteria")->expected(0, -1);
    evaluate->add_option("--cols", cfg.cols, "column criteria (default: rows)")->expected(0, -1);
    CLI::App* sequential = app.add_subcommand("sequential", "multi-stage design");
    common(sequential, true);
    design_opts(sequential);
    sequential->add_option("--n", cfg.batches, "batch size or comma list")->required();
    sequential->add_option("--stages", cfg.stages)->check(CLI::PositiveNumber);
    sequential->add_option("--replications", cfg.replications)->check(CLI::NonNegativeNumber);
    CLI::App* synth_cmd = app.add_subcommand("synth", "seeded synthetic population");
    common(synth_cmd, false);
    synth_cmd->add_option("--n-units", cfg.n_units)->check(CLI::PositiveNumber);

    try {
        // Config keys become flags unless the flag was given explicitly.
        for (std::size_t k = 0; k + 1 < args.size(); ++k) {
            if (args[k] == "--config") config_path = args[k + 1];
        }
        for (const auto& a : args)
            if (a.starts_with("--config=")) config_path = a.substr(9);
        if (!config_path.empty() && !args.empty()) {
            const CLI::App* sub = nullptr;
            for (auto* s : app.get_subcommands({}))
                if (s->get_name() == args.front()) sub = s;
            if (sub) {
                for (const auto& [key, value] : detail::read_config_file(config_path)) {
                    const std::string flag = "--" + key;
                    if (key == "config" || detail::flag_present(args, flag)) continue;
                    if (!sub->get_option_no_throw(flag)) {
                        err << "config: ignoring '" << key << "' (not an option of " << sub->get_name() << ")\n";
                        continue;
                    }
                    args.push_back(flag);
                    std::istringstream vs(value);
                    for (std::string v; vs >> v;) args.push_back(v);
                }
            }
        }
        std::reverse(args.begin(), args.end());
        app.parse(args);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kUsage;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }

    // Every token is checked before any data is read.
    try {
        if (design->parsed() || sequential->parsed()) detail::check_criterion_token(cfg.criterion);
        if (evaluate->parsed()) {
            cfg.rows_given = rows_opt->count() > 0;
            std::erase(cfg.rows, std::string());
            std::erase(cfg.cols, std::string());
            if (cfg.rows_given && cfg.rows.empty()) throw Error(ErrorKind::InvalidInput, "--rows lists no criteria");
            for (const auto& t : cfg.rows) detail::check_criterion_token(t);
            for (const auto& t : cfg.cols) detail::check_criterion_token(t);
        }
        if (sequential->parsed()) (void)detail::parse_batches(cfg.batches);
    } catch (const Error& e) {
        err << "usage: " << e.what() << '\n';
        return kUsage;
    }

    try {
        std::filesystem::create_directories(cfg.out);
        if (fit->parsed()) return cmd_fit(cfg, out);
        if (design->parsed()) return cmd_design(cfg, out, err);
        if (evaluate->parsed()) return cmd_evaluate(cfg, out, err);
        if (sequential->parsed()) return cmd_sequential(cfg, out, err);
        return cmd_synth(cfg, out);
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return exit_code(e.kind());
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kUsage;
    }
}

}  // namespace osd::cli
