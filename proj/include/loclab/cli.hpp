#pragma once

#include "loclab/io.hpp"

#include "CLI11.hpp"

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <iterator>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace loclab {

/// Process exit codes of the command-line tool.
enum ExitCode : int {
    kExitOk = 0,
    kExitInternal = 1,
    kExitInput = 2,
    kExitCap = 3,
    kExitChain = 4,
};

namespace detail {

inline std::string read_input(const std::string& path, std::istream& in) {
    if (path == "-")
        return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
    std::ifstream f(path, std::ios::binary);
    if (!f)
        throw InvalidArgument("cannot open '" + path + "'");
    return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

inline void write_output(const std::string& path, const std::string& text, std::ostream& out) {
    if (path.empty() || path == "-") {
        out << text << '\n';
        return;
    }
    std::ofstream f(path, std::ios::binary);
    if (!f)
        throw InvalidArgument("cannot write '" + path + "'");
    f << text << '\n';
    if (!f)
        throw InvalidArgument("write to '" + path + "' failed");
}

inline std::optional<std::uint64_t> instance_seed(const Instance& inst) {
    const auto it = inst.params.find("seed");
    if (it == inst.params.end() || it->second < 0.0)
        return std::nullopt;
    return static_cast<std::uint64_t>(it->second);
}

inline json report_header(const char* command, const Instance& inst, const std::string& text) {
    json r;
    r["schema_version"] = kSchemaVersion;
    r["command"] = command;
    r["instance"] = inst.name;
    r["orientation"] = kOrientation;
    r["provenance"] = provenance(text, instance_seed(inst));
    if (!inst.expected.empty())
        r["expected"] = inst.expected;
    return r;
}

struct Options {
    std::string input;
    std::string out;
    std::string csv;
    std::size_t cap = 0;
    int kappa = 3;
    double tau = 1.0;
    int iters = 3;
    double threshold = 0.0;
    std::string scenario;
    std::vector<std::string> params;
    std::optional<std::uint64_t> seed;
    double gamma = 0.99;
    double rho = 0.5;
    double epsilon = 0.01;
};

inline Limits limits_for(const Options& o) {
    Limits l = Limits::from_environment();
    if (o.cap > 0)
        l.max_evaluations = o.cap;
    return l;
}

inline int cmd_influence(const Options& o, std::istream& in, std::ostream& out) {
    const auto text = read_input(o.input, in);
    const auto inst = parse_instance(text);
    const auto lim = limits_for(o);
    const auto rep = influence_report(inst.mdp, inst.policy, lim);
    const auto baseline = action_supremum_influence(inst.mdp, lim);
    auto r = report_header("influence", inst, text);
    r["influence"] = influence_to_json(rep);
    r["action_supremum_baseline"] = matrix_to_json(baseline);
    r["baseline_inf_norm"] = inf_norm(baseline);
    r["H_inf_norm"] = inf_norm(rep.H);
    if (!o.csv.empty()) {
        std::filesystem::create_directories(o.csv);
        const std::pair<const char*, const Eigen::MatrixXd*> mats[] = {
            {"E_s", &rep.E_s}, {"E_a", &rep.E_a}, {"Pi", &rep.Pi},
            {"C", &rep.C},     {"H", &rep.H},     {"action_supremum_baseline", &baseline}};
        for (const auto& [name, m] : mats) {
            std::ofstream f(std::filesystem::path(o.csv) / (std::string(name) + ".csv"));
            if (!f)
                throw InvalidArgument("cannot write CSV into '" + o.csv + "'");
            f << matrix_to_csv(*m);
        }
    }
    write_output(o.out, r.dump(2), out);
    return kExitOk;
}

inline int cmd_certify(const Options& o, std::istream& in, std::ostream& out) {
    if (o.kappa < 0)
        throw InvalidArgument("--kappa must be nonnegative");
    const auto text = read_input(o.input, in);
    const auto inst = parse_instance(text);
    const auto lim = limits_for(o);
    const auto P = induced_kernel(inst.mdp, inst.policy, lim);
    const auto r_pi = policy_reward(inst.mdp, inst.policy, lim);
    const auto sol = solve_poisson(P, r_pi);
    const auto rep = influence_report(inst.mdp, inst.policy, lim);
    CertificateOptions copt;
    copt.graph_threshold = o.threshold;
    const auto cert = build_certificate(rep, P, r_pi, sol, inst.mdp.states(), o.kappa, copt);
    auto r = report_header("certify", inst, text);
    r["influence"] = influence_to_json(rep);
    r["poisson"] = poisson_to_json(sol);
    r["certificate"] = certificate_to_json(cert);
    r["certified"] = cert.certified();
    r["value_oscillation"] = vector_to_json(oscillation(sol.h, inst.mdp.states()));
    r["neumann_bound"] = cert.spectral_ok ? vector_to_json(neumann_bound(rep.H, cert.b)) : json(nullptr);
    write_output(o.out, r.dump(2), out);
    return kExitOk;
}

inline int cmd_lpi(const Options& o, std::istream& in, std::ostream& out) {
    if (!(o.tau > 0.0))
        throw InvalidArgument("--tau must be positive");
    if (o.iters < 1)
        throw InvalidArgument("--iters must be at least 1");
    if (o.kappa < 0)
        throw InvalidArgument("--kappa must be nonnegative");
    const auto text = read_input(o.input, in);
    const auto inst = parse_instance(text);
    const auto trace = lpi_iterate(inst.mdp, inst.policy, o.kappa, o.tau, o.iters, limits_for(o));
    double min_slack = std::numeric_limits<double>::infinity();
    for (const auto& it : trace.iterations)
        for (const auto& b : it.blocks)
            min_slack = std::min(min_slack, b.slack());
    std::vector<double> rbars;
    for (const auto& it : trace.iterations)
        rbars.push_back(it.rbar);
    rbars.push_back(trace.final_rbar);
    auto r = report_header("lpi", inst, text);
    r["trace"] = trace_to_json(trace);
    r["rbar_sequence"] = rbars;
    r["audit"] = {{"min_slack", finite_or_null(min_slack)}, {"tolerance", 1e-9}, {"passed", min_slack >= -1e-9}};
    write_output(o.out, r.dump(2), out);
    return kExitOk;
}

inline std::map<std::string, double> parse_params(const std::vector<std::string>& items) {
    std::map<std::string, double> params;
    for (const auto& item : items) {
        const auto eq = item.find('=');
        if (eq == std::string::npos || eq == 0)
            throw InvalidArgument("scenario parameter '" + item + "' is not key=value");
        const auto key = item.substr(0, eq);
        const auto val = item.substr(eq + 1);
        std::size_t used = 0;
        double v = 0.0;
        try {
            v = std::stod(val, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != val.size() || val.empty() || !std::isfinite(v))
            throw InvalidArgument("scenario parameter '" + key + "' has a non-numeric value");
        params[key] = v;
    }
    return params;
}

inline int cmd_scenario(const Options& o, std::ostream& out) {
    auto params = parse_params(o.params);
    if (o.seed)
        params["seed"] = static_cast<double>(*o.seed);
    const auto sc = make_scenario(o.scenario, params, limits_for(o));
    write_output(o.out, instance_to_json(instance_from_scenario(sc)).dump(2), out);
    return kExitOk;
}

/// Shortest decimal that round-trips.
inline std::string shortest(double v) {
    char buf[32];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline int cmd_radius(const Options& o, std::ostream& out) {
    const double lambda = discounted_rate(o.gamma, o.rho);
    if (!(lambda < 1.0))
        throw InvalidArgument("gamma * rho must be below 1 for a finite radius");
    const int kappa = required_radius(lambda, o.epsilon);
    std::ostringstream os;
    os << "lambda = " << shortest(lambda) << '\n' << "kappa = " << kappa << '\n';
    json r{{"gamma", o.gamma}, {"rho", o.rho}, {"epsilon", o.epsilon}, {"lambda", lambda}, {"kappa", kappa}};
    if (lambda > 0.0) {
        const double real = std::log(o.epsilon) / std::log(lambda);
        os << "ln(epsilon)/ln(lambda) = " << shortest(real) << " (kappa is its ceiling; rounding to nearest gives "
           << std::llround(real) << ")\n";
        r["real_solution"] = real;
        r["nearest_integer"] = std::llround(real);
    }
    out << os.str();
    if (!o.out.empty())
        write_output(o.out, r.dump(2), out);
    return kExitOk;
}

} // namespace detail

/// Runs the command-line tool on `args` (without the program name). Reports
/// go to `out` unless --out names a file; diagnostics go to `err`.
inline int run_cli(const std::vector<std::string>& args, std::istream& in, std::ostream& out, std::ostream& err) {
    using detail::Options;
    Options o;
    CLI::App app{"Locality analysis for factored multi-agent MDPs", "loclab"};
    app.require_subcommand(1);
    app.set_version_flag("--version", kToolVersion);

    auto add_cap = [&](CLI::App* c) {
        c->add_option("--cap", o.cap, "maximum joint evaluations (default LOCLAB_CAP or 1000000)");
    };
    auto add_out = [&](CLI::App* c) { c->add_option("--out", o.out, "output file (default stdout)"); };

    auto* inf = app.add_subcommand("influence", "sensitivity matrices, H, rho and the action-supremum baseline");
    inf->add_option("instance", o.input, "instance JSON ('-' for stdin)")->required();
    inf->add_option("--csv", o.csv, "also write each matrix as CSV into this directory");
    add_out(inf);
    add_cap(inf);

    auto* cer = app.add_subcommand("certify", "Poisson solution, truncated certificate and bounds");
    cer->add_option("instance", o.input, "instance JSON ('-' for stdin)")->required();
    cer->add_option("--kappa", o.kappa, "truncation radius")->capture_default_str();
    cer->add_option("--threshold", o.threshold, "support-graph edge threshold")->capture_default_str();
    add_out(cer);
    add_cap(cer);

    auto* lpi = app.add_subcommand("lpi", "localized policy improvement trace with per-block audits");
    lpi->add_option("instance", o.input, "instance JSON ('-' for stdin)")->required();
    lpi->add_option("--kappa", o.kappa, "truncation radius")->capture_default_str();
    lpi->add_option("--tau", o.tau, "KL-prox temperature")->capture_default_str();
    lpi->add_option("--iters", o.iters, "outer iterations")->capture_default_str();
    add_out(lpi);
    add_cap(lpi);

    auto* scn = app.add_subcommand("scenario", "emit a built-in scenario as an instance file");
    scn->add_option("name", o.scenario, "sleepy | leader-follower | hub-spoke | random")->required();
    scn->add_option("params", o.params, "key=value parameters");
    scn->add_option("--seed", o.seed, "seed for the random scenario");
    add_out(scn);
    add_cap(scn);

    auto* rad = app.add_subcommand("radius", "discounted decay rate and required truncation radius");
    rad->add_option("--gamma", o.gamma, "discount factor in (0, 1]")->capture_default_str();
    rad->add_option("--rho", o.rho, "spectral radius of H")->capture_default_str();
    rad->add_option("--epsilon", o.epsilon, "target tail level in (0, 1)")->capture_default_str();
    add_out(rad);

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        if (e.get_exit_code() == 0) {
            app.exit(e, out, err);
            return kExitOk;
        }
        app.exit(e, err, err);
        return kExitInput;
    }

    try {
        if (inf->parsed())
            return detail::cmd_influence(o, in, out);
        if (cer->parsed())
            return detail::cmd_certify(o, in, out);
        if (lpi->parsed())
            return detail::cmd_lpi(o, in, out);
        if (scn->parsed())
            return detail::cmd_scenario(o, out);
        return detail::cmd_radius(o, out);
    } catch (const CapExceeded& e) {
        err << "error: " << e.what() << '\n';
        return kExitCap;
    } catch (const ChainError& e) {
        err << "error: " << e.what() << '\n';
        return kExitChain;
    } catch (const NumericalError& e) {
        err << "error: " << e.what() << '\n';
        return kExitInternal;
    } catch (const Error& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const json::exception& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kExitInput;
    }
}

} // namespace loclab
