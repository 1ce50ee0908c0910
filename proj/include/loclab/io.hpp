#pragma once

#include "loclab/lpi.hpp"
#include "loclab/scenarios.hpp"

#include "json.hpp"

#include <cstdint>
#include <initializer_list>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

namespace loclab {

using json = nlohmann::json;

inline constexpr int kSchemaVersion = 1;
inline constexpr const char* kToolVersion = "0.1.0";
inline constexpr const char* kOrientation = "row = influenced agent j, column = influencing agent i; entry [j][i]";

/// An instance file in memory.
struct Instance {
    std::string name;
    FactoredMDP mdp;
    ProductPolicy policy;
    std::optional<SoftmaxPolicy> softmax;
    std::map<std::string, double> expected;
    std::optional<std::string> scenario;
    std::map<std::string, double> params;
};

/// 64-bit FNV-1a, printed as 16 hex digits.
inline std::string fnv1a_hex(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    std::ostringstream os;
    os << std::hex << std::setw(16) << std::setfill('0') << h;
    return os.str();
}

namespace detail {

inline void require_keys(const json& obj, const char* where, std::initializer_list<const char*> allowed,
                         std::initializer_list<const char*> required) {
    if (!obj.is_object())
        throw InvalidArgument(std::string(where) + ": expected an object");
    for (const auto& [key, value] : obj.items()) {
        bool ok = false;
        for (const char* a : allowed)
            ok = ok || key == a;
        if (!ok)
            throw InvalidArgument(std::string(where) + ": unknown key '" + key + "'");
    }
    for (const char* r : required)
        if (!obj.contains(r))
            throw InvalidArgument(std::string(where) + ": missing key '" + r + "'");
}

inline int as_int(const json& v, const std::string& where) {
    if (!v.is_number_integer())
        throw InvalidArgument(where + ": expected an integer");
    return v.get<int>();
}

inline double as_number(const json& v, const std::string& where) {
    if (!v.is_number())
        throw InvalidArgument(where + ": expected a number");
    return v.get<double>();
}

inline Scope as_scope(const json& v, const std::string& where) {
    if (!v.is_array())
        throw InvalidArgument(where + ": expected an array of agent indices");
    Scope s;
    for (const auto& e : v)
        s.push_back(as_int(e, where));
    return s;
}

/// Flattens an array of `rows` arrays, each `width` long.
inline std::vector<double> as_rows(const json& v, std::size_t rows, std::size_t width, const std::string& where) {
    if (!v.is_array() || v.size() != rows)
        throw InvalidArgument(where + ": expected " + std::to_string(rows) + " rows");
    std::vector<double> out;
    out.reserve(rows * width);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto& row = v[r];
        if (!row.is_array() || row.size() != width)
            throw InvalidArgument(where + ": row " + std::to_string(r) + " must have " + std::to_string(width) +
                                  " entries");
        for (const auto& e : row)
            out.push_back(as_number(e, where));
    }
    return out;
}

inline json rows_to_json(std::span<const double> flat, std::size_t width) {
    json out = json::array();
    for (std::size_t r = 0; width && r < flat.size() / width; ++r)
        out.push_back(std::vector<double>(flat.begin() + static_cast<std::ptrdiff_t>(r * width),
                                          flat.begin() + static_cast<std::ptrdiff_t>((r + 1) * width)));
    return out;
}

inline std::map<std::string, double> as_number_map(const json& v, const std::string& where) {
    if (!v.is_object())
        throw InvalidArgument(where + ": expected an object of numbers");
    std::map<std::string, double> out;
    for (const auto& [k, e] : v.items())
        out[k] = as_number(e, where + "." + k);
    return out;
}

} // namespace detail

/// Parses and validates an instance document. Every shape and stochasticity
/// problem throws InvalidArgument or DimensionError.
inline Instance instance_from_json(const json& doc) {
    using namespace detail;
    require_keys(doc, "instance",
                 {"schema_version", "name", "agents", "kernels", "reward", "policy", "expected", "scenario"},
                 {"schema_version", "agents", "kernels", "reward", "policy"});
    if (as_int(doc["schema_version"], "schema_version") != kSchemaVersion)
        throw InvalidArgument("unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
    Instance inst;
    if (doc.contains("name")) {
        if (!doc["name"].is_string())
            throw InvalidArgument("name: expected a string");
        inst.name = doc["name"].get<std::string>();
    }

    const auto& agents = doc["agents"];
    if (!agents.is_array() || agents.empty())
        throw InvalidArgument("agents: expected a nonempty array");
    std::vector<int> ss, as;
    for (std::size_t k = 0; k < agents.size(); ++k) {
        const std::string w = "agents[" + std::to_string(k) + "]";
        require_keys(agents[k], w.c_str(), {"states", "actions"}, {"states", "actions"});
        ss.push_back(as_int(agents[k]["states"], w + ".states"));
        as.push_back(as_int(agents[k]["actions"], w + ".actions"));
    }
    const ProductSpace S(ss), A(as);

    const auto& kj = doc["kernels"];
    if (!kj.is_array() || kj.size() != ss.size())
        throw InvalidArgument("kernels: expected one entry per agent");
    std::vector<KernelFactor> kernels;
    for (std::size_t j = 0; j < kj.size(); ++j) {
        const std::string w = "kernels[" + std::to_string(j) + "]";
        require_keys(kj[j], w.c_str(),
                     {"state_scope", "action_scope", "declared_state_scope", "declared_action_scope", "rows"},
                     {"state_scope", "action_scope", "rows"});
        KernelFactor f;
        f.state_scope = as_scope(kj[j]["state_scope"], w + ".state_scope");
        f.action_scope = as_scope(kj[j]["action_scope"], w + ".action_scope");
        if (kj[j].contains("declared_state_scope"))
            f.declared_state_scope = as_scope(kj[j]["declared_state_scope"], w + ".declared_state_scope");
        if (kj[j].contains("declared_action_scope"))
            f.declared_action_scope = as_scope(kj[j]["declared_action_scope"], w + ".declared_action_scope");
        const std::size_t rows = ScopeIndexer(S, f.state_scope).size() * ScopeIndexer(A, f.action_scope).size();
        f.table = as_rows(kj[j]["rows"], rows, static_cast<std::size_t>(ss[j]), w + ".rows");
        kernels.push_back(std::move(f));
    }

    const auto& rj = doc["reward"];
    require_keys(rj, "reward", {"table", "per_agent"}, {});
    if (rj.contains("table") == rj.contains("per_agent"))
        throw InvalidArgument("reward: give exactly one of 'table' or 'per_agent'");
    std::vector<double> reward;
    if (rj.contains("table")) {
        reward = as_rows(rj["table"], S.size(), A.size(), "reward.table");
    } else {
        reward.assign(S.size() * A.size(), 0.0);
        const auto& parts = rj["per_agent"];
        if (!parts.is_array())
            throw InvalidArgument("reward.per_agent: expected an array");
        std::vector<int> sd(ss.size()), ad(as.size());
        for (std::size_t p = 0; p < parts.size(); ++p) {
            const std::string w = "reward.per_agent[" + std::to_string(p) + "]";
            require_keys(parts[p], w.c_str(), {"state_scope", "action_scope", "values"},
                         {"state_scope", "action_scope", "values"});
            const ScopeIndexer si(S, as_scope(parts[p]["state_scope"], w + ".state_scope"));
            const ScopeIndexer ai(A, as_scope(parts[p]["action_scope"], w + ".action_scope"));
            const auto vals = as_rows(parts[p]["values"], si.size(), ai.size(), w + ".values");
            for (std::size_t s = 0; s < S.size(); ++s) {
                S.decode(s, sd);
                for (std::size_t a = 0; a < A.size(); ++a) {
                    A.decode(a, ad);
                    reward[s * A.size() + a] += vals[si.project(sd) * ai.size() + ai.project(ad)];
                }
            }
        }
    }
    inst.mdp = FactoredMDP(ss, as, std::move(kernels), std::move(reward));

    const auto& pj = doc["policy"];
    require_keys(pj, "policy", {"type", "temperature", "agents"}, {"type", "agents"});
    if (!pj["type"].is_string())
        throw InvalidArgument("policy.type: expected a string");
    const auto type = pj["type"].get<std::string>();
    const auto& pa = pj["agents"];
    if (!pa.is_array() || pa.size() != ss.size())
        throw InvalidArgument("policy.agents: expected one entry per agent");
    std::vector<Scope> scopes;
    for (std::size_t k = 0; k < pa.size(); ++k) {
        const std::string w = "policy.agents[" + std::to_string(k) + "]";
        const char* body = type == "softmax" ? "logits" : "rows";
        require_keys(pa[k], w.c_str(), {"scope", body}, {"scope", body});
        scopes.push_back(as_scope(pa[k]["scope"], w + ".scope"));
    }
    PolicyLayout layout(S, as, scopes);
    std::vector<std::vector<double>> tables;
    if (type == "tables") {
        if (pj.contains("temperature"))
            throw InvalidArgument("policy: 'temperature' only applies to softmax policies");
        for (std::size_t k = 0; k < pa.size(); ++k)
            tables.push_back(as_rows(pa[k]["rows"], layout.rows(k), static_cast<std::size_t>(as[k]),
                                     "policy.agents[" + std::to_string(k) + "].rows"));
        inst.policy = ProductPolicy(layout, std::move(tables));
    } else if (type == "softmax") {
        if (!pj.contains("temperature"))
            throw InvalidArgument("policy: softmax needs 'temperature'");
        SoftmaxPolicy sp{layout, {}, as_number(pj["temperature"], "policy.temperature")};
        for (std::size_t k = 0; k < pa.size(); ++k)
            sp.logits.push_back(as_rows(pa[k]["logits"], layout.rows(k), static_cast<std::size_t>(as[k]),
                                        "policy.agents[" + std::to_string(k) + "].logits"));
        inst.policy = materialize_softmax(sp);
        inst.softmax = std::move(sp);
    } else {
        throw InvalidArgument("policy.type must be 'tables' or 'softmax'");
    }

    if (doc.contains("expected"))
        inst.expected = as_number_map(doc["expected"], "expected");
    if (doc.contains("scenario")) {
        require_keys(doc["scenario"], "scenario", {"name", "params"}, {"name"});
        if (!doc["scenario"]["name"].is_string())
            throw InvalidArgument("scenario.name: expected a string");
        inst.scenario = doc["scenario"]["name"].get<std::string>();
        if (doc["scenario"].contains("params"))
            inst.params = as_number_map(doc["scenario"]["params"], "scenario.params");
    }

    const auto report = validate(inst.mdp, inst.policy);
    if (!report.ok()) {
        std::string msg = "instance failed validation:";
        for (const auto& v : report.violations)
            msg += "\n  " + std::string(to_string(v.kind)) + " (agent " + std::to_string(v.agent) + ", row " +
                   std::to_string(v.row) + "): " + v.detail;
        throw InvalidArgument(msg);
    }
    return inst;
}

inline Instance parse_instance(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InvalidArgument(std::string("malformed JSON: ") + e.what());
    }
    return instance_from_json(doc);
}

inline json instance_to_json(const Instance& inst) {
    const auto& mdp = inst.mdp;
    json doc;
    doc["schema_version"] = kSchemaVersion;
    if (!inst.name.empty())
        doc["name"] = inst.name;
    doc["agents"] = json::array();
    for (std::size_t k = 0; k < mdp.agents(); ++k)
        doc["agents"].push_back({{"states", mdp.states().extent(k)}, {"actions", mdp.actions().extent(k)}});
    doc["kernels"] = json::array();
    for (std::size_t j = 0; j < mdp.agents(); ++j) {
        const auto& f = mdp.kernel(j);
        json kj{{"state_scope", f.state_scope}, {"action_scope", f.action_scope}};
        if (f.declared_state_scope)
            kj["declared_state_scope"] = *f.declared_state_scope;
        if (f.declared_action_scope)
            kj["declared_action_scope"] = *f.declared_action_scope;
        kj["rows"] = detail::rows_to_json(f.table, static_cast<std::size_t>(mdp.states().extent(j)));
        doc["kernels"].push_back(std::move(kj));
    }
    doc["reward"] = {{"table", detail::rows_to_json(mdp.reward_table(), mdp.actions().size())}};
    json pj;
    const auto& layout = inst.policy.layout;
    pj["agents"] = json::array();
    if (inst.softmax) {
        pj["type"] = "softmax";
        pj["temperature"] = inst.softmax->temperature;
        for (std::size_t k = 0; k < layout.agents(); ++k)
            pj["agents"].push_back(
                {{"scope", layout.scope(k).scope()},
                 {"logits", detail::rows_to_json(inst.softmax->logits[k],
                                                 static_cast<std::size_t>(layout.action_count(k)))}});
    } else {
        pj["type"] = "tables";
        for (std::size_t k = 0; k < layout.agents(); ++k)
            pj["agents"].push_back(
                {{"scope", layout.scope(k).scope()},
                 {"rows", detail::rows_to_json(inst.policy.tables[k],
                                               static_cast<std::size_t>(layout.action_count(k)))}});
    }
    doc["policy"] = std::move(pj);
    if (!inst.expected.empty())
        doc["expected"] = inst.expected;
    if (inst.scenario) {
        doc["scenario"] = {{"name", *inst.scenario}};
        if (!inst.params.empty())
            doc["scenario"]["params"] = inst.params;
    }
    return doc;
}

inline Instance instance_from_scenario(const Scenario& sc) {
    Instance inst;
    inst.name = sc.name;
    inst.mdp = sc.mdp;
    inst.policy = sc.policy;
    inst.softmax = sc.softmax;
    inst.expected = sc.expected;
    inst.scenario = sc.name;
    inst.params = sc.params;
    return inst;
}

/// Structural equality of two parsed instances (tables compared exactly).
inline bool same_instance(const Instance& a, const Instance& b) {
    const auto& x = a.mdp;
    const auto& y = b.mdp;
    if (!(x.states() == y.states()) || !(x.actions() == y.actions()) || x.reward_table() != y.reward_table())
        return false;
    for (std::size_t j = 0; j < x.agents(); ++j) {
        const auto& f = x.kernel(j);
        const auto& g = y.kernel(j);
        if (f.state_scope != g.state_scope || f.action_scope != g.action_scope || f.table != g.table ||
            f.declared_state_scope != g.declared_state_scope || f.declared_action_scope != g.declared_action_scope)
            return false;
    }
    if (!(a.policy == b.policy) || a.softmax.has_value() != b.softmax.has_value())
        return false;
    if (a.softmax && (a.softmax->temperature != b.softmax->temperature || a.softmax->logits != b.softmax->logits))
        return false;
    return a.name == b.name && a.expected == b.expected && a.scenario == b.scenario && a.params == b.params;
}

// ---------------------------------------------------------------------------
// Report helpers
// ---------------------------------------------------------------------------

inline json matrix_to_json(const Eigen::MatrixXd& m) {
    json out = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        std::vector<double> row(static_cast<std::size_t>(m.cols()));
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            row[static_cast<std::size_t>(c)] = m(r, c);
        out.push_back(std::move(row));
    }
    return out;
}

inline json vector_to_json(const Eigen::VectorXd& v) {
    return std::vector<double>(v.data(), v.data() + v.size());
}

inline Eigen::MatrixXd matrix_from_json(const json& j) {
    if (!j.is_array())
        throw InvalidArgument("matrix: expected an array of rows");
    const auto rows = static_cast<Eigen::Index>(j.size());
    const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index r = 0; r < rows; ++r) {
        if (static_cast<Eigen::Index>(j[static_cast<std::size_t>(r)].size()) != cols)
            throw InvalidArgument("matrix: ragged rows");
        for (Eigen::Index c = 0; c < cols; ++c)
            m(r, c) = j[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)].get<double>();
    }
    return m;
}

/// Matrix as CSV, 17 significant digits, preceded by an orientation comment.
inline std::string matrix_to_csv(const Eigen::MatrixXd& m) {
    std::ostringstream os;
    os << "# " << kOrientation << '\n' << std::setprecision(17);
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            os << (c ? "," : "") << m(r, c);
        os << '\n';
    }
    return os.str();
}

inline json provenance(const std::string& input_text, std::optional<std::uint64_t> seed) {
    json p{{"input_fnv1a64", fnv1a_hex(input_text)}, {"tool_version", kToolVersion}};
    p["seed"] = seed ? json(*seed) : json(nullptr);
    return p;
}

inline json influence_to_json(const InfluenceReport& rep) {
    return {{"orientation", kOrientation},
            {"E_s", matrix_to_json(rep.E_s)},
            {"E_a", matrix_to_json(rep.E_a)},
            {"Pi", matrix_to_json(rep.Pi)},
            {"C", matrix_to_json(rep.C)},
            {"H", matrix_to_json(rep.H)},
            {"rho", rep.rho},
            {"decomposition_slack", rep.decomposition_slack}};
}

inline json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

inline json certificate_to_json(const LocalityCertificate& c) {
    json decay = json::array();
    for (const auto& row : c.decay)
        decay.push_back({{"kappa", row.kappa},
                         {"cert_norm", row.cert_norm},
                         {"measured_bias", row.measured_bias},
                         {"bias_bound", optional_number(row.bias_bound)},
                         {"cert_gap_bound", optional_number(row.cert_gap_bound)}});
    return {{"kappa", c.kappa},
            {"b", vector_to_json(c.b)},
            {"certificate", vector_to_json(c.cert)},
            {"h_hat", vector_to_json(c.h_hat)},
            {"rho", c.rho},
            {"lambda", c.lambda},
            {"C_est", c.C_est},
            {"bias_bound", optional_number(c.bias_bound)},
            {"cert_gap_bound", optional_number(c.cert_gap_bound)},
            {"spectral_ok", c.spectral_ok},
            {"decay_ok", c.decay_ok},
            {"certified", c.certified()},
            {"messages", c.messages},
            {"decay", std::move(decay)}};
}

inline json poisson_to_json(const PoissonSolution& sol) {
    return {{"rbar", sol.rbar},
            {"residual", sol.residual},
            {"uniqueness_gap", sol.uniqueness_gap},
            {"stationary", vector_to_json(sol.d)},
            {"h", vector_to_json(sol.h)}};
}

inline json policy_tables_to_json(const ProductPolicy& pi) {
    json out = json::array();
    for (std::size_t k = 0; k < pi.layout.agents(); ++k)
        out.push_back({{"scope", pi.layout.scope(k).scope()},
                       {"rows", detail::rows_to_json(pi.tables[k], static_cast<std::size_t>(pi.layout.action_count(k)))}});
    return out;
}

/// KL values may be infinite; JSON carries those as null.
inline json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

inline json block_to_json(const BlockUpdateRecord& b) {
    json kl = json::array();
    for (double v : b.kl_per_row)
        kl.push_back(finite_or_null(v));
    return {{"agent", b.agent},
            {"tau", b.tau},
            {"expected_kl", finite_or_null(b.expected_kl)},
            {"kl_per_row", std::move(kl)},
            {"truncation_penalty", b.truncation_penalty},
            {"improvement_lhs", b.improvement_lhs},
            {"improvement_rhs", finite_or_null(b.improvement_rhs)},
            {"slack", finite_or_null(b.slack())},
            {"anchored_lhs", finite_or_null(b.anchored_lhs)},
            {"scope_residual", b.local_logits.scope_residual},
            {"new_rows", detail::rows_to_json(b.new_table, static_cast<std::size_t>(b.logits.cols()))}};
}

inline json trace_to_json(const LPITrace& t) {
    json its = json::array();
    for (const auto& it : t.iterations) {
        json blocks = json::array();
        for (const auto& b : it.blocks)
            blocks.push_back(block_to_json(b));
        its.push_back({{"index", it.index},
                       {"rbar", it.rbar},
                       {"entropy_objective", it.entropy_objective},
                       {"anchored_gain", finite_or_null(it.anchored_gain)},
                       {"poisson_residual", it.poisson_residual},
                       {"rho", it.influence.rho},
                       {"H", matrix_to_json(it.influence.H)},
                       {"certificate", vector_to_json(it.certificate.cert)},
                       {"certified", it.certificate.certified()},
                       {"blocks", std::move(blocks)}});
    }
    json snaps = json::array();
    for (const auto& p : t.snapshots)
        snaps.push_back(policy_tables_to_json(p));
    return {{"kappa", t.kappa},
            {"tau", t.tau},
            {"iterations", std::move(its)},
            {"snapshots", std::move(snaps)},
            {"final_rbar", t.final_rbar},
            {"final_entropy_objective", t.final_entropy_objective}};
}

} // namespace loclab
