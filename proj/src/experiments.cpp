#include "dflab/experiments.hpp"

#include <chrono>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "dflab/control.hpp"
#include "dflab/cylinder.hpp"
#include "dflab/measures.hpp"
#include "dflab/particles.hpp"
#include "dflab/pde.hpp"
#include "dflab/rng.hpp"
#include "dflab/stats.hpp"
#include "dflab/torus.hpp"

namespace dflab {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

// Carries the dotted manifest path so every validation failure can name the
// exact offending field.
struct ConfigError {
    std::string field;
    std::string message;
};

[[noreturn]] void fail(const std::string& field, const std::string& message) {
    throw ConfigError{field, message};
}

std::string fmt_g(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%g", x);
    return buf;
}

// View of one (sub)object of the manifest plus its dotted path. A null view
// stands for an omitted optional subobject: reads yield defaults, required
// reads fail with the full path.
struct Scope {
    const Json* m = nullptr;
    std::string path;

    std::string at(const std::string& key) const {
        return path.empty() ? key : path + "." + key;
    }

    const Json* get(const std::string& key) const {
        if (!m || !m->is_object()) return nullptr;
        auto it = m->find(key);
        return it == m->end() ? nullptr : &*it;
    }

    bool flag(const std::string& key, bool def) const {
        const Json* v = get(key);
        if (!v) return def;
        if (!v->is_boolean()) fail(at(key), "expected true or false");
        return v->get<bool>();
    }

    double num(const std::string& key, double def, double lo, double hi) const {
        const Json* v = get(key);
        if (!v) return def;
        if (!v->is_number()) fail(at(key), "expected a number");
        double x = v->get<double>();
        if (!(x >= lo && x <= hi))
            fail(at(key), "out of range [" + fmt_g(lo) + ", " + fmt_g(hi) + "]");
        return x;
    }

    double num_req(const std::string& key, double lo, double hi) const {
        if (!get(key)) fail(at(key), "missing required field");
        return num(key, lo, lo, hi);
    }

    std::size_t count(const std::string& key, std::size_t def, std::size_t lo,
                      std::size_t hi) const {
        const Json* v = get(key);
        if (!v) return def;
        if (!v->is_number()) fail(at(key), "expected an integer");
        double x = v->get<double>();
        if (x != std::floor(x)) fail(at(key), "expected an integer");
        if (!(x >= double(lo) && x <= double(hi)))
            fail(at(key), "out of range [" + fmt_g(double(lo)) + ", " + fmt_g(double(hi)) + "]");
        return std::size_t(x);
    }

    std::uint64_t seed(const std::string& key, std::uint64_t def) const {
        const Json* v = get(key);
        if (!v) return def;
        if (v->is_number_unsigned()) return v->get<std::uint64_t>();
        if (v->is_number_integer() && v->get<std::int64_t>() >= 0)
            return std::uint64_t(v->get<std::int64_t>());
        fail(at(key), "expected a nonnegative integer");
    }

    std::string str_req(const std::string& key) const {
        const Json* v = get(key);
        if (!v) fail(at(key), "missing required field");
        if (!v->is_string()) fail(at(key), "expected a string");
        return v->get<std::string>();
    }

    std::vector<double> nums_req(const std::string& key) const {
        const Json* v = get(key);
        if (!v) fail(at(key), "missing required field");
        if (!v->is_array() || v->empty()) fail(at(key), "expected a nonempty number array");
        std::vector<double> out;
        for (const Json& e : *v) {
            if (!e.is_number()) fail(at(key), "expected a nonempty number array");
            out.push_back(e.get<double>());
        }
        return out;
    }

    Scope sub(const std::string& key) const {
        const Json* v = get(key);
        if (!v) fail(at(key), "missing required object");
        if (!v->is_object()) fail(at(key), "expected an object");
        return Scope{v, at(key)};
    }

    // absent -> null scope whose reads produce defaults
    Scope sub_or_empty(const std::string& key) const {
        const Json* v = get(key);
        if (!v) return Scope{nullptr, at(key)};
        if (!v->is_object()) fail(at(key), "expected an object");
        return Scope{v, at(key)};
    }

    bool has(const std::string& key) const { return get(key) != nullptr; }
};

// ---------------------------------------------------------------------------
// function descriptors

FourierMode mode_from(const Scope& s, const std::string& key, std::size_t d) {
    std::vector<int> k(d, 0);
    k[0] = 1;
    const Json* kv = s.get(key);
    if (kv) {
        if (!kv->is_array() || kv->size() != d)
            fail(s.at(key), "expected an integer array with d entries");
        for (std::size_t j = 0; j < d; ++j) {
            const Json& e = (*kv)[j];
            if (!e.is_number_integer() && !e.is_number_unsigned())
                fail(s.at(key), "expected an integer array with d entries");
            k[j] = e.get<int>();
        }
    }
    return FourierMode(k);
}

InnerFunction inner_from(const Scope& s, std::size_t d) {
    std::string name = s.str_req("name");
    if (name == "smooth_mode")
        return InnerFunction::smooth_mode(s.num_req("eps", 1e-6, 0.5), mode_from(s, "k", d),
                                          s.num("phase", 0.0, -100.0, 100.0),
                                          s.num("amp", 1.0, -1e3, 1e3));
    if (name == "mass_only")
        return InnerFunction::mass_only(s.num_req("eps", 1e-6, 0.5), s.num("amp", 1.0, -1e3, 1e3));
    if (name == "linear_mass") return InnerFunction::linear_mass();
    fail(s.at("name"), "unknown inner function '" + name + "'");
}

OuterFunction outer_from(const Scope& s) {
    std::string name = s.str_req("name");
    if (name == "linear")
        return OuterFunction::linear(s.nums_req("a"), s.num("c", 0.0, -1e6, 1e6));
    if (name == "quadratic") {
        std::vector<double> a = s.nums_req("a");
        const Json* qv = s.get("q");
        if (!qv || !qv->is_array() || qv->size() != a.size())
            fail(s.at("q"), "expected a square number matrix matching a");
        std::vector<std::vector<double>> q;
        for (const Json& row : *qv) {
            if (!row.is_array() || row.size() != a.size())
                fail(s.at("q"), "expected a square number matrix matching a");
            std::vector<double> r;
            for (const Json& e : row) {
                if (!e.is_number()) fail(s.at("q"), "expected a square number matrix matching a");
                r.push_back(e.get<double>());
            }
            q.push_back(std::move(r));
        }
        return OuterFunction::quadratic(std::move(a), std::move(q), s.num("c", 0.0, -1e6, 1e6));
    }
    if (name == "expo") return OuterFunction::expo(s.nums_req("a"), s.num("amp", 1.0, -1e3, 1e3));
    fail(s.at("name"), "unknown outer function '" + name + "'");
}

CylinderFunction cylinder_from(const Scope& s, std::size_t d) {
    Scope outer = s.sub("outer");
    const Json* inner = s.get("inner");
    if (!inner || !inner->is_array() || inner->empty())
        fail(s.at("inner"), "expected a nonempty array of inner functions");
    std::vector<InnerFunction> fs;
    for (std::size_t i = 0; i < inner->size(); ++i) {
        const Json& e = (*inner)[i];
        std::string p = s.at("inner[" + std::to_string(i) + "]");
        if (!e.is_object()) fail(p, "expected an object");
        fs.push_back(inner_from(Scope{&e, p}, d));
    }
    try {
        return CylinderFunction(outer_from(outer), std::move(fs));
    } catch (const std::invalid_argument& e) {
        fail(s.path, e.what());
    }
}

DriftField drift_from(const Scope& s, std::size_t d) {
    std::string name = s.str_req("name");
    if (name == "zero") return DriftField::zero(d);
    if (name == "constant") {
        std::vector<double> c = s.nums_req("c");
        if (c.size() != d) fail(s.at("c"), "expected d entries");
        return DriftField::constant(std::move(c));
    }
    if (name == "mode_force")
        return DriftField::mode_force(s.num_req("amp", -100.0, 100.0), mode_from(s, "k", d),
                                      s.num("phase", 0.0, -100.0, 100.0));
    if (name == "mean_attraction")
        return DriftField::mean_attraction(s.num_req("amp", -100.0, 100.0),
                                           s.num_req("compat_eps", 1e-6, 1.0));
    fail(s.at("name"), "unknown drift '" + name + "'");
}

LagrangianSpec lagrangian_from(const Scope& s, std::size_t d) {
    std::string name = s.str_req("name");
    if (name != "quadratic_ball" && name != "quadratic_box")
        fail(s.at("name"), "unknown lagrangian '" + name + "'");
    double radius = s.num_req("radius", 1e-9, 1e6);
    double amp = s.num("cost_amp", 0.0, -1e3, 1e3);
    std::function<double(const TorusPoint&)> c;
    double c_bound = 0.0;
    if (amp != 0.0) {
        FourierMode k = mode_from(s, "cost_k", d);
        double phase = s.num("cost_phase", 0.0, -100.0, 100.0);
        c = [amp, k, phase](const TorusPoint& x) {
            return amp * std::cos(kTwoPi * k.dot(x) + phase);
        };
        c_bound = std::fabs(amp);
    }
    return name == "quadratic_ball" ? quadratic_ball_lagrangian(radius, d, c, c_bound)
                                    : quadratic_box_lagrangian(radius, d, c, c_bound);
}

AtomicMeasure measure_from(const Scope& s) {
    AtomicMeasure mu;
    mu.weights.w = s.nums_req("weights");
    mu.weights.tail = s.num("tail", 0.0, 0.0, 1.0);
    const Json* av = s.get("atoms");
    if (!av || !av->is_array() || av->size() != mu.weights.w.size())
        fail(s.at("atoms"), "expected one coordinate array per weight");
    for (const Json& e : *av) {
        if (!e.is_array() || e.empty()) fail(s.at("atoms"), "expected coordinate arrays");
        std::vector<double> c;
        for (const Json& x : e) {
            if (!x.is_number()) fail(s.at("atoms"), "expected coordinate arrays");
            c.push_back(x.get<double>());
        }
        mu.atoms.emplace_back(std::move(c));
    }
    try {
        mu.validate();
    } catch (const std::invalid_argument& e) {
        fail(s.path, e.what());
    }
    return mu;
}

// ---------------------------------------------------------------------------
// report plumbing

Json stat_json(const MonteCarloStat& s) {
    Json j;
    j["mean"] = s.mean;
    j["se"] = s.se;
    j["n"] = s.n;
    return j;
}

Json measure_json(const AtomicMeasure& mu) {
    Json atoms = Json::array();
    for (const TorusPoint& x : mu.atoms) {
        Json c = Json::array();
        for (std::size_t j = 0; j < x.dim(); ++j) c.push_back(x[j]);
        atoms.push_back(std::move(c));
    }
    Json j;
    j["weights"] = mu.weights.w;
    j["tail"] = mu.weights.tail;
    j["atoms"] = std::move(atoms);
    return j;
}

std::string csv_num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

std::string csv_row(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        if (i) line += ',';
        line += cells[i];
    }
    line += '\n';
    return line;
}

struct KindResult {
    Json report;
    bool pass = true;
    std::string csv;
    std::string note;  // short failure description for exit code 2
};

// ---------------------------------------------------------------------------
// experiment kinds

KindResult run_sample(const Scope& m) {
    std::size_t n = m.count("n", 10, 1, 10000);
    std::size_t d = m.count("d", 1, 1, 8);
    double mass_tol = m.num("mass_tol", kDefaultMassTol, 1e-12, 1e-2);
    std::uint64_t seed = m.seed("master_seed", 1);

    Json list = Json::array();
    for (std::size_t i = 0; i < n; ++i) {
        RNGStream rng(seed, i);
        list.push_back(measure_json(sample_dirichlet_ferguson(rng, d, mass_tol)));
    }
    KindResult r;
    r.report["n"] = n;
    r.report["measures"] = std::move(list);
    return r;
}

KindResult run_mecke(const Scope& m) {
    std::size_t n = m.count("n", 100000, 100, 100000000);
    std::size_t d = m.count("d", 1, 1, 8);
    double mass_tol = m.num("mass_tol", kDefaultMassTol, 1e-12, 1e-2);
    std::uint64_t seed = m.seed("master_seed", 1);

    struct Entry {
        std::string name;
        MeckeFunctional fn;
        bool has_exact = false;
        double exact = 0.0;
    };
    std::vector<Entry> battery;
    battery.push_back({"position-mode",
                       [](const AtomicMeasure&, const TorusPoint& x, double) {
                           return std::cos(kTwoPi * x[0]);
                       },
                       true, 0.0});
    battery.push_back({"mass-average",
                       [](const AtomicMeasure&, const TorusPoint&, double r) { return r; },
                       true, 0.5});
    battery.push_back({"joint-exp",
                       [](const AtomicMeasure& mu, const TorusPoint& x, double r) {
                           double s2 = 0.0;
                           for (double w : mu.weights.w) s2 += w * w;
                           return r * std::cos(kTwoPi * x[0]) * std::exp(-s2);
                       },
                       false, 0.0});

    KindResult out;
    Json rows = Json::array();
    std::string csv = csv_row({"name", "lhs", "lhs_se", "rhs", "rhs_se", "residual", "tol", "pass"});
    for (std::size_t i = 0; i < battery.size(); ++i) {
        const Entry& e = battery[i];
        MeckeResult res =
            mecke_check(e.fn, n, d, RNGStream(seed, 2 * i), RNGStream(seed, 2 * i + 1), mass_tol);
        double tol = 3.0 * res.combined_se();
        bool ok = std::fabs(res.residual()) <= tol;
        if (e.has_exact) {
            ok = ok && std::fabs(res.lhs.mean - e.exact) <= 3.0 * res.lhs.se &&
                 std::fabs(res.rhs.mean - e.exact) <= 3.0 * res.rhs.se;
        }
        Json row;
        row["name"] = e.name;
        row["lhs"] = stat_json(res.lhs);
        row["rhs"] = stat_json(res.rhs);
        row["residual"] = res.residual();
        row["tol"] = tol;
        if (e.has_exact) row["exact"] = e.exact;
        row["pass"] = ok;
        rows.push_back(std::move(row));
        csv += csv_row({e.name, csv_num(res.lhs.mean), csv_num(res.lhs.se), csv_num(res.rhs.mean),
                        csv_num(res.rhs.se), csv_num(res.residual()), csv_num(tol),
                        ok ? "1" : "0"});
        if (!ok) {
            out.pass = false;
            if (out.note.empty()) out.note = "mecke: '" + e.name + "' beyond tolerance";
        }
    }
    out.report["n"] = n;
    out.report["rows"] = std::move(rows);
    out.csv = std::move(csv);
    return out;
}

KindResult run_invariance(const Scope& m) {
    double t = m.num("t", 0.1, 1e-6, 100.0);
    std::size_t n = m.count("n", 20000, 100, 100000000);
    std::size_t d = m.count("d", 1, 1, 8);
    double mass_tol = m.num("mass_tol", kDefaultMassTol, 1e-12, 1e-2);
    std::uint64_t seed = m.seed("master_seed", 1);

    std::vector<std::string> names;
    std::vector<CylinderFunction> fns;
    if (m.has("functions")) {
        const Json* fv = m.get("functions");
        if (!fv->is_array() || fv->empty())
            fail(m.at("functions"), "expected a nonempty array of cylinder descriptors");
        for (std::size_t i = 0; i < fv->size(); ++i) {
            std::string p = m.at("functions[" + std::to_string(i) + "]");
            const Json& e = (*fv)[i];
            if (!e.is_object()) fail(p, "expected an object");
            Scope s{&e, p};
            fns.push_back(cylinder_from(s, d));
            names.push_back(s.has("label") ? s.str_req("label") : "fn" + std::to_string(i));
        }
    } else {
        fns.push_back(CylinderFunction(OuterFunction::linear({1.0}),
                                       {InnerFunction::smooth_mode(0.1, mode_from(m, "k", d))}));
        names.push_back("mode-mean");
        fns.push_back(CylinderFunction(OuterFunction::expo({0.5}),
                                       {InnerFunction::mass_only(0.1)}));
        names.push_back("gibbs-mass");
    }

    std::vector<InvarianceReport> reps =
        invariance_test(fns, t, n, d, RNGStream(seed, 0), mass_tol);

    KindResult out;
    Json rows = Json::array();
    std::string csv = csv_row({"name", "before", "before_se", "after", "after_se", "var_before",
                               "var_after", "mean_ok", "var_ok"});
    for (std::size_t i = 0; i < reps.size(); ++i) {
        const InvarianceReport& r = reps[i];
        Json row;
        row["name"] = names[i];
        row["before"] = stat_json(r.before);
        row["after"] = stat_json(r.after);
        Json vb;
        vb["var"] = r.var_before.var;
        vb["se"] = r.var_before.se;
        row["var_before"] = std::move(vb);
        Json va;
        va["var"] = r.var_after.var;
        va["se"] = r.var_after.se;
        row["var_after"] = std::move(va);
        row["mean_ok"] = r.mean_ok;
        row["var_ok"] = r.var_ok;
        rows.push_back(std::move(row));
        csv += csv_row({names[i], csv_num(r.before.mean), csv_num(r.before.se),
                        csv_num(r.after.mean), csv_num(r.after.se), csv_num(r.var_before.var),
                        csv_num(r.var_after.var), r.mean_ok ? "1" : "0", r.var_ok ? "1" : "0"});
        if (!(r.mean_ok && r.var_ok)) {
            out.pass = false;
            if (out.note.empty())
                out.note = "invariance: '" + names[i] + "' drifted beyond tolerance";
        }
    }
    out.report["t"] = t;
    out.report["n"] = n;
    out.report["rows"] = std::move(rows);
    out.csv = std::move(csv);
    return out;
}

KindResult run_ibp(const Scope& m) {
    std::size_t n = m.count("n", 100000, 100, 100000000);
    std::size_t d = m.count("d", 1, 1, 8);
    double mass_tol = m.num("mass_tol", kDefaultMassTol, 1e-12, 1e-2);
    std::uint64_t seed = m.seed("master_seed", 1);

    std::vector<std::pair<CylinderFunction, CylinderFunction>> pairs;
    if (m.has("pairs")) {
        const Json* pv = m.get("pairs");
        if (!pv->is_array() || pv->empty())
            fail(m.at("pairs"), "expected a nonempty array of [u, v] descriptor pairs");
        for (std::size_t i = 0; i < pv->size(); ++i) {
            const Json& e = (*pv)[i];
            std::string p = m.at("pairs[" + std::to_string(i) + "]");
            if (!e.is_array() || e.size() != 2 || !e[0].is_object() || !e[1].is_object())
                fail(p, "expected a [u, v] descriptor pair");
            pairs.emplace_back(cylinder_from(Scope{&e[0], p + "[0]"}, d),
                               cylinder_from(Scope{&e[1], p + "[1]"}, d));
        }
    } else {
        FourierMode k1 = mode_from(m, "k", d);
        std::vector<int> k2v(d, 0);
        k2v[0] = 2;
        FourierMode k2(k2v);
        CylinderFunction u0(OuterFunction::linear({1.0}),
                            {InnerFunction::smooth_mode(0.1, k1)});
        pairs.emplace_back(u0, u0);
        pairs.emplace_back(u0, CylinderFunction(OuterFunction::linear({1.0}),
                                                {InnerFunction::smooth_mode(0.15, k2, 0.3)}));
        pairs.emplace_back(
            CylinderFunction(OuterFunction::expo({0.4}), {InnerFunction::mass_only(0.1)}),
            CylinderFunction(OuterFunction::quadratic({0.2}, {{0.6}}, 0.1),
                             {InnerFunction::smooth_mode(0.12, k1)}));
    }

    KindResult out;
    Json rows = Json::array();
    std::string csv = csv_row({"pair", "residual", "se", "tol", "pass"});
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        MonteCarloStat res =
            ibp_residual(pairs[i].first, pairs[i].second, n, d, RNGStream(seed, i), mass_tol);
        double tol = 3.0 * res.se;
        bool ok = std::fabs(res.mean) <= tol;
        Json row;
        row["pair"] = i;
        row["residual"] = stat_json(res);
        row["tol"] = tol;
        row["pass"] = ok;
        rows.push_back(std::move(row));
        csv += csv_row({std::to_string(i), csv_num(res.mean), csv_num(res.se), csv_num(tol),
                        ok ? "1" : "0"});
        if (!ok) {
            out.pass = false;
            if (out.note.empty())
                out.note = "ibp: pair " + std::to_string(i) + " beyond tolerance";
        }
    }
    out.report["n"] = n;
    out.report["rows"] = std::move(rows);
    out.csv = std::move(csv);
    return out;
}

AtomicMeasure init_or_default(const Scope& m, std::size_t d) {
    if (m.has("init")) {
        AtomicMeasure mu = measure_from(m.sub("init"));
        if (mu.dim() != d) fail(m.at("init") + ".atoms", "dimension mismatch with d");
        return mu;
    }
    if (d != 1) fail(m.at("init"), "required when d > 1");
    AtomicMeasure mu;
    mu.weights.w = {0.45, 0.3, 0.15, 0.1};
    mu.atoms = {TorusPoint({0.1}), TorusPoint({0.35}), TorusPoint({0.6}), TorusPoint({0.85})};
    return mu;
}

KindResult run_ito(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 8);
    double dt = m.num("dt", 1e-3, 1e-7, 0.5);
    double T = m.num("T", 0.1, dt, 100.0);
    std::size_t n = m.count("n", 10000, 100, 100000000);
    std::uint64_t seed = m.seed("master_seed", 1);

    CylinderFunction u =
        m.has("u") ? cylinder_from(m.sub("u"), d)
                   : CylinderFunction(OuterFunction::expo({1.0}),
                                      {InnerFunction::smooth_mode(0.2, mode_from(m, "k", d))});
    if (!(u.support_threshold() > 0.0))
        fail(m.at("u"), "the generator needs a positive support threshold");
    AtomicMeasure init = init_or_default(m, d);

    ItoReport rep = ito_residual(u, ensemble_from_measure(init), T, n, RNGStream(seed, 0), dt);
    double tol = 3.0 * rep.residual.se;
    bool ok = std::fabs(rep.residual.mean) <= tol;

    KindResult out;
    out.report["dt"] = dt;
    out.report["T"] = T;
    out.report["n"] = n;
    out.report["u0"] = rep.u0;
    out.report["terminal"] = stat_json(rep.terminal);
    out.report["time_integral"] = stat_json(rep.time_integral);
    out.report["residual"] = stat_json(rep.residual);
    out.report["tol"] = tol;
    out.report["pass"] = ok;
    out.pass = ok;
    if (!ok) out.note = "ito: martingale residual beyond tolerance";
    return out;
}

KindResult run_girsanov(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 8);
    double eps = m.num("eps", 0.3, 1e-3, 0.5);
    double dt = m.num("dt", 1e-3, 1e-7, 0.5);
    double T = m.num("T", 0.1, dt, 100.0);
    std::size_t n_paths = m.count("n_paths", 10000, 100, 100000000);
    std::uint64_t seed = m.seed("master_seed", 1);
    std::size_t workers = m.count("workers", 1, 1, 64);

    DriftField drift = m.has("drift") ? drift_from(m.sub("drift"), d)
                                      : DriftField::mode_force(1.0, mode_from(m, "k", d));
    if (drift.compat_eps < eps)
        fail(m.at("drift") + ".compat_eps",
             "drift reads atoms below the truncation level (needs compat_eps >= eps)");
    CylinderFunction g =
        m.has("g") ? cylinder_from(m.sub("g"), d)
                   : CylinderFunction(OuterFunction::linear({1.0}),
                                      {InnerFunction::smooth_mode(eps, mode_from(m, "k", d))});
    if (g.support_threshold() < eps)
        fail(m.at("g"), "support threshold below the truncation level eps");
    AtomicMeasure init = init_or_default(m, d);

    SimulationParams base;
    base.t0 = 0.0;
    base.horizon = T;
    base.dt = dt;
    base.truncation_eps = eps;
    base.n_paths = n_paths;
    base.workers = workers;

    ParticleEnsemble ens = ensemble_from_measure(init);
    SimulationParams pd = base;
    pd.seed = seed + 1;
    MonteCarloStat direct = estimate_terminal(g, ens, drift, pd);
    SimulationParams pi = base;
    pi.seed = seed + 2;
    MonteCarloStat weighted = importance_sampled_terminal(g, ens, drift, pi);
    SimulationParams pm = base;
    pm.seed = seed + 3;
    MonteCarloStat martingale = importance_sampled_terminal_fn(
        [](const AtomicMeasure&) { return 1.0; }, std::numeric_limits<double>::infinity(), ens,
        drift, pm);

    double diff = std::fabs(direct.mean - weighted.mean);
    double tol_cmp = 3.0 * std::sqrt(direct.se * direct.se + weighted.se * weighted.se);
    bool ok_cmp = diff <= tol_cmp;
    double tol_mart = 3.0 * martingale.se;
    bool ok_mart = std::fabs(martingale.mean - 1.0) <= tol_mart;

    KindResult out;
    out.report["eps"] = eps;
    out.report["T"] = T;
    out.report["n_paths"] = n_paths;
    out.report["direct"] = stat_json(direct);
    out.report["importance"] = stat_json(weighted);
    out.report["diff"] = diff;
    out.report["diff_tol"] = tol_cmp;
    out.report["estimators_agree"] = ok_cmp;
    out.report["martingale"] = stat_json(martingale);
    out.report["martingale_tol"] = tol_mart;
    out.report["martingale_ok"] = ok_mart;
    out.csv = csv_row({"row", "value", "se", "target", "tol", "pass"}) +
              csv_row({"direct", csv_num(direct.mean), csv_num(direct.se), "", "", ""}) +
              csv_row({"importance", csv_num(weighted.mean), csv_num(weighted.se),
                       csv_num(direct.mean), csv_num(tol_cmp), ok_cmp ? "1" : "0"}) +
              csv_row({"martingale", csv_num(martingale.mean), csv_num(martingale.se), "1",
                       csv_num(tol_mart), ok_mart ? "1" : "0"});
    out.pass = ok_cmp && ok_mart;
    if (!ok_cmp)
        out.note = "girsanov: direct and importance-sampled estimators disagree";
    else if (!ok_mart)
        out.note = "girsanov: inverse weight mean off 1 beyond tolerance";
    return out;
}

KindResult run_kolmogorov(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 4);
    double eps = m.num_req("eps", 1e-3, 0.5);
    std::size_t n_g = m.count("n_g", 64, 8, 4096);
    double dt_pde = m.num("dt_pde", 1e-4, 1e-8, 0.1);
    double dt_mc = m.num("dt_mc", 1e-3, 1e-7, 0.5);
    double T = m.num("T", 0.05, std::max(dt_pde, dt_mc), 100.0);
    double t0 = m.num("t0", 0.0, -100.0, 100.0);
    std::size_t n_paths = m.count("n_paths", 10000, 100, 100000000);
    std::size_t stride = m.count("stride", 1, 1, 1000000);
    std::uint64_t seed = m.seed("master_seed", 1);
    std::size_t workers = m.count("workers", 1, 1, 64);

    AtomicMeasure init = measure_from(m.sub("init"));
    if (init.dim() != d) fail(m.at("init") + ".atoms", "dimension mismatch with d");
    if (!(eps > init.weights.tail)) fail("eps", "must exceed the unresolved tail mass");
    std::size_t n_active = truncation_index(eps, init.weights);
    if (n_active == 0) fail(m.at("init") + ".weights", "no atom reaches the truncation level");

    CylinderFunction g =
        m.has("g") ? cylinder_from(m.sub("g"), d)
                   : CylinderFunction(OuterFunction::linear({1.0}),
                                      {InnerFunction::smooth_mode(eps, mode_from(m, "k", d))});
    if (g.support_threshold() < eps) fail(m.at("g"), "support threshold below the truncation eps");

    bool has_drift = m.has("drift");
    DriftField drift = has_drift ? drift_from(m.sub("drift"), d) : DriftField::zero(d);
    if (has_drift && drift.compat_eps < eps)
        fail(m.at("drift") + ".compat_eps",
             "drift reads atoms below the truncation level (needs compat_eps >= eps)");
    double h = 1.0 / double(n_g);
    if (has_drift && drift.bound > 0.0 &&
        dt_pde > h / (std::sqrt(double(d)) * drift.bound) * (1.0 + 1e-12))
        fail("dt_pde", "violates the upwind CFL bound h/(sqrt(d)*|b|)");

    Scope budget = m.sub_or_empty("budget");
    double c_grid = budget.num("c_grid", 0.0, 0.0, 1e9);
    double c_dt = budget.num("c_dt", 0.0, 0.0, 1e12);

    FiberProblem fp;
    fp.weights = init.weights;
    fp.grid = TensorGrid{d, n_active, n_g};
    fp.t0 = t0;
    fp.horizon = t0 + T;
    WeightSequence full = init.weights;
    fp.terminal = [g, full](const std::vector<TorusPoint>& xs) {
        return g.evaluate(em_N(full, xs));
    };
    fp.drift = drift;
    fp.has_drift = has_drift;
    SolveResult sol = solve_linear_backward(fp, dt_pde, stride);

    std::vector<double> coords;
    for (std::size_t i = 0; i < n_active; ++i)
        for (std::size_t j = 0; j < d; ++j) coords.push_back(init.atoms[i][j]);
    double v_pde = multilinear(sol.initial(), coords);

    SimulationParams sp;
    sp.t0 = t0;
    sp.horizon = t0 + T;
    sp.dt = dt_mc;
    sp.truncation_eps = eps;
    sp.n_paths = n_paths;
    sp.seed = seed + 1;
    sp.workers = workers;
    MonteCarloStat mc = estimate_terminal(g, ensemble_from_measure(init, t0), drift, sp);

    double budget_val = c_grid * h * h + c_dt * dt_pde;
    double diff = std::fabs(v_pde - mc.mean);
    double tol = 3.0 * mc.se + budget_val;
    bool ok = diff <= tol;

    KindResult out;
    out.report["fiber"] = measure_json(init);
    out.report["eps"] = eps;
    out.report["n_active"] = n_active;
    out.report["v_pde"] = v_pde;
    out.report["mc"] = stat_json(mc);
    out.report["diff"] = diff;
    Json bj;
    bj["c_grid"] = c_grid;
    bj["c_dt"] = c_dt;
    bj["value"] = budget_val;
    out.report["budget"] = std::move(bj);
    out.report["tol"] = tol;
    out.report["pass"] = ok;
    out.csv = csv_row({"row", "value", "se", "target", "tol", "pass"}) +
              csv_row({"pde", csv_num(v_pde), "0", "", "", ""}) +
              csv_row({"mc", csv_num(mc.mean), csv_num(mc.se), csv_num(v_pde), csv_num(tol),
                       ok ? "1" : "0"});
    out.pass = ok;
    if (!ok) out.note = "kolmogorov: PDE and Monte Carlo values disagree beyond tolerance";
    return out;
}

KindResult run_hjb(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 4);
    double eps = m.num_req("eps", 1e-3, 0.5);
    std::size_t n_g = m.count("n_g", 32, 8, 4096);
    double dt_pde = m.num("dt_pde", 1e-4, 1e-8, 0.1);
    double T = m.num("T", 0.05, dt_pde, 100.0);
    double t0 = m.num("t0", 0.0, -100.0, 100.0);
    std::size_t stride = m.count("stride", 1, 1, 1000000);
    bool lax = m.flag("lax_friedrichs", false);

    AtomicMeasure init = measure_from(m.sub("init"));
    if (init.dim() != d) fail(m.at("init") + ".atoms", "dimension mismatch with d");
    if (!(eps > init.weights.tail)) fail("eps", "must exceed the unresolved tail mass");
    std::size_t n_active = truncation_index(eps, init.weights);
    if (n_active == 0) fail(m.at("init") + ".weights", "no atom reaches the truncation level");

    LagrangianSpec L = lagrangian_from(m.sub("lagrangian"), d);
    HamiltonianSpec H = hamiltonian_from(L);
    CylinderFunction g =
        m.has("g") ? cylinder_from(m.sub("g"), d)
                   : CylinderFunction(OuterFunction::linear({1.0}),
                                      {InnerFunction::smooth_mode(eps, mode_from(m, "k", d))});
    if (g.support_threshold() < eps) fail(m.at("g"), "support threshold below the truncation eps");

    double h = 1.0 / double(n_g);
    if (H.lipschitz_p > 0.0 && dt_pde > h / (std::sqrt(double(d)) * H.lipschitz_p) * (1.0 + 1e-12))
        fail("dt_pde", "violates the explicit-part CFL bound h/(sqrt(d)*Lip_p)");

    FiberProblem fp;
    fp.weights = init.weights;
    fp.grid = TensorGrid{d, n_active, n_g};
    fp.t0 = t0;
    fp.horizon = t0 + T;
    WeightSequence full = init.weights;
    fp.terminal = [g, full](const std::vector<TorusPoint>& xs) {
        return g.evaluate(em_N(full, xs));
    };
    if (m.has("f")) {
        CylinderFunction f = cylinder_from(m.sub("f"), d);
        if (f.support_threshold() < eps)
            fail(m.at("f"), "support threshold below the truncation eps");
        fp.source = [f, full](const std::vector<TorusPoint>& xs) {
            return f.evaluate(em_N(full, xs));
        };
    }
    fp.hamiltonian = H;
    fp.has_hamiltonian = true;
    fp.lax_friedrichs = lax;
    SolveResult sol = solve_hjb(fp, dt_pde, stride);

    std::vector<double> coords;
    for (std::size_t i = 0; i < n_active; ++i)
        for (std::size_t j = 0; j < d; ++j) coords.push_back(init.atoms[i][j]);
    double v_pde = multilinear(sol.initial(), coords);

    double lo = sol.initial().values[0], hi = lo;
    for (double v : sol.initial().values) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }

    KindResult out;
    out.report["fiber"] = measure_json(init);
    out.report["eps"] = eps;
    out.report["n_active"] = n_active;
    out.report["v_pde"] = v_pde;
    out.report["initial_min"] = lo;
    out.report["initial_max"] = hi;
    out.report["stored_slices"] = sol.slices.size();
    return out;
}

KindResult run_control_verify(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 4);
    VerificationConfig cfg;
    cfg.t0 = m.num("t0", 0.0, -100.0, 100.0);
    cfg.truncation_eps = m.num("eps", 0.2, 1e-3, 0.5);
    cfg.n_g = m.count("n_g", 32, 8, 4096);
    cfg.dt_pde = m.num("dt_pde", 1e-3, 1e-8, 0.1);
    cfg.horizon = cfg.t0 + m.num("T", 0.1, cfg.dt_pde, 100.0);
    cfg.stride = m.count("stride", 1, 1, 1000000);
    cfg.dt_mc = m.num("dt_mc", 1e-3, 1e-7, 0.5);
    cfg.n_paths = m.count("n_paths", 10000, 100, 100000000);
    cfg.seed = m.seed("master_seed", 1);
    cfg.workers = m.count("workers", 1, 1, 64);
    cfg.solver_budget = m.num("solver_budget", 5e-3, 0.0, 10.0);
    cfg.lax_friedrichs = m.flag("lax_friedrichs", false);

    AtomicMeasure init = measure_from(m.sub("init"));
    if (init.dim() != d) fail(m.at("init") + ".atoms", "dimension mismatch with d");
    if (!(cfg.truncation_eps > init.weights.tail))
        fail("eps", "must exceed the unresolved tail mass");
    LagrangianSpec L = lagrangian_from(m.sub("lagrangian"), d);
    HamiltonianSpec H = hamiltonian_from(L);
    CylinderFunction G = cylinder_from(m.sub("G"), d);
    if (G.support_threshold() < cfg.truncation_eps)
        fail(m.at("G"), "support threshold below the truncation eps");
    bool has_F = m.has("F");
    CylinderFunction F = has_F ? cylinder_from(m.sub("F"), d)
                               : CylinderFunction(OuterFunction::linear({0.0}),
                                                  {InnerFunction::mass_only(0.5)});
    if (has_F && F.support_threshold() < cfg.truncation_eps)
        fail(m.at("F"), "support threshold below the truncation eps");

    double h = 1.0 / double(cfg.n_g);
    if (H.lipschitz_p > 0.0 &&
        cfg.dt_pde > h / (std::sqrt(double(d)) * H.lipschitz_p) * (1.0 + 1e-12))
        fail("dt_pde", "violates the explicit-part CFL bound h/(sqrt(d)*Lip_p)");

    VerificationReport rep = verification_experiment(L, has_F ? &F : nullptr, G, init, cfg);

    KindResult out;
    Json fiber;
    fiber["s"] = rep.weights.w;
    fiber["tail"] = rep.weights.tail;
    fiber["x"] = rep.coords;
    out.report["fiber"] = std::move(fiber);
    out.report["v_pde"] = rep.v_pde;
    out.report["budget"] = rep.budget;
    Json cands = Json::array();
    std::string csv = csv_row({"name", "cost", "stderr", "pass", "optimal"});
    for (const CandidateCost& c : rep.candidates) {
        Json row;
        row["name"] = c.name;
        row["cost"] = c.cost;
        row["stderr"] = c.se;
        row["pass"] = c.pass_lower;
        row["optimal"] = c.optimal;
        cands.push_back(std::move(row));
        csv += csv_row({c.name, csv_num(c.cost), csv_num(c.se), c.pass_lower ? "1" : "0",
                        c.optimal ? "1" : "0"});
    }
    out.report["candidates"] = std::move(cands);
    out.report["optimal_index"] = rep.optimal_index;
    out.report["optimal_matches"] = rep.optimal_matches;
    out.report["all_above"] = rep.all_above;
    out.csv = std::move(csv);
    out.pass = rep.optimal_matches && rep.all_above;
    if (!rep.optimal_matches)
        out.note = "control-verify: optimal feedback cost misses the HJB value";
    else if (!rep.all_above)
        out.note = "control-verify: a candidate undercuts the HJB value";
    return out;
}

KindResult run_stability_ladder(const Scope& m) {
    std::size_t d = m.count("d", 1, 1, 4);
    std::size_t n_fibers = m.count("n_fibers", 200, 10, 1000000);
    std::size_t n_g = m.count("n_g", 16, 8, 512);
    double dt = m.num("dt", 1e-3, 1e-8, 0.5);
    double T = m.num("T", 0.05, dt, 100.0);
    double mass_tol = m.num("mass_tol", kDefaultMassTol, 1e-12, 1e-2);
    std::uint64_t seed = m.seed("master_seed", 1);
    double amp = m.num("amp", 1.0, -1e3, 1e3);
    double phase = m.num("phase", 0.0, -100.0, 100.0);
    FourierMode k = mode_from(m, "k", d);

    std::vector<double> ladder{0.4, 0.3, 0.2};
    if (m.has("eps_ladder")) {
        ladder = m.nums_req("eps_ladder");
        if (ladder.size() < 2) fail("eps_ladder", "needs at least two levels");
        for (std::size_t i = 0; i < ladder.size(); ++i) {
            if (!(ladder[i] > mass_tol && ladder[i] <= 0.5))
                fail("eps_ladder", "levels must lie in (mass_tol, 0.5]");
            if (i && !(ladder[i] < ladder[i - 1]))
                fail("eps_ladder", "levels must be strictly decreasing");
        }
    }

    // continuous test functional: every rung of the ladder resolves one more
    // shell of its atoms
    auto g = [amp, phase, &k](const AtomicMeasure& mu) {
        double acc = 0.0;
        for (std::size_t i = 0; i < mu.size(); ++i)
            acc += mu.weights.w[i] * std::cos(kTwoPi * k.dot(mu.atoms[i]) + phase);
        return amp * acc;
    };

    std::size_t n_pairs = ladder.size() - 1;
    std::vector<std::vector<double>> gapsq(n_pairs);
    std::size_t solved = 0, skipped = 0, tv_checks = 0;
    bool tv_ok = true;
    for (std::size_t f = 0; f < n_fibers; ++f) {
        RNGStream rng(seed, f);
        AtomicMeasure mu = sample_dirichlet_ferguson(rng, d, mass_tol);

        for (double eps : ladder) {
            double tv = total_variation(mu, conditional_truncate(mu, eps));
            double bound = tv_tail_bound(mu, eps);
            ++tv_checks;
            if (!(std::isfinite(tv) && tv <= bound + 1e-12)) tv_ok = false;
        }

        std::vector<double> vals(ladder.size());
        bool all_solved = true;
        for (std::size_t j = 0; j < ladder.size() && all_solved; ++j) {
            FiberValueConfig cfg;
            cfg.eps = ladder[j];
            cfg.n_g = n_g;
            cfg.dt = dt;
            cfg.t0 = 0.0;
            cfg.horizon = T;
            FiberEvaluation ev = evaluate_fiber_value(g, cfg, mu);
            if (ev.skipped)
                all_solved = false;
            else
                vals[j] = ev.value;
        }
        if (!all_solved) {
            ++skipped;
            continue;
        }
        ++solved;
        for (std::size_t j = 0; j < n_pairs; ++j) {
            double gap = vals[j] - vals[j + 1];
            gapsq[j].push_back(gap * gap);
        }
    }
    if (solved < 2) fail("eps_ladder", "fewer than two sampled fibers fit the solver budget");

    bool finite = true, monotone = true;
    std::vector<double> gaps(n_pairs), ses(n_pairs);
    Json pairs = Json::array();
    std::string csv = csv_row({"eps_hi", "eps_lo", "gap", "se", "n"});
    for (std::size_t j = 0; j < n_pairs; ++j) {
        MonteCarloStat sq = mc_stat(gapsq[j]);
        double gap = std::sqrt(std::max(sq.mean, 0.0));
        double se = gap > 1e-15 ? sq.se / (2.0 * gap) : std::sqrt(sq.se);
        gaps[j] = gap;
        ses[j] = se;
        finite = finite && std::isfinite(gap) && std::isfinite(se);
        Json row;
        row["eps_hi"] = ladder[j];
        row["eps_lo"] = ladder[j + 1];
        row["gap"] = gap;
        row["se"] = se;
        row["n"] = sq.n;
        pairs.push_back(std::move(row));
        csv += csv_row({csv_num(ladder[j]), csv_num(ladder[j + 1]), csv_num(gap), csv_num(se),
                        std::to_string(sq.n)});
    }
    for (std::size_t j = 0; j + 1 < n_pairs; ++j)
        if (!(gaps[j + 1] <= gaps[j] + 3.0 * (ses[j] + ses[j + 1]))) monotone = false;

    KindResult out;
    out.report["eps_ladder"] = ladder;
    out.report["pairs"] = std::move(pairs);
    out.report["solved"] = solved;
    out.report["skipped"] = skipped;
    out.report["tv_checks"] = tv_checks;
    out.report["tv_ok"] = tv_ok;
    out.report["finite"] = finite;
    out.report["monotone"] = monotone;
    out.csv = std::move(csv);
    out.pass = finite && monotone && tv_ok;
    if (!finite)
        out.note = "stability-ladder: non-finite gap aggregate";
    else if (!monotone)
        out.note = "stability-ladder: gaps grow along the ladder beyond CI";
    else if (!tv_ok)
        out.note = "stability-ladder: truncation TV bound violated";
    return out;
}

KindResult dispatch(const std::string& kind, const Scope& m) {
    if (kind == "sample") return run_sample(m);
    if (kind == "mecke") return run_mecke(m);
    if (kind == "invariance") return run_invariance(m);
    if (kind == "ibp") return run_ibp(m);
    if (kind == "ito") return run_ito(m);
    if (kind == "kolmogorov") return run_kolmogorov(m);
    if (kind == "girsanov") return run_girsanov(m);
    if (kind == "hjb") return run_hjb(m);
    if (kind == "control-verify") return run_control_verify(m);
    if (kind == "stability-ladder") return run_stability_ladder(m);
    fail("kind", "unknown experiment kind '" + kind + "'");
}

std::string timestamp_utc() {
    std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02dZ", tm.tm_year + 1900,
                  tm.tm_mon + 1, tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec);
    return buf;
}

}  // namespace

std::string manifest_hash(const Json& manifest) {
    const std::string canon = manifest.dump();
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : canon) {
        h ^= c;
        h *= 1099511628211ull;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

RunOutcome run_manifest(const Json& manifest) {
    RunOutcome out;
    out.results["schema"] = "dflab.results.v1";
    try {
        if (!manifest.is_object()) fail("manifest", "expected a JSON object");
        Scope root{&manifest, ""};
        std::string kind = root.str_req("kind");
        out.results["kind"] = kind;
        out.results["manifest_hash"] = manifest_hash(manifest);
        out.results["manifest"] = manifest;
        KindResult r = dispatch(kind, root);
        out.results["pass"] = r.pass;
        out.results["report"] = std::move(r.report);
        out.csv = std::move(r.csv);
        if (!r.pass) {
            out.exit_code = 2;
            out.error = r.note.empty() ? kind + ": assertion failed" : r.note;
        }
    } catch (const ConfigError& e) {
        out.exit_code = 1;
        out.error = e.field + ": " + e.message;
        out.results["pass"] = false;
        Json err;
        err["field"] = e.field;
        err["message"] = e.message;
        out.results["error"] = std::move(err);
    } catch (const std::exception& e) {
        out.exit_code = 1;
        out.error = e.what();
        out.results["pass"] = false;
        Json err;
        err["field"] = "manifest";
        err["message"] = e.what();
        out.results["error"] = std::move(err);
    }
    out.results["timestamp"] = timestamp_utc();
    return out;
}

std::string write_run_files(const RunOutcome& outcome, const std::string& out_dir) {
    namespace fs = std::filesystem;
    fs::create_directories(out_dir);
    fs::path dir(out_dir);

    fs::path results_path = dir / "results.json";
    {
        std::ofstream f(results_path);
        if (!f) throw std::runtime_error("cannot write " + results_path.string());
        f << outcome.results.dump(2) << '\n';
    }
    if (outcome.results.contains("manifest")) {
        std::ofstream f(dir / "manifest.json");
        if (!f) throw std::runtime_error("cannot write manifest.json under " + out_dir);
        f << outcome.results["manifest"].dump(2) << '\n';
    }
    if (!outcome.csv.empty()) {
        std::ofstream f(dir / "tables.csv");
        if (!f) throw std::runtime_error("cannot write tables.csv under " + out_dir);
        f << outcome.csv;
    }
    return results_path.string();
}

}  // namespace dflab
