#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "czlab/corona.hpp"
#include "czlab/decomposition.hpp"
#include "czlab/goodness.hpp"
#include "czlab/martingale.hpp"
#include "czlab/measure.hpp"
#include "czlab/operator.hpp"
#include "czlab/scenario.hpp"

using namespace czlab;
using Json = nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitInvariant = 1;
constexpr int kExitUsage = 2;
constexpr int kExitRuntime = 3;

std::string num(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

template <class S>
std::string scalar_text(const S& x) {
    if constexpr (is_exact_v<S>)
        return Rational(x).get_str();
    else
        return num(x);
}

Json config_json(const Scenario& s, int threads) {
    Json j;
    j["measure"] = {{"name", s.measure.name}, {"m", s.measure.m}, {"path", s.measure.path}};
    j["kernel"] = {{"name", s.kernel.name}, {"s", s.kernel.s}, {"amplitude", s.kernel.amplitude}};
    j["p1"] = s.p1;
    j["p2"] = s.p2;
    j["p2_overridden"] = s.p2_overridden;
    j["r"] = s.r;
    j["eta"] = s.eta;
    j["upsilon"] = s.upsilon;
    j["eps"] = s.eps;
    j["seeds"] = s.seeds;
    j["samples"] = s.samples;
    j["arith"] = arith_name(s.arith);
    j["levels"] = {s.levels_lo, s.levels_hi};
    j["t"] = s.t_exponent;
    j["threads"] = threads;
    j["outputs"] = {{"dir", s.out_dir}, {"pairs_csv", s.pairs_csv}};
    return j;
}

struct Report {
    Json body;
    std::vector<std::string> failures;
    void fail(const std::string& what) { failures.push_back(what); }
};

class Writer {
public:
    Writer(const Scenario& sc, std::string command) : dir_(sc.out_dir), command_(std::move(command)) {
        std::filesystem::create_directories(dir_);
    }
    std::ofstream csv(const std::string& suffix = "") const {
        std::ofstream os(dir_ / (command_ + suffix + ".csv"));
        if (!os) throw std::runtime_error("cannot write into " + dir_.string());
        return os;
    }
    void json(const Json& j) const {
        std::ofstream os(dir_ / (command_ + ".json"));
        if (!os) throw std::runtime_error("cannot write into " + dir_.string());
        os << j.dump(2) << '\n';
    }
    std::string path() const { return (dir_ / (command_ + ".json")).string(); }

private:
    std::filesystem::path dir_;
    std::string command_;
};

int finish(const Scenario& sc, int threads, const std::string& command, Report& rep) {
    Json j;
    j["schema"] = 1;
    j["command"] = command;
    j["config"] = config_json(sc, threads);
    j["result"] = rep.body;
    j["failed_invariants"] = rep.failures;
    j["pass"] = rep.failures.empty();
    Writer(sc, command).json(j);
    std::cout << command << ": " << (rep.failures.empty() ? "pass" : "FAIL");
    for (const auto& f : rep.failures) std::cout << ' ' << f;
    std::cout << " (" << Writer(sc, command).path() << ")\n";
    return rep.failures.empty() ? kExitOk : kExitInvariant;
}

// ---------------------------------------------------------------------------

int cmd_verify_measure(const Scenario& sc, int threads) {
    Measure m = build_measure(sc.measure);
    double s = measure_exponent(sc.measure);
    std::vector<double> radii = default_radii(m);
    DominatingFunction lambda = calibrate_dominating(m, s, radii);
    DoublingReport dr = verify_upper_doubling(m, lambda, radii);
    Report rep;
    rep.body["atoms"] = m.size();
    rep.body["dim"] = m.dim();
    rep.body["total_mass"] = m.total_mass().to_double();
    rep.body["min_gap"] = m.min_gap().to_double();
    rep.body["diameter"] = m.diameter().to_double();
    rep.body["lambda"] = {{"amplitude", lambda.amplitude}, {"exponent", lambda.exponent},
                          {"doubling_constant", lambda.doubling_constant()}, {"dimension", lambda.dimension()}};
    rep.body["doubling"] = {{"pass", dr.pass}, {"worst_ratio", dr.worst_ratio}, {"witness_atom", dr.witness_atom},
                            {"witness_radius", dr.witness_radius}, {"witness_condition", dr.witness_condition}};
    if (!dr.pass) rep.fail("upper_doubling");
    if (!(m.total_mass() == Dyadic(1))) rep.fail("unit_mass");
    auto os = Writer(sc, "verify-measure").csv();
    os << "atom";
    for (int d = 0; d < m.dim(); ++d) os << ",x" << d;
    os << ",weight,max_ball_ratio\n";
    for (std::size_t i = 0; i < m.size(); ++i) {
        double worst = 0;
        for (double r : radii) worst = std::max(worst, ball_mass(m, m.position(i), r) / lambda.eval(r));
        os << i;
        for (const Dyadic& c : m.position(i)) os << ',' << num(c.to_double());
        os << ',' << num(m.weight(i).to_double()) << ',' << num(worst) << '\n';
    }
    return finish(sc, threads, "verify-measure", rep);
}

int cmd_grid_stats(const Scenario& sc, int threads, int span) {
    GoodnessParams gp = GoodnessParams::derived(sc.r, Rational(1), rational_ceil(sc.eta));
    if (span < 1) span = std::max(10, sc.r + 2);
    Report rep;
    auto os = Writer(sc, "grid-stats").csv();
    os << "seed,r,level,span,samples,bad,bad_own,bad_other,freq,ci_halfwidth\n";
    Json rows = Json::array();
    for (std::uint64_t seed : sc.seeds) {
        BadnessStats st = estimate_bad_probability(0, span, gp, sc.samples, seed);
        os << seed << ',' << st.r << ',' << st.level << ',' << st.span << ',' << st.samples << ',' << st.bad << ','
           << st.bad_own << ',' << st.bad_other << ',' << num(st.freq()) << ',' << num(st.ci_halfwidth()) << '\n';
        rows.push_back({{"seed", seed}, {"freq", st.freq()}, {"freq_own", st.freq_own()},
                        {"freq_other", st.freq_other()}, {"ci_halfwidth", st.ci_halfwidth()}});
        if (st.bad > st.samples) rep.fail("frequency_range");
    }
    rep.body["gamma"] = gp.gamma.get_str();
    rep.body["span"] = span;
    rep.body["rows"] = rows;
    return finish(sc, threads, "grid-stats", rep);
}

template <class S>
int cmd_corona(const Scenario& sc, int threads) {
    Measure m = build_measure(sc.measure);
    GoodnessParams gp = goodness_for(sc);
    Report rep;
    Json rows = Json::array();
    auto os = Writer(sc, "corona").csv();
    os << "seed,stop_id,level,anchor,mass,sigma,parent\n";
    int kmin = resolving_level(m), kc = covering_level(m);
    for (std::uint64_t seed : sc.seeds) {
        DyadicGrid g1 = DyadicGrid::sample(m, seed, 1, kmin, kc), g2 = DyadicGrid::sample(m, seed, 2, kmin, kc);
        GridTree t(m, g1);
        GoodnessMap good = classify_tree(t, g1, g2, gp);
        SupportFunction<S> f = random_test_function<S>(m.size(), seed);
        StoppingTree<S> st = build_stopping_tree(t, f, good);
        SparsenessReport sp = check_sparseness(st);
        QuasiReport q = quasi_orthogonality(st, f, sc.p1);
        SigmaReport sg = check_sigma_estimate(st, f, good);
        rows.push_back({{"seed", seed}, {"grid_cubes", t.size()}, {"good", good.count_good()}, {"stopping_cubes", st.size()},
                        {"roots", st.roots.size()}, {"sparse", sp.pass}, {"sparse_worst_ratio", sp.worst_ratio},
                        {"carleson_worst", sp.worst_carleson}, {"quasi_lhs", q.lhs}, {"quasi_rhs", q.rhs},
                        {"quasi_pass", q.pass()}, {"sigma_checked", sg.checked}, {"sigma_violations", sg.violations}});
        if (!sp.pass) rep.fail("sparseness(seed " + std::to_string(seed) + ")");
        if (!q.pass()) rep.fail("quasi_orthogonality(seed " + std::to_string(seed) + ")");
        if (sg.violations) rep.fail("sigma_estimate(seed " + std::to_string(seed) + ")");
        for (std::size_t s = 0; s < st.size(); ++s) {
            const Cube& c = st.cube(static_cast<int>(s));
            os << seed << ',' << s << ',' << c.level << ',' << point_str(c.anchor) << ','
               << num(st.mass(static_cast<int>(s)).to_double()) << ',' << num(to_double(st.sigma[s])) << ','
               << st.parent[s] << '\n';
        }
    }
    rep.body["gamma"] = gp.gamma.get_str();
    rep.body["instances"] = rows;
    return finish(sc, threads, "corona", rep);
}

template <class S>
Json triangle_json(const TriangleResult<S>& t) {
    Json j;
    j["good_pairs"] = t.good_pairs;
    j["unclassified"] = t.unclassified;
    j["multiclassified"] = t.multiclassified;
    j["counts"] = {{"inside", t.n_inside}, {"separated", t.n_separated}, {"nearby", t.n_nearby}};
    j["totals"] = {{"inside", scalar_text(t.inside)}, {"separated", scalar_text(t.separated)}, {"nearby", scalar_text(t.nearby)}};
    const auto& sp = t.split;
    j["inside_split"] = {{"pairs", sp.pairs}, {"para", scalar_text(sp.para)}, {"stop", scalar_text(sp.stop)},
                         {"error", scalar_text(sp.error)}, {"pair_identity_failures", sp.pair_identity_failures},
                         {"pointwise_failures", sp.pointwise_failures}, {"null_children", sp.null_children}};
    j["epsilon"] = {{"coefficients", t.eps.coefficients}, {"max_abs", t.eps.max_abs}, {"zero_sigma", t.eps.zero_sigma},
                    {"telescope_checked", t.eps.telescope_checked}, {"telescope_failures", t.eps.telescope_failures}};
    j["regroup"] = {{"not_contained", scalar_text(t.regroup.not_sub)}, {"contained", scalar_text(t.regroup.sub)},
                    {"terms", t.regroup.terms_not_sub + t.regroup.terms_sub}, {"tau_nonzero", t.regroup.tau_nonzero},
                    {"bracket_failures", t.regroup.bracket_failures}};
    j["layers"] = {{"families", t.layers.families}, {"members", t.layers.members}, {"max_layer", t.layers.max_layer},
                   {"containment_violations", t.layers.containment_violations},
                   {"estimate_violations", t.layers.estimate_violations}};
    const auto& su = t.surgery;
    j["surgery"] = {{"pairs", su.pairs}, {"child_pairs", su.surgeries}, {"enlarged_layer_cubes", su.enlarged},
                    {"M", {scalar_text(su.m[0]), scalar_text(su.m[1]), scalar_text(su.m[2]), scalar_text(su.m[3]), scalar_text(su.m[4])}},
                    {"failures",
                     {{"tenf", su.tenf_failures}, {"ekahaj", su.ekahaj_failures}, {"alpha1", su.alpha1_failures},
                      {"trichotomy", su.trichotomy_failures}, {"unions", su.union_failures}, {"pair_total", su.pair_total_failures}}}};
    return j;
}

struct Instance {
    Measure m;
    Kernel k;
    std::unique_ptr<OperatorMatrix> t;
};

Instance make_instance(const Scenario& sc) {
    Instance in{build_measure(sc.measure), build_kernel(sc.kernel), nullptr};
    in.t = std::make_unique<OperatorMatrix>(in.k, in.m);
    return in;
}

DecompositionConfig decomposition_config(const Scenario& sc, bool pairs) {
    DecompositionConfig cfg;
    cfg.goodness = goodness_for(sc);
    cfg.upsilon = Dyadic::from_double(sc.upsilon);
    cfg.eps = Dyadic::from_double(sc.eps);
    cfg.record_pairs = pairs;
    return cfg;
}

template <class S>
int cmd_decompose(const Scenario& sc, int threads) {
    Instance in = make_instance(sc);
    DecompositionConfig cfg = decomposition_config(sc, sc.pairs_csv);
    Report rep;
    Json rows = Json::array();
    Writer w(sc, "decompose");
    auto os = w.csv();
    os << "seed,triangle,class,count,total\n";
    std::ofstream pairs;
    if (sc.pairs_csv) {
        pairs = w.csv("-pairs");
        pairs << "seed,triangle,P,Q,class,value\n";
    }
    double worst = 0;
    for (std::uint64_t seed : sc.seeds) {
        auto [f1, f2] = seeded_functions<S>(in.m.size(), seed);
        DecompositionRun<S> run = run_decomposition<S>(in.m, in.k, *in.t, f1, f2, seed, cfg);
        const FormLedger<S>& L = run.ledger;
        worst = std::max(worst, L.residual());
        Json j;
        j["seed"] = seed;
        j["direct"] = scalar_text(L.direct);
        j["direct_value"] = to_double(L.direct);
        j["ledger_sum"] = scalar_text(L.sum());
        j["residual"] = L.residual();
        j["e_top"] = scalar_text(L.e_top);
        j["e_mixed"] = scalar_text(L.e_mixed);
        j["perturbation"] = {{"bad_cubes_1", run.pert1.bad_cubes}, {"bad_cubes_2", run.pert2.bad_cubes},
                             {"projection_ok", run.pert1.projection_ok && run.pert2.projection_ok},
                             {"deltas_ok", run.pert1.deltas_ok && run.pert2.deltas_ok}};
        j["main"] = triangle_json(L.main);
        j["mirror"] = triangle_json(L.mirror);
        std::vector<std::string> fails = L.failures();
        if (!run.pert1.projection_ok || !run.pert2.projection_ok || !run.pert1.deltas_ok || !run.pert2.deltas_ok)
            fails.push_back("perturbation");
        j["failures"] = fails;
        for (const auto& f : fails) rep.fail(f + "(seed " + std::to_string(seed) + ")");
        rows.push_back(j);
        for (const TriangleResult<S>* t : {&L.main, &L.mirror}) {
            const char* tri = t->mirror ? "mirror" : "main";
            os << seed << ',' << tri << ",inside," << t->n_inside << ',' << num(to_double(t->inside)) << '\n';
            os << seed << ',' << tri << ",separated," << t->n_separated << ',' << num(to_double(t->separated)) << '\n';
            os << seed << ',' << tri << ",nearby," << t->n_nearby << ',' << num(to_double(t->nearby)) << '\n';
            for (const PairRecord& p : t->pairs)
                pairs << seed << ',' << tri << ',' << p.outer << ',' << p.inner << ',' << class_name(p.cls) << ','
                      << num(p.value) << '\n';
        }
    }
    rep.body["max_residual"] = worst;
    rep.body["instances"] = rows;
    return finish(sc, threads, "decompose", rep);
}

int cmd_t1_study(const Scenario& sc, int threads) {
    Report rep;
    Json rows = Json::array();
    auto os = Writer(sc, "t1-study").csv();
    os << "level,atoms,t_loc,t_loc_adjoint,wbp,norm_lower,norm_upper,ratio\n";
    std::printf("%6s %8s %12s %12s %12s %10s\n", "level", "atoms", "T_loc", "norm_lower", "norm_upper", "ratio");
    double rmin = INFINITY, rmax = 0;
    for (int lv = sc.levels_lo; lv <= sc.levels_hi; ++lv) {
        MeasureSpec ms = sc.measure;
        ms.m = lv;
        Measure m = build_measure(ms);
        Kernel k = build_kernel(sc.kernel);
        OperatorMatrix t(k, m);
        CubeFamily fam = testing_family(m, 4, sc.seeds.front());
        TestingReport tr = testing_constants(t, fam, sc.p1, sc.p2);
        NormEstimate ne = lp_norm_estimate(t, sc.p1, sc.seeds.front());
        double tloc = std::max(tr.c_testing, tr.c_testing_adj);
        double ratio = ne.lower / (1 + tloc);
        rmin = std::min(rmin, ratio);
        rmax = std::max(rmax, ratio);
        std::printf("%6d %8zu %12.6f %12.6f %12.6f %10.6f\n", lv, m.size(), tloc, ne.lower, ne.upper, ratio);
        os << lv << ',' << m.size() << ',' << num(tr.c_testing) << ',' << num(tr.c_testing_adj) << ',' << num(tr.c_wbp)
           << ',' << num(ne.lower) << ',' << num(ne.upper) << ',' << num(ratio) << '\n';
        rows.push_back({{"level", lv}, {"atoms", m.size()}, {"t_loc", tloc}, {"wbp", tr.c_wbp}, {"norm_lower", ne.lower},
                        {"norm_upper", ne.upper}, {"norm_method", ne.method}, {"ratio", ratio},
                        {"testing_family", tr.family}});
        if (tloc > ne.upper * (1 + 1e-9)) rep.fail("t_loc_exceeds_norm(level " + std::to_string(lv) + ")");
        if (!ne.consistent()) rep.fail("norm_bounds(level " + std::to_string(lv) + ")");
    }
    rep.body["levels"] = rows;
    rep.body["ratio_spread"] = rmin > 0 ? rmax / rmin : INFINITY;
    return finish(sc, threads, "t1-study", rep);
}

template <class S>
int cmd_decay(const Scenario& sc, int threads) {
    Instance in = make_instance(sc);
    DecompositionConfig cfg = decomposition_config(sc, false);
    Report rep;
    Json rows = Json::array();
    auto os = Writer(sc, "decay").csv();
    os << "seed,kind,t,u,m,value,envelope\n";
    for (std::uint64_t seed : sc.seeds) {
        auto [f1, f2] = seeded_functions<S>(in.m.size(), seed);
        DecompositionRun<S> run = run_decomposition<S>(in.m, in.k, *in.t, f1, f2, seed, cfg);
        DecayTable tab = decay_diagnostics(run.ledger, cfg.goodness);
        Json fits = Json::array();
        for (const DecayFit& f : tab.fits)
            fits.push_back({{"kind", f.kind}, {"envelope_exponent", f.envelope_exponent},
                            {"fitted_exponent", f.fitted_exponent}, {"fitted_constant", f.fitted_constant},
                            {"points", f.points}});
        rows.push_back({{"seed", seed}, {"fits", fits}, {"residual", run.ledger.residual()}});
        for (const DecayRow& r : tab.rows)
            os << seed << ',' << r.kind << ',' << r.t << ',' << r.u << ',' << r.m << ',' << num(r.value) << ','
               << num(r.envelope) << '\n';
        if (!tab.finite) rep.fail("finite(seed " + std::to_string(seed) + ")");
        if (!run.ledger.reconstructs()) rep.fail("reconstruction(seed " + std::to_string(seed) + ")");
    }
    rep.body["instances"] = rows;
    return finish(sc, threads, "decay", rep);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"czlab: dyadic T1 decomposition laboratory"};
    app.require_subcommand(1);
    std::string scenario_path, arith, out_dir, levels;
    std::vector<std::uint64_t> seeds;
    int threads = 0, r_flag = 0, span = 0;
    std::size_t samples = 0;
    bool pairs_csv = false;

    auto common = [&](CLI::App* sub) {
        sub->add_option("--scenario", scenario_path, "scenario file (key = value with [tables])");
        sub->add_option("--seed", seeds, "seed(s), overriding the scenario");
        sub->add_option("--threads", threads, "thread budget (env CZLAB_THREADS)");
        sub->add_option("--arith", arith, "rational or float")->check(CLI::IsMember({"rational", "float"}));
        sub->add_option("--out", out_dir, "output directory");
    };
    auto* verify = app.add_subcommand("verify-measure", "calibrate lambda and check upper doubling");
    auto* grid = app.add_subcommand("grid-stats", "Monte-Carlo badness frequency");
    auto* corona = app.add_subcommand("corona", "stopping trees, sparseness and quasi-orthogonality");
    auto* decompose = app.add_subcommand("decompose", "bilinear-form ledger and identity checks");
    auto* t1 = app.add_subcommand("t1-study", "testing constant against the operator norm across levels");
    auto* decay = app.add_subcommand("decay", "decay tables of the stopping, error and separated terms");
    for (auto* s : {verify, grid, corona, decompose, t1, decay}) common(s);
    grid->add_option("--r", r_flag, "goodness parameter r");
    grid->add_option("--samples", samples, "shift samples per seed");
    grid->add_option("--span", span, "levels above Q in each sampled grid (default max(10, r+2))");
    t1->add_option("--levels", levels, "level range lo..hi");
    decompose->add_flag("--pairs-csv", pairs_csv, "write the per-pair CSV");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }
    try {
        Scenario base;
        if (t1->parsed()) {
            base.measure = {"cantor-third", 6, ""};
            base.kernel = {"sign-power", std::log(2.0) / std::log(3.0), 1};
        }
        ConfigDoc doc = scenario_path.empty() ? ConfigDoc{} : ConfigDoc::load(scenario_path);
        Scenario sc = Scenario::from_doc(doc, base);
        if (!seeds.empty()) sc.seeds = seeds;
        if (!arith.empty()) sc.arith = arith == "float" ? Arith::floating : Arith::rational;
        if (!out_dir.empty()) sc.out_dir = out_dir;
        if (r_flag) sc.r = r_flag;
        if (samples) sc.samples = samples;
        if (pairs_csv) sc.pairs_csv = true;
        if (!levels.empty()) {
            auto dots = levels.find("..");
            if (dots == std::string::npos) throw ConfigError("--levels", "expected lo..hi");
            try {
                sc.levels_lo = std::stoi(levels.substr(0, dots));
                sc.levels_hi = std::stoi(levels.substr(dots + 2));
            } catch (const std::exception&) {
                throw ConfigError("--levels", "expected lo..hi");
            }
        }
        if (threads <= 0) {
            const char* env = std::getenv("CZLAB_THREADS");
            threads = env ? std::max(1, std::atoi(env)) : 1;
        }
        sc.validate();
        bool exact = sc.arith == Arith::rational;
        if (verify->parsed()) return cmd_verify_measure(sc, threads);
        if (grid->parsed()) return cmd_grid_stats(sc, threads, span);
        if (corona->parsed()) return exact ? cmd_corona<Rational>(sc, threads) : cmd_corona<double>(sc, threads);
        if (decompose->parsed()) return exact ? cmd_decompose<Rational>(sc, threads) : cmd_decompose<double>(sc, threads);
        if (t1->parsed()) return cmd_t1_study(sc, threads);
        if (decay->parsed()) return exact ? cmd_decay<Rational>(sc, threads) : cmd_decay<double>(sc, threads);
    } catch (const ConfigError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return kExitUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return kExitUsage;
}
