#pragma once

#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "czlab/goodness.hpp"
#include "czlab/measure.hpp"
#include "czlab/numeric.hpp"
#include "czlab/operator.hpp"

namespace czlab {

/// Configuration problem located at a dotted field path.
struct ConfigError : std::runtime_error {
    std::string field;
    ConfigError(std::string f, const std::string& what) : std::runtime_error(f + ": " + what), field(std::move(f)) {}
};

/// Value of a key = value document: string, number, boolean or array of numbers.
using ConfigValue = std::variant<std::string, double, bool, std::vector<double>>;

/// Flat view of a document with [table] sections; keys are "table.key".
class ConfigDoc {
public:
    static ConfigDoc parse(std::istream& in, const std::string& source = "<config>") {
        ConfigDoc doc;
        std::string line, table;
        int no = 0;
        while (std::getline(in, line)) {
            ++no;
            std::string s = trim(strip_comment(line));
            if (s.empty()) continue;
            auto where = [&] { return source + ":" + std::to_string(no); };
            if (s.front() == '[') {
                if (s.back() != ']') throw ConfigError(where(), "unterminated table header");
                table = trim(s.substr(1, s.size() - 2));
                if (table.empty()) throw ConfigError(where(), "empty table name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos) throw ConfigError(where(), "expected key = value");
            std::string key = trim(s.substr(0, eq));
            if (key.empty()) throw ConfigError(where(), "empty key");
            std::string full = table.empty() ? key : table + "." + key;
            doc.values_[full] = parse_value(trim(s.substr(eq + 1)), full);
        }
        return doc;
    }
    static ConfigDoc load(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw ConfigError(path, "cannot open scenario file");
        return parse(in, path);
    }

    bool has(const std::string& k) const { return values_.count(k) > 0; }
    const std::map<std::string, ConfigValue>& values() const { return values_; }
    void set(const std::string& k, ConfigValue v) { values_[k] = std::move(v); }

    std::string str(const std::string& k, const std::string& def) const {
        auto it = values_.find(k);
        if (it == values_.end()) return def;
        if (auto* s = std::get_if<std::string>(&it->second)) return *s;
        throw ConfigError(k, "expected a string");
    }
    double num(const std::string& k, double def) const {
        auto it = values_.find(k);
        if (it == values_.end()) return def;
        if (auto* d = std::get_if<double>(&it->second)) return *d;
        throw ConfigError(k, "expected a number");
    }
    long integer(const std::string& k, long def) const {
        double d = num(k, static_cast<double>(def));
        if (d != std::floor(d)) throw ConfigError(k, "expected an integer");
        return static_cast<long>(d);
    }
    bool flag(const std::string& k, bool def) const {
        auto it = values_.find(k);
        if (it == values_.end()) return def;
        if (auto* b = std::get_if<bool>(&it->second)) return *b;
        throw ConfigError(k, "expected true or false");
    }
    std::vector<double> array(const std::string& k, std::vector<double> def) const {
        auto it = values_.find(k);
        if (it == values_.end()) return def;
        if (auto* a = std::get_if<std::vector<double>>(&it->second)) return *a;
        if (auto* d = std::get_if<double>(&it->second)) return {*d};
        throw ConfigError(k, "expected an array of numbers");
    }

private:
    std::map<std::string, ConfigValue> values_;

    static std::string strip_comment(const std::string& s) {
        bool quoted = false;
        for (std::size_t i = 0; i < s.size(); ++i) {
            if (s[i] == '"') quoted = !quoted;
            if (s[i] == '#' && !quoted) return s.substr(0, i);
        }
        return s;
    }
    static std::string trim(const std::string& s) {
        auto b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    }
    static double number(const std::string& t, const std::string& key) {
        try {
            std::size_t used = 0;
            double d = std::stod(t, &used);
            if (used == t.size()) return d;
        } catch (const std::exception&) {
        }
        throw ConfigError(key, "malformed value '" + t + "'");
    }
    static ConfigValue parse_value(const std::string& t, const std::string& key) {
        if (t.empty()) throw ConfigError(key, "missing value");
        if (t.front() == '"') {
            if (t.size() < 2 || t.back() != '"') throw ConfigError(key, "unterminated string");
            return t.substr(1, t.size() - 2);
        }
        if (t == "true") return true;
        if (t == "false") return false;
        if (t.front() == '[') {
            if (t.back() != ']') throw ConfigError(key, "unterminated array");
            std::vector<double> out;
            std::stringstream ss(t.substr(1, t.size() - 2));
            std::string item;
            while (std::getline(ss, item, ',')) {
                item = trim(item);
                if (!item.empty()) out.push_back(number(item, key));
            }
            return out;
        }
        return number(t, key);
    }
};

struct MeasureSpec {
    std::string name = "uniform-1d";
    int m = 6;
    std::string path;
};

struct KernelSpec {
    std::string name = "sign-power";
    double s = 1;
    double amplitude = 1;
};

/// Fully resolved experiment configuration.
struct Scenario {
    static constexpr int kMaxDenominatorBits = 32;

    MeasureSpec measure;
    KernelSpec kernel;
    double p1 = 2;
    double p2 = 2;
    bool p2_overridden = false;
    int r = 3;
    double eta = 1;
    double upsilon = 0.25;
    double eps = 0.125;
    std::vector<std::uint64_t> seeds{1};
    std::size_t samples = 2000;
    Arith arith = Arith::rational;
    int levels_lo = 4, levels_hi = 8;
    double t_exponent = 0;  // carried as metadata only
    std::string out_dir = "czlab-out";
    bool pairs_csv = false;

    void validate() const {
        static const char* measures[] = {"uniform-1d", "uniform-2d", "cantor-third", "cantor-quarter-2d", "file"};
        bool known = false;
        for (const char* n : measures) known = known || measure.name == n;
        if (!known) throw ConfigError("measure.name", "unknown measure '" + measure.name + "'");
        if (measure.name == "file" && measure.path.empty()) throw ConfigError("measure.path", "required for file measures");
        if (measure.name != "file" && (measure.m < 1 || measure.m > 12)) throw ConfigError("measure.m", "must lie in 1..12");
        static const char* kernels[] = {"zero", "constant", "sign-power", "riesz-2d"};
        known = false;
        for (const char* n : kernels) known = known || kernel.name == n;
        if (!known) throw ConfigError("kernel.name", "unknown kernel '" + kernel.name + "'");
        if (!(p1 > 1) || !std::isfinite(p1)) throw ConfigError("p1", "must lie in (1, inf)");
        if (!(p2 > 1) || !std::isfinite(p2)) throw ConfigError("p2", "must lie in (1, inf)");
        if (r < 1) throw ConfigError("r", "must be >= 1");
        if (!(eta > 0)) throw ConfigError("eta", "must be positive");
        if (!(upsilon > 0 && upsilon < 1)) throw ConfigError("upsilon", "must lie in (0, 1)");
        if (!(eps > 0 && eps < 1)) throw ConfigError("eps", "must lie in (0, 1)");
        auto short_dyadic = [](double v) { return Dyadic::from_double(v).exponent() >= -kMaxDenominatorBits; };
        if (!short_dyadic(upsilon)) throw ConfigError("upsilon", "must be a dyadic rational k/2^j with j <= 32");
        if (!short_dyadic(eps)) throw ConfigError("eps", "must be a dyadic rational k/2^j with j <= 32");
        if (seeds.empty()) throw ConfigError("seeds", "at least one seed required");
        if (levels_lo < 1 || levels_hi < levels_lo) throw ConfigError("levels", "expected lo..hi with 1 <= lo <= hi");
    }

    static Scenario from_doc(const ConfigDoc& d) { return from_doc(d, Scenario{}); }

    /// Fields absent from d keep their values in base.
    static Scenario from_doc(const ConfigDoc& d, Scenario s) {
        s.measure.name = d.str("measure.name", s.measure.name);
        s.measure.m = static_cast<int>(d.integer("measure.m", s.measure.m));
        s.measure.path = d.str("measure.path", "");
        s.kernel.name = d.str("kernel.name", s.kernel.name);
        s.kernel.s = d.num("kernel.s", s.kernel.s);
        s.kernel.amplitude = d.num("kernel.amplitude", s.kernel.amplitude);
        s.p1 = d.num("p1", s.p1);
        s.p2_overridden = s.p2_overridden || d.has("p2");
        s.p2 = d.has("p2") ? d.num("p2", 2) : (s.p2_overridden ? s.p2 : s.p1 / (s.p1 - 1));
        s.r = static_cast<int>(d.integer("r", s.r));
        s.eta = d.num("eta", s.eta);
        s.upsilon = d.num("upsilon", s.upsilon);
        s.eps = d.num("eps", s.eps);
        if (d.has("seeds")) {
            s.seeds.clear();
            for (double v : d.array("seeds", {})) {
                if (v < 0 || v != std::floor(v)) throw ConfigError("seeds", "seeds are nonnegative integers");
                s.seeds.push_back(static_cast<std::uint64_t>(v));
            }
        }
        long n = d.integer("samples", static_cast<long>(s.samples));
        if (n < 1) throw ConfigError("samples", "must be positive");
        s.samples = static_cast<std::size_t>(n);
        std::string a = d.str("arith", arith_name(s.arith));
        if (a == "rational")
            s.arith = Arith::rational;
        else if (a == "float")
            s.arith = Arith::floating;
        else
            throw ConfigError("arith", "expected rational or float");
        auto lv = d.array("levels", {double(s.levels_lo), double(s.levels_hi)});
        if (lv.size() != 2) throw ConfigError("levels", "expected [lo, hi]");
        s.levels_lo = static_cast<int>(lv[0]);
        s.levels_hi = static_cast<int>(lv[1]);
        s.t_exponent = d.num("t", s.t_exponent > 0 ? s.t_exponent : std::max(s.p1, s.p2) + 1);
        s.out_dir = d.str("outputs.dir", s.out_dir);
        s.pairs_csv = d.flag("outputs.pairs_csv", s.pairs_csv);
        s.validate();
        return s;
    }
};

inline Measure build_measure(const MeasureSpec& s) {
    if (s.name == "uniform-1d") return uniform_1d(s.m);
    if (s.name == "uniform-2d") return uniform_2d(s.m);
    if (s.name == "cantor-third") return cantor_third(s.m);
    if (s.name == "cantor-quarter-2d") return cantor_quarter_2d(s.m);
    if (s.name == "file") return load_measure(s.path);
    throw ConfigError("measure.name", "unknown measure '" + s.name + "'");
}

/// Growth exponent of the builtin measures (ball mass ~ r^s).
inline double measure_exponent(const MeasureSpec& s) {
    if (s.name == "uniform-1d") return 1;
    if (s.name == "uniform-2d") return 2;
    if (s.name == "cantor-third") return std::log(2.0) / std::log(3.0);
    if (s.name == "cantor-quarter-2d") return 1;
    return 1;
}

inline Kernel build_kernel(const KernelSpec& s) {
    return make_kernel(s.name, s.s, s.amplitude);
}

/// Goodness parameters with d = log2 C_lambda for lambda = A r^s, rounded up to a rational.
inline GoodnessParams goodness_for(const Scenario& sc) {
    Rational d = rational_ceil(measure_exponent(sc.measure));
    Rational eta = rational_ceil(sc.eta);
    return GoodnessParams::derived(sc.r, d, eta);
}

}  // namespace czlab
