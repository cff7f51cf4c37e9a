#include "cli.hpp"

#include <openssl/evp.h>
#include <openssl/opensslv.h>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <ostream>
#include <random>
#include <regex>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "ri/estimators.hpp"
#include "ri/renorm.hpp"
#include "toml.hpp"

namespace ri::cli {

namespace fs = std::filesystem;

// ---------------------------------------------------------------- schema

namespace {

enum class T { Str, UInt, PosInt, Num, NonNegNum, PosNum, Bool, IntList, PosIntList, NumList, Grid, Pairs };

struct Field {
    std::string key;   // dotted path in the config object
    std::string flag;  // command-line flag without dashes
    T type;
    std::vector<std::string> choices;
};

const std::vector<Field>& schema() {
    static const std::vector<Field> f{
        {"command", "", T::Str, {}},
        {"model", "model", T::Str, {}},
        {"metric.alpha", "alpha", T::PosNum, {}},
        {"metric.beta", "beta", T::PosNum, {}},
        {"metric.kind", "metric", T::Str, {"anisotropic", "sup"}},
        {"mode", "mode", T::Str, {"strict", "relaxed"}},
        {"seed", "seed", T::UInt, {}},
        {"trials", "trials", T::PosInt, {}},
        {"workers", "workers", T::PosInt, {}},
        {"output_dir", "out", T::Str, {}},
        {"truncation.factor", "truncation", T::PosNum, {}},
        {"truncation.max_bracket_width", "max-bracket-width", T::PosNum, {}},
        {"truncation.step_cap", "step-cap", T::PosInt, {}},
        {"family", "family", T::Str, {"A", "B", "S"}},
        {"x", "x", T::IntList, {}},
        {"to", "to", T::IntList, {}},
        {"L", "L", T::PosIntList, {}},
        {"u", "u", T::Grid, {}},
        {"u_max", "u-max", T::NonNegNum, {}},
        {"ell", "ell", T::PosInt, {}},
        {"ell0", "ell0", T::PosInt, {}},
        {"L0", "L0", T::PosInt, {}},
        {"depth", "depth", T::UInt, {}},
        {"set", "set", T::Str, {}},
        {"anchor", "anchor", T::Str, {}},
        {"radius", "radius", T::PosNum, {}},
        {"radii", "radii", T::NumList, {}},
        {"distances", "distances", T::PosIntList, {}},
        {"theta", "theta", T::PosNum, {}},
        {"candidates", "candidates", T::Pairs, {}},
        {"configs", "configs", T::PosInt, {}},
        {"K", "K", T::PosNum, {}},
        {"nu_prime", "nu-prime", T::PosNum, {}},
        {"export_measure", "export-measure", T::Bool, {}},
    };
    return f;
}

const Field* field_by_key(const std::string& k) {
    for (const auto& f : schema())
        if (f.key == k) return &f;
    return nullptr;
}

[[noreturn]] void bad(const std::string& key, const std::string& msg) { throw ConfigError("config field '" + key + "': " + msg); }

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(s);
    while (std::getline(in, cur, sep)) out.push_back(cur);
    if (!s.empty() && s.back() == sep) out.emplace_back();
    return out;
}

double parse_num(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    double v;
    try {
        v = std::stod(s, &pos);
    } catch (...) {
        bad(key, "expected a number, got '" + s + "'");
    }
    if (pos != s.size() || !std::isfinite(v)) bad(key, "expected a finite number, got '" + s + "'");
    return v;
}

long long parse_int(const std::string& key, const std::string& s) {
    std::size_t pos = 0;
    long long v;
    try {
        v = std::stoll(s, &pos);
    } catch (...) {
        bad(key, "expected an integer, got '" + s + "'");
    }
    if (pos != s.size()) bad(key, "expected an integer, got '" + s + "'");
    return v;
}

// "a:b:n" is n evenly spaced points from a to b; otherwise a comma list
Json parse_grid(const std::string& key, const std::string& s) {
    Json arr = Json::array();
    if (s.find(':') != std::string::npos) {
        auto p = split(s, ':');
        if (p.size() != 3) bad(key, "grid must be start:stop:count");
        double a = parse_num(key, p[0]), b = parse_num(key, p[1]);
        long long n = parse_int(key, p[2]);
        if (n < 1) bad(key, "grid count must be positive");
        for (long long i = 0; i < n; ++i) arr.push_back(n == 1 ? a : a + (b - a) * static_cast<double>(i) / (n - 1));
        return arr;
    }
    for (const auto& t : split(s, ',')) arr.push_back(parse_num(key, t));
    return arr;
}

// Converts a flag string into the JSON value for the field.
Json from_flag(const Field& f, const std::string& s) {
    switch (f.type) {
    case T::Str: return s;
    case T::UInt:
    case T::PosInt: return parse_int(f.key, s);
    case T::Num:
    case T::NonNegNum:
    case T::PosNum: return parse_num(f.key, s);
    case T::Bool: return s == "true" || s == "1";
    case T::IntList:
    case T::PosIntList: {
        Json a = Json::array();
        for (const auto& t : split(s, ',')) a.push_back(parse_int(f.key, t));
        return a;
    }
    case T::NumList: {
        Json a = Json::array();
        for (const auto& t : split(s, ',')) a.push_back(parse_num(f.key, t));
        return a;
    }
    case T::Grid: return parse_grid(f.key, s);
    case T::Pairs: {
        Json a = Json::array();
        for (const auto& t : split(s, ',')) {
            auto q = split(t, 'x');
            if (q.size() != 2) bad(f.key, "candidates are ell0xL0 pairs, got '" + t + "'");
            a.push_back(Json::array({parse_int(f.key, q[0]), parse_int(f.key, q[1])}));
        }
        return a;
    }
    }
    return s;
}

void check_value(const Field& f, Json& v) {
    auto need_int = [&](const Json& x, long long lo) {
        if (!x.is_number_integer()) bad(f.key, "expected an integer");
        if (x.get<long long>() < lo) bad(f.key, lo == 0 ? "must be nonnegative" : "must be positive");
    };
    auto need_num = [&](const Json& x) {
        if (!x.is_number()) bad(f.key, "expected a number");
        if (!std::isfinite(x.get<double>())) bad(f.key, "must be finite");
    };
    switch (f.type) {
    case T::Str:
        if (!v.is_string()) bad(f.key, "expected a string");
        if (!f.choices.empty() && std::find(f.choices.begin(), f.choices.end(), v.get<std::string>()) == f.choices.end()) {
            std::string c;
            for (const auto& s : f.choices) c += (c.empty() ? "" : ", ") + s;
            bad(f.key, "must be one of {" + c + "}, got '" + v.get<std::string>() + "'");
        }
        break;
    case T::UInt: need_int(v, 0); break;
    case T::PosInt: need_int(v, 1); break;
    case T::Num: need_num(v); break;
    case T::NonNegNum:
        need_num(v);
        if (v.get<double>() < 0) bad(f.key, "must be nonnegative");
        break;
    case T::PosNum:
        need_num(v);
        if (v.get<double>() <= 0) bad(f.key, "must be positive");
        break;
    case T::Bool:
        if (!v.is_boolean()) bad(f.key, "expected true or false");
        break;
    case T::IntList:
    case T::PosIntList:
        if (v.is_number_integer()) v = Json::array({v});
        if (!v.is_array() || v.empty()) bad(f.key, "expected a nonempty list of integers");
        for (auto& x : v) need_int(x, f.type == T::PosIntList ? 1 : LLONG_MIN);
        break;
    case T::NumList:
        if (!v.is_array() || v.empty()) bad(f.key, "expected a nonempty list of numbers");
        for (auto& x : v) need_num(x);
        break;
    case T::Grid:
        if (v.is_string()) v = parse_grid(f.key, v.get<std::string>());
        if (v.is_number()) v = Json::array({v});
        if (!v.is_array() || v.empty()) bad(f.key, "expected a level grid");
        for (auto& x : v) {
            need_num(x);
            if (x.get<double>() < 0) bad(f.key, "levels must be nonnegative");
        }
        for (std::size_t i = 1; i < v.size(); ++i)
            if (!(v[i].get<double>() > v[i - 1].get<double>())) bad(f.key, "levels must be strictly ascending");
        break;
    case T::Pairs:
        if (v.is_string()) v = from_flag(f, v.get<std::string>());
        if (!v.is_array() || v.empty()) bad(f.key, "expected a list of [ell0, L0] pairs");
        for (auto& x : v) {
            if (!x.is_array() || x.size() != 2) bad(f.key, "expected [ell0, L0] pairs");
            need_int(x[0], 2);
            need_int(x[1], 1);
        }
        break;
    }
}

Json* at_path(Json& root, const std::string& dotted, bool create) {
    Json* cur = &root;
    for (const auto& part : split(dotted, '.')) {
        if (create && cur->is_null()) *cur = Json::object();
        if (!cur->is_object()) return nullptr;
        if (!cur->contains(part)) {
            if (!create) return nullptr;
            (*cur)[part] = Json();
        }
        cur = &(*cur)[part];
    }
    return cur;
}

void collect_unknown(const Json& j, const std::string& prefix, std::vector<std::string>& out) {
    for (auto it = j.begin(); it != j.end(); ++it) {
        std::string k = prefix.empty() ? it.key() : prefix + "." + it.key();
        if (field_by_key(k)) continue;
        bool is_group = false;
        for (const auto& f : schema()) is_group = is_group || f.key.rfind(k + ".", 0) == 0;
        if (is_group && it.value().is_object()) {
            collect_unknown(it.value(), k, out);
            continue;
        }
        out.push_back(k);
    }
}

Json toml_to_json(const toml::node& n) {
    if (auto t = n.as_table()) {
        Json o = Json::object();
        for (auto&& [k, v] : *t) o[std::string(k.str())] = toml_to_json(v);
        return o;
    }
    if (auto a = n.as_array()) {
        Json o = Json::array();
        for (auto&& v : *a) o.push_back(toml_to_json(v));
        return o;
    }
    if (auto v = n.as_string()) return v->get();
    if (auto v = n.as_integer()) return v->get();
    if (auto v = n.as_floating_point()) return v->get();
    if (auto v = n.as_boolean()) return v->get();
    throw ConfigError("unsupported TOML value type (dates and times are not part of the schema)");
}

}  // namespace

Json validate_config(const Json& cfg) {
    if (!cfg.is_object()) throw ConfigError("config must be an object");
    std::vector<std::string> unknown;
    collect_unknown(cfg, "", unknown);
    if (!unknown.empty()) {
        std::string s;
        for (const auto& u : unknown) s += (s.empty() ? "" : ", ") + u;
        throw ConfigError("unknown config key(s): " + s);
    }
    Json out = cfg;
    for (const auto& f : schema())
        if (Json* v = at_path(out, f.key, false)) check_value(f, *v);
    return out;
}

Json config_load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file '" + path + "'");
    std::string ext = fs::path(path).extension().string();
    Json j;
    if (ext == ".toml") {
        try {
            j = toml_to_json(toml::parse_file(path));
        } catch (const toml::parse_error& e) {
            throw ConfigError("config '" + path + "': " + std::string(e.description()));
        }
    } else if (ext == ".json") {
        try {
            j = Json::parse(in);
        } catch (const Json::parse_error& e) {
            throw ConfigError("config '" + path + "': " + e.what());
        }
    } else {
        throw ConfigError("config files must end in .json or .toml");
    }
    return validate_config(j);
}

std::string sha256_hex(const std::string& bytes) {
    unsigned char md[EVP_MAX_MD_SIZE];
    unsigned int len = 0;
    if (!EVP_Digest(bytes.data(), bytes.size(), md, &len, EVP_sha256(), nullptr)) throw std::runtime_error("sha256 failed");
    static const char* hex = "0123456789abcdef";
    std::string s;
    for (unsigned i = 0; i < len; ++i) s += hex[md[i] >> 4], s += hex[md[i] & 15];
    return s;
}

// ---------------------------------------------------------------- job plumbing

namespace {

struct Artifacts {
    fs::path dir;
    Json list = Json::array();
    Json bias = Json::array();

    void write(const std::string& name, const std::string& content) {
        std::ofstream o(dir / name, std::ios::binary);
        if (!o) throw std::runtime_error("cannot write " + (dir / name).string());
        o << content;
        list.push_back({{"file", name}, {"sha256", sha256_hex(content)}, {"bytes", content.size()}});
    }
    void add_bias(const std::string& what, double b) { bias.push_back({{"source", what}, {"relative_bias_bound", b}}); }
};

struct Job {
    Json cfg;
    WeightedGraph g;
    MetricParams p;
    SiteId x = 0;
    unsigned workers = 1;
    std::uint64_t seed = 0;
    Artifacts* art = nullptr;

    const Json& get(const std::string& k) const {
        static const Json null;
        Json* v = at_path(const_cast<Json&>(cfg), k, false);
        return v ? *v : null;
    }
    bool has(const std::string& k) const { return !get(k).is_null(); }
    template <class V>
    V val(const std::string& k, V def) const {
        return has(k) ? get(k).get<V>() : def;
    }
    template <class V>
    V need(const std::string& k) const {
        if (!has(k)) throw ConfigError("config field '" + k + "' is required for '" + cfg["command"].get<std::string>() + "'");
        return get(k).get<V>();
    }
    std::size_t trials(std::size_t def) const { return val<std::size_t>("trials", def); }
    LadderMode mode() const { return cfg["mode"] == "strict" ? LadderMode::Strict : LadderMode::Relaxed; }
    EventOptions event_options() const {
        EventOptions o;
        o.workers = workers;
        o.truncation_factor = val<double>("truncation.factor", 2.0);
        o.sampler.max_bracket_width = val<double>("truncation.max_bracket_width", 0.75);
        o.sampler.step_cap = val<std::int64_t>("truncation.step_cap", o.sampler.step_cap);
        return o;
    }
    Family family() const {
        auto f = val<std::string>("family", "A");
        return f == "A" ? Family::A : f == "B" ? Family::B : Family::S;
    }
    std::vector<std::int64_t> Ls(std::vector<std::int64_t> def) const {
        return has("L") ? get("L").get<std::vector<std::int64_t>>() : def;
    }
    std::vector<double> us(std::vector<double> def) const { return has("u") ? get("u").get<std::vector<double>>() : def; }
};

std::string fmt(double v) {
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char b[40];
    std::snprintf(b, sizeof b, "%.10g", v);
    return b;
}

std::vector<int> coords_of(const WeightedGraph& g, SiteId s) {
    const auto& B = g.base();
    std::vector<int> c;
    int y = g.base_of(s);
    if (B.kind() == BaseGraph::Kind::Lattice)
        c = B.coords(y);
    else if (B.kind() == BaseGraph::Kind::Gasket) {
        auto t = B.tri(y);
        c = {t[0], t[1]};
    } else {
        c = {y};
    }
    c.push_back(g.z_of(s));
    return c;
}

std::string coord_str(const WeightedGraph& g, SiteId s) {
    std::string out;
    for (int c : coords_of(g, s)) out += (out.empty() ? "" : ";") + std::to_string(c);
    return out;
}

SiteId site_at(const WeightedGraph& g, const std::vector<long long>& c, const std::string& key) {
    const auto& B = g.base();
    const std::size_t nb = B.kind() == BaseGraph::Kind::Lattice ? static_cast<std::size_t>(B.dim()) : 2;
    if (c.size() != nb && c.size() != nb + 1)
        throw ConfigError("config field '" + key + "': expected " + std::to_string(nb) + " base coordinates and an optional z");
    std::optional<int> y;
    if (B.kind() == BaseGraph::Kind::Lattice)
        y = B.vertex_at(std::vector<int>(c.begin(), c.begin() + nb));
    else
        y = B.gasket_vertex(static_cast<int>(c[0]), static_cast<int>(c[1]));
    long long z = c.size() > nb ? c[nb] : 0;
    if (!y || z < g.zlo() || z > g.zhi()) throw GeometryError("site '" + key + "' lies outside the window");
    return g.site(*y, static_cast<int>(z));
}

// model := base [x z:LO..HI | x z:R];  base := z-lattice:d=D[,w=W] | gasket:level=K
GraphModel parse_model(const std::string& s) {
    static const std::regex full(R"(^\s*([a-z-]+):([^x\s]*?)\s*(?:x\s*z:(-?\d+)(?:\.\.(-?\d+))?)?\s*$)");
    std::smatch m;
    if (!std::regex_match(s, m, full)) throw ConfigError("config field 'model': cannot parse '" + s + "'");
    GraphModel g;
    std::map<std::string, long long> kv;
    for (const auto& item : split(m[2].str(), ',')) {
        auto q = split(item, '=');
        if (q.size() != 2) throw ConfigError("config field 'model': expected key=value, got '" + item + "'");
        kv[q[0]] = parse_int("model", q[1]);
    }
    auto take = [&](const std::string& k, long long def) {
        auto it = kv.find(k);
        if (it == kv.end()) return def;
        long long v = it->second;
        kv.erase(it);
        return v;
    };
    int ext;
    if (m[1] == "z-lattice") {
        g.base = GraphModel::Base::ZLattice;
        g.d = static_cast<int>(take("d", 2));
        g.half_width = static_cast<int>(take("w", 40));
        if (g.d < 1 || g.d > 4 || g.half_width < 1) throw ConfigError("config field 'model': need 1 <= d <= 4 and w >= 1");
        ext = g.half_width;
    } else if (m[1] == "gasket") {
        g.base = GraphModel::Base::Gasket;
        g.level = static_cast<int>(take("level", 5));
        if (g.level < 1 || g.level > 10) throw ConfigError("config field 'model': gasket level must lie in [1, 10]");
        ext = 1 << g.level;
    } else {
        throw ConfigError("config field 'model': unsupported model kind '" + m[1].str() + "'");
    }
    if (!kv.empty()) throw ConfigError("config field 'model': unknown parameter '" + kv.begin()->first + "'");
    if (m[3].matched) {
        long long a = parse_int("model", m[3]);
        if (m[4].matched) {
            g.zlo = static_cast<int>(a);
            g.zhi = static_cast<int>(parse_int("model", m[4]));
        } else {
            g.zlo = static_cast<int>(-std::llabs(a));
            g.zhi = static_cast<int>(std::llabs(a));
        }
        if (g.zhi < g.zlo) throw ConfigError("config field 'model': empty z range");
    } else {
        g.zlo = -ext;
        g.zhi = ext;
    }
    return g;
}

// point | ball:r=R | pair:d=D, all centred at x
SiteSet parse_set(const Job& j, const std::string& s, const std::string& key) {
    if (s == "point") return {j.x};
    auto q = split(s, ':');
    if (q.size() == 2) {
        auto kv = split(q[1], '=');
        if (kv.size() == 2) {
            if (q[0] == "ball" && kv[0] == "r") return ball(j.g, j.x, parse_num(key, kv[1]), j.p);
            if (q[0] == "pair" && kv[0] == "d") {
                int d = static_cast<int>(parse_int(key, kv[1]));
                SiteId t = j.x + d;  // vertical neighbour chain
                if (d < 1 || j.g.z_of(j.x) + d > j.g.zhi()) throw GeometryError("pair leaves the z window");
                SiteSet K{j.x, t};
                normalize(K);
                return K;
            }
        }
    }
    throw ConfigError("config field '" + key + "': expected point, ball:r=R or pair:d=D, got '" + s + "'");
}

HalfPlane default_plane(const Job& j) {
    const auto& B = j.g.base();
    if (B.kind() == BaseGraph::Kind::Lattice) {
        std::vector<int> c(B.dim(), 0);
        auto xc = coords_of(j.g, j.x);
        for (int i = 1; i < B.dim(); ++i) c[i] = xc[i];
        c[0] = -B.half_width();
        return half_plane(j.g, *B.vertex_at(c), 2 * B.half_width(), j.g.zlo(), j.g.zhi());
    }
    return half_plane(j.g, *B.gasket_vertex(0, 0), 1 << B.level(), j.g.zlo(), j.g.zhi());
}

// ---------------------------------------------------------------- SVG

struct Series {
    std::string name;
    std::vector<double> x, y;
    bool markers = true, line = true;
};

std::string svg_plot(const std::string& title, const std::string& xl, const std::string& yl, const std::vector<Series>& ss) {
    const double W = 640, H = 420, ml = 70, mr = 160, mt = 40, mb = 55;
    double x0 = INFINITY, x1 = -INFINITY, y0 = INFINITY, y1 = -INFINITY;
    for (const auto& s : ss)
        for (std::size_t i = 0; i < s.x.size(); ++i) {
            if (!std::isfinite(s.x[i]) || !std::isfinite(s.y[i])) continue;
            x0 = std::min(x0, s.x[i]), x1 = std::max(x1, s.x[i]);
            y0 = std::min(y0, s.y[i]), y1 = std::max(y1, s.y[i]);
        }
    if (!std::isfinite(x0)) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
    if (x1 == x0) x1 = x0 + 1;
    if (y1 == y0) y1 = y0 + 1;
    auto X = [&](double v) { return ml + (v - x0) / (x1 - x0) * (W - ml - mr); };
    auto Y = [&](double v) { return H - mb - (v - y0) / (y1 - y0) * (H - mt - mb); };
    static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    std::ostringstream o;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
    o << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
    o << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">" << title << "</text>\n";
    o << "<line x1=\"" << ml << "\" y1=\"" << H - mb << "\" x2=\"" << W - mr << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
    o << "<line x1=\"" << ml << "\" y1=\"" << mt << "\" x2=\"" << ml << "\" y2=\"" << H - mb << "\" stroke=\"black\"/>\n";
    for (int k = 0; k <= 4; ++k) {
        double xv = x0 + (x1 - x0) * k / 4, yv = y0 + (y1 - y0) * k / 4;
        o << "<text x=\"" << X(xv) << "\" y=\"" << H - mb + 16 << "\" text-anchor=\"middle\">" << fmt(xv) << "</text>\n";
        o << "<text x=\"" << ml - 6 << "\" y=\"" << Y(yv) + 4 << "\" text-anchor=\"end\">" << fmt(yv) << "</text>\n";
    }
    o << "<text x=\"" << (ml + W - mr) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << xl << "</text>\n";
    o << "<text x=\"16\" y=\"" << H / 2 << "\" text-anchor=\"middle\" transform=\"rotate(-90 16 " << H / 2 << ")\">" << yl
      << "</text>\n";
    for (std::size_t k = 0; k < ss.size(); ++k) {
        const auto& s = ss[k];
        const char* c = colors[k % 8];
        if (s.line) {
            o << "<polyline fill=\"none\" stroke=\"" << c << "\" points=\"";
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.y[i])) o << X(s.x[i]) << "," << Y(s.y[i]) << " ";
            o << "\"/>\n";
        }
        if (s.markers)
            for (std::size_t i = 0; i < s.x.size(); ++i)
                if (std::isfinite(s.y[i])) o << "<circle cx=\"" << X(s.x[i]) << "\" cy=\"" << Y(s.y[i]) << "\" r=\"3\" fill=\"" << c << "\"/>\n";
        o << "<text x=\"" << W - mr + 10 << "\" y=\"" << mt + 16 * k + 10 << "\" fill=\"" << c << "\">" << s.name << "</text>\n";
    }
    o << "</svg>\n";
    return o.str();
}

// ---------------------------------------------------------------- reports

Json interval_json(const Interval& i) { return Json::array({i.lo, i.hi}); }

Json stats_json(const SolverStats& s) {
    return {{"method", s.method}, {"iterations", s.iterations}, {"residual", s.residual}, {"symmetry_error", s.symmetry_error}};
}

Json fit_json(const FitResult& f) {
    return {{"model", to_string(f.model)}, {"exponent", f.exponent},      {"prefactor", f.prefactor},
            {"residual", f.residual},      {"ci", interval_json(f.ci)},   {"window", Json::array({f.window_lo, f.window_hi})},
            {"points", f.points}};
}

const char* event_csv_header = "family,x,L,u,estimate,ci_lo,ci_hi,trials,invalid_trials\n";

std::string event_row(const WeightedGraph& g, Family f, SiteId x, std::int64_t L, double u, double est, Interval ci,
                      std::size_t trials, std::size_t invalid) {
    return std::string(to_string(f)) + "," + coord_str(g, x) + "," + std::to_string(L) + "," + fmt(u) + "," + fmt(est) + "," +
           fmt(ci.lo) + "," + fmt(ci.hi) + "," + std::to_string(trials) + "," + std::to_string(invalid) + "\n";
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

// ---------------------------------------------------------------- commands

void cmd_graph_info(Job& j) {
    const auto& B = j.g.base();
    Json r{{"model", j.cfg["model"]},
           {"kind", B.kind() == BaseGraph::Kind::Lattice ? "z-lattice" : "gasket"},
           {"alpha", B.alpha()},
           {"beta", B.beta()},
           {"nu", j.p.nu()},
           {"base_vertices", B.size()},
           {"z_window", Json::array({j.g.zlo(), j.g.zhi()})},
           {"sites", j.g.vertex_count()},
           {"max_degree", j.g.max_degree()}};
    j.art->write("graph.json", dump(r));
}

// CSR of the base graph: "RIGB", u32 version, u64 n, u64 m, u64 offsets[n+1], u32 nbr[m], f64 w[m], little endian
void cmd_graph_export(Job& j) {
    const auto& B = j.g.base();
    std::string bin;
    auto put = [&](const void* p, std::size_t n) { bin.append(static_cast<const char*>(p), n); };
    std::vector<std::uint64_t> off{0};
    std::vector<std::uint32_t> nbr;
    std::vector<double> w;
    for (int y = 0; y < B.size(); ++y) {
        B.for_each_neighbor(y, [&](int v, double wt) {
            nbr.push_back(static_cast<std::uint32_t>(v));
            w.push_back(wt);
        });
        off.push_back(nbr.size());
    }
    put("RIGB", 4);
    std::uint32_t ver = 1;
    std::uint64_t n = static_cast<std::uint64_t>(B.size()), m = nbr.size();
    put(&ver, 4), put(&n, 8), put(&m, 8);
    put(off.data(), off.size() * 8), put(nbr.data(), nbr.size() * 4), put(w.data(), w.size() * 8);
    j.art->write("graph.bin", bin);
    Json h{{"format", "ri-csr-v1"},
           {"byte_order", "little"},
           {"model", j.cfg["model"]},
           {"kind", B.kind() == BaseGraph::Kind::Lattice ? "z-lattice" : "gasket"},
           {"alpha", B.alpha()},
           {"beta", B.beta()},
           {"extents",
            {{"base_vertices", B.size()},
             {"half_width", B.half_width()},
             {"level", B.level()},
             {"z_window", Json::array({j.g.zlo(), j.g.zhi()})}}},
           {"payload", "graph.bin"},
           {"checksum", sha256_hex(bin)}};
    j.art->write("graph_header.json", dump(h));
}

void cmd_graph_volume(Job& j) {
    auto radii = j.val<std::vector<double>>("radii", {2, 4, 8, 16});
    auto f = volume_exponent(j.g, j.x, radii, j.p);
    Json vols = Json::array();
    for (double r : radii) vols.push_back(ball_volume(j.g, j.x, r, j.p));
    Json r{{"quantity", "ball_volume_exponent"}, {"radii", radii},         {"volumes", vols},
           {"slope", f.slope},                   {"slope_se", f.slope_se}, {"predicted", j.p.alpha + j.p.beta / 2}};
    j.art->write("volume.json", dump(r));
}

// 8 (r_K + 1) clipped to the largest ball around x that fits the window
double default_truncation(const Job& j, const SiteSet& K) {
    if (j.has("radius")) return j.get("radius").get<double>();
    double want = std::max(8.0 * (max_distance(j.g, j.x, K, j.p) + 1), 8.0), r = 1;
    while (r < want && ball_fits(j.g, j.x, r + 1, j.p)) ++r;
    return r;
}

void cmd_potential_capacity(Job& j) {
    auto spec = j.val<std::string>("set", "point");
    SiteSet K = parse_set(j, spec, "set");
    double R = default_truncation(j, K);
    auto s = equilibrium_measure(j.g, K, j.x, R, j.p);
    Json r{{"quantity", "capacity"},
           {"set", spec},
           {"value", s.extrapolated},
           {"killed", s.capacity},
           {"bracket", interval_json(s.error_bracket)},
           {"radius", R},
           {"companion_radius", s.companion_radius},
           {"companion_capacity", s.companion_capacity},
           {"solver_stats", stats_json(s.stats)}};
    j.art->write("capacity.json", dump(r));
    j.art->add_bias("capacity truncation", 1 - s.error_bracket.lo / s.error_bracket.hi);
    if (j.val<bool>("export_measure", false)) {
        std::string csv = "site,coords,mass\n";
        for (std::size_t i = 0; i < s.K.size(); ++i) csv += std::to_string(s.K[i]) + "," + coord_str(j.g, s.K[i]) + "," + fmt(s.e[i]) + "\n";
        j.art->write("equilibrium.csv", csv);
    }
}

std::vector<double> default_radii(const Job& j, SiteId target) {
    if (j.has("radii")) return j.get("radii").get<std::vector<double>>();
    double rmax = 1;
    while (ball_fits(j.g, j.x, rmax + 2, j.p)) ++rmax;
    double lo = std::max(metric_d(j.g, j.x, target, j.p) + 2, rmax / 2);
    if (lo >= rmax) throw GeometryError("window too small for a Green-function truncation ladder");
    return {lo, (lo + rmax) / 2, rmax};
}

void cmd_potential_green(Job& j) {
    SiteId t = j.has("to") ? site_at(j.g, j.get("to").get<std::vector<long long>>(), "to") : j.x;
    auto radii = default_radii(j, t);
    auto e = green_estimate(j.g, j.x, t, radii, j.p);
    Json r{{"quantity", "green"}, {"from", coord_str(j.g, j.x)}, {"to", coord_str(j.g, t)}, {"value", e.value},
           {"bracket", interval_json(e.bracket)}, {"radius", e.radius}, {"killed", e.killed}, {"radii", radii}};
    j.art->write("green.json", dump(r));
}

void cmd_potential_hitting(Job& j) {
    auto spec = j.val<std::string>("set", "point");
    SiteSet K = parse_set(j, spec, "set");
    SiteId from = site_at(j.g, j.need<std::vector<long long>>("to"), "to");
    double R = j.has("radius") ? j.get("radius").get<double>()
                               : 4.0 * (std::max(max_distance(j.g, j.x, K, j.p), metric_d(j.g, j.x, from, j.p)) + 1);
    auto h = hitting_prob(j.g, from, K, j.x, R, j.p);
    Json r{{"quantity", "hitting_probability"}, {"set", spec},    {"from", coord_str(j.g, from)},
           {"value", h.direct},                 {"via_identity", h.via_identity}, {"bracket", interval_json(h.bracket)},
           {"radius", R}};
    j.art->write("hitting.json", dump(r));
}

void cmd_interlace_sample(Job& j) {
    double u_max = j.need<double>("u_max");
    auto spec = j.val<std::string>("anchor", "ball:r=4");
    SiteSet K = parse_set(j, spec, "anchor");
    double rK = max_distance(j.g, j.x, K, j.p);
    double R = std::max(j.val<double>("truncation.factor", 2.0) * rK, rK + 2);
    auto opt = j.event_options().sampler;
    auto A = make_anchor(j.g, K, j.x, R, j.p, opt);
    auto s = sample_interlacement(A, u_max, j.seed);
    std::string jl;
    for (const auto& t : s.trajectories) {
        Json r{{"sites", t.sites}, {"label", t.label ? Json(*t.label) : Json()}, {"stop_reason", to_string(t.stop_reason)}};
        jl += r.dump() + "\n";
    }
    j.art->write("trajectories.jsonl", jl);
    auto occ = occupancy(s, u_max, K);
    Json runs = Json::array();
    for (std::size_t i = 0; i < K.size();) {
        if (!occ.occupied[i]) {
            ++i;
            continue;
        }
        std::size_t k = i;
        while (k + 1 < K.size() && occ.occupied[k + 1] && K[k + 1] == K[k] + 1) ++k;
        runs.push_back(Json::array({K[i], k - i + 1}));
        i = k + 1;
    }
    j.art->write("occupancy.json", dump({{"u", u_max}, {"window_sites", K.size()}, {"occupied_runs", runs}}));
    Json m{{"seed", j.seed},
           {"u_max", u_max},
           {"anchor", spec},
           {"anchor_sites", K.size()},
           {"truncation_radius", R},
           {"capacity", A->cap},
           {"capacity_bracket", interval_json(A->cap_bracket)},
           {"trajectories", s.trajectories.size()},
           {"trajectory_file", "trajectories.jsonl"}};
    j.art->write("sample.json", dump(m));
    j.art->add_bias("sampler capacity bracket", A->bias);
}

void cmd_perco_event(Job& j) {
    auto fam = j.family();
    std::optional<HalfPlane> P;
    if (fam == Family::B) P = default_plane(j);
    ScanOptions so;
    so.event = j.event_options();
    auto t = crossing_scan(j.g, fam, j.x, P, j.us({1.0}), j.Ls({2}), j.trials(1000), j.seed, so);
    std::string csv = event_csv_header;
    for (std::size_t i = 0; i < t.L.size(); ++i)
        for (std::size_t k = 0; k < t.u.size(); ++k) {
            const auto& c = t.at(i, k);
            csv += event_row(j.g, fam, j.x, t.L[i], t.u[k], c.estimate, c.ci, c.trials, c.invalid);
            if (k == 0) j.art->add_bias("event sampler at L=" + std::to_string(t.L[i]), c.bias);
        }
    j.art->write("events.csv", csv);
}

void cmd_perco_cluster_tail(Job& j) {
    auto P = default_plane(j);
    std::string csv = event_csv_header;
    for (auto L : j.Ls({2}))
        for (double u : j.us({0.5})) {
            auto e = cluster_tail(j.g, u, P, j.x, static_cast<int>(L), j.trials(1000), mix_task(j.seed, static_cast<std::uint64_t>(L)),
                                  j.event_options());
            csv += event_row(j.g, Family::B, j.x, L, u, e.estimate, e.ci, e.trials, e.invalid);
            j.art->add_bias("cluster tail sampler", e.bias);
        }
    j.art->write("cluster_tail.csv", csv);
}

void cmd_perco_snapshot(Job& j) {
    const auto& B = j.g.base();
    if (B.kind() != BaseGraph::Kind::Lattice || B.dim() != 2) throw ConfigError("snapshot needs a two-dimensional lattice base");
    double u = j.us({1.0}).front();
    int L = static_cast<int>(j.Ls({4}).front());
    SiteSet W = ball(j.g, j.x, 2 * L, j.p);
    auto opt = j.event_options();
    auto A = make_anchor(j.g, W, j.x, std::max(opt.truncation_factor * 2 * L, 2.0 * L + 2), j.p, opt.sampler);
    Philox rng(j.seed, 0);
    std::vector<double> minlab;
    sample_min_labels(*A, u, rng, minlab);
    const int z0 = j.g.z_of(j.x), cell = 12;
    auto xc = coords_of(j.g, j.x);
    std::ostringstream o;
    int side = 4 * L + 1;
    o << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << side * cell << "\" height=\"" << side * cell + 24 << "\">\n";
    o << "<text x=\"4\" y=\"16\" font-family=\"sans-serif\" font-size=\"12\">u=" << fmt(u) << " z=" << z0
      << " black: occupied, white: vacant</text>\n";
    for (std::size_t i = 0; i < W.size(); ++i) {
        if (j.g.z_of(W[i]) != z0) continue;
        auto c = coords_of(j.g, W[i]);
        int px = (c[0] - xc[0] + 2 * L) * cell, py = (c[1] - xc[1] + 2 * L) * cell + 24;
        o << "<rect x=\"" << px << "\" y=\"" << py << "\" width=\"" << cell << "\" height=\"" << cell << "\" fill=\""
          << (minlab[i] <= u ? "black" : "white") << "\" stroke=\"#bbb\"/>\n";
    }
    o << "</svg>\n";
    j.art->write("snapshot.svg", o.str());
}

EventSpec top_spec(const Job& j, std::int64_t L) {
    EventSpec s{j.family(), j.x, static_cast<int>(L), {}};
    if (s.family == Family::B) s.plane = default_plane(j);
    return s;
}

void cmd_renorm_cover(Job& j) {
    int ell = j.val<int>("ell", 4);
    auto L = j.Ls({1}).front();
    auto top = top_spec(j, L);
    auto c = make_cover(j.g, top, ell, L, j.mode());
    std::string csv = "role,site,coords\n";
    auto rows = [&](const char* role, const std::vector<SiteId>& v) {
        for (SiteId s : v) csv += std::string(role) + "," + std::to_string(s) + "," + coord_str(j.g, s) + "\n";
    };
    if (c.family == Family::S)
        rows("lambda", c.lambda(j.g));
    else
        rows("net1", c.net1), rows("net2", c.net2);
    j.art->write("cover.csv", csv);
    Json r{{"family", to_string(c.family)}, {"x", coord_str(j.g, j.x)},          {"ell", ell},
           {"L", L},                        {"lambda_size", c.lambda_size()},   {"pair_count", pair_count(j.g, c)},
           {"net1", c.net1.size()},         {"net2", c.net2.size()},            {"degenerate", c.degenerate},
           {"min_pair_distance", c.min_pair_distance}};
    j.art->write("cover.json", dump(r));
}

void cmd_renorm_embed(Job& j) {
    int depth = j.val<int>("depth", 1);
    auto lad = ScaleLadder::make(j.val<std::int64_t>("L0", 1), j.val<int>("ell0", 100), j.mode());
    auto root = top_spec(j, lad.L(depth));
    std::optional<TreeEmbedding> first;
    expand_tree(j.g, root, depth, lad, [&](const TreeEmbedding& T) {
        first = T;
        return false;
    });
    Json r{{"family", to_string(root.family)}, {"depth", depth}, {"ell0", lad.ell0}, {"L0", lad.L0},
           {"embeddings", count_embeddings(j.g, root, depth, lad)}};
    if (first) {
        std::function<Json(std::size_t)> node = [&](std::size_t i) {
            int k = TreeEmbedding::depth_of(i);
            Json n{{"node", i}, {"depth", k}, {"site", first->x[i]}, {"coords", coords_of(j.g, first->x[i])},
                   {"L", lad.L(depth - k)}};
            if (k < depth) n["children"] = Json::array({node(2 * i + 1), node(2 * i + 2)});
            return n;
        };
        r["tree"] = node(0);
        auto v = validate_embedding(j.g, *first, lad, j.p);
        r["valid"] = v.valid;
        r["violations"] = v.violations;
    }
    j.art->write("embedding.json", dump(r));
}

void cmd_renorm_inclusion(Job& j) {
    int ell = j.val<int>("ell", 4);
    auto L = j.Ls({1}).front();
    auto top = top_spec(j, ell * L);
    auto c = make_cover(j.g, top, ell, L, j.mode());
    EventGeometry parent(j.g, top);
    SiteSet window = parent.support();
    // child supports reach beyond the parent's for S
    for (SiteId s : c.lambda(j.g)) {
        EventSpec cs = top;
        cs.x = s;
        cs.L = static_cast<int>(L);
        window = set_union(window, EventGeometry(j.g, cs).support());
    }
    std::mt19937_64 rng(j.seed);
    std::uniform_real_distribution<double> U;
    std::size_t n = j.val<std::size_t>("configs", 1000);
    std::vector<Configuration> cfgs;
    const std::vector<double> dens{0.3, 0.45, 0.6, 0.75};
    for (std::size_t k = 0; k < n; ++k) {
        auto cf = Configuration::constant(window, 0);
        for (auto& s : cf.sigma) s = U(rng) < dens[k % dens.size()];
        cfgs.push_back(std::move(cf));
    }
    auto r = check_inclusion(j.g, top, c, cfgs);
    j.art->write("inclusion.json", dump({{"family", to_string(top.family)},
                                         {"ell", ell},
                                         {"L", L},
                                         {"configs", r.configs},
                                         {"top_events", r.top_events},
                                         {"violations", r.violations},
                                         {"violating", r.violating},
                                         {"densities", dens}}));
}

void cmd_renorm_decouple(Job& j) {
    int ell = j.val<int>("ell", 6);
    auto L = j.Ls({2}).front();
    double u = j.us({0.5}).front();
    auto top = top_spec(j, ell * L);
    auto c = make_cover(j.g, top, ell, L, j.mode());
    std::vector<EventSpec> leaves;
    for_each_pair(j.g, c, [&](SiteId a, SiteId b) {
        EventSpec ea = top, eb = top;
        ea.x = a, eb.x = b, ea.L = eb.L = static_cast<int>(L);
        leaves = {ea, eb};
        return false;
    });
    if (leaves.empty()) throw GeometryError("cover has no admissible pair");
    auto sched = level_schedule(u, j.val<double>("K", 1.0), j.p.nu(), j.val<double>("nu_prime", j.p.nu() / 2), ell);
    DecoupleOptions opt;
    opt.event = j.event_options();
    auto trials = j.trials(2000);
    auto r = decouple_verify(j.g, leaves, 1, sched, trials, j.seed, j.x, opt);
    auto cal = decouple_calibration(j.g, leaves, u, trials, mix_task(j.seed, 1), opt.event);
    auto est = [](const EventEstimate& e) { return Json{{"estimate", e.estimate}, {"ci", interval_json(e.ci)}}; };
    Json marg = Json::array();
    for (const auto& m : r.marg_u0) marg.push_back(est(m));
    Json rep{{"family", to_string(r.family)},
             {"leaves", Json::array({coord_str(j.g, leaves[0].x), coord_str(j.g, leaves[1].x)})},
             {"L", L},
             {"trials", r.trials},
             {"u0", r.u0},
             {"u_n", r.u_n},
             {"u_inf", r.u_inf},
             {"epsilon", r.eps},
             {"lhs", est(r.lhs)},
             {"lhs_inf", est(r.lhs_inf)},
             {"marginals_u0", marg},
             {"rhs", r.rhs},
             {"rhs_ci", interval_json(r.rhs_ci)},
             {"verdict", to_string(r.verdict)},
             {"fkg", {{"product", r.fkg_product}, {"diff", r.fkg_diff}, {"se", r.fkg_se}, {"violated", r.fkg_violated}}},
             {"calibration", {{"joint", cal.joint}, {"product", cal.product}, {"z", cal.z}, {"consistent", cal.consistent}}}};
    j.art->write("decouple.json", dump(rep));
    j.art->add_bias("decoupling sampler", r.bias);
}

void cmd_renorm_schedule(Job& j) {
    double u = j.us({1.0}).front();
    int ell0 = j.val<int>("ell0", 100);
    double K = j.val<double>("K", 1.0), nup = j.val<double>("nu_prime", j.p.nu() / 2);
    auto s = level_schedule(u, K, j.p.nu(), nup, ell0);
    auto L0 = j.val<std::int64_t>("L0", 1);
    Json r{{"u0", s.u0},
           {"K", K},
           {"nu", s.nu},
           {"nu_prime", nup},
           {"ell0", ell0},
           {"plus", s.plus},
           {"minus", s.minus},
           {"plus_inf", s.plus_inf},
           {"minus_inf", s.minus_inf},
           {"explicit_factors", s.terms},
           {"epsilon", epsilon(s.minus_inf, K, static_cast<double>(L0), s.nu, ell0, nup)}};
    j.art->write("schedule.json", dump(r));
}

Json scan_json(const Job& j, const ScanTable& t) {
    Json cells = Json::array();
    for (std::size_t i = 0; i < t.L.size(); ++i)
        for (std::size_t k = 0; k < t.u.size(); ++k) {
            const auto& c = t.at(i, k);
            cells.push_back({{"L", t.L[i]}, {"u", t.u[k]}, {"estimate", c.estimate}, {"ci", interval_json(c.ci)},
                             {"trials", c.trials}, {"bias", c.bias}, {"skipped", c.skipped}});
        }
    auto bools = [](const std::vector<char>& v) {
        Json a = Json::array();
        for (char c : v) a.push_back(c != 0);
        return a;
    };
    return {{"family", to_string(t.family)},
            {"x", coord_str(j.g, t.x)},
            {"u", t.u},
            {"L", t.L},
            {"seed", t.seed},
            {"truncation_factor", t.truncation_factor},
            {"cells", cells},
            {"diagnostics",
             {{"nonincreasing_in_L", bools(t.diag.nonincreasing_in_L)},
              {"nonincreasing_in_L_ci", bools(t.diag.nonincreasing_in_L_ci)},
              {"monotone_in_u_ci", bools(t.diag.monotone_in_u_ci)}}}};
}

ScanTable run_scan(Job& j, Family fam, std::vector<double> u, std::vector<std::int64_t> L, std::string& csv) {
    std::optional<HalfPlane> P;
    if (fam == Family::B) P = default_plane(j);
    ScanOptions so;
    so.event = j.event_options();
    auto t = crossing_scan(j.g, fam, j.x, P, u, L, j.trials(1000), j.seed, so);
    csv = event_csv_header;
    for (std::size_t i = 0; i < t.L.size(); ++i) {
        for (std::size_t k = 0; k < t.u.size(); ++k) {
            const auto& c = t.at(i, k);
            csv += event_row(j.g, fam, j.x, t.L[i], t.u[k], c.estimate, c.ci, c.trials, c.invalid);
        }
        j.art->add_bias("event sampler at L=" + std::to_string(t.L[i]), t.at(i, t.u.size() - 1).bias);
    }
    return t;
}

void cmd_estimate_scan(Job& j) {
    auto fam = j.family();
    std::string csv;
    auto t = run_scan(j, fam, j.us({0.5, 1, 2, 4, 8}), j.Ls({2, 4, 8}), csv);
    j.art->write("scan.csv", csv);
    Json r = scan_json(j, t);
    if (fam != Family::S && t.L.size() >= 3 && t.complete()) {
        ProxyRule rule;
        rule.theta = j.val<double>("theta", 0.05);
        auto c = critical_proxy(t, rule);
        r["critical"] = {{"kind", to_string(c.kind)},   {"bracket", Json::array({c.lo, c.hi})}, {"open_below", c.open_below},
                         {"open_above", c.open_above}, {"rule", c.rule}};
    }
    j.art->write("scan.json", dump(r));
    std::vector<Series> ss;
    for (std::size_t k = 0; k < t.u.size(); ++k) {
        Series s{"u=" + fmt(t.u[k]), {}, {}};
        for (std::size_t i = 0; i < t.L.size(); ++i) s.x.push_back(static_cast<double>(t.L[i])), s.y.push_back(t.at(i, k).estimate);
        ss.push_back(s);
    }
    j.art->write("scan.svg", svg_plot(std::string("family ") + to_string(fam) + " crossing probability", "L", "probability", ss));
}

void cmd_estimate_stretch(Job& j) {
    auto fam = j.family();
    double u = j.us({0.9}).front();
    std::string csv;
    auto t = run_scan(j, fam, {u}, j.Ls({2, 4, 6, 8}), csv);
    j.art->write("column.csv", csv);
    std::vector<double> L, p;
    std::vector<std::size_t> n;
    for (std::size_t i = 0; i < t.L.size(); ++i) L.push_back(static_cast<double>(t.L[i])), p.push_back(t.at(i, 0).estimate), n.push_back(t.at(i, 0).trials);
    auto f = stretch_fit(L, p, n);
    Json r = fit_json(f);
    r["u"] = u;
    r["family"] = to_string(fam);
    j.art->write("fit.json", dump(r));
    Series data{"log(-log p)", {}, {}}, line{"fit", {}, {}};
    data.line = false;
    line.markers = false;
    for (std::size_t i = 0; i < L.size(); ++i) {
        data.x.push_back(std::log(L[i]));
        data.y.push_back(std::log(-std::log(p[i])));
        line.x.push_back(std::log(L[i]));
        line.y.push_back(std::log(f.prefactor) + f.exponent * std::log(L[i]));
    }
    j.art->write("fit.svg", svg_plot("stretched-exponential fit", "log L", "log(-log p)", {data, line}));
}

void cmd_estimate_connectivity(Job& j) {
    double u = j.us({0.4}).front();
    auto d = j.val<std::vector<int>>("distances", {1, 2, 4, 6});
    auto r = connectivity_decay(j.g, u, j.x, d, j.trials(1000), j.seed, j.event_options());
    std::string csv = "distance,target,connect,connect_lo,connect_hi,exit,exit_lo,exit_hi,trials\n";
    for (std::size_t i = 0; i < d.size(); ++i)
        csv += std::to_string(d[i]) + "," + coord_str(j.g, r.targets[i]) + "," + fmt(r.connect[i].estimate) + "," +
               fmt(r.connect[i].ci.lo) + "," + fmt(r.connect[i].ci.hi) + "," + fmt(r.exit[i].estimate) + "," + fmt(r.exit[i].ci.lo) +
               "," + fmt(r.exit[i].ci.hi) + "," + std::to_string(r.connect[i].trials) + "\n";
    j.art->write("connectivity.csv", csv);
    Json rep{{"u", u}, {"window_radius", r.window_radius}, {"nonincreasing_ci", r.nonincreasing_ci}, {"inclusion_holds", r.inclusion_holds}};
    if (r.fit)
        rep["fit"] = fit_json(*r.fit);
    else
        rep["fit_error"] = r.fit_error;
    j.art->write("connectivity.json", dump(rep));
    if (!r.connect.empty()) j.art->add_bias("connectivity sampler", r.connect[0].bias);
}

void cmd_estimate_seed_scale(Job& j) {
    double u = j.us({4.0}).front();
    std::vector<std::pair<int, std::int64_t>> grid;
    if (j.has("candidates"))
        for (const auto& c : j.get("candidates")) grid.push_back({c[0].get<int>(), c[1].get<std::int64_t>()});
    else
        grid = {{2, 1}, {3, 1}, {4, 1}, {2, 2}, {3, 2}};
    auto fam = j.family();
    std::optional<HalfPlane> P;
    if (fam == Family::B) P = default_plane(j);
    auto r = seed_scale_search(j.g, fam, j.x, P, u, grid, j.trials(500), j.seed, j.event_options());
    auto cand = [](const ScaleCandidate& c) {
        return Json{{"ell0", c.ell0},         {"L0", c.L0},
                    {"feasible", c.feasible}, {"p0", c.p0.estimate},
                    {"p0_ci", interval_json(c.p0.ci)}, {"p1", c.p1.estimate},
                    {"p1_ci", interval_json(c.p1.ci)}, {"accepted", c.accepted}};
    };
    Json tried = Json::array();
    for (const auto& c : r.tried) tried.push_back(cand(c));
    Json rep{{"u", u}, {"family", to_string(fam)}, {"found", r.found}, {"tried", tried}};
    if (r.found) rep["selected"] = {{"ell0", r.ell0}, {"L0", r.L0}}, rep["replicated"] = r.replicated, rep["replication"] = cand(r.replication);
    j.art->write("seed_scale.json", dump(rep));
}

void cmd_diagnose_segments(Job& j) {
    auto P = default_plane(j);
    auto pc = P.coords(j.g, j.x);
    if (!pc) throw GeometryError("x must lie on the default half-plane");
    Json per = Json::array();
    for (auto L : j.Ls({16})) {
        int H = rectangle_height(static_cast<double>(L), j.p);
        PlaneRectangle D{pc->first - static_cast<int>(L) / 2, static_cast<int>(L), pc->second - H / 2, H};
        double exit_r = j.has("radius") ? j.get("radius").get<double>() : 2.0 * L;
        auto h = segment_hit_probs(j.g, P, D, {j.x}, j.trials(1000), mix_task(j.seed, static_cast<std::uint64_t>(L)), exit_r, j.workers);
        double sv = n_vert_shape(static_cast<double>(L), H, j.p), sh = n_hor_shape(static_cast<double>(L), H, j.p);
        per.push_back({{"L", L},
                       {"H", H},
                       {"exit_radius", exit_r},
                       {"n_vert", h.n_vert},
                       {"n_vert_se", h.vert_se.empty() ? 0.0 : h.vert_se[0]},
                       {"n_hor", h.n_hor},
                       {"n_hor_se", h.hor_se.empty() ? 0.0 : h.hor_se[0]},
                       {"vert_shape", sv},
                       {"hor_shape", sh},
                       {"vert_constant", h.n_vert / sv},
                       {"hor_constant", h.n_hor / sh}});
    }
    j.art->write("segments.json", dump({{"x", coord_str(j.g, j.x)}, {"scales", per}}));
}

void cmd_diagnose_excursions(Job& j) {
    double u = j.us({10.0}).front();
    double rU = j.val<double>("radius", 8.0);
    auto U = ball(j.g, j.x, rU, j.p);
    auto W = ball(j.g, j.x, std::max(1.0, std::floor(rU / 4)), j.p);
    double R = std::max(j.val<double>("truncation.factor", 3.0) * rU, rU + 2);
    auto A = make_anchor(j.g, U, j.x, R, j.p, j.event_options().sampler);
    auto e = excursion_spectrum(sample_interlacement(A, u, j.seed), W, U);
    j.art->write("excursions.json", dump({{"u", u},
                                          {"radius_U", e.radius_U},
                                          {"radius_W", std::max(1.0, std::floor(rU / 4))},
                                          {"truncation_radius", R},
                                          {"counts", e.counts},
                                          {"hitting", e.hitting},
                                          {"ratio", e.ratio},
                                          {"ratio_se", e.ratio_se},
                                          {"cap_W", e.cap_W},
                                          {"beta_proxy_constant", e.beta_proxy_constant},
                                          {"too_few", e.too_few}}));
    j.art->add_bias("excursion sampler", A->bias);
}

struct Command {
    std::string group, name, help;
    std::vector<std::string> keys;  // accepted config keys beyond the common ones
    bool needs_seed;
    std::function<void(Job&)> fn;
};

const std::vector<Command>& commands() {
    static const std::vector<Command> c{
        {"graph", "info", "model summary", {}, false, cmd_graph_info},
        {"graph", "export", "binary adjacency plus JSON header", {}, false, cmd_graph_export},
        {"graph", "volume", "ball-volume exponent", {"radii"}, false, cmd_graph_volume},
        {"potential", "capacity", "capacity with truncation bracket", {"set", "radius", "export_measure"}, false, cmd_potential_capacity},
        {"potential", "green", "Green density with truncation bracket", {"to", "radii"}, false, cmd_potential_green},
        {"potential", "hitting", "hitting probability", {"set", "to", "radius"}, false, cmd_potential_hitting},
        {"interlace", "sample", "interlacement sample on an anchor set", {"u_max", "anchor"}, true, cmd_interlace_sample},
        {"perco", "event", "event probabilities as CSV rows", {"family", "L", "u"}, true, cmd_perco_event},
        {"perco", "cluster-tail", "finite half-plane cluster tail", {"L", "u"}, true, cmd_perco_cluster_tail},
        {"perco", "snapshot", "SVG slice of an occupancy sample", {"L", "u"}, true, cmd_perco_snapshot},
        {"renorm", "cover", "cover nets", {"family", "ell", "L"}, false, cmd_renorm_cover},
        {"renorm", "embed", "tree embedding by cover expansion", {"family", "ell0", "L0", "depth"}, false, cmd_renorm_embed},
        {"renorm", "inclusion", "cascading inclusion on random configurations", {"family", "ell", "L", "configs"}, true, cmd_renorm_inclusion},
        {"renorm", "decouple", "decoupling inequality check at depth 1", {"family", "ell", "L", "u", "K", "nu_prime"}, true, cmd_renorm_decouple},
        {"renorm", "schedule", "sprinkled level sequences", {"u", "ell0", "L0", "K", "nu_prime"}, false, cmd_renorm_schedule},
        {"estimate", "crossing-scan", "crossing probabilities over (u, L) with critical proxy", {"family", "u", "L", "theta"}, true, cmd_estimate_scan},
        {"estimate", "stretch-fit", "stretched-exponential fit of one column", {"family", "u", "L"}, true, cmd_estimate_stretch},
        {"estimate", "connectivity", "two-point vacant connectivity", {"u", "distances"}, true, cmd_estimate_connectivity},
        {"estimate", "seed-scale", "seed scale search", {"family", "u", "candidates"}, true, cmd_estimate_seed_scale},
        {"diagnose", "segments", "segment hitting counts in half-planes", {"L", "radius"}, true, cmd_diagnose_segments},
        {"diagnose", "excursions", "excursion spectrum", {"u", "radius"}, true, cmd_diagnose_excursions},
    };
    return c;
}

const std::vector<std::string> common_keys{"model",  "metric.alpha", "metric.beta", "metric.kind", "mode", "seed", "trials", "workers",
                                           "output_dir", "truncation.factor", "truncation.max_bracket_width", "truncation.step_cap", "x"};

Json versions() {
    return {{"ri", "0.1.0"},
            {"compiler", __VERSION__},
            {"eigen", std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." + std::to_string(EIGEN_MINOR_VERSION)},
            {"nlohmann_json", std::to_string(NLOHMANN_JSON_VERSION_MAJOR) + "." + std::to_string(NLOHMANN_JSON_VERSION_MINOR) + "." +
                                  std::to_string(NLOHMANN_JSON_VERSION_PATCH)},
            {"tomlplusplus", std::to_string(TOML_LIB_MAJOR) + "." + std::to_string(TOML_LIB_MINOR) + "." + std::to_string(TOML_LIB_PATCH)},
            {"cli11", CLI11_VERSION},
            {"openssl", OPENSSL_VERSION_TEXT}};
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    const auto t0 = std::chrono::steady_clock::now();
    CLI::App app{"Random interlacements on G x Z: potential theory, sampling, percolation events and estimators", "ri"};
    app.require_subcommand(1);
    // per-leaf storage; CLI11 binds option values by reference
    std::map<const CLI::App*, std::map<std::string, std::string>> raw;
    std::map<const CLI::App*, std::map<std::string, bool>> flags;
    std::string config_path;
    std::vector<std::pair<CLI::App*, const Command*>> leaves;
    std::map<std::string, CLI::App*> groups;
    for (const auto& c : commands()) {
        auto*& grp = groups[c.group];
        if (!grp) grp = app.add_subcommand(c.group, c.group + " commands")->require_subcommand(1);
        auto* leaf = grp->add_subcommand(c.name, c.help);
        leaf->add_option("--config", config_path, "JSON or TOML job file");
        std::vector<std::string> keys = common_keys;
        keys.insert(keys.end(), c.keys.begin(), c.keys.end());
        for (const auto& k : keys) {
            const Field* f = field_by_key(k);
            if (f->type == T::Bool)
                leaf->add_flag("--" + f->flag, flags[leaf][k]);
            else
                leaf->add_option("--" + f->flag, raw[leaf][k])->allow_extra_args(false);
        }
        leaves.push_back({leaf, &c});
    }

    Json cfg = Json::object();
    fs::path outdir = "ri-out";
    int code = exit_ok;
    std::string error;
    Artifacts art;
    bool parsed = false;
    try {
        std::vector<std::string> rev(args.rbegin(), args.rend());
        try {
            app.parse(rev);
        } catch (const CLI::CallForHelp&) {
            out << app.help();
            return exit_ok;
        } catch (const CLI::CallForAllHelp&) {
            out << app.help();
            return exit_ok;
        } catch (const CLI::ParseError& e) {
            throw ConfigError(e.what());
        }
        parsed = true;
        const Command* cmd = nullptr;
        CLI::App* leaf = nullptr;
        for (auto& [a, c] : leaves)
            if (a->parsed()) leaf = a, cmd = c;
        const std::string name = cmd->group + " " + cmd->name;
        if (leaf->count("--out") > 0) outdir = raw[leaf]["output_dir"];
        if (!config_path.empty()) cfg = config_load(config_path);
        if (cfg.contains("command") && cfg["command"] != name)
            throw ConfigError("config field 'command': file is for '" + cfg["command"].get<std::string>() + "', invoked as '" + name + "'");
        std::set<std::string> allowed(common_keys.begin(), common_keys.end());
        allowed.insert(cmd->keys.begin(), cmd->keys.end());
        allowed.insert("command");
        for (const auto& f : schema())
            if (at_path(cfg, f.key, false) && !allowed.count(f.key))
                throw ConfigError("config field '" + f.key + "' does not apply to '" + name + "'");
        for (const auto& [k, v] : raw[leaf]) {
            const Field* f = field_by_key(k);
            if (leaf->count("--" + f->flag) > 0) *at_path(cfg, k, true) = from_flag(*f, v);
        }
        for (const auto& [k, v] : flags[leaf])
            if (leaf->count("--" + field_by_key(k)->flag) > 0) *at_path(cfg, k, true) = v;
        cfg["command"] = name;
        cfg = validate_config(cfg);
        if (!cfg.contains("model")) cfg["model"] = "z-lattice:d=2,w=40";
        if (!cfg.contains("mode")) cfg["mode"] = "strict";
        if (!cfg.contains("output_dir")) cfg["output_dir"] = "ri-out";
        outdir = cfg["output_dir"].get<std::string>();
        if (cmd->needs_seed && !cfg.contains("seed")) throw ConfigError("config field 'seed' is required for '" + name + "'");

        Job job;
        job.cfg = cfg;
        auto model = parse_model(cfg["model"].get<std::string>());
        job.g = build_graph(model);
        job.p = job.g.default_params();
        if (job.has("metric.alpha")) job.p.alpha = job.get("metric.alpha").get<double>();
        if (job.has("metric.beta")) job.p.beta = job.get("metric.beta").get<double>();
        if (job.val<std::string>("metric.kind", "anisotropic") == "sup") job.p.kind = MetricKind::SupNorm;
        if (!(job.p.beta >= 2 && job.p.beta <= job.p.alpha + 1))
            throw ConfigError("config field 'metric.beta': must lie in [2, 1 + alpha] = [2, " + fmt(job.p.alpha + 1) + "], got " + fmt(job.p.beta));
        if (!(job.p.nu() > 0)) throw ConfigError("config field 'metric': nu = alpha - beta/2 must be positive");
        job.workers = cfg.contains("workers") ? cfg["workers"].get<unsigned>() : default_workers();
        job.seed = job.val<std::uint64_t>("seed", 0);
        fs::create_directories(outdir);
        art.dir = outdir;
        job.art = &art;
        job.x = cfg.contains("x") ? site_at(job.g, cfg["x"].get<std::vector<long long>>(), "x") : [&] {
            const auto& B = job.g.base();
            int y = B.kind() == BaseGraph::Kind::Lattice ? *B.vertex_at(std::vector<int>(B.dim(), 0)) : *B.gasket_vertex(0, 0);
            return job.g.site(y, std::clamp(0, job.g.zlo(), job.g.zhi()));
        }();
        cmd->fn(job);
    } catch (const ConfigError& e) {
        code = exit_usage, error = e.what();
    } catch (const std::invalid_argument& e) {
        code = exit_usage, error = e.what();
    } catch (const GeometryError& e) {
        code = exit_failure, error = e.what();
    } catch (const NumericalError& e) {
        code = exit_failure, error = e.what();
    } catch (const std::exception& e) {
        code = exit_failure, error = e.what();
    }
    if (code != exit_ok) err << "error: " << error << "\n";
    // the manifest is written for every run that got past argument parsing
    if (parsed) {
        try {
            fs::create_directories(outdir);
            Json m{{"config", cfg},
                   {"status", code == exit_ok ? "ok" : code == exit_usage ? "usage-error" : "failure"},
                   {"exit_code", code},
                   {"versions", versions()},
                   {"wall_seconds", std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count()},
                   {"outputs", art.list},
                   {"bias_bounds", art.bias}};
            if (!error.empty()) m["error"] = error;
            std::ofstream(outdir / "manifest.json") << m.dump(2) << "\n";
        } catch (const std::exception& e) {
            err << "error: cannot write manifest: " << e.what() << "\n";
            if (code == exit_ok) code = exit_failure;
        }
    }
    if (code == exit_ok) out << "wrote " << art.list.size() << " artifact(s) and manifest.json to " << outdir.string() << "\n";
    return code;
}

}  // namespace ri::cli
