#include "idkit/design_space.hpp"

#include <algorithm>
#include <cmath>
#include <fmt/format.h>
#include <set>
#include <sstream>

#include "idkit/error.hpp"

namespace idkit {

namespace {

const std::vector<std::string> kMotfMaterials = {"ZnO", "AlN", "Al2O3", "MgF2", "SiO2", "TiO2", "SiC"};

std::size_t unit_to_choice(double u, std::size_t k) {
    // idx / k round-trips exactly; the epsilon absorbs the product's rounding.
    const double scaled = std::floor(u * static_cast<double>(k) + 1e-9);
    if (!(scaled > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(scaled), k - 1);
}

std::vector<std::string> split_ws(std::string_view line) {
    std::vector<std::string> out;
    std::istringstream in{std::string(line)};
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

double parse_double(const std::string& s) {
    try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size()) throw ConfigError("bad number: " + s);
        return v;
    } catch (const std::logic_error&) {
        throw ConfigError("bad number: " + s);
    }
}

std::string fmt_num(double v) { return fmt::format("{}", v); }

}  // namespace

std::size_t ParamSpec::choice_count() const {
    if (const auto* c = std::get_if<Categorical>(&kind)) return c->choices.size();
    return 0;
}

DesignSpace::DesignSpace(std::string name, std::vector<ParamSpec> params, std::size_t response_dim,
                         std::vector<std::string> notes)
    : name_(std::move(name)), params_(std::move(params)), response_dim_(response_dim), notes_(std::move(notes)) {
    if (response_dim_ == 0) throw ConfigError("response_dim must be positive");
    std::set<std::string> seen;
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (p.name.empty()) throw ConfigError("parameter name must not be empty");
        if (!seen.insert(p.name).second) throw ConfigError("duplicate parameter name: " + p.name);
        if (auto* c = std::get_if<Continuous>(&p.kind)) {
            if (!std::isfinite(c->lo) || !std::isfinite(c->hi) || !(c->lo < c->hi))
                throw ConfigError("continuous parameter " + p.name + " needs finite lo < hi");
        } else if (auto* c = std::get_if<Categorical>(&p.kind)) {
            std::set<std::string> distinct(c->choices.begin(), c->choices.end());
            if (c->choices.size() < 2 || distinct.size() != c->choices.size())
                throw ConfigError("categorical parameter " + p.name + " needs >= 2 distinct choices");
        } else {
            auto& cc = std::get<ConditionalContinuous>(p.kind);
            std::size_t ref = i;
            for (std::size_t j = 0; j < i; ++j) {
                if (params_[j].name == cc.hi_ref) ref = j;
            }
            if (ref == i) throw ConfigError("conditional parameter " + p.name + " references unknown or later " + cc.hi_ref);
            const auto* base = std::get_if<Continuous>(&params_[ref].kind);
            if (base == nullptr) throw ConfigError("conditional parameter " + p.name + " must reference a continuous parameter");
            if (!(cc.hi_scale > 0.0) || !(cc.lo < cc.hi_scale * base->lo))
                throw ConfigError("conditional parameter " + p.name + " has an empty interval");
            cc.ref_index = ref;
        }
    }
}

DesignSpace DesignSpace::motf() {
    std::vector<ParamSpec> params;
    for (int i = 0; i < 10; ++i) params.push_back({fmt::format("material_{}", i), Categorical{kMotfMaterials}});
    for (int i = 0; i < 10; ++i) params.push_back({fmt::format("thickness_{}", i), Continuous{0.0, 1.0, "um"}});
    return DesignSpace("motf", std::move(params), 2001,
                       {"layers listed top (ambient side) to bottom (substrate side)",
                        "thickness in micrometers; zero thickness removes the layer",
                        "response y = emissivity 1-R-T at normal incidence on 2001 points, 0.3-20 um",
                        "ambient index 1.0; semi-infinite lossless substrate n=1.5",
                        "complex index N = n - ik (Macleod characteristic-matrix convention)"});
}

DesignSpace DesignSpace::tpv() {
    std::vector<ParamSpec> params;
    params.push_back({"cell", Continuous{350.0, 500.0, "nm"}});
    params.push_back({"spacer", Continuous{30.0, 130.0, "nm"}});
    params.push_back({"top", Continuous{10.0, 80.0, "nm"}});
    for (int i = 0; i < 16; ++i) params.push_back({fmt::format("r{}", i), ConditionalContinuous{40.0, "cell", 0.5, 0, "nm"}});
    return DesignSpace("tpv", std::move(params), 500,
                       {"sub-cell pitch = cell; supercell is 2x2 sub-cells",
                        "radii r[4k..4k+3] control sub-cell k at angles pi/16, 3pi/16, 5pi/16, 7pi/16",
                        "no internal physics: responses come from an external adapter or the synthetic test simulator"});
}

DesignSpace DesignSpace::scf() {
    std::vector<ParamSpec> params;
    params.push_back({"cell", Continuous{150.0, 350.0, "nm"}});
    params.push_back({"height", Continuous{100.0, 500.0, "nm"}});
    for (int i = 0; i < 16; ++i) params.push_back({fmt::format("r{}", i), ConditionalContinuous{40.0, "cell", 0.5, 0, "nm"}});
    return DesignSpace("scf", std::move(params), 3,
                       {"pillar height range 100-500 nm is a toolkit convention",
                        "four pillars on a 70 nm SiN3 film over a silicon substrate",
                        "no internal physics: responses come from an external adapter or the synthetic test simulator"});
}

DesignSpace DesignSpace::by_name(std::string_view problem) {
    if (problem == "motf") return motf();
    if (problem == "tpv") return tpv();
    if (problem == "scf") return scf();
    throw ConfigError("unknown problem: " + std::string(problem));
}

std::size_t DesignSpace::index_of(std::string_view param_name) const {
    for (std::size_t i = 0; i < params_.size(); ++i) {
        if (params_[i].name == param_name) return i;
    }
    throw ConfigError("unknown parameter: " + std::string(param_name));
}

std::size_t DesignSpace::categorical_count() const {
    return static_cast<std::size_t>(std::count_if(params_.begin(), params_.end(),
                                                   [](const ParamSpec& p) { return p.is_categorical(); }));
}

std::size_t DesignSpace::encoded_size() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p.is_categorical() ? p.choice_count() : 1;
    return n;
}

std::size_t DesignSpace::choice_index(const DesignPoint& p, std::size_t i) const {
    const auto& choices = std::get<Categorical>(params_.at(i).kind).choices;
    const auto* label = std::get_if<std::string>(&p.values.at(i));
    if (label == nullptr) throw StructuralError("coordinate " + params_[i].name + " must hold a choice label");
    const auto it = std::find(choices.begin(), choices.end(), *label);
    if (it == choices.end()) throw StructuralError("unknown choice '" + *label + "' for " + params_[i].name);
    return static_cast<std::size_t>(it - choices.begin());
}

std::pair<double, double> DesignSpace::bounds(const DesignPoint& p, std::size_t i) const {
    const auto& spec = params_.at(i);
    if (const auto* c = std::get_if<Continuous>(&spec.kind)) return {c->lo, c->hi};
    if (const auto* c = std::get_if<ConditionalContinuous>(&spec.kind)) return {c->lo, c->hi_scale * p.number(c->ref_index)};
    return {0.0, static_cast<double>(spec.choice_count() - 1)};
}

std::string DesignSpace::to_card() const {
    std::string out = "# idkit problem card\n";
    out += "name = " + name_ + "\n";
    out += fmt::format("response_dim = {}\n", response_dim_);
    for (const auto& note : notes_) out += "note = " + note + "\n";
    for (const auto& p : params_) {
        out += "param " + p.name;
        if (const auto* c = std::get_if<Continuous>(&p.kind)) {
            out += " continuous " + fmt_num(c->lo) + " " + fmt_num(c->hi);
            if (!c->unit.empty()) out += " " + c->unit;
        } else if (const auto* c = std::get_if<Categorical>(&p.kind)) {
            out += " categorical";
            for (const auto& ch : c->choices) out += " " + ch;
        } else {
            const auto& cc = std::get<ConditionalContinuous>(p.kind);
            out += " conditional " + fmt_num(cc.lo) + " " + cc.hi_ref + " " + fmt_num(cc.hi_scale);
            if (!cc.unit.empty()) out += " " + cc.unit;
        }
        out += "\n";
    }
    return out;
}

DesignSpace DesignSpace::from_card(std::string_view text) {
    std::string name;
    std::size_t response_dim = 0;
    std::vector<ParamSpec> params;
    std::vector<std::string> notes;
    std::istringstream in{std::string(text)};
    std::string raw;
    while (std::getline(in, raw)) {
        const auto line = trim(raw);
        if (line.empty() || line.front() == '#') continue;
        if (line.starts_with("param ")) {
            const auto tok = split_ws(line);
            if (tok.size() < 3) throw ConfigError("malformed param line: " + std::string(line));
            ParamSpec spec{tok[1], Continuous{}};
            if (tok[2] == "continuous" && (tok.size() == 5 || tok.size() == 6)) {
                spec.kind = Continuous{parse_double(tok[3]), parse_double(tok[4]), tok.size() == 6 ? tok[5] : ""};
            } else if (tok[2] == "categorical") {
                spec.kind = Categorical{std::vector<std::string>(tok.begin() + 3, tok.end())};
            } else if (tok[2] == "conditional" && (tok.size() == 6 || tok.size() == 7)) {
                spec.kind = ConditionalContinuous{parse_double(tok[3]), tok[4], parse_double(tok[5]), 0,
                                                  tok.size() == 7 ? tok[6] : ""};
            } else {
                throw ConfigError("malformed param line: " + std::string(line));
            }
            params.push_back(std::move(spec));
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw ConfigError("malformed card line: " + std::string(line));
        const auto key = trim(line.substr(0, eq));
        const auto value = std::string(trim(line.substr(eq + 1)));
        if (key == "name") {
            name = value;
        } else if (key == "response_dim") {
            const double v = parse_double(value);
            if (v < 1 || v != std::floor(v)) throw ConfigError("response_dim must be a positive integer");
            response_dim = static_cast<std::size_t>(v);
        } else if (key == "note") {
            notes.push_back(value);
        } else {
            throw ConfigError("unknown card key: " + std::string(key));
        }
    }
    if (name.empty()) throw ConfigError("problem card has no name");
    return DesignSpace(std::move(name), std::move(params), response_dim, std::move(notes));
}

ValidationResult validate(const DesignSpace& space, const DesignPoint& point) {
    if (point.size() != space.size())
        throw StructuralError(fmt::format("point has {} coordinates, space {} expects {}", point.size(), space.name(),
                                          space.size()));
    ValidationResult result;
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& spec = space.param(i);
        const auto& v = point.values[i];
        if (const auto* cat = std::get_if<Categorical>(&spec.kind)) {
            const auto* label = std::get_if<std::string>(&v);
            if (label == nullptr) {
                result.violations.push_back({i, spec.name, "expected a choice label"});
            } else if (std::find(cat->choices.begin(), cat->choices.end(), *label) == cat->choices.end()) {
                result.violations.push_back({i, spec.name, "unknown choice '" + *label + "'"});
            }
            continue;
        }
        const auto* x = std::get_if<double>(&v);
        if (x == nullptr) {
            result.violations.push_back({i, spec.name, "expected a number"});
            continue;
        }
        double lo = 0.0;
        double hi = 0.0;
        if (const auto* c = std::get_if<Continuous>(&spec.kind)) {
            lo = c->lo;
            hi = c->hi;
        } else {
            const auto& cc = std::get<ConditionalContinuous>(spec.kind);
            const auto* ref = std::get_if<double>(&point.values[cc.ref_index]);
            if (ref == nullptr) {
                result.violations.push_back({i, spec.name, "reference " + cc.hi_ref + " is not a number"});
                continue;
            }
            lo = cc.lo;
            hi = cc.hi_scale * *ref;
        }
        if (!std::isfinite(*x) || *x < lo || *x > hi) {
            result.violations.push_back({i, spec.name, fmt::format("{} outside [{}, {}]", *x, lo, hi)});
        }
    }
    return result;
}

DesignPoint sample_uniform(const DesignSpace& space, Rng& rng) {
    DesignPoint p;
    p.values.reserve(space.size());
    for (const auto& spec : space.params()) {
        if (const auto* c = std::get_if<Continuous>(&spec.kind)) {
            p.values.emplace_back(uniform(rng, c->lo, c->hi));
        } else if (const auto* c = std::get_if<Categorical>(&spec.kind)) {
            p.values.emplace_back(c->choices[uniform_index(rng, c->choices.size())]);
        } else {
            const auto& cc = std::get<ConditionalContinuous>(spec.kind);
            p.values.emplace_back(uniform(rng, cc.lo, cc.hi_scale * p.number(cc.ref_index)));
        }
    }
    return p;
}

std::vector<double> normalize(const DesignSpace& space, const DesignPoint& point) {
    if (point.size() != space.size()) throw StructuralError("point length does not match space " + space.name());
    std::vector<double> u(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& spec = space.param(i);
        if (const auto* c = std::get_if<Continuous>(&spec.kind)) {
            u[i] = (point.number(i) - c->lo) / (c->hi - c->lo);
        } else if (const auto* c = std::get_if<Categorical>(&spec.kind)) {
            u[i] = static_cast<double>(space.choice_index(point, i)) / static_cast<double>(c->choices.size());
        } else {
            const auto& cc = std::get<ConditionalContinuous>(spec.kind);
            const double hi = cc.hi_scale * point.number(cc.ref_index);
            u[i] = (point.number(i) - cc.lo) / (hi - cc.lo);
        }
    }
    return u;
}

Denormalized denormalize(const DesignSpace& space, std::span<const double> unit) {
    if (unit.size() != space.size()) throw StructuralError("unit vector length does not match space " + space.name());
    Denormalized out;
    out.point.values.reserve(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        double u = unit[i];
        if (std::isnan(u)) {
            u = 0.0;
            out.clamped = true;
        } else if (u < 0.0 || u > 1.0) {
            u = std::clamp(u, 0.0, 1.0);
            out.clamped = true;
        }
        const auto& spec = space.param(i);
        if (const auto* c = std::get_if<Continuous>(&spec.kind)) {
            out.point.values.emplace_back(std::clamp(c->lo + u * (c->hi - c->lo), c->lo, c->hi));
        } else if (const auto* c = std::get_if<Categorical>(&spec.kind)) {
            out.point.values.emplace_back(c->choices[unit_to_choice(u, c->choices.size())]);
        } else {
            const auto& cc = std::get<ConditionalContinuous>(spec.kind);
            const double hi = cc.hi_scale * out.point.number(cc.ref_index);
            out.point.values.emplace_back(std::clamp(cc.lo + u * (hi - cc.lo), cc.lo, hi));
        }
    }
    return out;
}

std::vector<double> encode_onehot(const DesignSpace& space, const DesignPoint& point) {
    const auto unit = normalize(space, point);
    std::vector<double> out;
    out.reserve(space.encoded_size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& spec = space.param(i);
        if (spec.is_categorical()) {
            const std::size_t k = spec.choice_count();
            const std::size_t idx = space.choice_index(point, i);
            for (std::size_t j = 0; j < k; ++j) out.push_back(j == idx ? 1.0 : 0.0);
        } else {
            out.push_back(unit[i]);
        }
    }
    return out;
}

DesignPoint decode_onehot(const DesignSpace& space, std::span<const double> encoded) {
    if (encoded.size() != space.encoded_size()) throw StructuralError("encoded vector length does not match space");
    std::vector<double> unit(space.size());
    std::size_t pos = 0;
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& spec = space.param(i);
        if (spec.is_categorical()) {
            const std::size_t k = spec.choice_count();
            const auto block = encoded.subspan(pos, k);
            const auto best = static_cast<std::size_t>(std::max_element(block.begin(), block.end()) - block.begin());
            unit[i] = static_cast<double>(best) / static_cast<double>(k);
            pos += k;
        } else {
            unit[i] = std::clamp(encoded[pos], 0.0, 1.0);
            ++pos;
        }
    }
    return denormalize(space, unit).point;
}

double mse_loss(std::span<const double> y, std::span<const double> y_target) {
    if (y.size() != y_target.size())
        throw StructuralError(fmt::format("response length {} does not match target length {}", y.size(), y_target.size()));
    double sum = 0.0;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double d = y_target[j] - y[j];
        sum += d * d;
    }
    return sum;
}

}  // namespace idkit
