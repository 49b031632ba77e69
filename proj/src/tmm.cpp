#include "idkit/tmm.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <numbers>
#include <sstream>

#include <fmt/format.h>

#include "idkit/error.hpp"

#ifndef IDKIT_DEFAULT_DATA_DIR
#define IDKIT_DEFAULT_DATA_DIR "data"
#endif

namespace idkit::tmm {

namespace {

constexpr Complex kI{0.0, 1.0};

struct WavelengthResult {
    double r = 0.0;
    double t = 0.0;
};

// Shared per-wavelength kernel. `index_of(layer)` yields that layer's complex
// index at the current wavelength.
template <class IndexOf>
WavelengthResult solve_wavelength(std::size_t layer_count, const double* thickness_nm, IndexOf&& index_of,
                                  double ambient, Complex substrate, double wavelength_um, std::size_t* bad_layer) {
    Matrix2 m{Complex{1.0}, Complex{0.0}, Complex{0.0}, Complex{1.0}};
    for (std::size_t l = 0; l < layer_count; ++l) {
        if (thickness_nm[l] == 0.0) continue;
        m = multiply(m, layer_matrix(index_of(l), thickness_nm[l], wavelength_um));
        if (!std::isfinite(std::abs(m[0])) || !std::isfinite(std::abs(m[3]))) {
            *bad_layer = l;
            return {std::nan(""), std::nan("")};
        }
    }
    const Complex b = m[0] + m[1] * substrate;
    const Complex c = m[2] + m[3] * substrate;
    const Complex denom = ambient * b + c;
    const Complex r = (ambient * b - c) / denom;
    const double t = 4.0 * ambient * substrate.real() / std::norm(denom);
    return {std::norm(r), t};
}

struct Resolved {
    std::vector<double> thickness;
    // [layer][wavelength]
    std::vector<std::vector<Complex>> index;
    std::vector<Complex> substrate;
    bool extrapolated = false;
};

Resolved resolve(const LayerStack& stack, const WavelengthGrid& grid) {
    Resolved out;
    const auto wl = grid.points();
    for (const auto& layer : stack.layers) {
        if (!layer.material) throw ConfigError("layer without material");
        if (!(layer.thickness_nm >= 0.0)) throw ConfigError("layer thickness must be >= 0");
        out.thickness.push_back(layer.thickness_nm);
        std::vector<Complex> idx(wl.size());
        for (std::size_t j = 0; j < wl.size(); ++j) {
            const auto look = layer.material->interp_nk(wl[j]);
            idx[j] = look.index;
            out.extrapolated = out.extrapolated || look.extrapolated;
        }
        out.index.push_back(std::move(idx));
    }
    out.substrate.resize(wl.size(), Complex{1.5, 0.0});
    if (stack.substrate) {
        for (std::size_t j = 0; j < wl.size(); ++j) {
            const auto look = stack.substrate->interp_nk(wl[j]);
            out.substrate[j] = look.index;
            out.extrapolated = out.extrapolated || look.extrapolated;
        }
    }
    return out;
}

[[noreturn]] void report_non_finite(double wavelength, std::size_t layer) {
    throw NumericalError(fmt::format("non-finite transfer matrix at lambda={} um, layer {}", wavelength, layer));
}

Spectrum run(const Resolved& res, double ambient, const WavelengthGrid& grid, Exec exec) {
    const auto wl = grid.points();
    const auto n = static_cast<std::ptrdiff_t>(wl.size());
    Spectrum s;
    s.reflectance.resize(wl.size());
    s.transmittance.resize(wl.size());
    s.emissivity.resize(wl.size());
    s.extrapolated = res.extrapolated;
    const std::size_t layers = res.thickness.size();
    std::ptrdiff_t bad_wavelength = -1;
    std::size_t bad_layer = 0;

    auto body = [&](std::ptrdiff_t j, std::size_t* bad) {
        const auto idx = static_cast<std::size_t>(j);
        const auto out = solve_wavelength(
            layers, res.thickness.data(), [&](std::size_t l) { return res.index[l][idx]; }, ambient,
            res.substrate[idx], wl[idx], bad);
        s.reflectance[idx] = out.r;
        s.transmittance[idx] = out.t;
        s.emissivity[idx] = 1.0 - out.r - out.t;
        return std::isfinite(out.r) && std::isfinite(out.t);
    };

    if (exec == Exec::serial) {
        for (std::ptrdiff_t j = 0; j < n; ++j) {
            std::size_t bad = 0;
            if (!body(j, &bad)) report_non_finite(wl[static_cast<std::size_t>(j)], bad);
        }
        return s;
    }

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t j = 0; j < n; ++j) {
        std::size_t bad = 0;
        if (!body(j, &bad)) {
#pragma omp critical(idkit_tmm_error)
            if (bad_wavelength < 0 || j < bad_wavelength) {
                bad_wavelength = j;
                bad_layer = bad;
            }
        }
    }
    if (bad_wavelength >= 0) report_non_finite(wl[static_cast<std::size_t>(bad_wavelength)], bad_layer);
    return s;
}

}  // namespace

MaterialTable::MaterialTable(std::string name, std::vector<NkSample> samples)
    : name_(std::move(name)), samples_(std::move(samples)) {
    if (samples_.size() < 2) throw ConfigError("material " + name_ + " needs at least 2 samples");
    for (std::size_t i = 0; i < samples_.size(); ++i) {
        const auto& s = samples_[i];
        if (!std::isfinite(s.wavelength_um) || !std::isfinite(s.n) || !std::isfinite(s.k) || s.k < 0.0)
            throw ConfigError(fmt::format("material {} row {} invalid (k must be >= 0)", name_, i));
        if (i > 0 && !(s.wavelength_um > samples_[i - 1].wavelength_um))
            throw ConfigError(fmt::format("material {} wavelengths not strictly increasing at row {}", name_, i));
    }
}

MaterialTable MaterialTable::parse(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::string name;
    std::vector<NkSample> samples;
    bool header = false;
    while (std::getline(in, line)) {
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        if (!header) {
            std::istringstream h(line);
            std::string hash, tag;
            h >> hash >> tag >> name;
            if (hash != "#" || tag != "material" || name.empty())
                throw ConfigError("material table must start with '# material <name>'");
            header = true;
            continue;
        }
        if (line.front() == '#') continue;
        std::istringstream row(line);
        NkSample s;
        if (!(row >> s.wavelength_um >> s.n >> s.k)) throw ConfigError("malformed material row: " + line);
        samples.push_back(s);
    }
    if (!header) throw ConfigError("empty material table");
    return MaterialTable(std::move(name), std::move(samples));
}

MaterialTable MaterialTable::load(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open material table " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
}

MaterialTable MaterialTable::constant(std::string name, double n, double k) {
    return MaterialTable(std::move(name), {{1e-3, n, k}, {1e6, n, k}});
}

IndexLookup MaterialTable::interp_nk(double wavelength_um) const {
    if (wavelength_um <= samples_.front().wavelength_um) {
        const auto& s = samples_.front();
        return {Complex{s.n, -s.k}, wavelength_um < s.wavelength_um};
    }
    if (wavelength_um >= samples_.back().wavelength_um) {
        const auto& s = samples_.back();
        return {Complex{s.n, -s.k}, wavelength_um > s.wavelength_um};
    }
    const auto it = std::upper_bound(samples_.begin(), samples_.end(), wavelength_um,
                                     [](double w, const NkSample& s) { return w < s.wavelength_um; });
    const auto& hi = *it;
    const auto& lo = *(it - 1);
    if (lo.wavelength_um == wavelength_um) return {Complex{lo.n, -lo.k}, false};
    const double f = (wavelength_um - lo.wavelength_um) / (hi.wavelength_um - lo.wavelength_um);
    const double n = lo.n + f * (hi.n - lo.n);
    const double k = lo.k + f * (hi.k - lo.k);
    return {Complex{n, -k}, false};
}

WavelengthGrid WavelengthGrid::uniform(double lo_um, double hi_um, std::size_t count) {
    if (count < 2 || !(lo_um > 0.0) || !(hi_um > lo_um)) throw ConfigError("invalid wavelength grid");
    WavelengthGrid g;
    g.points_.resize(count);
    const double step = (hi_um - lo_um) / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) g.points_[i] = lo_um + step * static_cast<double>(i);
    g.points_.back() = hi_um;
    return g;
}

WavelengthGrid WavelengthGrid::motf() { return uniform(0.3, 20.0, kMotfPoints); }

Matrix2 multiply(const Matrix2& a, const Matrix2& b) {
    return {a[0] * b[0] + a[1] * b[2], a[0] * b[1] + a[1] * b[3], a[2] * b[0] + a[3] * b[2],
            a[2] * b[1] + a[3] * b[3]};
}

Matrix2 layer_matrix(Complex index, double thickness_nm, double wavelength_um) {
    if (thickness_nm == 0.0) return {Complex{1.0}, Complex{0.0}, Complex{0.0}, Complex{1.0}};
    const Complex delta = 2.0 * std::numbers::pi * index * (thickness_nm * 1e-3) / wavelength_um;
    const Complex c = std::cos(delta);
    const Complex s = std::sin(delta);
    return {c, kI * s / index, kI * index * s, c};
}

Spectrum stack_spectrum(const LayerStack& stack, const WavelengthGrid& grid) {
    return run(resolve(stack, grid), stack.ambient_index, grid, Exec::parallel);
}

Spectrum stack_spectrum_serial(const LayerStack& stack, const WavelengthGrid& grid) {
    return run(resolve(stack, grid), stack.ambient_index, grid, Exec::serial);
}

std::filesystem::path default_data_dir() {
    if (const char* env = std::getenv("IDKIT_DATA_DIR"); env != nullptr && *env != '\0') return env;
    return IDKIT_DEFAULT_DATA_DIR;
}

MaterialLibrary::MaterialLibrary(const std::filesystem::path& data_dir) {
    const auto space = DesignSpace::motf();
    names_ = std::get<Categorical>(space.param(0).kind).choices;
    for (const auto& name : names_) {
        auto table = std::make_shared<const MaterialTable>(MaterialTable::load(data_dir / "materials" / (name + ".txt")));
        if (table->name() != name) throw ConfigError("material file for " + name + " declares " + table->name());
        tables_.emplace(name, std::move(table));
    }
}

std::shared_ptr<const MaterialTable> MaterialLibrary::get(std::string_view name) const {
    const auto it = tables_.find(name);
    if (it == tables_.end()) throw ConfigError("unknown material: " + std::string(name));
    return it->second;
}

MotfSimulator::MotfSimulator(const MaterialLibrary& library)
    : space_(DesignSpace::motf()),
      grid_(WavelengthGrid::motf()),
      library_(library),
      substrate_(std::make_shared<const MaterialTable>(MaterialTable::constant("substrate", 1.5))) {
    for (const auto& name : library_.names()) {
        const auto table = library_.get(name);
        std::vector<Complex> idx(grid_.size());
        for (std::size_t j = 0; j < grid_.size(); ++j) idx[j] = table->interp_nk(grid_.points()[j]).index;
        resolved_.emplace(name, std::move(idx));
    }
}

LayerStack MotfSimulator::stack_for(const DesignPoint& point) const {
    if (const auto v = validate(space_, point); !v) {
        throw StructuralError("invalid MOTF point: " + v.violations.front().name + " " + v.violations.front().message);
    }
    LayerStack stack;
    stack.substrate = substrate_;
    for (std::size_t l = 0; l < 10; ++l) {
        stack.layers.push_back({library_.get(point.label(l)), point.number(10 + l) * 1000.0});
    }
    return stack;
}

Spectrum MotfSimulator::spectrum(const DesignPoint& point, Exec exec) const {
    const auto stack = stack_for(point);
    Resolved res;
    for (std::size_t l = 0; l < stack.layers.size(); ++l) {
        res.thickness.push_back(stack.layers[l].thickness_nm);
        res.index.push_back(resolved_.find(point.label(l))->second);
    }
    res.substrate.assign(grid_.size(), Complex{1.5, 0.0});
    return run(res, stack.ambient_index, grid_, exec);
}

Response MotfSimulator::forward(const DesignPoint& point, Exec exec) const {
    return spectrum(point, exec).emissivity;
}

Response motf_forward(const DesignPoint& point) {
    static const MotfSimulator sim;
    return sim.forward(point);
}

}  // namespace idkit::tmm
