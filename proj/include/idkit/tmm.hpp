#pragma once

#include <array>
#include <complex>
#include <filesystem>
#include <map>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idkit/design_space.hpp"

namespace idkit::tmm {

using Complex = std::complex<double>;

struct NkSample {
    double wavelength_um = 0.0;
    double n = 0.0;
    double k = 0.0;
};

struct IndexLookup {
    Complex index;  // n - i k
    bool extrapolated = false;
};

// Tabulated dispersion (lambda in micrometers). Text format:
//   # material <name>
//   <lambda_um> <n> <k>
//   ...
// Further '#' lines are comments.
class MaterialTable {
public:
    MaterialTable(std::string name, std::vector<NkSample> samples);

    static MaterialTable parse(std::string_view text);
    static MaterialTable load(const std::filesystem::path& path);
    // Non-dispersive medium spanning any practical wavelength range.
    static MaterialTable constant(std::string name, double n, double k = 0.0);

    const std::string& name() const { return name_; }
    const std::vector<NkSample>& samples() const { return samples_; }

    // Piecewise-linear in n and k separately; outside the table the end value
    // is returned and the lookup is flagged.
    IndexLookup interp_nk(double wavelength_um) const;

private:
    std::string name_;
    std::vector<NkSample> samples_;
};

class WavelengthGrid {
public:
    static constexpr std::size_t kMotfPoints = 2001;

    static WavelengthGrid uniform(double lo_um, double hi_um, std::size_t count);
    // 0.3-20 um, 2001 points.
    static WavelengthGrid motf();

    std::span<const double> points() const { return points_; }
    std::size_t size() const { return points_.size(); }

private:
    std::vector<double> points_;
};

struct Layer {
    std::shared_ptr<const MaterialTable> material;
    double thickness_nm = 0.0;
};

struct LayerStack {
    std::vector<Layer> layers;  // ambient side first
    double ambient_index = 1.0;
    std::shared_ptr<const MaterialTable> substrate;
};

// Row-major 2x2.
using Matrix2 = std::array<Complex, 4>;

Matrix2 multiply(const Matrix2& a, const Matrix2& b);

// Characteristic matrix [[cos d, i sin d / eta], [i eta sin d, cos d]] with
// d = 2 pi N t / lambda and eta = N at normal incidence.
Matrix2 layer_matrix(Complex index, double thickness_nm, double wavelength_um);

struct Spectrum {
    std::vector<double> reflectance;
    std::vector<double> transmittance;
    std::vector<double> emissivity;  // 1 - R - T
    bool extrapolated = false;
};

// Per-wavelength work is independent; the parallel and serial paths produce
// bitwise identical output.
Spectrum stack_spectrum(const LayerStack& stack, const WavelengthGrid& grid);
Spectrum stack_spectrum_serial(const LayerStack& stack, const WavelengthGrid& grid);

enum class Exec { serial, parallel };

std::filesystem::path default_data_dir();

// The seven MOTF materials loaded from <data_dir>/materials/<name>.txt.
class MaterialLibrary {
public:
    explicit MaterialLibrary(const std::filesystem::path& data_dir = default_data_dir());

    std::shared_ptr<const MaterialTable> get(std::string_view name) const;
    const std::vector<std::string>& names() const { return names_; }

private:
    std::vector<std::string> names_;
    std::map<std::string, std::shared_ptr<const MaterialTable>, std::less<>> tables_;
};

// Forward model for the MOTF space: maps a point to a 10-layer stack on the
// n=1.5 substrate and returns its emissivity on WavelengthGrid::motf().
// Material indices on the grid are resolved once at construction.
class MotfSimulator {
public:
    explicit MotfSimulator(const MaterialLibrary& library = MaterialLibrary());

    LayerStack stack_for(const DesignPoint& point) const;
    Spectrum spectrum(const DesignPoint& point, Exec exec = Exec::parallel) const;
    Response forward(const DesignPoint& point, Exec exec = Exec::parallel) const;

    const WavelengthGrid& grid() const { return grid_; }
    const DesignSpace& space() const { return space_; }

private:
    DesignSpace space_;
    WavelengthGrid grid_;
    MaterialLibrary library_;
    std::shared_ptr<const MaterialTable> substrate_;
    std::map<std::string, std::vector<Complex>, std::less<>> resolved_;
};

// Convenience wrapper over a process-wide MotfSimulator.
Response motf_forward(const DesignPoint& point);

}  // namespace idkit::tmm
