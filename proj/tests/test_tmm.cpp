#include <cmath>
#include <complex>
#include <fstream>
#include <numbers>

#include "doctest.h"
#include "idkit/error.hpp"
#include "idkit/records.hpp"
#include "idkit/tmm.hpp"

using namespace idkit;
using namespace idkit::tmm;

namespace {

std::shared_ptr<const MaterialTable> constant(double n, double k = 0.0) {
    return std::make_shared<const MaterialTable>(MaterialTable::constant("c", n, k));
}

struct RT {
    double r;
    double t;
};

// Independent route: Rouard recursion of Fresnel coefficients from the
// substrate upwards. No characteristic matrices involved.
RT rouard(const std::vector<std::pair<Complex, double>>& layers, Complex ambient, Complex substrate, double lambda_um) {
    const auto r_int = [](Complex a, Complex b) { return (a - b) / (a + b); };
    const auto t_int = [](Complex a, Complex b) { return 2.0 * a / (a + b); };
    if (layers.empty()) {
        return {std::norm(r_int(ambient, substrate)), substrate.real() / ambient.real() * std::norm(t_int(ambient, substrate))};
    }
    Complex r = r_int(layers.back().first, substrate);
    Complex t = t_int(layers.back().first, substrate);
    for (std::size_t i = layers.size(); i-- > 0;) {
        const auto [n, d_nm] = layers[i];
        const Complex above = i == 0 ? ambient : layers[i - 1].first;
        const Complex delta = 2.0 * std::numbers::pi * n * d_nm * 1e-3 / lambda_um;
        const Complex e1 = std::exp(Complex{0.0, -1.0} * delta);
        const Complex e2 = e1 * e1;
        const Complex rt = r_int(above, n);
        const Complex denom = 1.0 + rt * r * e2;
        t = t_int(above, n) * t * e1 / denom;
        r = (rt + r * e2) / denom;
    }
    return {std::norm(r), substrate.real() / ambient.real() * std::norm(t)};
}

Complex at(const MaterialTable& m, double lambda) { return m.interp_nk(lambda).index; }

DesignPoint motf_point(std::vector<std::string> mats, std::vector<double> thick) {
    DesignPoint p;
    for (auto& m : mats) p.values.emplace_back(m);
    for (double t : thick) p.values.emplace_back(t);
    return p;
}

}  // namespace

TEST_CASE("interp_nk") {
    const MaterialTable flat("flat", {{1.0, 1.5, 0.0}, {2.0, 1.5, 0.0}});
    CHECK(flat.interp_nk(1.37).index == Complex{1.5, 0.0});
    const MaterialTable ramp("ramp", {{1.0, 1.4, 0.0}, {2.0, 1.6, 0.2}});
    const auto mid = ramp.interp_nk(1.5);
    CHECK(mid.index.real() == doctest::Approx(1.5).epsilon(1e-15));
    CHECK(mid.index.imag() == doctest::Approx(-0.1).epsilon(1e-15));
    CHECK_FALSE(mid.extrapolated);
    const auto out = ramp.interp_nk(3.0);
    CHECK(out.extrapolated);
    CHECK(out.index == Complex{1.6, -0.2});

    const MaterialLibrary lib;
    for (const auto& name : lib.names()) {
        const auto table = lib.get(name);
        for (std::size_t i = 0; i < table->samples().size(); i += 37) {
            const auto& s = table->samples()[i];
            const auto look = table->interp_nk(s.wavelength_um);
            CHECK(look.index == Complex{s.n, -s.k});
        }
    }
}

TEST_CASE("material tables reject malformed data") {
    CHECK_THROWS_AS(MaterialTable("x", {{1.0, 1.5, 0.0}}), ConfigError);
    CHECK_THROWS_AS(MaterialTable("x", {{1.0, 1.5, 0.0}, {1.0, 1.5, 0.0}}), ConfigError);
    CHECK_THROWS_AS(MaterialTable("x", {{1.0, 1.5, -0.1}, {2.0, 1.5, 0.0}}), ConfigError);
    CHECK_THROWS_AS(MaterialTable::parse("1.0 1.5 0\n2.0 1.5 0\n"), ConfigError);
    const auto t = MaterialTable::parse("# material foo\n# comment\n1.0 1.5 0\n2.0 1.6 0.01\n");
    CHECK(t.name() == "foo");
    CHECK(t.samples().size() == 2);
}

TEST_CASE("layer_matrix") {
    const auto id = layer_matrix(Complex{2.3, -0.4}, 0.0, 1.0);
    CHECK(id[0] == Complex{1.0});
    CHECK(id[1] == Complex{0.0});
    CHECK(id[2] == Complex{0.0});
    CHECK(id[3] == Complex{1.0});

    // quarter wave: delta = pi/2 at lambda = 1 um, n = 1.5 -> d = 1000 / 6 nm
    const auto q = layer_matrix(Complex{1.5, 0.0}, 1000.0 / 6.0, 1.0);
    CHECK(std::abs(q[0]) <= 1e-12);
    CHECK(std::abs(q[3]) <= 1e-12);
    CHECK(std::abs(q[1] - Complex{0.0, 1.0 / 1.5}) <= 1e-12);
    CHECK(std::abs(q[2] - Complex{0.0, 1.5}) <= 1e-12);

    Rng rng(4);
    for (int i = 0; i < 200; ++i) {
        const auto m = layer_matrix(Complex{uniform(rng, 1.0, 4.0), 0.0}, uniform(rng, 0.0, 2000.0), uniform(rng, 0.3, 20.0));
        CHECK(std::abs(m[0] * m[3] - m[1] * m[2] - 1.0) <= 1e-12);
    }
}

TEST_CASE("bare substrate reflects the Fresnel value") {
    LayerStack stack;
    stack.substrate = constant(1.5);
    const auto grid = WavelengthGrid::motf();
    const auto s = stack_spectrum(stack, grid);
    REQUIRE(s.reflectance.size() == 2001);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        CHECK(std::abs(s.reflectance[j] - 0.04) <= 1e-12);
        CHECK(std::abs(s.reflectance[j] + s.transmittance[j] - 1.0) <= 1e-12);
    }
}

TEST_CASE("quarter-wave antireflection layer") {
    const double lambda0 = 1.55;
    const double n1 = std::sqrt(1.5);
    LayerStack stack;
    stack.substrate = constant(1.5);
    stack.layers.push_back({constant(n1), lambda0 * 1000.0 / (4.0 * n1)});
    const auto grid = WavelengthGrid::uniform(lambda0, lambda0 + 1.0, 3);
    const auto s = stack_spectrum(stack, grid);
    CHECK(s.reflectance[0] <= 1e-10);
    CHECK(s.reflectance[1] > 1e-4);
}

TEST_CASE("lossless stacks conserve energy on the full grid") {
    Rng rng(17);
    const auto grid = WavelengthGrid::motf();
    for (int trial = 0; trial < 5; ++trial) {
        LayerStack stack;
        stack.substrate = constant(uniform(rng, 1.2, 3.5));
        for (int l = 0; l < 10; ++l) stack.layers.push_back({constant(uniform(rng, 1.2, 3.5)), uniform(rng, 0.0, 1000.0)});
        const auto s = stack_spectrum(stack, grid);
        double worst = 0.0;
        for (std::size_t j = 0; j < grid.size(); ++j) worst = std::max(worst, std::abs(s.reflectance[j] + s.transmittance[j] - 1.0));
        CHECK(worst <= 1e-10);
    }
}

TEST_CASE("zero-thickness layers drop out") {
    const MaterialLibrary lib;
    const auto grid = WavelengthGrid::motf();
    LayerStack with;
    with.substrate = constant(1.5);
    with.layers = {{lib.get("SiO2"), 300.0}, {lib.get("TiO2"), 0.0}, {lib.get("SiC"), 120.0}};
    LayerStack without = with;
    without.layers.erase(without.layers.begin() + 1);
    const auto a = stack_spectrum(with, grid);
    const auto b = stack_spectrum(without, grid);
    for (std::size_t j = 0; j < grid.size(); ++j) {
        CHECK(std::abs(a.reflectance[j] - b.reflectance[j]) <= 1e-12);
        CHECK(std::abs(a.emissivity[j] - b.emissivity[j]) <= 1e-12);
    }
}

TEST_CASE("matrix grouping does not change the result") {
    Rng rng(8);
    for (int trial = 0; trial < 50; ++trial) {
        std::vector<Matrix2> ms;
        const double lambda = uniform(rng, 0.3, 20.0);
        for (int l = 0; l < 6; ++l) {
            ms.push_back(layer_matrix(Complex{uniform(rng, 1.0, 3.0), -uniform(rng, 0.0, 1.0)}, uniform(rng, 0.0, 500.0), lambda));
        }
        auto left = ms[0];
        for (int l = 1; l < 6; ++l) left = multiply(left, ms[static_cast<std::size_t>(l)]);
        const auto right = multiply(multiply(ms[0], multiply(ms[1], ms[2])), multiply(ms[3], multiply(ms[4], ms[5])));
        const Complex ns{1.5, 0.0};
        const auto refl = [&](const Matrix2& m) {
            const Complex b = m[0] + m[1] * ns;
            const Complex c = m[2] + m[3] * ns;
            return std::norm((b - c) / (b + c));
        };
        CHECK(std::abs(refl(left) - refl(right)) <= 1e-12);
    }
}

TEST_CASE("matrix route agrees with the Rouard recursion on lossy stacks") {
    const MaterialLibrary lib;
    Rng rng(31);
    const auto grid = WavelengthGrid::uniform(0.3, 20.0, 97);
    for (int trial = 0; trial < 20; ++trial) {
        LayerStack stack;
        stack.substrate = constant(1.5);
        for (int l = 0; l < 10; ++l) {
            const auto& names = lib.names();
            stack.layers.push_back({lib.get(names[uniform_index(rng, names.size())]), uniform(rng, 0.0, 1000.0)});
        }
        const auto s = stack_spectrum(stack, grid);
        for (std::size_t j = 0; j < grid.size(); ++j) {
            const double lambda = grid.points()[j];
            std::vector<std::pair<Complex, double>> layers;
            for (const auto& l : stack.layers) layers.emplace_back(at(*l.material, lambda), l.thickness_nm);
            const auto ref = rouard(layers, Complex{1.0}, Complex{1.5}, lambda);
            CHECK(std::abs(s.reflectance[j] - ref.r) <= 1e-10);
            CHECK(std::abs(s.transmittance[j] - ref.t) <= 1e-10);
        }
    }
}

TEST_CASE("passivity and serial/parallel agreement on random MOTF points") {
    const MotfSimulator sim;
    Rng rng(12);
    for (int i = 0; i < 20; ++i) {
        const auto p = sample_uniform(sim.space(), rng);
        const auto par = sim.spectrum(p, Exec::parallel);
        const auto ser = sim.spectrum(p, Exec::serial);
        CHECK(par.emissivity == ser.emissivity);
        CHECK(par.reflectance == ser.reflectance);
        for (std::size_t j = 0; j < par.emissivity.size(); ++j) {
            CHECK(par.reflectance[j] >= 0.0);
            CHECK(par.reflectance[j] <= 1.0);
            CHECK(par.transmittance[j] >= 0.0);
            CHECK(par.transmittance[j] <= 1.0);
            CHECK(par.emissivity[j] >= -1e-9);
            CHECK(par.emissivity[j] <= 1.0);
        }
    }
}

TEST_CASE("motf_forward degenerate and inert-layer cases") {
    const MotfSimulator sim;
    const auto bare = sim.forward(motf_point({"ZnO", "AlN", "Al2O3", "MgF2", "SiO2", "TiO2", "SiC", "ZnO", "AlN", "SiC"},
                                             std::vector<double>(10, 0.0)));
    REQUIRE(bare.size() == 2001);
    for (const double e : bare) CHECK(std::abs(e) <= 1e-12);

    const std::vector<double> thick{0.2, 0.0, 0.4, 0.1, 0.0, 0.3, 0.5, 0.05, 0.6, 0.7};
    auto a = motf_point({"SiO2", "TiO2", "SiC", "AlN", "ZnO", "MgF2", "Al2O3", "SiO2", "TiO2", "SiC"}, thick);
    auto b = a;
    // layers 1 and 4 are zero thickness; swap their (inert) materials and positions
    std::swap(b.values[1], b.values[4]);
    CHECK(sim.forward(a) == sim.forward(b));

    CHECK_THROWS_AS(sim.forward(motf_point(std::vector<std::string>(10, "Gold"), thick)), StructuralError);
}

TEST_CASE("spectrum is continuous in layer thickness") {
    const MotfSimulator sim;
    Rng rng(77);
    for (int i = 0; i < 5; ++i) {
        auto p = sample_uniform(sim.space(), rng);
        const auto y0 = sim.forward(p);
        const std::size_t layer = 10 + uniform_index(rng, 10);
        p.values[layer] = std::min(1.0, p.number(layer) + 1e-6);
        const auto y1 = sim.forward(p);
        for (std::size_t j = 0; j < y0.size(); ++j) CHECK(std::abs(y1[j] - y0[j]) <= 1e-3);
    }
}

TEST_CASE("non-finite intermediates name the wavelength and layer") {
    LayerStack stack;
    stack.substrate = constant(1.5);
    stack.layers.push_back({constant(1.5, 1e6), 1e7});
    try {
        (void)stack_spectrum_serial(stack, WavelengthGrid::uniform(1.0, 2.0, 3));
        FAIL("expected NumericalError");
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("lambda=1") != std::string::npos);
        CHECK(std::string(e.what()).find("layer 0") != std::string::npos);
    }
    CHECK_THROWS_AS((void)stack_spectrum(stack, WavelengthGrid::uniform(1.0, 2.0, 3)), NumericalError);
}

TEST_CASE("golden MOTF spectrum") {
    std::ifstream in(std::string(IDKIT_FIXTURE_DIR) + "/motf_reference.json");
    REQUIRE(in.good());
    const auto j = nlohmann::json::parse(in);
    const auto point = point_from_json(j.at("x"));
    const auto expected = j.at("y").get<std::vector<double>>();
    const auto y = motf_forward(point);
    REQUIRE(y.size() == expected.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) worst = std::max(worst, std::abs(y[i] - expected[i]));
    CHECK(worst <= 1e-10);
    CHECK(mse_loss(y, expected) <= 1e-18);
}
