#include <algorithm>
#include <cmath>
#include <numeric>

#include "doctest.h"
#include "idkit/design_space.hpp"
#include "idkit/error.hpp"

using namespace idkit;

namespace {

DesignPoint tpv_point(double cell, double r_first, double rest = 40.0) {
    DesignPoint p;
    p.values = {cell, 80.0, 40.0};
    p.values.emplace_back(r_first);
    for (int i = 1; i < 16; ++i) p.values.emplace_back(rest);
    return p;
}

DesignPoint motf_point(const std::string& material, double thickness) {
    DesignPoint p;
    for (int i = 0; i < 10; ++i) p.values.emplace_back(material);
    for (int i = 0; i < 10; ++i) p.values.emplace_back(thickness);
    return p;
}

// Kolmogorov-Smirnov statistic of a sample against U(0,1).
double ks_uniform(std::vector<double> xs) {
    std::sort(xs.begin(), xs.end());
    const double n = static_cast<double>(xs.size());
    double d = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
        d = std::max(d, std::max(static_cast<double>(i + 1) / n - xs[i], xs[i] - static_cast<double>(i) / n));
    }
    return d;
}

}  // namespace

TEST_CASE("problem spaces have the documented shapes") {
    const auto motf = DesignSpace::motf();
    CHECK(motf.size() == 20);
    CHECK(motf.response_dim() == 2001);
    CHECK(motf.encoded_size() == 80);
    for (std::size_t i = 0; i < 10; ++i) {
        const auto& c = std::get<Categorical>(motf.param(i).kind);
        CHECK(c.choices == std::vector<std::string>{"ZnO", "AlN", "Al2O3", "MgF2", "SiO2", "TiO2", "SiC"});
        const auto& t = std::get<Continuous>(motf.param(10 + i).kind);
        CHECK(t.lo == 0.0);
        CHECK(t.hi == 1.0);
    }

    const auto tpv = DesignSpace::tpv();
    CHECK(tpv.size() == 19);
    CHECK(tpv.response_dim() == 500);
    CHECK(std::get<Continuous>(tpv.param(0).kind).lo == 350.0);
    CHECK(std::get<Continuous>(tpv.param(0).kind).hi == 500.0);
    CHECK(std::get<Continuous>(tpv.param(1).kind).lo == 30.0);
    CHECK(std::get<Continuous>(tpv.param(1).kind).hi == 130.0);
    CHECK(std::get<Continuous>(tpv.param(2).kind).lo == 10.0);
    CHECK(std::get<Continuous>(tpv.param(2).kind).hi == 80.0);
    for (std::size_t i = 3; i < 19; ++i) {
        const auto& c = std::get<ConditionalContinuous>(tpv.param(i).kind);
        CHECK(c.lo == 40.0);
        CHECK(c.ref_index == 0);
        CHECK(c.hi_scale == 0.5);
    }

    const auto scf = DesignSpace::scf();
    CHECK(scf.size() == 18);
    CHECK(scf.response_dim() == 3);
    CHECK(std::get<Continuous>(scf.param(0).kind).lo == 150.0);
    CHECK(std::get<Continuous>(scf.param(0).kind).hi == 350.0);
    for (std::size_t i = 2; i < 18; ++i) CHECK(std::holds_alternative<ConditionalContinuous>(scf.param(i).kind));
}

TEST_CASE("space construction rejects broken parameter specs") {
    CHECK_THROWS_AS(DesignSpace("x", {{"a", Continuous{1.0, 1.0, ""}}}, 1), ConfigError);
    CHECK_THROWS_AS(DesignSpace("x", {{"a", Categorical{{"only"}}}}, 1), ConfigError);
    CHECK_THROWS_AS(DesignSpace("x", {{"a", Categorical{{"p", "p"}}}}, 1), ConfigError);
    CHECK_THROWS_AS(DesignSpace("x", {{"a", Continuous{0, 1, ""}}, {"a", Continuous{0, 1, ""}}}, 1), ConfigError);
    // reference must be declared earlier
    CHECK_THROWS_AS(DesignSpace("x", {{"r", ConditionalContinuous{1, "c", 0.5}}, {"c", Continuous{10, 20, ""}}}, 1),
                    ConfigError);
    // empty interval: 40 >= 0.5 * 60
    CHECK_THROWS_AS(DesignSpace("x", {{"c", Continuous{60, 100, ""}}, {"r", ConditionalContinuous{40, "c", 0.5}}}, 1),
                    ConfigError);
    CHECK_THROWS_AS(DesignSpace("x", {}, 0), ConfigError);
}

TEST_CASE("validate") {
    SUBCASE("interior MOTF point") { CHECK(validate(DesignSpace::motf(), motf_point("SiO2", 0.5)).ok()); }
    SUBCASE("conditional bound is enforced against the point's own cell size") {
        const auto r = validate(DesignSpace::tpv(), tpv_point(400.0, 250.0));
        REQUIRE_FALSE(r.ok());
        REQUIRE(r.violations.size() == 1);
        CHECK(r.violations[0].index == 3);
    }
    SUBCASE("lower boundary of the conditional interval is feasible") {
        CHECK(validate(DesignSpace::tpv(), tpv_point(350.0, 40.0)).ok());
        CHECK(validate(DesignSpace::tpv(), tpv_point(350.0, 175.0)).ok());
    }
    SUBCASE("each violated coordinate is reported") {
        auto p = motf_point("Gold", 1.5);
        const auto r = validate(DesignSpace::motf(), p);
        CHECK(r.violations.size() == 20);
    }
    SUBCASE("length mismatch is a structural error") {
        DesignPoint p;
        p.values = {1.0, 2.0};
        CHECK_THROWS_AS(validate(DesignSpace::tpv(), p), StructuralError);
    }
}

TEST_CASE("sample_uniform is deterministic and always feasible") {
    for (const auto& space : {DesignSpace::motf(), DesignSpace::tpv(), DesignSpace::scf()}) {
        Rng a(7);
        Rng b(7);
        CHECK(sample_uniform(space, a) == sample_uniform(space, b));
        Rng rng(123);
        int bad = 0;
        for (int i = 0; i < 10000; ++i) bad += validate(space, sample_uniform(space, rng)).ok() ? 0 : 1;
        CHECK(bad == 0);
    }
}

TEST_CASE("material frequencies per layer are uniform") {
    const auto space = DesignSpace::motf();
    Rng rng(2024);
    const int n = 100000;
    std::vector<std::array<int, 7>> counts(10, std::array<int, 7>{});
    for (int s = 0; s < n; ++s) {
        const auto p = sample_uniform(space, rng);
        for (std::size_t l = 0; l < 10; ++l) ++counts[l][space.choice_index(p, l)];
    }
    // chi-square critical value for 6 dof at p = 0.01 is 16.81
    for (const auto& layer : counts) {
        double chi2 = 0.0;
        for (const int c : layer) {
            const double freq = static_cast<double>(c) / n;
            CHECK(std::abs(freq - 1.0 / 7.0) <= 0.01);
            const double e = n / 7.0;
            chi2 += (c - e) * (c - e) / e;
        }
        CHECK(chi2 < 16.81);
    }
}

TEST_CASE("conditional radii are uniform within their per-point interval") {
    const auto space = DesignSpace::tpv();
    Rng rng(99);
    std::array<std::vector<double>, 3> buckets;
    for (int s = 0; s < 100000; ++s) {
        const auto p = sample_uniform(space, rng);
        const double cell = p.number(0);
        const double rel = (p.number(3) - 40.0) / (cell / 2.0 - 40.0);
        buckets[std::min<std::size_t>(2, static_cast<std::size_t>((cell - 350.0) / 50.0))].push_back(rel);
    }
    for (const auto& b : buckets) {
        REQUIRE(b.size() > 1000);
        // KS critical value at alpha = 0.01 is 1.628 / sqrt(n)
        CHECK(ks_uniform(b) < 1.628 / std::sqrt(static_cast<double>(b.size())));
    }
}

TEST_CASE("normalize / denormalize") {
    SUBCASE("continuous midpoint") {
        const auto space = DesignSpace::tpv();
        const auto p = tpv_point(425.0, 100.0);
        const auto u = normalize(space, p);
        CHECK(u[0] == doctest::Approx(0.5).epsilon(1e-15));
        CHECK(denormalize(space, u).point.number(0) == doctest::Approx(425.0).epsilon(1e-15));
    }
    SUBCASE("categorical index maps to index / choices and back") {
        const auto space = DesignSpace::motf();
        auto p = motf_point("ZnO", 0.1);
        p.values[0] = std::string("MgF2");
        const auto u = normalize(space, p);
        CHECK(u[0] == 3.0 / 7.0);
        CHECK(denormalize(space, u).point.label(0) == "MgF2");
    }
    SUBCASE("conditional coordinate uses the per-point affine map") {
        // cell 500 -> radius interval [40, 250]; u = 8/9 sits at 40 + 210 * 8/9
        const auto space = DesignSpace::tpv();
        const double r = 40.0 + 210.0 * 8.0 / 9.0;
        const auto p = tpv_point(500.0, r);
        const auto u = normalize(space, p);
        CHECK(std::abs(u[3] - 8.0 / 9.0) <= 1e-15);
        CHECK(std::abs(denormalize(space, u).point.number(3) - r) <= 1e-12);
    }
    SUBCASE("round trip on random points of every space") {
        for (const auto& space : {DesignSpace::motf(), DesignSpace::tpv(), DesignSpace::scf()}) {
            Rng rng(5);
            for (int i = 0; i < 2000; ++i) {
                const auto p = sample_uniform(space, rng);
                const auto back = denormalize(space, normalize(space, p));
                CHECK_FALSE(back.clamped);
                for (std::size_t k = 0; k < space.size(); ++k) {
                    if (space.param(k).is_categorical()) {
                        CHECK(back.point.label(k) == p.label(k));
                    } else {
                        CHECK(std::abs(back.point.number(k) - p.number(k)) <= 1e-12 * std::max(1.0, std::abs(p.number(k))));
                    }
                }
            }
        }
    }
    SUBCASE("out-of-range coordinates are clamped and flagged") {
        const auto space = DesignSpace::tpv();
        std::vector<double> u(space.size(), 0.5);
        u[1] = 1.7;
        u[4] = -0.2;
        const auto d = denormalize(space, u);
        CHECK(d.clamped);
        CHECK(d.point.number(1) == 130.0);
        CHECK(d.point.number(4) == 40.0);
        CHECK(validate(space, d.point).ok());
    }
}

TEST_CASE("one-hot encoding") {
    const auto space = DesignSpace::motf();
    Rng rng(11);
    const auto p = sample_uniform(space, rng);
    const auto e = encode_onehot(space, p);
    REQUIRE(e.size() == 80);
    CHECK(std::accumulate(e.begin(), e.begin() + 70, 0.0) == 10.0);
    for (std::size_t l = 0; l < 10; ++l) {
        CHECK(e[l * 7 + space.choice_index(p, l)] == 1.0);
    }
    for (std::size_t i = 70; i < 80; ++i) CHECK(e[i] == p.number(10 + (i - 70)));

    auto first = motf_point("ZnO", 0.3);
    const auto ef = encode_onehot(space, first);
    CHECK(ef[0] == 1.0);
    for (int i = 1; i < 7; ++i) CHECK(ef[static_cast<std::size_t>(i)] == 0.0);

    const auto tpv = DesignSpace::tpv();
    Rng r2(3);
    const auto et = encode_onehot(tpv, sample_uniform(tpv, r2));
    CHECK(et.size() == 19);
    for (const double v : et) CHECK((v >= 0.0 && v <= 1.0));

    CHECK(decode_onehot(space, e) == p);
}

TEST_CASE("mse_loss is the plain sum of squares") {
    const std::vector<double> z{0, 0, 0};
    const std::vector<double> t{1, 2, 2};
    CHECK(mse_loss(z, t) == 9.0);
    CHECK(mse_loss(t, t) == 0.0);
    CHECK(mse_loss(t, z) == mse_loss(z, t));
    CHECK_THROWS_AS(mse_loss(z, std::vector<double>{1.0}), StructuralError);

    Rng rng(1);
    std::vector<double> a(2001);
    std::vector<double> b(2001);
    for (auto& v : a) v = uniform01(rng);
    for (auto& v : b) v = uniform01(rng);
    long double ref = 0.0L;
    for (std::size_t i = 0; i < a.size(); ++i) ref += static_cast<long double>(b[i] - a[i]) * (b[i] - a[i]);
    CHECK(std::abs(mse_loss(a, b) - static_cast<double>(ref)) <= 1e-12);
    CHECK(mse_loss(a, b) > 0.0);
}

TEST_CASE("problem cards round-trip") {
    for (const auto& space : {DesignSpace::motf(), DesignSpace::tpv(), DesignSpace::scf()}) {
        const auto card = space.to_card();
        const auto back = DesignSpace::from_card(card);
        CHECK(back.to_card() == card);
        CHECK(back.size() == space.size());
        CHECK(back.response_dim() == space.response_dim());
        for (std::size_t i = 0; i < space.size(); ++i) CHECK(back.param(i).name == space.param(i).name);
    }
    CHECK_THROWS_AS(DesignSpace::from_card("name = x\nresponse_dim = 2\nparam a wobbly 1 2\n"), ConfigError);
}
