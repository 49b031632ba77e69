#include <chrono>
#include <cmath>
#include <filesystem>
#include <set>
#include <sstream>

#include <unistd.h>

#include <fmt/format.h>

#include "doctest.h"
#include "idkit/error.hpp"
#include "idkit/eval_engine.hpp"
#include "idkit/tmm.hpp"

using namespace idkit;

namespace {

std::vector<DesignPoint> sample(const DesignSpace& space, std::size_t n, std::uint64_t seed) {
    Rng rng(seed);
    std::vector<DesignPoint> pts;
    for (std::size_t i = 0; i < n; ++i) pts.push_back(sample_uniform(space, rng));
    return pts;
}

SimulatorBinding echo(std::string flags = "", std::size_t workers = 1) {
    SimulatorBinding b;
    b.kind = SimulatorKind::external_adapter;
    b.adapter_cmd = fmt::format("'{}' echo-adapter {}", IDKIT_CLI, flags);
    b.workers = workers;
    b.cache = false;
    b.timeout_s = 10.0;
    return b;
}

SimulatorBinding synthetic(std::size_t workers = 1, double sleep_ms = 0.0) {
    SimulatorBinding b;
    b.kind = SimulatorKind::internal_synthetic;
    b.workers = workers;
    b.sleep_ms = sleep_ms;
    return b;
}

std::filesystem::path scratch(const std::string& name) {
    auto p = std::filesystem::temp_directory_path() / fmt::format("idkit_eval_{}_{}", ::getpid(), name);
    std::filesystem::remove_all(p);
    return p;
}

// echo answer: numeric coordinates, categoricals by index, zero padded
Response echo_expected(const DesignSpace& space, const DesignPoint& p) {
    Response y(space.response_dim(), 0.0);
    for (std::size_t i = 0; i < std::min(y.size(), p.size()); ++i)
        y[i] = space.param(i).is_categorical() ? static_cast<double>(space.choice_index(p, i)) : p.number(i);
    return y;
}

std::size_t first_continuous(const DesignSpace& space) {
    for (std::size_t i = 0; i < space.size(); ++i)
        if (!space.param(i).is_categorical()) return i;
    return space.size();
}

}  // namespace

TEST_CASE("cache key quantizes normalized coordinates") {
    const auto space = DesignSpace::motf();
    auto p = sample(space, 1, 3)[0];
    const auto i = first_continuous(space);
    const auto base = make_cache_key(space, p);

    auto q = p;
    q.values[i] = p.number(i) + 1e-12;
    CHECK(make_cache_key(space, q) == base);
    CHECK(make_cache_key(space, q).digest() == base.digest());

    q.values[i] = p.number(i) + 1e-6;
    CHECK_FALSE(make_cache_key(space, q) == base);
    CHECK(make_cache_key(space, q).digest() != base.digest());

    // categoricals by index, problem name included
    CHECK(base.text().rfind("motf|", 0) == 0);
    CHECK(base.coords.size() == space.size());
}

TEST_CASE("duplicates inside one batch simulate once") {
    const auto space = DesignSpace::tpv();
    EvalEngine engine(space, synthetic());
    const auto p = sample(space, 1, 5)[0];
    const std::vector<DesignPoint> batch = {p, p, p};
    const auto out = engine.evaluate_batch(batch);
    REQUIRE(out.size() == 3);
    CHECK_FALSE(out[0].cache_hit);
    CHECK(out[1].cache_hit);
    CHECK(out[2].cache_hit);
    CHECK(*out[1].record.y == *out[0].record.y);
    CHECK(engine.stats().simulations == 1);
    CHECK(engine.stats().cache_hits == 2);

    const auto again = engine.evaluate_batch(batch);
    CHECK(again[0].cache_hit);
    CHECK(engine.stats().simulations == 1);
}

TEST_CASE("cached responses equal fresh simulations and persist") {
    const auto space = DesignSpace::motf();
    const auto pts = sample(space, 12, 8);
    const auto file = scratch("cache") / "cache.jsonl";

    SimulatorBinding b;
    b.cache_file = file;
    std::vector<EvalOutcome> first;
    {
        EvalEngine engine(space, b);
        first = engine.evaluate_batch(pts);
        CHECK(engine.cache_size() == pts.size());
    }
    REQUIRE(std::filesystem::exists(file));

    EvalEngine reopened(space, b);
    CHECK(reopened.cache_size() == pts.size());
    const auto cached = reopened.evaluate_batch(pts);
    CHECK(reopened.stats().simulations == 0);

    SimulatorBinding nocache;
    nocache.cache = false;
    EvalEngine fresh(space, nocache);
    const auto recomputed = fresh.evaluate_batch(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        CHECK(cached[i].cache_hit);
        CHECK(*cached[i].record.y == *first[i].record.y);
        CHECK(*recomputed[i].record.y == *first[i].record.y);
    }
    std::filesystem::remove_all(file.parent_path());
}

TEST_CASE("worker count does not change results or order") {
    const auto space = DesignSpace::motf();
    const auto pts = sample(space, 24, 13);
    const tmm::MotfSimulator sim;
    SimulatorBinding one;
    one.cache = false;
    auto many = one;
    many.workers = 8;
    EvalEngine a(space, one), b(space, many);
    const auto ra = a.evaluate_batch(pts, {}, 40);
    const auto rb = b.evaluate_batch(pts, {}, 40);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(ra[i].ok());
        REQUIRE(rb[i].ok());
        CHECK(rb[i].record.x == pts[i]);
        CHECK(rb[i].record.trial == 40 + i);
        CHECK(*ra[i].record.y == *rb[i].record.y);
        CHECK(*rb[i].record.y == sim.forward(pts[i], tmm::Exec::serial));
    }
}

TEST_CASE("loss is scored against the target") {
    const auto space = DesignSpace::scf();
    EvalEngine engine(space, synthetic());
    const auto pts = sample(space, 4, 2);
    const std::vector<double> target = {0.2, 0.5, 0.7};
    const auto out = engine.evaluate_batch(pts, target);
    for (const auto& o : out) CHECK(o.record.loss == doctest::Approx(mse_loss(*o.record.y, target)).epsilon(1e-15));
    for (const auto& o : engine.evaluate_batch(pts)) CHECK(o.record.loss == 0.0);
    CHECK_THROWS_AS(engine.evaluate_batch(pts, std::vector<double>{1.0}), StructuralError);
}

TEST_CASE("synthetic simulator is deterministic and bounded") {
    for (const auto& space : {DesignSpace::tpv(), DesignSpace::scf()}) {
        for (const auto& p : sample(space, 20, 21)) {
            const auto y = synthetic_forward(space, p);
            CHECK(y.size() == space.response_dim());
            CHECK(y == synthetic_forward(space, p));
            for (const double v : y) {
                CHECK(v >= 0.0);
                CHECK(v <= 1.0);
            }
        }
    }
    CHECK_THROWS_AS(EvalEngine(DesignSpace::motf(), synthetic()), ConfigError);
    SimulatorBinding motf;
    CHECK_THROWS_AS(EvalEngine(DesignSpace::tpv(), motf), ConfigError);
}

TEST_CASE("sleeping simulations scale with workers") {
    const auto space = DesignSpace::scf();
    const auto pts = sample(space, 100, 4);
    const auto wall = [&](std::size_t workers) {
        auto b = synthetic(workers, 20.0);
        b.cache = false;
        EvalEngine engine(space, b);
        const auto t0 = std::chrono::steady_clock::now();
        const auto out = engine.evaluate_batch(pts);
        for (const auto& o : out) REQUIRE(o.ok());
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    };
    const double serial = wall(1);
    const double parallel = wall(16);
    MESSAGE(fmt::format("1 worker {:.3f}s, 16 workers {:.3f}s", serial, parallel));
    CHECK(serial / parallel >= 4.0);
}

TEST_CASE("binding checks") {
    SimulatorBinding b;
    b.workers = 0;
    CHECK_THROWS_AS(b.check(), ConfigError);
    b = echo();
    b.adapter_cmd.clear();
    CHECK_THROWS_AS(b.check(), ConfigError);
    CHECK(parse_simulator_kind("external-adapter") == SimulatorKind::external_adapter);
    CHECK(to_string(SimulatorKind::internal_synthetic) == "internal-synthetic");
    CHECK_THROWS_AS(parse_simulator_kind("matlab"), ConfigError);
}

TEST_CASE("adapter response parsing") {
    CHECK(parse_adapter_response(R"({"id": 4, "y": [1, 2.5]})", 4, 2) == Response{1.0, 2.5});
    const auto kind = [](std::string_view line, std::size_t dim = 2) {
        try {
            parse_adapter_response(line, 4, dim);
        } catch (const AdapterFailure& f) {
            return f.kind();
        }
        return Failure::none;
    };
    CHECK(kind("not json") == Failure::parse);
    CHECK(kind(R"({"y": [1, 2]})") == Failure::parse);
    CHECK(kind(R"({"id": 5, "y": [1, 2]})") == Failure::id_mismatch);
    CHECK(kind(R"({"id": 4, "error": "boom"})") == Failure::adapter_error);
    CHECK(kind(R"({"id": 4, "y": [1]})") == Failure::parse);
    CHECK(kind(R"({"id": 4, "y": [1, "a"]})") == Failure::parse);
    try {
        parse_adapter_response("<<garbage>>", 1, 1);
        FAIL("no throw");
    } catch (const AdapterFailure& f) {
        CHECK(std::string(f.what()).find("<<garbage>>") != std::string::npos);
    }
}

TEST_CASE("echo adapter in process") {
    const auto space = DesignSpace::scf();
    const auto p = sample(space, 1, 1)[0];
    std::istringstream in(adapter_request(9, space, p) + "\n");
    std::ostringstream out;
    CHECK(run_echo_adapter(in, out, {}) == 0);
    CHECK(parse_adapter_response(out.str(), 9, 3) == echo_expected(space, p));
}

TEST_CASE("external adapter round trip is exact") {
    const auto space = DesignSpace::tpv();
    const auto pts = sample(space, 5, 17);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        const auto r = adapter_roundtrip(echo(), space, pts[i], 100 + i);
        CHECK(r.trial == 100 + i);
        CHECK(*r.y == echo_expected(space, pts[i]));
    }
}

TEST_CASE("thousand adapter requests without errors") {
    const auto space = DesignSpace::motf();
    const auto pts = sample(space, 1000, 23);
    EvalEngine engine(space, echo("", 4));
    const auto out = engine.evaluate_batch(pts);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (out[i].ok() && *out[i].record.y == echo_expected(space, pts[i])) ++ok;
    }
    CHECK(ok == pts.size());
    CHECK(engine.stats().failures == 0);
    CHECK(engine.stats().process_restarts == 0);
}

TEST_CASE("adapter faults are classified") {
    const auto space = DesignSpace::scf();
    const auto pts = sample(space, 3, 6);
    const auto classify = [&](const std::string& flags, double timeout) {
        auto b = echo(flags);
        b.timeout_s = timeout;
        EvalEngine engine(space, b);
        return engine.evaluate_batch(pts);
    };
    for (const auto& o : classify("--bad-id", 10.0)) CHECK(o.failure == Failure::id_mismatch);
    for (const auto& o : classify("--error", 10.0)) {
        CHECK(o.failure == Failure::adapter_error);
        CHECK(o.error.find("requested failure") != std::string::npos);
    }
    const auto garbage = classify("--garbage", 10.0);
    for (const auto& o : garbage) {
        CHECK(o.failure == Failure::parse);
        CHECK(o.error.find("this is not json") != std::string::npos);
        CHECK_FALSE(o.record.y.has_value());
        CHECK(std::isnan(o.record.loss));
    }
    const auto t0 = std::chrono::steady_clock::now();
    const auto hung = classify("--hang", 0.3);
    const double took = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    for (const auto& o : hung) CHECK(o.failure == Failure::timeout);
    CHECK(took < 5.0);
}

TEST_CASE("dead adapters are respawned and jobs retried") {
    const auto space = DesignSpace::tpv();
    const auto pts = sample(space, 40, 31);
    EvalEngine engine(space, echo("--die-after 7", 2));
    const auto out = engine.evaluate_batch(pts);
    for (std::size_t i = 0; i < pts.size(); ++i) {
        REQUIRE(out[i].ok());
        CHECK(*out[i].record.y == echo_expected(space, pts[i]));
    }
    CHECK(engine.stats().process_restarts > 0);
    CHECK(engine.stats().simulations == pts.size());

    EvalEngine doomed(space, echo("--die-after 0"));
    for (const auto& o : doomed.evaluate_batch(std::span(pts).first(3))) {
        CHECK(o.failure == Failure::exited);
        CHECK(o.attempts == doomed.binding().max_attempts);
    }
}

TEST_CASE("adapter sees its worker id") {
    const auto space = DesignSpace::scf();
    SimulatorBinding b = echo();
    b.workers = 3;
    b.adapter_cmd =
        R"(while read -r l; do id=$(printf '%s' "$l" | sed 's/^{"id":\([0-9]*\).*/\1/'); )"
        R"(printf '{"id":%s,"y":[%s,0,0]}\n' "$id" "$IDKIT_WORKER_ID"; done)";
    EvalEngine engine(space, b);
    const auto out = engine.evaluate_batch(sample(space, 30, 2));
    std::set<double> seen;
    for (const auto& o : out) {
        REQUIRE(o.ok());
        seen.insert((*o.record.y)[0]);
    }
    CHECK(!seen.empty());
    for (const double w : seen) {
        CHECK(w >= 0.0);
        CHECK(w <= 2.0);
    }
}
