#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <mutex>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "idkit/design_space.hpp"
#include "idkit/records.hpp"

namespace idkit {

namespace tmm {
class MotfSimulator;
}

enum class SimulatorKind { internal_motf, internal_synthetic, external_adapter };

SimulatorKind parse_simulator_kind(std::string_view name);  // "internal-motf" | "internal-synthetic" | "external-adapter"
std::string to_string(SimulatorKind kind);

struct SimulatorBinding {
    SimulatorKind kind = SimulatorKind::internal_motf;
    std::size_t workers = 1;
    bool cache = true;
    std::string adapter_cmd;          // run through /bin/sh -c
    double timeout_s = 60.0;          // per adapter request
    double sleep_ms = 0.0;            // synthetic only: emulated simulator latency
    std::size_t max_attempts = 2;     // per point, when an adapter process dies
    std::filesystem::path cache_file;    // append-only JSONL; empty keeps the cache in memory
    std::filesystem::path geometry_dir;  // TPV/SCF PGM payloads for the adapter; empty sends none

    void check() const;
};

// Continuous coordinates are normalized and rounded to multiples of 1e-9;
// categoricals enter by index. The digest is FNV-1a over the text form.
struct CacheKey {
    std::string problem;
    std::vector<std::int64_t> coords;

    std::string text() const;
    std::string digest() const;
    bool operator==(const CacheKey&) const = default;
};

CacheKey make_cache_key(const DesignSpace& space, const DesignPoint& point);

enum class Failure { none, timeout, exited, parse, id_mismatch, adapter_error, simulator };
std::string to_string(Failure f);

struct EvalOutcome {
    EvalRecord record;  // y empty and loss NaN when failed
    Failure failure = Failure::none;
    std::string error;
    bool cache_hit = false;
    std::size_t attempts = 0;

    bool ok() const { return failure == Failure::none; }
};

// Non-physical stand-in for TPV/SCF: a smooth deterministic function of the
// moments of the rasterized supercell. Only for offline pipeline testing.
Response synthetic_forward(const DesignSpace& space, const DesignPoint& point);

// Thrown by adapter I/O; carries the failure class.
class AdapterFailure : public std::runtime_error {
public:
    AdapterFailure(Failure kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Failure kind() const { return kind_; }

private:
    Failure kind_;
};

// One child process speaking the line protocol on its standard streams.
class AdapterProcess {
public:
    AdapterProcess(const std::string& cmd, std::size_t worker_id);
    ~AdapterProcess();
    AdapterProcess(const AdapterProcess&) = delete;
    AdapterProcess& operator=(const AdapterProcess&) = delete;

    // Writes one line and reads one line back. Throws AdapterFailure on
    // timeout (the child is killed) or EOF.
    std::string exchange(const std::string& line, double timeout_s);
    bool alive() const { return pid_ > 0; }
    void kill();

private:
    void reap();

    int pid_ = -1;
    int to_child_ = -1;
    int from_child_ = -1;
    std::string buffer_;
};

std::string adapter_request(std::uint64_t id, const DesignSpace& space, const DesignPoint& point,
                            const std::filesystem::path& geometry = {});
// Parses a response line; throws AdapterFailure (parse, id_mismatch,
// adapter_error) with the raw line in the message.
Response parse_adapter_response(std::string_view line, std::uint64_t expected_id, std::size_t response_dim);

// Single request against a freshly launched adapter.
EvalRecord adapter_roundtrip(const SimulatorBinding& binding, const DesignSpace& space, const DesignPoint& point,
                             std::uint64_t id = 0);

class EvalEngine {
public:
    struct Stats {
        std::size_t simulations = 0;
        std::size_t cache_hits = 0;
        std::size_t failures = 0;
        std::size_t process_restarts = 0;
    };

    EvalEngine(DesignSpace space, SimulatorBinding binding);
    ~EvalEngine();
    EvalEngine(const EvalEngine&) = delete;
    EvalEngine& operator=(const EvalEngine&) = delete;

    // Results come back in input order. Loss is mse_loss against `target`,
    // or 0 when no target is given. Trials are numbered from first_trial.
    std::vector<EvalOutcome> evaluate_batch(std::span<const DesignPoint> points, std::span<const double> target = {},
                                            std::uint64_t first_trial = 0);

    const DesignSpace& space() const { return space_; }
    const SimulatorBinding& binding() const { return binding_; }
    Stats stats() const;
    std::size_t cache_size() const;

private:
    struct Job;
    Response simulate(const DesignPoint& point, std::size_t worker, std::uint64_t id, bool single_worker);
    void run_internal(std::vector<Job>& jobs, std::span<const DesignPoint> points);
    void run_external(std::vector<Job>& jobs, std::span<const DesignPoint> points);
    void load_cache();
    void store(const std::string& digest, const Response& y);

    DesignSpace space_;
    SimulatorBinding binding_;
    std::unique_ptr<const tmm::MotfSimulator> motf_;
    std::vector<std::unique_ptr<AdapterProcess>> processes_;
    mutable std::mutex mutex_;
    std::unordered_map<std::string, Response> cache_;
    Stats stats_;
};

// The bundled test adapter: y = numeric value of the first response_dim
// coordinates of x (categoricals by choice index), zero padded.
struct EchoOptions {
    std::size_t dim = 0;        // 0: response_dim of the requested problem
    long die_after = -1;        // answer this many requests, then exit(3) on the next
    bool bad_id = false;        // answer with id + 1
    bool garbage = false;       // answer with a non-JSON line
    bool hang = false;          // never answer
    bool report_error = false;  // answer with {"id", "error"}
};
int run_echo_adapter(std::istream& in, std::ostream& out, const EchoOptions& opts);

}  // namespace idkit
