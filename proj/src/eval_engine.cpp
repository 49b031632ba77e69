#include "idkit/eval_engine.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <csignal>
#include <cstring>
#include <fstream>
#include <istream>
#include <numbers>
#include <ostream>
#include <thread>

#include <fmt/format.h>

#include "idkit/error.hpp"
#include "idkit/shape.hpp"
#include "idkit/tmm.hpp"

extern char** environ;

namespace idkit {

namespace {

constexpr double kQuantum = 1e-9;
constexpr std::size_t kSyntheticResolution = 128;

void ignore_sigpipe() {
    static const bool once = [] {
        std::signal(SIGPIPE, SIG_IGN);
        return true;
    }();
    (void)once;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string describe_status(int status) {
    if (WIFEXITED(status)) return fmt::format("exit status {}", WEXITSTATUS(status));
    if (WIFSIGNALED(status)) return fmt::format("killed by signal {}", WTERMSIG(status));
    return "unknown status";
}

std::string clip(std::string_view s) {
    constexpr std::size_t kMax = 400;
    return s.size() <= kMax ? std::string(s) : std::string(s.substr(0, kMax)) + "...";
}

double logistic(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

SimulatorKind parse_simulator_kind(std::string_view name) {
    if (name == "internal-motf") return SimulatorKind::internal_motf;
    if (name == "internal-synthetic") return SimulatorKind::internal_synthetic;
    if (name == "external-adapter") return SimulatorKind::external_adapter;
    throw ConfigError("unknown simulator kind: " + std::string(name));
}

std::string to_string(SimulatorKind kind) {
    switch (kind) {
        case SimulatorKind::internal_motf: return "internal-motf";
        case SimulatorKind::internal_synthetic: return "internal-synthetic";
        case SimulatorKind::external_adapter: return "external-adapter";
    }
    return "?";
}

std::string to_string(Failure f) {
    switch (f) {
        case Failure::none: return "none";
        case Failure::timeout: return "timeout";
        case Failure::exited: return "exited";
        case Failure::parse: return "parse";
        case Failure::id_mismatch: return "id-mismatch";
        case Failure::adapter_error: return "adapter-error";
        case Failure::simulator: return "simulator";
    }
    return "?";
}

void SimulatorBinding::check() const {
    if (workers == 0) throw ConfigError("workers must be at least 1");
    const bool external = kind == SimulatorKind::external_adapter;
    if (external && adapter_cmd.empty()) throw ConfigError("external-adapter needs an adapter command");
    if (!external && !adapter_cmd.empty()) throw ConfigError("adapter command given for an internal simulator");
    if (!(timeout_s > 0.0)) throw ConfigError("timeout must be positive");
    if (!(sleep_ms >= 0.0)) throw ConfigError("sleep must be non-negative");
    if (max_attempts == 0) throw ConfigError("max attempts must be at least 1");
}

std::string CacheKey::text() const {
    std::string s = problem;
    for (const auto c : coords) s += fmt::format("|{}", c);
    return s;
}

std::string CacheKey::digest() const { return fnv1a_hex(text()); }

CacheKey make_cache_key(const DesignSpace& space, const DesignPoint& point) {
    CacheKey key;
    key.problem = space.name();
    const auto u = normalize(space, point);
    for (std::size_t i = 0; i < space.size(); ++i) {
        if (space.param(i).is_categorical()) {
            key.coords.push_back(static_cast<std::int64_t>(space.choice_index(point, i)));
        } else {
            key.coords.push_back(std::llround(u[i] / kQuantum));
        }
    }
    return key;
}

Response synthetic_forward(const DesignSpace& space, const DesignPoint& point) {
    const auto layout = shape::layout_for(space, point, kSyntheticResolution);
    const auto& g = layout.grid;
    const double n = static_cast<double>(g.size);
    const double half = n / 2.0;
    double fill = 0.0, radial = 0.0, cross = 0.0;
    for (std::size_t r = 0; r < g.size; ++r) {
        for (std::size_t c = 0; c < g.size; ++c) {
            if (!g.at(r, c)) continue;
            const double y = (half - static_cast<double>(r) - 0.5) / half;
            const double x = (static_cast<double>(c) + 0.5 - half) / half;
            fill += 1.0;
            radial += x * x + y * y;
            cross += x * y;
        }
    }
    fill /= n * n;
    radial /= n * n;
    cross /= n * n;
    std::array<double, 4> block{};
    for (std::size_t k = 0; k < 4; ++k) {
        const auto& s = layout.subcells[k];
        block[k] = static_cast<double>(s.count()) / static_cast<double>(s.size * s.size);
    }
    const auto u = normalize(space, point);
    // features: fill, radial and cross moments, block fills, then the two
    // non-radius coordinates
    const std::array<double, 9> phi = {fill, radial, cross, block[0], block[1], block[2], block[3], u[0], u[1]};

    Response y(space.response_dim());
    if (space.name() == "scf") {
        static constexpr std::array<std::array<double, 9>, 3> w = {{
            {2.0, -1.5, 0.8, 0.6, -0.4, 0.3, -0.2, 1.2, -0.9},
            {-1.0, 2.5, -0.6, -0.3, 0.7, -0.5, 0.4, -0.8, 1.4},
            {1.5, 0.5, 1.1, 0.2, 0.2, -0.6, -0.6, 0.9, 0.7},
        }};
        for (std::size_t c = 0; c < 3; ++c) {
            double s = -0.5;
            for (std::size_t m = 0; m < phi.size(); ++m) s += w[c][m] * phi[m];
            y[c] = logistic(s);
        }
        return y;
    }
    const double extra = space.size() > 2 ? u[2] : 0.0;
    const double centre = 0.2 + 0.6 * (0.5 * phi[7] + 0.5 * fill);
    const double width = 0.05 + 0.2 * radial + 0.05 * extra;
    for (std::size_t j = 0; j < y.size(); ++j) {
        const double t = static_cast<double>(j) / static_cast<double>(std::max<std::size_t>(1, y.size() - 1));
        double ripple = 0.0;
        for (std::size_t m = 0; m < phi.size(); ++m)
            ripple += 0.05 * phi[m] * std::cos(std::numbers::pi * static_cast<double>(m + 1) * t);
        y[j] = std::clamp(0.9 * std::exp(-std::pow((t - centre) / width, 2)) + ripple + 0.05 * phi[8], 0.0, 1.0);
    }
    return y;
}

AdapterProcess::AdapterProcess(const std::string& cmd, std::size_t worker_id) {
    ignore_sigpipe();
    int in_pipe[2], out_pipe[2];
    if (pipe2(in_pipe, O_CLOEXEC) != 0) throw std::runtime_error("pipe failed");
    if (pipe2(out_pipe, O_CLOEXEC) != 0) {
        close(in_pipe[0]);
        close(in_pipe[1]);
        throw std::runtime_error("pipe failed");
    }
    // environment is built before fork; only async-signal-safe calls after it
    std::vector<std::string> env_store;
    for (char** e = environ; *e; ++e) {
        if (std::strncmp(*e, "IDKIT_WORKER_ID=", 16) != 0) env_store.emplace_back(*e);
    }
    env_store.push_back(fmt::format("IDKIT_WORKER_ID={}", worker_id));
    std::vector<char*> envp;
    for (auto& s : env_store) envp.push_back(s.data());
    envp.push_back(nullptr);
    const char* argv[] = {"sh", "-c", cmd.c_str(), nullptr};

    const pid_t pid = fork();
    if (pid < 0) {
        for (int fd : {in_pipe[0], in_pipe[1], out_pipe[0], out_pipe[1]}) close(fd);
        throw std::runtime_error("fork failed");
    }
    if (pid == 0) {
        setpgid(0, 0);  // own group, so a kill also reaches whatever sh spawned
        dup2(in_pipe[0], STDIN_FILENO);
        dup2(out_pipe[1], STDOUT_FILENO);
        execve("/bin/sh", const_cast<char* const*>(argv), envp.data());
        _exit(127);
    }
    setpgid(pid, pid);
    close(in_pipe[0]);
    close(out_pipe[1]);
    pid_ = pid;
    to_child_ = in_pipe[1];
    from_child_ = out_pipe[0];
}

AdapterProcess::~AdapterProcess() {
    if (pid_ <= 0) return;
    close(to_child_);
    to_child_ = -1;
    for (int i = 0; i < 50; ++i) {
        int status;
        if (waitpid(pid_, &status, WNOHANG) == pid_) {
            close(from_child_);
            pid_ = -1;
            return;
        }
        std::this_thread::sleep_for(std::chrono::milliseconds(4));
    }
    kill();
}

void AdapterProcess::kill() {
    if (pid_ <= 0) return;
    ::kill(-pid_, SIGKILL);
    reap();
}

void AdapterProcess::reap() {
    if (to_child_ >= 0) close(to_child_);
    if (from_child_ >= 0) close(from_child_);
    to_child_ = from_child_ = -1;
    int status;
    waitpid(pid_, &status, 0);
    pid_ = -1;
}

std::string AdapterProcess::exchange(const std::string& line, double timeout_s) {
    if (pid_ <= 0) throw AdapterFailure(Failure::exited, "adapter process is not running");
    const std::string msg = line + "\n";
    std::size_t sent = 0;
    while (sent < msg.size()) {
        const ssize_t w = write(to_child_, msg.data() + sent, msg.size() - sent);
        if (w < 0) {
            if (errno == EINTR) continue;
            const int pid = pid_;
            reap();
            throw AdapterFailure(Failure::exited, fmt::format("adapter {} closed its input", pid));
        }
        sent += static_cast<std::size_t>(w);
    }
    const auto deadline = std::chrono::steady_clock::now() + std::chrono::duration<double>(timeout_s);
    for (;;) {
        const auto nl = buffer_.find('\n');
        if (nl != std::string::npos) {
            std::string out = buffer_.substr(0, nl);
            buffer_.erase(0, nl + 1);
            return out;
        }
        const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - std::chrono::steady_clock::now());
        if (left.count() <= 0) {
            kill();
            throw AdapterFailure(Failure::timeout, fmt::format("no response within {} s", timeout_s));
        }
        pollfd pfd{from_child_, POLLIN, 0};
        const int ready = poll(&pfd, 1, static_cast<int>(left.count()));
        if (ready < 0 && errno == EINTR) continue;
        if (ready == 0) continue;
        char chunk[65536];
        const ssize_t r = read(from_child_, chunk, sizeof chunk);
        if (r < 0 && errno == EINTR) continue;
        if (r <= 0) {
            close(to_child_);
            close(from_child_);
            to_child_ = from_child_ = -1;
            int status = 0;
            waitpid(pid_, &status, 0);
            pid_ = -1;
            std::string partial = std::move(buffer_);
            buffer_.clear();
            throw AdapterFailure(Failure::exited,
                                 fmt::format("adapter ended before answering ({}){}", describe_status(status),
                                             partial.empty() ? "" : "; partial output: " + clip(partial)));
        }
        buffer_.append(chunk, static_cast<std::size_t>(r));
    }
}

std::string adapter_request(std::uint64_t id, const DesignSpace& space, const DesignPoint& point,
                            const std::filesystem::path& geometry) {
    nlohmann::ordered_json j;
    j["id"] = id;
    j["problem"] = space.name();
    j["x"] = point_to_json(point);
    if (!geometry.empty()) j["geometry"] = geometry.string();
    return j.dump();
}

Response parse_adapter_response(std::string_view line, std::uint64_t expected_id, std::size_t response_dim) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error&) {
        throw AdapterFailure(Failure::parse, "response is not JSON: " + clip(line));
    }
    if (!j.is_object() || !j.contains("id") || !j["id"].is_number_unsigned())
        throw AdapterFailure(Failure::parse, "response lacks an unsigned id: " + clip(line));
    const auto id = j["id"].get<std::uint64_t>();
    if (id != expected_id)
        throw AdapterFailure(Failure::id_mismatch, fmt::format("expected id {}, got {}: {}", expected_id, id, clip(line)));
    if (j.contains("error")) {
        const auto& e = j["error"];
        throw AdapterFailure(Failure::adapter_error, e.is_string() ? e.get<std::string>() : e.dump());
    }
    if (!j.contains("y") || !j["y"].is_array()) throw AdapterFailure(Failure::parse, "response lacks y: " + clip(line));
    const auto& arr = j["y"];
    if (arr.size() != response_dim)
        throw AdapterFailure(Failure::parse, fmt::format("y has {} values, expected {}: {}", arr.size(), response_dim, clip(line)));
    Response y;
    y.reserve(arr.size());
    for (const auto& v : arr) {
        if (!v.is_number()) throw AdapterFailure(Failure::parse, "non-numeric y entry: " + clip(line));
        y.push_back(v.get<double>());
    }
    return y;
}

EvalRecord adapter_roundtrip(const SimulatorBinding& binding, const DesignSpace& space, const DesignPoint& point,
                             std::uint64_t id) {
    binding.check();
    if (binding.kind != SimulatorKind::external_adapter) throw ConfigError("adapter_roundtrip needs an external binding");
    const auto t0 = std::chrono::steady_clock::now();
    AdapterProcess proc(binding.adapter_cmd, 0);
    const auto line = proc.exchange(adapter_request(id, space, point), binding.timeout_s);
    EvalRecord r;
    r.x = point;
    r.trial = id;
    r.y = parse_adapter_response(line, id, space.response_dim());
    r.wall_time = seconds_since(t0);
    return r;
}

struct EvalEngine::Job {
    std::size_t slot = 0;
    std::uint64_t id = 0;
    std::string digest;
    Response y;
    Failure failure = Failure::none;
    std::string error;
    std::size_t attempts = 0;
    double wall = 0.0;
};

EvalEngine::EvalEngine(DesignSpace space, SimulatorBinding binding) : space_(std::move(space)), binding_(std::move(binding)) {
    binding_.check();
    if (binding_.kind == SimulatorKind::internal_motf) {
        if (space_.name() != "motf") throw ConfigError("internal-motf only simulates the motf problem");
        motf_ = std::make_unique<tmm::MotfSimulator>();
    }
    if (binding_.kind == SimulatorKind::internal_synthetic && space_.name() != "tpv" && space_.name() != "scf")
        throw ConfigError("internal-synthetic only covers the tpv and scf problems");
    if (binding_.kind == SimulatorKind::external_adapter) ignore_sigpipe();
    if (binding_.cache) load_cache();
}

EvalEngine::~EvalEngine() = default;

EvalEngine::Stats EvalEngine::stats() const {
    std::lock_guard lock(mutex_);
    return stats_;
}

std::size_t EvalEngine::cache_size() const {
    std::lock_guard lock(mutex_);
    return cache_.size();
}

void EvalEngine::load_cache() {
    if (binding_.cache_file.empty() || !std::filesystem::exists(binding_.cache_file)) return;
    std::ifstream in(binding_.cache_file);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        try {
            const auto j = nlohmann::json::parse(line);
            if (j.at("problem").get<std::string>() != space_.name()) continue;
            cache_[j.at("key").get<std::string>()] = j.at("y").get<Response>();
        } catch (const nlohmann::json::exception& e) {
            throw StructuralError(fmt::format("{}:{}: malformed cache entry ({})", binding_.cache_file.string(), lineno, e.what()));
        }
    }
}

void EvalEngine::store(const std::string& digest, const Response& y) {
    std::lock_guard lock(mutex_);
    if (!cache_.emplace(digest, y).second) return;
    if (binding_.cache_file.empty()) return;
    if (binding_.cache_file.has_parent_path()) std::filesystem::create_directories(binding_.cache_file.parent_path());
    nlohmann::ordered_json j;
    j["key"] = digest;
    j["problem"] = space_.name();
    j["y"] = y;
    std::ofstream out(binding_.cache_file, std::ios::app);
    out << j.dump() << '\n';
}

Response EvalEngine::simulate(const DesignPoint& point, std::size_t, std::uint64_t, bool single_worker) {
    if (binding_.kind == SimulatorKind::internal_motf)
        return motf_->forward(point, single_worker ? tmm::Exec::parallel : tmm::Exec::serial);
    auto y = synthetic_forward(space_, point);
    if (binding_.sleep_ms > 0.0) std::this_thread::sleep_for(std::chrono::duration<double, std::milli>(binding_.sleep_ms));
    return y;
}

void EvalEngine::run_internal(std::vector<Job>& jobs, std::span<const DesignPoint> points) {
    const std::size_t workers = std::min(binding_.workers, jobs.size());
    std::atomic<std::size_t> next{0};
    const auto work = [&](std::size_t w) {
        for (std::size_t k = next++; k < jobs.size(); k = next++) {
            auto& job = jobs[k];
            const auto t0 = std::chrono::steady_clock::now();
            job.attempts = 1;
            try {
                job.y = simulate(points[job.slot], w, job.id, workers == 1);
                for (const double v : job.y) {
                    if (!std::isfinite(v)) throw NumericalError("simulator returned a non-finite value");
                }
            } catch (const std::exception& e) {
                job.failure = Failure::simulator;
                job.error = e.what();
                job.y.clear();
            }
            job.wall = seconds_since(t0);
        }
    };
    if (workers <= 1) {
        work(0);
        return;
    }
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
    for (auto& t : pool) t.join();
}

void EvalEngine::run_external(std::vector<Job>& jobs, std::span<const DesignPoint> points) {
    const std::size_t workers = std::min(binding_.workers, jobs.size());
    while (processes_.size() < binding_.workers) processes_.push_back(nullptr);
    std::atomic<std::size_t> next{0};
    std::atomic<std::size_t> restarts{0};

    const auto work = [&](std::size_t w) {
        auto& proc = processes_[w];
        for (;;) {
            const std::size_t k = next++;
            if (k >= jobs.size()) return;
            auto& job = jobs[k];
            // a job whose process died is retried here, on a fresh process
            for (bool retry = true; retry;) {
                retry = false;
                ++job.attempts;
                const auto t0 = std::chrono::steady_clock::now();
                try {
                    if (!proc || !proc->alive()) {
                        if (proc) ++restarts;
                        proc = std::make_unique<AdapterProcess>(binding_.adapter_cmd, w);
                    }
                    const auto& point = points[job.slot];
                    std::filesystem::path geometry;
                    if (!binding_.geometry_dir.empty() && (space_.name() == "tpv" || space_.name() == "scf")) {
                        geometry = binding_.geometry_dir / (make_cache_key(space_, point).digest() + ".pgm");
                        shape::write_pgm(shape::layout_for(space_, point), space_, geometry);
                    }
                    const auto line = proc->exchange(adapter_request(job.id, space_, point, geometry), binding_.timeout_s);
                    job.y = parse_adapter_response(line, job.id, space_.response_dim());
                    job.failure = Failure::none;
                    job.error.clear();
                } catch (const AdapterFailure& e) {
                    job.failure = e.kind();
                    job.error = e.what();
                    retry = e.kind() == Failure::exited && job.attempts < binding_.max_attempts;
                } catch (const std::exception& e) {
                    job.failure = Failure::simulator;
                    job.error = e.what();
                }
                job.wall += seconds_since(t0);
            }
        }
    };
    if (workers <= 1) {
        work(0);
    } else {
        std::vector<std::thread> pool;
        for (std::size_t w = 0; w < workers; ++w) pool.emplace_back(work, w);
        for (auto& t : pool) t.join();
    }
    std::lock_guard lock(mutex_);
    stats_.process_restarts += restarts;
}

std::vector<EvalOutcome> EvalEngine::evaluate_batch(std::span<const DesignPoint> points, std::span<const double> target,
                                                    std::uint64_t first_trial) {
    if (!target.empty() && target.size() != space_.response_dim())
        throw StructuralError(fmt::format("target has {} values, expected {}", target.size(), space_.response_dim()));
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto v = validate(space_, points[i]);
        if (!v.ok())
            throw StructuralError(fmt::format("point {} is invalid: {} {}", i, v.violations.front().name, v.violations.front().message));
    }

    std::vector<EvalOutcome> out(points.size());
    std::vector<Job> jobs;
    std::vector<std::ptrdiff_t> source(points.size(), -1);  // job index feeding each slot
    std::unordered_map<std::string, std::size_t> first_job;
    for (std::size_t i = 0; i < points.size(); ++i) {
        out[i].record.x = points[i];
        out[i].record.trial = first_trial + i;
        std::string digest;
        if (binding_.cache) {
            digest = make_cache_key(space_, points[i]).digest();
            std::lock_guard lock(mutex_);
            if (const auto it = cache_.find(digest); it != cache_.end()) {
                out[i].record.y = it->second;
                out[i].cache_hit = true;
                continue;
            }
            if (const auto it = first_job.find(digest); it != first_job.end()) {
                source[i] = static_cast<std::ptrdiff_t>(it->second);
                out[i].cache_hit = true;
                continue;
            }
            first_job.emplace(digest, jobs.size());
        }
        source[i] = static_cast<std::ptrdiff_t>(jobs.size());
        Job job;
        job.slot = i;
        job.id = first_trial + i;
        job.digest = std::move(digest);
        jobs.push_back(std::move(job));
    }

    if (!jobs.empty()) {
        if (binding_.kind == SimulatorKind::external_adapter) run_external(jobs, points);
        else run_internal(jobs, points);
    }
    for (const auto& job : jobs) {
        if (binding_.cache && job.failure == Failure::none) store(job.digest, job.y);
    }

    std::size_t hits = 0, failures = 0;
    for (std::size_t i = 0; i < points.size(); ++i) {
        auto& o = out[i];
        if (source[i] >= 0) {
            const auto& job = jobs[static_cast<std::size_t>(source[i])];
            o.failure = job.failure;
            o.error = job.error;
            if (job.slot == i) {
                o.attempts = job.attempts;
                o.record.wall_time = job.wall;
            }
            if (job.failure == Failure::none) o.record.y = job.y;
        }
        if (o.cache_hit && o.ok()) ++hits;
        if (o.ok()) {
            o.record.loss = target.empty() ? 0.0 : mse_loss(*o.record.y, target);
        } else {
            o.record.y.reset();
            o.record.loss = std::numeric_limits<double>::quiet_NaN();
            ++failures;
        }
    }
    std::lock_guard lock(mutex_);
    stats_.simulations += jobs.size();
    stats_.cache_hits += hits;
    stats_.failures += failures;
    return out;
}

int run_echo_adapter(std::istream& in, std::ostream& out, const EchoOptions& opts) {
    std::string line;
    long answered = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (opts.die_after >= 0 && answered >= opts.die_after) std::_Exit(3);
        if (opts.hang) {
            std::this_thread::sleep_for(std::chrono::hours(1));
            return 0;
        }
        nlohmann::json req;
        std::uint64_t id = 0;
        try {
            req = nlohmann::json::parse(line);
            id = req.at("id").get<std::uint64_t>();
        } catch (const nlohmann::json::exception& e) {
            out << nlohmann::json{{"id", 0}, {"error", std::string("bad request: ") + e.what()}}.dump() << std::endl;
            continue;
        }
        if (opts.garbage) {
            out << "this is not json {" << std::endl;
        } else if (opts.report_error) {
            out << nlohmann::json{{"id", id}, {"error", "requested failure"}}.dump() << std::endl;
        } else {
            std::vector<double> y;
            try {
                const auto space = DesignSpace::by_name(req.at("problem").get<std::string>());
                const auto x = point_from_json(req.at("x"));
                y.assign(opts.dim ? opts.dim : space.response_dim(), 0.0);
                for (std::size_t i = 0; i < std::min(y.size(), x.size()); ++i) {
                    y[i] = std::holds_alternative<double>(x.values[i]) ? x.number(i)
                                                                      : static_cast<double>(space.choice_index(x, i));
                }
            } catch (const std::exception& e) {
                out << nlohmann::json{{"id", id}, {"error", e.what()}}.dump() << std::endl;
                continue;
            }
            out << nlohmann::json{{"id", opts.bad_id ? id + 1 : id}, {"y", y}}.dump() << std::endl;
        }
        ++answered;
    }
    return 0;
}

}  // namespace idkit
