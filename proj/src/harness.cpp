#include "idkit/harness.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <ctime>
#include <fstream>
#include <map>
#include <memory>
#include <mutex>
#include <numeric>
#include <sstream>
#include <thread>

#include <fmt/format.h>

#include "idkit/error.hpp"
#include "idkit/tmm.hpp"

namespace idkit {

namespace {

// Sub-stream tags for derive_seed.
enum Stream : std::uint64_t { kDataStream = 1, kSplitStream, kTargetStream, kTrainStream, kInverseStream, kSeedBase = 100 };

constexpr std::size_t kChunk = 256;

template <class Sink>
std::size_t sample_and_evaluate(EvalEngine& engine, std::size_t n, std::uint64_t seed, Sink&& sink) {
    if (n == 0) throw ConfigError("dataset size must be at least 1");
    Rng rng(derive_seed(seed, kDataStream));
    std::size_t kept = 0, failed = 0, done = 0;
    std::string first_error;
    while (done < n) {
        const std::size_t m = std::min(kChunk, n - done);
        std::vector<DesignPoint> pts;
        pts.reserve(m);
        for (std::size_t i = 0; i < m; ++i) pts.push_back(sample_uniform(engine.space(), rng));
        auto outs = engine.evaluate_batch(pts, {}, done);
        for (auto& o : outs) {
            if (!o.ok()) {
                ++failed;
                if (first_error.empty()) first_error = o.error;
                continue;
            }
            o.record.trial = kept++;
            o.record.loss = 0.0;
            o.record.wall_time = 0.0;
            sink(o.record);
        }
        done += m;
        if (static_cast<double>(failed) > 0.01 * static_cast<double>(n))
            throw std::runtime_error(fmt::format("dataset generation aborted: {} of {} evaluations failed (first: {})",
                                                 failed, done, first_error));
    }
    return kept;
}

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::uint64_t to_uint(std::string_view key, std::string_view v) {
    try {
        std::size_t pos = 0;
        const std::string s(v);
        if (s.empty() || s.front() == '-') throw std::invalid_argument("negative");
        const auto r = std::stoull(s, &pos);
        if (pos != s.size()) throw std::invalid_argument("trailing");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{} expects a non-negative integer, got '{}'", key, v));
    }
}

double to_double(std::string_view key, std::string_view v) {
    try {
        std::size_t pos = 0;
        const std::string s(v);
        const double r = std::stod(s, &pos);
        if (pos != s.size() || !std::isfinite(r)) throw std::invalid_argument("bad");
        return r;
    } catch (const std::exception&) {
        throw ConfigError(fmt::format("{} expects a number, got '{}'", key, v));
    }
}

bool to_bool(std::string_view key, std::string_view v) {
    if (v == "1" || v == "true" || v == "on" || v == "yes") return true;
    if (v == "0" || v == "false" || v == "off" || v == "no") return false;
    throw ConfigError(fmt::format("{} expects on/off, got '{}'", key, v));
}

std::vector<std::string> split_list(std::string_view v) {
    std::vector<std::string> out;
    std::string cur;
    for (const char c : v) {
        if (c == ',') {
            if (!trim(cur).empty()) out.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty()) out.push_back(trim(cur));
    return out;
}

// Lines "algo.key=value" of the spec's optimizer text that apply to `algo`.
OptimizerConfig config_for(const ExperimentSpec& spec, std::string_view algo) {
    std::string text;
    std::istringstream in(spec.optimizer_config);
    std::string line;
    while (std::getline(in, line)) {
        const auto dot = line.find('.');
        if (dot == std::string::npos) continue;
        if (std::string_view(line).substr(0, dot) == algo) text += line.substr(dot + 1) + "\n";
    }
    return OptimizerConfig::parse(text);
}

std::vector<EvalRecord> scored(std::span<const EvalRecord> dataset, std::span<const double> target) {
    std::vector<EvalRecord> out;
    out.reserve(dataset.size());
    for (const auto& r : dataset) {
        if (!r.y) continue;
        auto c = r;
        c.loss = mse_loss(*r.y, target);
        out.push_back(std::move(c));
    }
    return out;
}

std::vector<double> evaluate_candidates(const ExperimentSpec& spec, std::span<const DesignPoint> points,
                                        const Target& target, EvalEngine& engine, std::vector<EvalRecord>& records) {
    std::vector<double> curve;
    double best = INFINITY;
    const std::size_t step = std::max<std::size_t>(spec.batch, engine.binding().workers);
    for (std::size_t at = 0; at < points.size(); at += step) {
        const auto chunk = points.subspan(at, std::min(step, points.size() - at));
        for (auto& o : engine.evaluate_batch(chunk, target.y, at)) {
            if (o.ok()) best = std::min(best, o.record.loss);
            curve.push_back(best);
            records.push_back(std::move(o.record));
        }
    }
    return curve;
}

// Candidates for single-shot inverse nets: the prediction for the target,
// then predictions for targets jittered by 10% of each output's spread.
std::vector<DesignPoint> inverse_candidates(const DenseNet& g, const DesignSpace& space, const Target& target,
                                            const Eigen::VectorXd& spread, std::size_t budget, Rng& rng) {
    const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(target.y.data(), static_cast<Eigen::Index>(target.y.size()));
    std::vector<DesignPoint> pts;
    for (std::size_t k = 0; k < budget; ++k) {
        Eigen::VectorXd q = t;
        if (k > 0) {
            for (Eigen::Index j = 0; j < q.size(); ++j) q(j) += 0.1 * spread(j) * standard_normal(rng);
        }
        pts.push_back(decode_prediction(space, g.predict(q)));
    }
    return pts;
}

std::string num(double v) { return fmt::format("{:.2f}", v); }

}  // namespace

std::vector<EvalRecord> generate_dataset(EvalEngine& engine, std::size_t n, std::uint64_t seed) {
    std::vector<EvalRecord> out;
    out.reserve(n);
    sample_and_evaluate(engine, n, seed, [&](const EvalRecord& r) { out.push_back(r); });
    return out;
}

std::size_t generate_dataset_file(EvalEngine& engine, std::size_t n, std::uint64_t seed, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    return sample_and_evaluate(engine, n, seed, [&](const EvalRecord& r) { out << record_to_line(r) << '\n'; });
}

DatasetSplit split_dataset(std::span<const EvalRecord> dataset, std::uint64_t seed) {
    if (dataset.size() < 10) throw ConfigError("splitting needs at least 10 records");
    std::vector<std::size_t> idx(dataset.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    Rng rng(derive_seed(seed, kSplitStream));
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    const auto n_test = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(dataset.size())));
    const std::size_t rest = dataset.size() - n_test;
    const auto n_val = static_cast<std::size_t>(std::llround(0.1 * static_cast<double>(rest)));
    DatasetSplit s;
    for (std::size_t k = 0; k < idx.size(); ++k) {
        const auto& r = dataset[idx[k]];
        if (k < n_test) s.test.push_back(r);
        else if (k < n_test + n_val) s.val.push_back(r);
        else s.train.push_back(r);
    }
    return s;
}

std::vector<Target> iid_targets(EvalEngine& engine, std::size_t k, std::uint64_t seed) {
    if (k == 0) throw ConfigError("need at least one target");
    Rng rng(derive_seed(seed, kTargetStream));
    std::vector<DesignPoint> pts;
    for (std::size_t i = 0; i < k; ++i) pts.push_back(sample_uniform(engine.space(), rng));
    const auto outs = engine.evaluate_batch(pts);
    std::vector<Target> out;
    for (std::size_t i = 0; i < k; ++i) {
        if (!outs[i].ok()) throw std::runtime_error("target generation failed: " + outs[i].error);
        out.push_back({*outs[i].record.y, pts[i], fmt::format("iid-{}", i)});
    }
    return out;
}

Target default_motf_target() {
    const auto grid = tmm::WavelengthGrid::motf();
    constexpr double w = 0.1;
    Target t;
    t.label = "ideal-cooler";
    for (const double l : grid.points()) {
        const double rise = 1.0 / (1.0 + std::exp(-(l - 8.0) / w));
        const double fall = 1.0 / (1.0 + std::exp(-(13.0 - l) / w));
        t.y.push_back(rise * fall);
    }
    return t;
}

std::vector<Target> load_targets(const std::filesystem::path& path, const DesignSpace& space) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read target file " + path.string());
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string text = ss.str();
    std::vector<Response> rows;
    const auto first = text.find_first_not_of(" \t\r\n");
    if (first != std::string::npos && (text[first] == '[' || text[first] == '{')) {
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(text);
            if (j.is_object()) j = j.at("y");
            if (!j.empty() && j.front().is_object()) {
                for (const auto& e : j) rows.push_back(e.at("y").get<Response>());
            } else if (!j.empty() && j.front().is_array()) {
                rows = j.get<std::vector<Response>>();
            } else {
                rows.push_back(j.get<Response>());
            }
        } catch (const nlohmann::json::exception& e) {
            throw ConfigError(fmt::format("{}: malformed target JSON ({})", path.string(), e.what()));
        }
    } else {
        std::istringstream lines(text);
        std::string line;
        while (std::getline(lines, line)) {
            const auto t = trim(line);
            if (t.empty() || t.front() == '#') continue;
            std::istringstream vals(t);
            Response row;
            std::string tok;
            while (vals >> tok) row.push_back(to_double("target value", tok));
            rows.push_back(std::move(row));
        }
    }
    if (rows.empty()) throw ConfigError(path.string() + " holds no targets");
    std::vector<Target> out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].size() != space.response_dim())
            throw ConfigError(fmt::format("{}: target {} has {} values, {} expects {}", path.string(), i, rows[i].size(),
                                          space.name(), space.response_dim()));
        out.push_back({rows[i], std::nullopt, fmt::format("{}#{}", path.filename().string(), i)});
    }
    return out;
}

EvalRecord train_best(std::span<const EvalRecord> dataset, std::span<const double> target) {
    const EvalRecord* best = nullptr;
    double best_loss = INFINITY;
    for (const auto& r : dataset) {
        if (!r.y) continue;
        const double l = mse_loss(*r.y, target);
        if (!best || l < best_loss || (l == best_loss && r.trial < best->trial)) {
            best = &r;
            best_loss = l;
        }
    }
    if (!best) throw ConfigError("dataset has no records with responses");
    auto out = *best;
    out.loss = best_loss;
    return out;
}

bool is_surrogate_algorithm(std::string_view algo) { return algo == "gd" || algo == "im" || algo == "tandem"; }

std::size_t ExperimentSpec::effective_budget() const {
    if (budget) return *budget;
    return problem == "motf" ? 1000 : 200;
}

std::vector<std::uint64_t> ExperimentSpec::seeds() const {
    std::vector<std::uint64_t> out;
    for (std::size_t i = 0; i < n_seeds; ++i) out.push_back(derive_seed(seed, kSeedBase + i));
    return out;
}

void ExperimentSpec::set(std::string_view key_in, std::string_view value_in) {
    const std::string key = trim(key_in);
    const std::string v = trim(value_in);
    if (key == "problem") {
        DesignSpace::by_name(v);
        problem = v;
    } else if (key == "algo" || key == "algorithms") {
        algorithms = split_list(v);
    } else if (key == "budget") {
        budget = to_uint(key, v);
    } else if (key == "seeds") {
        n_seeds = to_uint(key, v);
    } else if (key == "seed") {
        seed = to_uint(key, v);
    } else if (key == "batch") {
        batch = to_uint(key, v);
    } else if (key == "workers") {
        binding.workers = to_uint(key, v);
    } else if (key == "warm-start-k") {
        warm_start_k = to_uint(key, v);
    } else if (key == "target") {
        target = v;
    } else if (key == "dataset") {
        dataset = v;
    } else if (key == "out") {
        out = v;
    } else if (key == "simulator") {
        binding.kind = parse_simulator_kind(v);
    } else if (key == "adapter-cmd") {
        binding.adapter_cmd = v;
        if (!v.empty()) binding.kind = SimulatorKind::external_adapter;
    } else if (key == "timeout") {
        binding.timeout_s = to_double(key, v);
    } else if (key == "sleep-ms") {
        binding.sleep_ms = to_double(key, v);
    } else if (key == "cache") {
        binding.cache = to_bool(key, v);
    } else if (key == "cache-file") {
        binding.cache_file = v;
    } else if (key == "epochs") {
        train.epochs = to_uint(key, v);
    } else if (key == "batch-size") {
        train.batch_size = to_uint(key, v);
    } else if (key == "lr") {
        train.learning_rate = to_double(key, v);
    } else if (key == "momentum") {
        train.momentum = to_double(key, v);
    } else if (key == "hidden") {
        train.hidden.clear();
        for (const auto& h : split_list(v)) train.hidden.push_back(to_uint(key, h));
    } else if (key == "gd-steps") {
        gd_steps = to_uint(key, v);
    } else if (key == "parallel-seeds") {
        parallel_seeds = to_bool(key, v);
    } else if (key.find('.') != std::string::npos) {
        const auto algo = key.substr(0, key.find('.'));
        parse_optimizer_kind(algo);
        optimizer_config += key + "=" + v + "\n";
    } else {
        throw ConfigError("unknown setting: " + key);
    }
}

void ExperimentSpec::apply_text(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto t = trim(line);
        if (t.empty() || t.front() == '[') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key=value, got '{}'", lineno, t));
        set(t.substr(0, eq), t.substr(eq + 1));
    }
}

void ExperimentSpec::check() const {
    DesignSpace::by_name(problem);
    if (algorithms.empty()) throw ConfigError("no algorithm given");
    for (const auto& a : algorithms) {
        if (!is_surrogate_algorithm(a)) parse_optimizer_kind(a);
        else if (dataset.empty()) throw ConfigError(a + " needs a dataset");
    }
    if (n_seeds == 0) throw ConfigError("need at least one seed");
    if (batch == 0) throw ConfigError("batch must be at least 1");
    if (warm_start_k > 0 && dataset.empty()) throw ConfigError("warm start needs a dataset");
    if (target == "default" && problem != "motf") throw ConfigError("the default target exists only for motf");
    train.check();
    binding.check();
}

std::string ExperimentSpec::canonical() const {
    std::string s;
    const auto line = [&](std::string_view k, const std::string& v) { s += fmt::format("{}={}\n", k, v); };
    line("problem", problem);
    std::string algos;
    for (const auto& a : algorithms) algos += (algos.empty() ? "" : ",") + a;
    line("algo", algos);
    line("budget", std::to_string(effective_budget()));
    line("seeds", std::to_string(n_seeds));
    line("seed", std::to_string(seed));
    line("batch", std::to_string(batch));
    line("warm-start-k", std::to_string(warm_start_k));
    line("target", target);
    line("dataset", dataset.string());
    line("simulator", to_string(binding.kind));
    line("adapter-cmd", binding.adapter_cmd);
    line("sleep-ms", fmt::format("{}", binding.sleep_ms));
    line("epochs", std::to_string(train.epochs));
    line("batch-size", std::to_string(train.batch_size));
    line("lr", fmt::format("{}", train.learning_rate));
    line("momentum", fmt::format("{}", train.momentum));
    std::string hidden;
    for (const auto h : train.hidden) hidden += (hidden.empty() ? "" : ",") + std::to_string(h);
    line("hidden", hidden);
    line("gd-steps", std::to_string(gd_steps));
    s += optimizer_config;
    return s;
}

void aggregate(AlgorithmResult& r) {
    r.mean.clear();
    r.lo.clear();
    r.hi.clear();
    std::vector<const std::vector<double>*> ok;
    for (std::size_t i = 0; i < r.curves.size(); ++i) {
        const bool failed = i < r.seed_errors.size() && !r.seed_errors[i].empty();
        if (!failed) ok.push_back(&r.curves[i]);
    }
    if (ok.empty()) return;
    std::size_t len = ok.front()->size();
    for (const auto* c : ok) len = std::min(len, c->size());
    const double n = static_cast<double>(ok.size());
    for (std::size_t t = 0; t < len; ++t) {
        double sum = 0.0;
        for (const auto* c : ok) sum += (*c)[t];
        const double m = sum / n;
        double ss = 0.0;
        for (const auto* c : ok) ss += ((*c)[t] - m) * ((*c)[t] - m);
        const double half = ok.size() > 1 ? 1.96 * std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
        r.mean.push_back(m);
        r.lo.push_back(m - half);
        r.hi.push_back(m + half);
    }
}

std::vector<double> run_seed(const ExperimentSpec& spec, std::string_view algo, std::uint64_t seed, const Target& target,
                             EvalEngine& engine, std::span<const EvalRecord> dataset, std::vector<EvalRecord>& records) {
    const auto& space = engine.space();
    const std::size_t budget = spec.effective_budget();
    records.clear();
    if (budget == 0) return {};

    if (is_surrogate_algorithm(algo)) {
        if (dataset.empty()) throw ConfigError(std::string(algo) + " needs a dataset");
        const auto split = split_dataset(dataset, seed);
        std::vector<EvalRecord> train = split.train;
        train.insert(train.end(), split.val.begin(), split.val.end());
        TrainConfig cfg = spec.train;
        cfg.seed = derive_seed(seed, kTrainStream);
        Rng rng(derive_seed(seed, kInverseStream));
        std::vector<DesignPoint> pts;
        if (algo == "gd") {
            const auto f = train_forward(space, train, cfg);
            const Eigen::VectorXd t = Eigen::Map<const Eigen::VectorXd>(target.y.data(), static_cast<Eigen::Index>(target.y.size()));
            for (auto& c : gd_inverse(f, space, t, budget, spec.gd_steps, rng)) {
                if (pts.size() == budget) break;
                pts.push_back(std::move(c.x));
            }
            while (pts.size() < budget) pts.push_back(sample_uniform(space, rng));
        } else {
            const auto data = encode_dataset(space, train);
            const Eigen::VectorXd mean = data.y.colwise().mean();
            const Eigen::VectorXd spread = ((data.y.rowwise() - mean.transpose()).array().square().colwise().mean()).sqrt();
            if (algo == "im") {
                pts = inverse_candidates(train_inverse(space, train, cfg), space, target, spread, budget, rng);
            } else {
                const auto f = train_forward(space, train, cfg);
                pts = inverse_candidates(train_tandem(f, space, train, cfg), space, target, spread, budget, rng);
            }
        }
        return evaluate_candidates(spec, pts, target, engine, records);
    }

    OptimizerSession session(parse_optimizer_kind(algo), space, config_for(spec, algo), seed);
    if (spec.warm_start_k > 0) session.warm_start(scored(dataset, target.y), spec.warm_start_k);
    std::vector<double> curve;
    double best = INFINITY;
    while (curve.size() < budget) {
        const auto props = session.ask(std::min(spec.batch, budget - curve.size()));
        std::vector<DesignPoint> pts;
        for (const auto& p : props) pts.push_back(p.x);
        auto outs = engine.evaluate_batch(pts, target.y, curve.size());
        std::vector<EvalRecord> told;
        for (std::size_t i = 0; i < outs.size(); ++i) {
            auto& r = outs[i].record;
            r.trial = props[i].trial;
            if (outs[i].ok()) best = std::min(best, r.loss);
            curve.push_back(best);
            told.push_back(r);
            records.push_back(std::move(r));
        }
        session.tell(told);
    }
    return curve;
}

ExperimentReport run_experiment(const ExperimentSpec& spec_in, const Progress& progress) {
    ExperimentSpec spec = spec_in;
    if (spec.binding.kind == SimulatorKind::internal_motf && spec.problem != "motf" && spec.binding.adapter_cmd.empty())
        spec.binding.kind = SimulatorKind::internal_synthetic;
    spec.check();
    const auto space = DesignSpace::by_name(spec.problem);
    EvalEngine engine(space, spec.binding);

    ExperimentReport report;
    report.problem = spec.problem;
    report.budget = spec.effective_budget();
    report.seeds = spec.seeds();
    report.spec_text = spec.canonical();

    std::vector<EvalRecord> dataset;
    if (!spec.dataset.empty()) dataset = read_records(spec.dataset);

    std::vector<Target> targets;
    if (spec.target == "iid") targets = iid_targets(engine, spec.n_seeds, spec.seed);
    else if (spec.target == "default") targets = {default_motf_target()};
    else targets = load_targets(spec.target, space);
    const auto target_for = [&](std::size_t i) -> const Target& { return targets[i % targets.size()]; };

    if (!dataset.empty()) {
        double sum = 0.0;
        for (std::size_t i = 0; i < spec.n_seeds; ++i) sum += train_best(dataset, target_for(i).y).loss;
        report.train_best = sum / static_cast<double>(spec.n_seeds);
    }

    if (report.budget == 0) return report;

    for (const auto& algo : spec.algorithms) {
        AlgorithmResult res;
        res.algorithm = algo;
        const std::size_t n = report.seeds.size();
        res.curves.resize(n);
        res.seed_errors.resize(n);
        res.records.resize(n);
        std::mutex progress_mutex;
        const auto one = [&](std::size_t i, EvalEngine& eng) {
            try {
                res.curves[i] = run_seed(spec, algo, report.seeds[i], target_for(i), eng, dataset, res.records[i]);
                if (!res.curves[i].empty() && !std::isfinite(res.curves[i].back()))
                    throw std::runtime_error(fmt::format("all {} evaluations failed", res.curves[i].size()));
            } catch (const std::exception& e) {
                res.curves[i].clear();
                res.seed_errors[i] = e.what();
            }
            if (progress) {
                std::lock_guard lock(progress_mutex);
                progress(algo, i, res.curves[i].size());
            }
        };
        if (spec.parallel_seeds && n > 1) {
            // adapter processes belong to one engine, so each seed gets its own
            std::vector<std::unique_ptr<EvalEngine>> engines;
            for (std::size_t i = 0; i < n; ++i) engines.push_back(std::make_unique<EvalEngine>(space, spec.binding));
            std::vector<std::thread> pool;
            for (std::size_t i = 0; i < n; ++i) pool.emplace_back(one, i, std::ref(*engines[i]));
            for (auto& t : pool) t.join();
        } else {
            for (std::size_t i = 0; i < n; ++i) one(i, engine);
        }
        for (const auto& e : res.seed_errors) report.partial = report.partial || !e.empty();
        aggregate(res);
        report.results.push_back(std::move(res));
    }
    return report;
}

ReportFiles render_report(const ExperimentReport& report) {
    ReportFiles f;
    f.csv = "algorithm,trial,mean,lo,hi\n";
    for (const auto& r : report.results) {
        for (std::size_t t = 0; t < r.mean.size(); ++t)
            f.csv += fmt::format("{},{},{:.17g},{:.17g},{:.17g}\n", r.algorithm, t + 1, r.mean[t], r.lo[t], r.hi[t]);
    }

    // plot
    constexpr double W = 720, H = 440, L = 80, R = 160, T = 30, B = 50;
    double ymin = INFINITY, ymax = -INFINITY;
    std::size_t xmax = 1;
    const auto see = [&](double v) {
        if (std::isfinite(v)) {
            ymin = std::min(ymin, v);
            ymax = std::max(ymax, v);
        }
    };
    for (const auto& r : report.results) {
        xmax = std::max(xmax, r.mean.size());
        for (std::size_t t = 0; t < r.mean.size(); ++t) {
            see(r.lo[t]);
            see(r.hi[t]);
            see(r.mean[t]);
        }
    }
    if (report.train_best) see(*report.train_best);
    const bool have = std::isfinite(ymin);
    bool log_scale = have && ymin > 0.0;
    if (log_scale && ymax / ymin < 10.0) log_scale = false;
    if (!have) {
        ymin = 0.0;
        ymax = 1.0;
    }
    const auto tr = [&](double v) { return log_scale ? std::log10(std::max(v, ymin)) : v; };
    double lo = tr(ymin), hi = tr(ymax);
    if (hi - lo < 1e-12) {
        lo -= 0.5;
        hi += 0.5;
    }
    const auto px = [&](double x) { return L + (W - L - R) * x / static_cast<double>(xmax); };
    const auto py = [&](double v) { return H - B - (H - T - B) * (tr(v) - lo) / (hi - lo); };

    static constexpr std::array<const char*, 8> kColors = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                           "#9467bd", "#8c564b", "#e377c2", "#17becf"};
    std::string& s = f.svg;
    s += fmt::format("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{}\" height=\"{}\" viewBox=\"0 0 {} {}\" "
                     "font-family=\"sans-serif\" font-size=\"12\">\n",
                     W, H, W, H);
    s += fmt::format("<rect width=\"{}\" height=\"{}\" fill=\"white\"/>\n", W, H);
    s += fmt::format("<text x=\"{}\" y=\"18\">{} best-so-far loss</text>\n", L, report.problem);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\"/>\n", L, H - B, W - R);
    s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{0}\" y2=\"{2}\" stroke=\"black\"/>\n", L, T, H - B);
    for (int k = 0; k <= 4; ++k) {
        const double xv = static_cast<double>(xmax) * k / 4.0;
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>\n", num(px(xv)), H - B + 16,
                         fmt::format("{:.0f}", xv));
        const double yt = lo + (hi - lo) * k / 4.0;
        const double yv = log_scale ? std::pow(10.0, yt) : yt;
        s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{}</text>\n", L - 6,
                         num(H - B - (H - T - B) * k / 4.0 + 4), fmt::format("{:.3g}", yv));
    }
    s += fmt::format("<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">trial</text>\n", num((L + W - R) / 2), H - 12);
    s += fmt::format("<text x=\"16\" y=\"{}\" transform=\"rotate(-90 16 {})\" text-anchor=\"middle\">loss{}</text>\n",
                     num((T + H - B) / 2), num((T + H - B) / 2), log_scale ? " (log)" : "");
    for (std::size_t a = 0; a < report.results.size(); ++a) {
        const auto& r = report.results[a];
        const char* color = kColors[a % kColors.size()];
        const double ly = T + 16.0 * static_cast<double>(a) + 8;
        s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"{3}\" stroke-width=\"2\"/>\n",
                         W - R + 10, num(ly), W - R + 30, color);
        s += fmt::format("<text x=\"{}\" y=\"{}\">{}</text>\n", W - R + 36, num(ly + 4), r.algorithm);
        if (r.mean.empty()) continue;
        std::string band, line;
        for (std::size_t t = 0; t < r.mean.size(); ++t) band += fmt::format("{},{} ", num(px(t + 1.0)), num(py(r.hi[t])));
        for (std::size_t t = r.mean.size(); t-- > 0;) band += fmt::format("{},{} ", num(px(t + 1.0)), num(py(r.lo[t])));
        for (std::size_t t = 0; t < r.mean.size(); ++t) line += fmt::format("{},{} ", num(px(t + 1.0)), num(py(r.mean[t])));
        band.pop_back();
        line.pop_back();
        s += fmt::format("<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>\n", band, color);
        s += fmt::format("<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n", line, color);
    }
    if (report.train_best && std::isfinite(*report.train_best)) {
        const double y = py(*report.train_best);
        s += fmt::format("<line x1=\"{0}\" y1=\"{1}\" x2=\"{2}\" y2=\"{1}\" stroke=\"black\" stroke-dasharray=\"6 4\"/>\n", L,
                         num(y), W - R);
        s += fmt::format("<text x=\"{}\" y=\"{}\">train best</text>\n", W - R + 10, num(y + 4));
    }
    s += "</svg>\n";

    std::string payload = f.csv;
    for (const auto& r : report.results) {
        for (std::size_t k = 0; k < r.records.size(); ++k) {
            payload += fmt::format("# {} seed {}\n", r.algorithm, k);
            for (auto rec : r.records[k]) {
                rec.wall_time = 0.0;
                payload += record_to_line(rec) + "\n";
            }
        }
    }
    f.digest = fnv1a_hex(payload);
    return f;
}

ExperimentReport load_report(const std::filesystem::path& dir) {
    std::ifstream in(dir / "report.json");
    if (!in) throw ConfigError("no report.json in " + dir.string());
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("malformed report.json: ") + e.what());
    }
    ExperimentReport report;
    report.problem = j.at("problem").get<std::string>();
    report.budget = j.at("budget").get<std::size_t>();
    report.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    report.spec_text = j.at("spec").get<std::string>();
    report.partial = j.at("partial").get<bool>();
    if (j.contains("train_best")) report.train_best = j["train_best"].get<double>();
    for (const auto& a : j.at("algorithms")) {
        AlgorithmResult r;
        r.algorithm = a.at("algorithm").get<std::string>();
        r.seed_errors = a.at("seed_errors").get<std::vector<std::string>>();
        for (std::size_t k = 0; k < r.seed_errors.size(); ++k) {
            auto recs = read_records(dir / "records" / fmt::format("{}_seed{}.jsonl", r.algorithm, k));
            std::vector<double> curve;
            double best = INFINITY;
            for (const auto& rec : recs) {
                if (std::isfinite(rec.loss)) best = std::min(best, rec.loss);
                curve.push_back(best);
            }
            r.curves.push_back(std::move(curve));
            r.records.push_back(std::move(recs));
        }
        aggregate(r);
        report.results.push_back(std::move(r));
    }
    return report;
}

std::string emit_report(const ExperimentReport& report, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir / "records");
    const auto files = render_report(report);
    const auto write = [](const std::filesystem::path& p, const std::string& text) {
        std::ofstream out(p, std::ios::trunc | std::ios::binary);
        if (!out) throw std::runtime_error("cannot write " + p.string());
        out << text;
    };
    write(dir / "report.csv", files.csv);
    write(dir / "report.svg", files.svg);
    for (const auto& r : report.results) {
        for (std::size_t k = 0; k < r.records.size(); ++k)
            write_records(dir / "records" / fmt::format("{}_seed{}.jsonl", r.algorithm, k), r.records[k]);
    }

    nlohmann::ordered_json j;
    j["toolkit_version"] = kToolkitVersion;
    j["problem"] = report.problem;
    j["budget"] = report.budget;
    j["seeds"] = report.seeds;
    j["spec"] = report.spec_text;
    j["spec_hash"] = fnv1a_hex(report.spec_text);
    j["report_hash"] = files.digest;
    j["partial"] = report.partial;
    if (report.train_best) j["train_best"] = *report.train_best;
    auto algos = nlohmann::ordered_json::array();
    for (const auto& r : report.results) {
        nlohmann::ordered_json a;
        a["algorithm"] = r.algorithm;
        a["final_mean"] = r.mean.empty() ? nlohmann::ordered_json(nullptr) : nlohmann::ordered_json(r.mean.back());
        a["seed_errors"] = r.seed_errors;
        algos.push_back(a);
    }
    j["algorithms"] = algos;
    const auto now = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&now, &tm);
    char stamp[32];
    std::strftime(stamp, sizeof stamp, "%Y-%m-%dT%H:%M:%SZ", &tm);
    j["created_at"] = stamp;
    write(dir / "report.json", j.dump(2) + "\n");
    return files.digest;
}

}  // namespace idkit
