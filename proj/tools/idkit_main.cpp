// idkit: command-line front end. Each subcommand forwards to one library call.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include <fmt/format.h>

#include "CLI11.hpp"
#include "idkit/error.hpp"
#include "idkit/eval_engine.hpp"
#include "idkit/harness.hpp"
#include "idkit/surrogate.hpp"

using namespace idkit;

namespace {

// Settings gathered in order: config file, then explicit flags, then --set.
struct Settings {
    std::string config_file;
    std::vector<std::string> sets;
    std::vector<std::pair<std::string, std::string>> flags;
    int verbosity = 0;

    ExperimentSpec spec() const {
        ExperimentSpec s;
        if (!config_file.empty()) {
            std::ifstream in(config_file);
            if (!in) throw ConfigError("cannot read config file " + config_file);
            std::stringstream ss;
            ss << in.rdbuf();
            s.apply_text(ss.str());
        }
        for (const auto& [k, v] : flags) s.set(k, v);
        for (const auto& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            s.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        return s;
    }
};

// A flag whose value is recorded only when given, so config files are not
// silently overridden by defaults.
void spec_flag(CLI::App* app, Settings& st, const std::string& name, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(
        name, [&st, key](const std::string& v) { st.flags.emplace_back(key, v); }, help);
}

void common_flags(CLI::App* app, Settings& st) {
    app->add_option("--config", st.config_file, "key=value spec file applied first");
    app->add_option("--set", st.sets, "override key=value, applied last (repeatable)")->take_all();
    app->add_flag("-v,--verbose", st.verbosity, "progress on stderr");
}

SimulatorBinding binding_for(const ExperimentSpec& s) {
    auto b = s.binding;
    if (b.adapter_cmd.empty() && b.kind == SimulatorKind::internal_motf && s.problem != "motf")
        b.kind = SimulatorKind::internal_synthetic;
    return b;
}

DesignPoint read_point(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read point file " + path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& e) {
        throw ConfigError(std::string("malformed point file: ") + e.what());
    }
    if (j.is_object()) j = j.at("x");
    return point_from_json(j);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"idkit: inverse design toolkit (MOTF, TPV, SCF)", "idkit"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "help for every subcommand");
    Settings st;
    int status = 0;

    // gen-data
    auto* gen = app.add_subcommand("gen-data", "sample and evaluate a dataset (JSON lines)");
    std::size_t gen_n = 0;
    std::string gen_out;
    gen->add_option("-n,--count", gen_n, "number of records")->required();
    gen->add_option("--out", gen_out, "output JSONL path")->required();
    spec_flag(gen, st, "--problem", "problem", "motf | tpv | scf (default motf)");
    spec_flag(gen, st, "--seed", "seed", "base seed (default 0)");
    spec_flag(gen, st, "--workers", "workers", "parallel simulator workers (default 1)");
    spec_flag(gen, st, "--adapter-cmd", "adapter-cmd", "external simulator command (default none)");
    common_flags(gen, st);

    // split
    auto* split = app.add_subcommand("split", "90/10 train/test then 90/10 train/val split");
    std::string split_in, split_out;
    split->add_option("--dataset", split_in, "input JSONL")->required();
    split->add_option("--out", split_out, "output directory")->required();
    spec_flag(split, st, "--seed", "seed", "base seed (default 0)");
    common_flags(split, st);

    // targets
    auto* targets = app.add_subcommand("targets", "sample realizable IID targets");
    std::size_t targets_k = 5;
    std::string targets_out;
    targets->add_option("-k,--count", targets_k, "number of targets")->capture_default_str();
    targets->add_option("--out", targets_out, "output JSON path")->required();
    spec_flag(targets, st, "--problem", "problem", "motf | tpv | scf (default motf)");
    spec_flag(targets, st, "--seed", "seed", "base seed (default 0)");
    spec_flag(targets, st, "--workers", "workers", "parallel simulator workers (default 1)");
    spec_flag(targets, st, "--adapter-cmd", "adapter-cmd", "external simulator command (default none)");
    common_flags(targets, st);

    // train
    auto* train = app.add_subcommand("train", "train a surrogate: forward, inverse or tandem");
    std::string train_model = "forward", train_data, train_out, train_forward_path;
    train->add_option("--model", train_model, "forward | inverse | tandem")->capture_default_str();
    train->add_option("--dataset", train_data, "training JSONL")->required();
    train->add_option("--forward", train_forward_path, "frozen forward checkpoint (tandem only)");
    train->add_option("--out", train_out, "checkpoint path; the log goes to <out>.log.csv")->required();
    spec_flag(train, st, "--problem", "problem", "motf | tpv | scf (default motf)");
    spec_flag(train, st, "--seed", "seed", "base seed (default 0)");
    spec_flag(train, st, "--epochs", "epochs", "training epochs (default 200)");
    spec_flag(train, st, "--hidden", "hidden", "hidden widths, comma separated (default 256,256,256)");
    spec_flag(train, st, "--lr", "lr", "learning rate (default 0.01)");
    spec_flag(train, st, "--batch-size", "batch-size", "mini-batch size (default 64)");
    common_flags(train, st);

    // run
    auto* run = app.add_subcommand("run", "budgeted optimization runs over seeds, with report");
    spec_flag(run, st, "--problem", "problem", "motf | tpv | scf (default motf)");
    spec_flag(run, st, "--algo", "algo", "comma list of rs, sracos, bo, tpe, es, gd, im, tandem (default tpe)");
    spec_flag(run, st, "--budget", "budget", "simulator calls per seed (default 1000 motf, 200 tpv/scf)");
    spec_flag(run, st, "--seeds", "seeds", "number of seeds (default 5)");
    spec_flag(run, st, "--seed", "seed", "base seed (default 0)");
    spec_flag(run, st, "--workers", "workers", "parallel simulator workers (default 1)");
    spec_flag(run, st, "--batch", "batch", "proposals per ask (default 1)");
    spec_flag(run, st, "--warm-start-k", "warm-start-k", "seed optimizers with the k best dataset records (default 0)");
    spec_flag(run, st, "--target", "target", "iid | default | <file> (default iid)");
    spec_flag(run, st, "--dataset", "dataset", "JSONL dataset for train-best, warm start and surrogates (default none)");
    spec_flag(run, st, "--adapter-cmd", "adapter-cmd", "external simulator command (default none)");
    spec_flag(run, st, "--out", "out", "report directory (default report)");
    run->add_flag_callback("--parallel-seeds", [&st] { st.flags.emplace_back("parallel-seeds", "on"); },
                           "run seeds concurrently, one engine each");
    common_flags(run, st);

    // eval
    auto* eval = app.add_subcommand("eval", "evaluate one point file and print its record");
    std::string eval_point, eval_target;
    eval->add_option("--point", eval_point, "JSON array (or {\"x\": [...]})")->required();
    eval->add_option("--target", eval_target, "default | <file>; loss is 0 without one");
    spec_flag(eval, st, "--problem", "problem", "motf | tpv | scf (default motf)");
    spec_flag(eval, st, "--adapter-cmd", "adapter-cmd", "external simulator command (default none)");
    common_flags(eval, st);

    // plot
    auto* plot = app.add_subcommand("plot", "re-render report.csv/svg from a report directory");
    std::string plot_dir, plot_out;
    plot->add_option("--report", plot_dir, "directory written by run")->required();
    plot->add_option("--out", plot_out, "output directory (default: the report directory)");

    // echo-adapter
    auto* echo = app.add_subcommand("echo-adapter", "bundled test adapter speaking the line protocol");
    EchoOptions echo_opts;
    echo->add_option("--dim", echo_opts.dim, "response length (0: problem default)")->capture_default_str();
    echo->add_option("--die-after", echo_opts.die_after, "answer this many requests, then exit 3")->capture_default_str();
    echo->add_flag("--bad-id", echo_opts.bad_id, "answer with the wrong id");
    echo->add_flag("--garbage", echo_opts.garbage, "answer with a non-JSON line");
    echo->add_flag("--hang", echo_opts.hang, "never answer");
    echo->add_flag("--error", echo_opts.report_error, "answer with an error object");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        if (argc <= 1) std::cerr << app.help();
        return 2;
    }

    try {
        if (echo->parsed()) return run_echo_adapter(std::cin, std::cout, echo_opts);

        if (gen->parsed()) {
            const auto s = st.spec();
            EvalEngine engine(DesignSpace::by_name(s.problem), binding_for(s));
            const auto n = generate_dataset_file(engine, gen_n, s.seed, gen_out);
            fmt::print("{} records written to {}\n", n, gen_out);
        } else if (split->parsed()) {
            const auto s = st.spec();
            const auto parts = split_dataset(read_records(split_in), s.seed);
            std::filesystem::create_directories(split_out);
            write_records(std::filesystem::path(split_out) / "train.jsonl", parts.train);
            write_records(std::filesystem::path(split_out) / "val.jsonl", parts.val);
            write_records(std::filesystem::path(split_out) / "test.jsonl", parts.test);
            fmt::print("train {} val {} test {}\n", parts.train.size(), parts.val.size(), parts.test.size());
        } else if (targets->parsed()) {
            const auto s = st.spec();
            EvalEngine engine(DesignSpace::by_name(s.problem), binding_for(s));
            auto arr = nlohmann::ordered_json::array();
            for (const auto& t : iid_targets(engine, targets_k, s.seed)) {
                nlohmann::ordered_json j;
                j["label"] = t.label;
                j["x"] = point_to_json(*t.source);
                j["y"] = t.y;
                arr.push_back(j);
            }
            std::ofstream(targets_out) << arr.dump() << '\n';
            fmt::print("{} targets written to {}\n", targets_k, targets_out);
        } else if (train->parsed()) {
            auto s = st.spec();
            const auto space = DesignSpace::by_name(s.problem);
            const auto data = read_records(train_data);
            TrainConfig cfg = s.train;
            cfg.seed = s.seed;
            TrainLog log;
            DenseNet net;
            if (train_model == "forward") {
                net = train_forward(space, data, cfg, &log);
            } else if (train_model == "inverse") {
                net = train_inverse(space, data, cfg, &log);
            } else if (train_model == "tandem") {
                if (train_forward_path.empty()) throw ConfigError("tandem needs --forward");
                net = train_tandem(DenseNet::load(train_forward_path), space, data, cfg, &log);
            } else {
                throw ConfigError("unknown model kind: " + train_model);
            }
            net.save(train_out, {{"problem", s.problem}, {"model", train_model}, {"epochs", cfg.epochs},
                                 {"best_epoch", log.best_epoch}, {"best_val_loss", log.best_val_loss}});
            log.write_csv(train_out + ".log.csv");
            fmt::print("best epoch {} validation loss {:.6g}\n", log.best_epoch, log.best_val_loss);
        } else if (run->parsed()) {
            auto s = st.spec();
            if (s.out.empty()) s.out = "report";
            const int verbose = st.verbosity;
            const auto report = run_experiment(s, [verbose](std::string_view algo, std::size_t seed, std::size_t n) {
                if (verbose) std::cerr << fmt::format("{} seed {} done ({} trials)\n", algo, seed, n);
            });
            const auto digest = emit_report(report, s.out);
            for (const auto& r : report.results) {
                if (!r.mean.empty()) fmt::print("{} final mean loss {:.6g} (+/- {:.3g})\n", r.algorithm, r.mean.back(), r.hi.back() - r.mean.back());
                for (std::size_t k = 0; k < r.seed_errors.size(); ++k) {
                    if (!r.seed_errors[k].empty()) std::cerr << fmt::format("{} seed {} failed: {}\n", r.algorithm, k, r.seed_errors[k]);
                }
            }
            if (report.train_best) fmt::print("train best {:.6g}\n", *report.train_best);
            fmt::print("report {} hash {}\n", s.out.string(), digest);
            if (report.partial) status = 1;
        } else if (eval->parsed()) {
            const auto s = st.spec();
            const auto space = DesignSpace::by_name(s.problem);
            EvalEngine engine(space, binding_for(s));
            std::vector<double> target;
            if (eval_target == "default") target = default_motf_target().y;
            else if (!eval_target.empty()) target = load_targets(eval_target, space).front().y;
            const std::vector<DesignPoint> pts = {read_point(eval_point)};
            const auto out = engine.evaluate_batch(pts, target);
            if (!out.front().ok()) throw std::runtime_error(to_string(out.front().failure) + ": " + out.front().error);
            std::cout << record_to_line(out.front().record) << '\n';
        } else if (plot->parsed()) {
            const auto report = load_report(plot_dir);
            const auto digest = emit_report(report, plot_out.empty() ? plot_dir : plot_out);
            fmt::print("report hash {}\n", digest);
        }
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return status;
}
