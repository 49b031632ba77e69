#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "idkit/error.hpp"
#include "idkit/surrogate.hpp"
#include "idkit/tmm.hpp"
#include "toys.hpp"

using namespace idkit;

namespace {

Eigen::MatrixXd random_matrix(Eigen::Index rows, Eigen::Index cols, Rng& rng, double lo = -1.0, double hi = 1.0) {
    Eigen::MatrixXd m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) m(i, j) = uniform(rng, lo, hi);
    }
    return m;
}

double loss(const DenseNet& net, const Eigen::VectorXd& x, const Eigen::VectorXd& t) {
    return (net.predict(x) - t).squaredNorm();
}

// Randomized biases and a non-trivial output map so every term of the
// backward pass is exercised.
DenseNet random_net(std::vector<std::size_t> widths, Rng& rng) {
    auto net = DenseNet::init(std::move(widths), rng);
    for (auto& b : net.biases) b = random_matrix(b.size(), 1, rng, -0.3, 0.3);
    net.out_mean = random_matrix(net.out_mean.size(), 1, rng);
    net.out_scale = random_matrix(net.out_scale.size(), 1, rng, 0.5, 2.0);
    return net;
}

TrainConfig small(std::size_t epochs) {
    TrainConfig cfg;
    cfg.epochs = epochs;
    cfg.hidden = {32, 32};
    cfg.batch_size = 32;
    return cfg;
}

std::vector<EvalRecord> linear_records(const DesignSpace& space, const Eigen::MatrixXd& a, std::size_t n, Rng& rng) {
    std::vector<EvalRecord> out;
    for (std::size_t i = 0; i < n; ++i) {
        EvalRecord r;
        r.x = sample_uniform(space, rng);
        const auto e = encode_onehot(space, r.x);
        const Eigen::VectorXd y = a * Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size()));
        r.y = std::vector<double>(y.data(), y.data() + y.size());
        r.trial = i;
        out.push_back(std::move(r));
    }
    return out;
}

}  // namespace

TEST_CASE("init shapes and config checks") {
    Rng rng(1);
    const auto net = DenseNet::init({4, 8, 3}, rng);
    CHECK(net.input_size() == 4);
    CHECK(net.output_size() == 3);
    CHECK(net.parameter_count() == 4 * 8 + 8 + 8 * 3 + 3);
    CHECK(net.forward(Eigen::MatrixXd::Zero(4, 7)).cols() == 7);
    CHECK_THROWS_AS(net.forward(Eigen::MatrixXd::Zero(3, 1)), StructuralError);
    CHECK_THROWS_AS(DenseNet::init({4}, rng), ConfigError);
    TrainConfig cfg;
    cfg.learning_rate = 0.0;
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    cfg = {};
    cfg.validation_fraction = 0.9;
    CHECK_THROWS_AS(cfg.check(), ConfigError);
    CHECK(TrainConfig{}.validation_fraction == 0.1);
}

TEST_CASE("input gradient matches central differences") {
    Rng rng(2);
    const std::vector<std::vector<std::size_t>> archs = {{3, 2}, {5, 16, 4}, {6, 12, 12, 3}, {4, 8, 8, 8, 6}};
    int probes = 0;
    for (const auto& w : archs) {
        const auto net = random_net(w, rng);
        for (int k = 0; k < 25; ++k, ++probes) {
            const Eigen::VectorXd x = random_matrix(static_cast<Eigen::Index>(w.front()), 1, rng);
            const Eigen::VectorXd t = random_matrix(static_cast<Eigen::Index>(w.back()), 1, rng);
            const auto g = grad_input(net, x, t);
            for (Eigen::Index i = 0; i < x.size(); ++i) {
                const double h = 1e-6;
                Eigen::VectorXd xp = x, xm = x;
                xp(i) += h;
                xm(i) -= h;
                const double fd = (loss(net, xp, t) - loss(net, xm, t)) / (2 * h);
                // a probe straddling a ReLU kink is not differentiable there
                CHECK(std::abs(g(i) - fd) <= 1e-4 * std::max(1.0, std::abs(fd)));
            }
        }
    }
    CHECK(probes == 100);
}

TEST_CASE("input gradient closed forms") {
    Rng rng(3);
    auto net = DenseNet::init({4, 3}, rng);
    net.biases[0] = random_matrix(3, 1, rng);
    const Eigen::MatrixXd a = net.weights[0];
    const Eigen::VectorXd x = random_matrix(4, 1, rng);
    const Eigen::VectorXd y = random_matrix(3, 1, rng);
    const Eigen::VectorXd expected = 2.0 * a.transpose() * (a * x + net.biases[0] - y);
    CHECK((grad_input(net, x, y) - expected).norm() <= 1e-12);
    const auto deep = random_net({5, 10, 10, 2}, rng);
    const Eigen::VectorXd p = random_matrix(5, 1, rng);
    CHECK(grad_input(deep, p, deep.predict(p)).norm() == 0.0);
}

TEST_CASE("linear teacher is learned by the default trainer") {
    Rng rng(4);
    const Eigen::MatrixXd a = random_matrix(3, 2, rng);
    const Eigen::MatrixXd x = random_matrix(800, 2, rng);
    const Eigen::MatrixXd y = x * a.transpose();
    TrainLog log;
    const auto net = train_regression(x, y, TrainConfig{}, &log);
    CHECK(log.rows.size() == 200);
    CHECK(log.best_val_loss == doctest::Approx(log.rows[log.best_epoch - 1].val_loss));
    const Eigen::MatrixXd xv = random_matrix(200, 2, rng);
    const Eigen::MatrixXd yv = xv * a.transpose();
    const Eigen::MatrixXd pred = net.forward(xv.transpose()).transpose();
    CHECK((pred - yv).norm() / yv.norm() <= 1e-2);
}

TEST_CASE("training is deterministic and rejects small or divergent runs") {
    Rng rng(5);
    const Eigen::MatrixXd x = random_matrix(100, 3, rng);
    const Eigen::MatrixXd y = x.array().square().rowwise().sum().matrix();
    const auto a = train_regression(x, y, small(5));
    const auto b = train_regression(x, y, small(5));
    CHECK(a == b);
    auto hot = small(50);
    hot.learning_rate = 1e6;
    CHECK_THROWS_AS(train_regression(x, y, hot), NumericalError);
    try {
        train_regression(x, y, hot);
    } catch (const NumericalError& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
    const auto space = toys::sphere_space(3);
    auto recs = linear_records(space, random_matrix(1, 3, rng), 99, rng);
    CHECK_THROWS_AS(train_forward(space, recs, small(1)), ConfigError);
}

TEST_CASE("forward surrogate beats the mean on MOTF samples") {
    const auto space = DesignSpace::motf();
    Rng rng(6);
    const auto draw = [&](std::size_t n) {
        std::vector<EvalRecord> recs(n);
        for (auto& r : recs) {
            r.x = sample_uniform(space, rng);
            r.y = tmm::motf_forward(r.x);
        }
        return recs;
    };
    const auto train = draw(1000);
    const auto held = draw(200);
    auto cfg = small(15);
    cfg.learning_rate = 0.3;
    TrainLog log;
    const auto net = train_forward(space, train, cfg, &log);
    CHECK(net.input_size() == space.encoded_size());
    CHECK(net.output_size() == space.response_dim());

    const auto tr = encode_dataset(space, train);
    const auto ho = encode_dataset(space, held);
    const Eigen::RowVectorXd mean = tr.y.colwise().mean();
    const double baseline = (ho.y.rowwise() - mean).squaredNorm();
    const double model = (net.forward(ho.x.transpose()).transpose() - ho.y).squaredNorm();
    CHECK(model < baseline);
}

TEST_CASE("inverse model on a bijection and on a two-branch teacher") {
    Rng rng(7);
    const Eigen::MatrixXd x = random_matrix(1000, 1, rng, 0.0, 1.0);
    const auto inv = train_regression(2.0 * x, x, small(150));
    for (double v : {0.1, 0.35, 0.5, 0.8}) CHECK(std::abs(inv.predict(Eigen::VectorXd::Constant(1, 2 * v))(0) - v) <= 1e-2);

    const Eigen::MatrixXd xs = random_matrix(1000, 1, rng);
    const Eigen::MatrixXd ys = xs.array().square().matrix();
    const auto collapsed = train_regression(ys, xs, small(60));
    CHECK(std::abs(collapsed.predict(Eigen::VectorXd::Constant(1, 0.81))(0)) <= 0.2);
}

TEST_CASE("tandem resolves the two-branch teacher") {
    Rng rng(8);
    const Eigen::MatrixXd xs = random_matrix(1000, 1, rng);
    const Eigen::MatrixXd ys = xs.array().square().matrix();
    const auto f = train_regression(xs, ys, small(150));
    const auto f_before = f;
    const auto inverse = train_regression(ys, xs, small(60));
    TrainLog log;
    const auto g = train_tandem_raw(f, ys, -1.0, 1.0, small(60), &log);
    CHECK(f == f_before);

    double err_im = 0.0, err_tandem = 0.0;
    for (int i = 1; i <= 50; ++i) {
        const double y = 0.04 + 0.9 * i / 50.0;
        const Eigen::VectorXd t = Eigen::VectorXd::Constant(1, y);
        err_im += std::pow(std::pow(inverse.predict(t)(0), 2) - y, 2);
        err_tandem += std::pow(std::pow(g.predict(t)(0), 2) - y, 2);
    }
    CHECK(err_tandem <= 0.1 * err_im);

    // five-epoch moving average of the training cycle loss
    std::vector<double> avg;
    for (std::size_t e = 4; e < log.rows.size(); ++e) {
        double s = 0.0;
        for (std::size_t k = e - 4; k <= e; ++k) s += log.rows[k].train_loss;
        avg.push_back(s / 5);
    }
    int rises = 0;
    for (std::size_t i = 1; i < avg.size(); ++i) rises += avg[i] > avg[i - 1] * 1.05 ? 1 : 0;
    CHECK(rises <= 2);
    CHECK(avg.back() < avg.front());
}

TEST_CASE("simplex projection") {
    Rng rng(9);
    for (int trial = 0; trial < 500; ++trial) {
        std::vector<double> v(1 + uniform_index(rng, 8));
        for (auto& e : v) e = uniform(rng, -3.0, 3.0);
        const auto orig = v;
        project_simplex(v);
        double sum = 0.0;
        for (const double e : v) {
            CHECK(e >= 0.0);
            sum += e;
        }
        CHECK(sum == doctest::Approx(1.0).epsilon(1e-12));
        // optimality: the projection is closer than random simplex points
        double d = 0.0;
        for (std::size_t i = 0; i < v.size(); ++i) d += (v[i] - orig[i]) * (v[i] - orig[i]);
        std::vector<double> w(v.size());
        double ws = 0.0;
        for (auto& e : w) ws += e = -std::log(1.0 - uniform01(rng));
        double dw = 0.0;
        for (std::size_t i = 0; i < w.size(); ++i) dw += (w[i] / ws - orig[i]) * (w[i] / ws - orig[i]);
        CHECK(d <= dw + 1e-12);
    }
    std::vector<double> already = {0.2, 0.3, 0.5};
    project_simplex(already);
    CHECK(already[2] == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("gd_inverse recovers a realizable linear target") {
    const auto space = toys::sphere_space(5);
    Rng rng(10);
    auto net = DenseNet::init({5, 3}, rng);
    const Eigen::VectorXd x_star = random_matrix(5, 1, rng, 0.2, 0.8);
    const Eigen::VectorXd target = net.predict(x_star);
    const auto cands = gd_inverse(net, space, target, 8, 2000, rng);
    REQUIRE_FALSE(cands.empty());
    CHECK(cands.front().surrogate_loss <= 1e-6);
    for (std::size_t i = 1; i < cands.size(); ++i) CHECK(cands[i - 1].surrogate_loss <= cands[i].surrogate_loss);
}

TEST_CASE("gd_inverse starts, ranking and snapping") {
    const auto space = DesignSpace::motf();
    Rng rng(11);
    const auto net = random_net({space.encoded_size(), 16, 6}, rng);
    const Eigen::VectorXd target = random_matrix(6, 1, rng);

    Rng a(12), b(12);
    const auto none = gd_inverse(net, space, target, 5, 0, a);
    std::vector<DesignPoint> starts;
    for (int i = 0; i < 5; ++i) starts.push_back(sample_uniform(space, b));
    CHECK(none.size() == 5);
    for (const auto& c : none) CHECK(std::find(starts.begin(), starts.end(), c.x) != starts.end());

    Rng c1(13), c2(13);
    const auto run = gd_inverse(net, space, target, 6, 100, c1);
    const auto again = gd_inverse(net, space, target, 6, 100, c2);
    REQUIRE(run.size() == again.size());
    for (std::size_t i = 0; i < run.size(); ++i) CHECK(run[i].x == again[i].x);
    Rng c3(13);
    for (int i = 0; i < 6; ++i) {
        const auto s = sample_uniform(space, c3);
        const auto e = encode_onehot(space, s);
        CHECK(run.front().surrogate_loss <= loss(net, Eigen::Map<const Eigen::VectorXd>(e.data(), static_cast<Eigen::Index>(e.size())), target));
    }
    for (const auto& c : run) CHECK(validate(space, c.x).ok());
}

TEST_CASE("projected encodings stay feasible") {
    const auto space = DesignSpace::motf();
    Rng rng(14);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<double> v(space.encoded_size());
        for (auto& e : v) e = uniform(rng, -2.0, 2.0);
        project_encoded(space, v);
        std::size_t at = 0;
        for (const auto& p : space.params()) {
            if (p.is_categorical()) {
                double s = 0.0;
                for (std::size_t k = 0; k < p.choice_count(); ++k) {
                    CHECK(v[at + k] >= 0.0);
                    s += v[at + k];
                }
                CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
                at += p.choice_count();
            } else {
                CHECK(v[at] >= 0.0);
                CHECK(v[at] <= 1.0);
                ++at;
            }
        }
        CHECK(validate(space, decode_prediction(space, Eigen::Map<Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())))).ok());
    }
}

TEST_CASE("checkpoint round trip") {
    Rng rng(15);
    const auto net = random_net({7, 9, 4}, rng);
    const auto dir = std::filesystem::temp_directory_path() / "idkit_ckpt_test";
    std::filesystem::remove_all(dir);
    const auto path = dir / "net.bin";
    net.save(path, {{"problem", "toy"}});
    CHECK(DenseNet::load(path) == net);
    std::ifstream side(path.string() + ".json");
    const auto meta = nlohmann::json::parse(side);
    CHECK(meta["widths"] == nlohmann::json({7, 9, 4}));
    CHECK(meta["meta"]["problem"] == "toy");
    CHECK(std::filesystem::file_size(path) == 8 + 8 + 8 + 3 * 8 + 8 * (net.parameter_count() + 8));
    {
        std::ofstream bad(dir / "bad.bin", std::ios::binary);
        bad << "NOTMAGIC";
    }
    CHECK_THROWS_AS(DenseNet::load(dir / "bad.bin"), StructuralError);
    std::filesystem::resize_file(path, std::filesystem::file_size(path) - 4);
    CHECK_THROWS_AS(DenseNet::load(path), StructuralError);
    TrainLog log;
    log.rows = {{1, 0.5, 0.25}};
    log.write_csv(dir / "log.csv");
    std::ifstream csv(dir / "log.csv");
    std::string header, row;
    std::getline(csv, header);
    std::getline(csv, row);
    CHECK(header == "epoch,train_loss,val_loss");
    CHECK(row == "1,0.5,0.25");
    std::filesystem::remove_all(dir);
}
