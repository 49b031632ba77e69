#include "idkit/surrogate.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include <fmt/format.h>

#include "idkit/error.hpp"

namespace idkit {

namespace {

constexpr char kMagic[8] = {'I', 'D', 'K', 'I', 'T', 'N', 'N', '1'};
constexpr std::uint32_t kVersion = 1;

struct Tape {
    std::vector<Eigen::MatrixXd> a;  // a[0] = input, a[l + 1] = activation of layer l
    std::vector<Eigen::MatrixXd> z;  // pre-activations
};

struct Grads {
    std::vector<Eigen::MatrixXd> w;
    std::vector<Eigen::VectorXd> b;
};

// Returns the standardized output (before the affine output map).
Eigen::MatrixXd run(const DenseNet& net, const Eigen::MatrixXd& x, Tape* tape) {
    Eigen::MatrixXd a = x;
    if (tape) {
        tape->a.assign(1, x);
        tape->z.clear();
    }
    const std::size_t layers = net.weights.size();
    for (std::size_t l = 0; l < layers; ++l) {
        Eigen::MatrixXd z = net.weights[l] * a;
        z.colwise() += net.biases[l];
        a = l + 1 < layers ? Eigen::MatrixXd(z.cwiseMax(0.0)) : z;
        if (tape) {
            tape->z.push_back(std::move(z));
            tape->a.push_back(a);
        }
    }
    return a;
}

Eigen::MatrixXd to_raw(const DenseNet& net, const Eigen::MatrixXd& standardized) {
    return (standardized.array().colwise() * net.out_scale.array()).colwise() + net.out_mean.array();
}

// delta = dL/d(standardized output). Fills parameter gradients and/or the
// input gradient.
void backward(const DenseNet& net, const Tape& tape, Eigen::MatrixXd delta, Grads* g, Eigen::MatrixXd* dx) {
    const std::size_t layers = net.weights.size();
    if (g) {
        g->w.resize(layers);
        g->b.resize(layers);
    }
    for (std::size_t l = layers; l-- > 0;) {
        if (g) {
            g->w[l] = delta * tape.a[l].transpose();
            g->b[l] = delta.rowwise().sum();
        }
        if (l == 0 && !dx) break;
        Eigen::MatrixXd prev = net.weights[l].transpose() * delta;
        if (l > 0) {
            delta = prev.cwiseProduct((tape.z[l - 1].array() > 0.0).cast<double>().matrix());
        } else {
            *dx = std::move(prev);
        }
    }
}

class Momentum {
public:
    explicit Momentum(const DenseNet& net) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            vw_.push_back(Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols()));
            vb_.push_back(Eigen::VectorXd::Zero(net.biases[l].size()));
        }
    }

    void step(DenseNet& net, const Grads& g, double lr, double mu) {
        for (std::size_t l = 0; l < net.weights.size(); ++l) {
            vw_[l] = mu * vw_[l] - lr * g.w[l];
            vb_[l] = mu * vb_[l] - lr * g.b[l];
            net.weights[l] += vw_[l];
            net.biases[l] += vb_[l];
        }
    }

private:
    std::vector<Eigen::MatrixXd> vw_;
    std::vector<Eigen::VectorXd> vb_;
};

void shuffle(std::vector<Eigen::Index>& idx, Rng& rng) {
    for (std::size_t i = idx.size(); i > 1; --i) std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
}

struct Split {
    std::vector<Eigen::Index> train;
    std::vector<Eigen::Index> val;
};

Split split_rows(Eigen::Index n, double fraction, Rng& rng) {
    Split s;
    std::vector<Eigen::Index> idx(static_cast<std::size_t>(n));
    std::iota(idx.begin(), idx.end(), Eigen::Index{0});
    shuffle(idx, rng);
    auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n)));
    if (fraction > 0.0 && n_val == 0 && n >= 2) n_val = 1;
    s.val.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(n_val));
    s.train.assign(idx.begin() + static_cast<std::ptrdiff_t>(n_val), idx.end());
    return s;
}

void check_finite(double loss, std::size_t epoch, const TrainConfig& cfg) {
    if (!std::isfinite(loss))
        throw NumericalError(fmt::format("training diverged at epoch {} (learning rate {}, momentum {}, batch {})", epoch,
                                         cfg.learning_rate, cfg.momentum, cfg.batch_size));
}

std::vector<std::size_t> layer_widths(std::size_t in, const std::vector<std::size_t>& hidden, std::size_t out) {
    std::vector<std::size_t> w{in};
    w.insert(w.end(), hidden.begin(), hidden.end());
    w.push_back(out);
    return w;
}

void put_u64(std::ostream& out, std::uint64_t v) {
    char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(b, 8);
}

std::uint64_t get_u64(std::istream& in) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw StructuralError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return v;
}

void put_f64(std::ostream& out, double d) {
    std::uint64_t v;
    std::memcpy(&v, &d, 8);
    put_u64(out, v);
}

double get_f64(std::istream& in) {
    const std::uint64_t v = get_u64(in);
    double d;
    std::memcpy(&d, &v, 8);
    if (!std::isfinite(d)) throw StructuralError("checkpoint holds a non-finite parameter");
    return d;
}

}  // namespace

DenseNet DenseNet::init(std::vector<std::size_t> widths, Rng& rng) {
    if (widths.size() < 2) throw ConfigError("a network needs input and output widths");
    for (const auto w : widths) {
        if (w == 0) throw ConfigError("layer widths must be positive");
    }
    DenseNet net;
    net.widths = std::move(widths);
    for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
        const auto rows = static_cast<Eigen::Index>(net.widths[l + 1]);
        const auto cols = static_cast<Eigen::Index>(net.widths[l]);
        const double sd = std::sqrt(2.0 / static_cast<double>(cols));
        Eigen::MatrixXd w(rows, cols);
        for (Eigen::Index i = 0; i < rows; ++i) {
            for (Eigen::Index j = 0; j < cols; ++j) w(i, j) = sd * standard_normal(rng);
        }
        net.weights.push_back(std::move(w));
        net.biases.push_back(Eigen::VectorXd::Zero(rows));
    }
    net.out_mean = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(net.widths.back()));
    net.out_scale = Eigen::VectorXd::Ones(static_cast<Eigen::Index>(net.widths.back()));
    return net;
}

std::size_t DenseNet::parameter_count() const {
    std::size_t n = 0;
    for (std::size_t l = 0; l < weights.size(); ++l) n += static_cast<std::size_t>(weights[l].size() + biases[l].size());
    return n;
}

Eigen::MatrixXd DenseNet::forward(const Eigen::MatrixXd& x) const {
    if (x.rows() != static_cast<Eigen::Index>(input_size())) throw StructuralError("network input width mismatch");
    return to_raw(*this, run(*this, x, nullptr));
}

Eigen::VectorXd DenseNet::predict(const Eigen::VectorXd& x) const { return forward(x); }

bool DenseNet::operator==(const DenseNet& o) const {
    if (widths != o.widths) return false;
    for (std::size_t l = 0; l < weights.size(); ++l) {
        if (weights[l] != o.weights[l] || biases[l] != o.biases[l]) return false;
    }
    return out_mean == o.out_mean && out_scale == o.out_scale;
}

void DenseNet::save(const std::filesystem::path& path, const nlohmann::json& meta) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot write " + path.string());
        out.write(kMagic, 8);
        put_u64(out, kVersion);
        put_u64(out, widths.size());
        for (const auto w : widths) put_u64(out, w);
        for (std::size_t l = 0; l < weights.size(); ++l) {
            for (Eigen::Index i = 0; i < weights[l].rows(); ++i) {
                for (Eigen::Index j = 0; j < weights[l].cols(); ++j) put_f64(out, weights[l](i, j));
            }
            for (Eigen::Index i = 0; i < biases[l].size(); ++i) put_f64(out, biases[l](i));
        }
        for (Eigen::Index i = 0; i < out_mean.size(); ++i) put_f64(out, out_mean(i));
        for (Eigen::Index i = 0; i < out_scale.size(); ++i) put_f64(out, out_scale(i));
    }
    nlohmann::ordered_json j;
    j["format"] = "idkit-densenet";
    j["version"] = kVersion;
    j["widths"] = widths;
    j["activation"] = "relu";
    j["output"] = "identity, then out_mean + out_scale * a";
    j["parameters"] = parameter_count();
    if (!meta.is_null()) j["meta"] = meta;
    std::ofstream side(path.string() + ".json", std::ios::trunc);
    side << j.dump(2) << '\n';
}

DenseNet DenseNet::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kMagic, 8) != 0) throw StructuralError(path.string() + " is not a network checkpoint");
    if (get_u64(in) != kVersion) throw StructuralError("unsupported checkpoint version");
    const std::uint64_t count = get_u64(in);
    if (count < 2 || count > 64) throw StructuralError("implausible layer count in checkpoint");
    DenseNet net;
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t w = get_u64(in);
        if (w == 0 || w > (1u << 24)) throw StructuralError("implausible layer width in checkpoint");
        net.widths.push_back(static_cast<std::size_t>(w));
    }
    for (std::size_t l = 0; l + 1 < net.widths.size(); ++l) {
        Eigen::MatrixXd w(static_cast<Eigen::Index>(net.widths[l + 1]), static_cast<Eigen::Index>(net.widths[l]));
        for (Eigen::Index i = 0; i < w.rows(); ++i) {
            for (Eigen::Index j = 0; j < w.cols(); ++j) w(i, j) = get_f64(in);
        }
        Eigen::VectorXd b(w.rows());
        for (Eigen::Index i = 0; i < b.size(); ++i) b(i) = get_f64(in);
        net.weights.push_back(std::move(w));
        net.biases.push_back(std::move(b));
    }
    const auto out = static_cast<Eigen::Index>(net.widths.back());
    net.out_mean.resize(out);
    net.out_scale.resize(out);
    for (Eigen::Index i = 0; i < out; ++i) net.out_mean(i) = get_f64(in);
    for (Eigen::Index i = 0; i < out; ++i) net.out_scale(i) = get_f64(in);
    if (in.peek() != std::char_traits<char>::eof()) throw StructuralError("trailing bytes in checkpoint");
    return net;
}

void TrainConfig::check() const {
    if (epochs == 0) throw ConfigError("epochs must be positive");
    if (batch_size == 0) throw ConfigError("batch size must be positive");
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) throw ConfigError("learning rate must be positive");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
    if (!(validation_fraction >= 0.0 && validation_fraction <= 0.5)) throw ConfigError("validation fraction must lie in [0, 0.5]");
    for (const auto h : hidden) {
        if (h == 0) throw ConfigError("hidden widths must be positive");
    }
    if (!(box_penalty >= 0.0)) throw ConfigError("box penalty must be non-negative");
}

void TrainLog::write_csv(const std::filesystem::path& path) const {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "epoch,train_loss,val_loss\n";
    for (const auto& r : rows) out << fmt::format("{},{:.17g},{:.17g}\n", r.epoch, r.train_loss, r.val_loss);
}

DenseNet train_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const TrainConfig& cfg, TrainLog* log) {
    cfg.check();
    if (x.rows() != y.rows()) throw StructuralError("input and target row counts differ");
    if (x.rows() < 2) throw ConfigError("need at least two samples to train");
    Rng rng(cfg.seed);
    const Eigen::MatrixXd xt = x.transpose();
    const Eigen::MatrixXd yt = y.transpose();
    const Split split = split_rows(x.rows(), cfg.validation_fraction, rng);

    const Eigen::MatrixXd ytrain = yt(Eigen::all, split.train);
    const Eigen::VectorXd mean = ytrain.rowwise().mean();
    Eigen::VectorXd scale = ((ytrain.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
    for (Eigen::Index i = 0; i < scale.size(); ++i) {
        if (!(scale(i) > 1e-12)) scale(i) = 1.0;
    }
    const auto standardize = [&](const Eigen::MatrixXd& raw) -> Eigen::MatrixXd {
        return (raw.colwise() - mean).array().colwise() / scale.array();
    };

    DenseNet net = DenseNet::init(layer_widths(static_cast<std::size_t>(x.cols()), cfg.hidden, static_cast<std::size_t>(y.cols())), rng);
    // start from the predict-the-mean model
    net.weights.back().setZero();
    net.out_mean = mean;
    net.out_scale = scale;
    Momentum opt(net);
    const auto out_dim = static_cast<double>(y.cols());

    const auto eval_loss = [&](const std::vector<Eigen::Index>& rows) {
        if (rows.empty()) return 0.0;
        const Eigen::MatrixXd pred = run(net, xt(Eigen::all, rows), nullptr);
        return (pred - standardize(yt(Eigen::all, rows))).squaredNorm() / (static_cast<double>(rows.size()) * out_dim);
    };

    DenseNet best = net;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<Eigen::Index> order = split.train;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            const double count = static_cast<double>(rows.size()) * out_dim;
            Tape tape;
            const Eigen::MatrixXd diff = run(net, xt(Eigen::all, rows), &tape) - standardize(yt(Eigen::all, rows));
            total += diff.squaredNorm();
            Grads g;
            backward(net, tape, 2.0 * diff / count, &g, nullptr);
            opt.step(net, g, cfg.learning_rate, cfg.momentum);
        }
        const double train_loss = total / (static_cast<double>(order.size()) * out_dim);
        check_finite(train_loss, epoch, cfg);
        const double val_loss = split.val.empty() ? train_loss : eval_loss(split.val);
        check_finite(val_loss, epoch, cfg);
        if (log) log->rows.push_back({epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best = net;
        }
    }
    if (log) {
        log->best_epoch = best_epoch;
        log->best_val_loss = best_val;
    }
    return best;
}

EncodedData encode_dataset(const DesignSpace& space, std::span<const EvalRecord> records) {
    EncodedData d;
    const auto n = static_cast<Eigen::Index>(records.size());
    d.x.resize(n, static_cast<Eigen::Index>(space.encoded_size()));
    d.y.resize(n, static_cast<Eigen::Index>(space.response_dim()));
    for (Eigen::Index i = 0; i < n; ++i) {
        const auto& r = records[static_cast<std::size_t>(i)];
        if (!r.y || r.y->size() != space.response_dim())
            throw StructuralError(fmt::format("record {} lacks a response of length {}", i, space.response_dim()));
        const auto e = encode_onehot(space, r.x);
        for (std::size_t j = 0; j < e.size(); ++j) d.x(i, static_cast<Eigen::Index>(j)) = e[j];
        for (std::size_t j = 0; j < r.y->size(); ++j) d.y(i, static_cast<Eigen::Index>(j)) = (*r.y)[j];
    }
    return d;
}

DenseNet train_forward(const DesignSpace& space, std::span<const EvalRecord> records, const TrainConfig& cfg, TrainLog* log) {
    if (records.size() < 100) throw ConfigError("surrogate training needs at least 100 records");
    const auto d = encode_dataset(space, records);
    return train_regression(d.x, d.y, cfg, log);
}

DenseNet train_inverse(const DesignSpace& space, std::span<const EvalRecord> records, const TrainConfig& cfg, TrainLog* log) {
    if (records.size() < 100) throw ConfigError("inverse training needs at least 100 records");
    const auto d = encode_dataset(space, records);
    return train_regression(d.y, d.x, cfg, log);
}

Eigen::VectorXd grad_input(const DenseNet& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target) {
    if (target.size() != static_cast<Eigen::Index>(model.output_size())) throw StructuralError("target width mismatch");
    Tape tape;
    const Eigen::MatrixXd out = to_raw(model, run(model, x, &tape));
    const Eigen::MatrixXd delta = 2.0 * (out - target).cwiseProduct(model.out_scale);
    Eigen::MatrixXd dx;
    backward(model, tape, delta, nullptr, &dx);
    return dx.col(0);
}

DenseNet train_tandem_raw(const DenseNet& forward, const Eigen::MatrixXd& y, double lo, double hi, const TrainConfig& cfg,
                          TrainLog* log) {
    cfg.check();
    if (!(hi > lo)) throw ConfigError("tandem box must have hi > lo");
    if (y.cols() != static_cast<Eigen::Index>(forward.output_size())) throw StructuralError("tandem target width mismatch");
    if (y.rows() < 2) throw ConfigError("need at least two targets to train");
    Rng rng(cfg.seed);
    const Eigen::MatrixXd yt = y.transpose();
    const Split split = split_rows(y.rows(), cfg.validation_fraction, rng);
    const std::size_t in_f = forward.input_size();
    DenseNet g = DenseNet::init(layer_widths(forward.output_size(), cfg.hidden, in_f), rng);
    g.weights.back().setZero();
    g.out_mean = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(in_f), 0.5 * (lo + hi));
    g.out_scale = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(in_f), 0.5 * (hi - lo));
    Momentum opt(g);
    const auto out_dim = static_cast<double>(forward.output_size());
    const Eigen::VectorXd inv_scale = forward.out_scale.cwiseInverse();

    const auto cycle = [&](const std::vector<Eigen::Index>& rows) {
        if (rows.empty()) return 0.0;
        const Eigen::MatrixXd target = yt(Eigen::all, rows);
        const Eigen::MatrixXd r = (forward.forward(g.forward(target)) - target).array().colwise() * inv_scale.array();
        return r.squaredNorm() / (static_cast<double>(rows.size()) * out_dim);
    };

    DenseNet best = g;
    double best_val = std::numeric_limits<double>::infinity();
    std::size_t best_epoch = 0;
    std::vector<Eigen::Index> order = split.train;
    for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
        shuffle(order, rng);
        double total = 0.0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
            const std::size_t end = std::min(order.size(), start + cfg.batch_size);
            const std::vector<Eigen::Index> rows(order.begin() + static_cast<std::ptrdiff_t>(start),
                                                 order.begin() + static_cast<std::ptrdiff_t>(end));
            const double b = static_cast<double>(rows.size());
            const Eigen::MatrixXd target = yt(Eigen::all, rows);
            Tape tg, tf;
            const Eigen::MatrixXd xg = to_raw(g, run(g, target, &tg));
            const Eigen::MatrixXd yf = to_raw(forward, run(forward, xg, &tf));
            const Eigen::MatrixXd r = (yf - target).array().colwise() * inv_scale.array();
            total += r.squaredNorm();
            // d(cycle)/d(standardized f output) = 2 r / count
            Eigen::MatrixXd dxg;
            backward(forward, tf, 2.0 * r / (b * out_dim), nullptr, &dxg);
            const Eigen::MatrixXd above = (xg.array() - hi).max(0.0);
            const Eigen::MatrixXd below = (lo - xg.array()).max(0.0);
            dxg += cfg.box_penalty * 2.0 * (above - below) / (b * static_cast<double>(in_f));
            Grads grads;
            backward(g, tg, dxg.array().colwise() * g.out_scale.array(), &grads, nullptr);
            opt.step(g, grads, cfg.learning_rate, cfg.momentum);
        }
        const double train_loss = total / (static_cast<double>(order.size()) * out_dim);
        check_finite(train_loss, epoch, cfg);
        const double val_loss = split.val.empty() ? train_loss : cycle(split.val);
        check_finite(val_loss, epoch, cfg);
        if (log) log->rows.push_back({epoch, train_loss, val_loss});
        if (val_loss < best_val) {
            best_val = val_loss;
            best_epoch = epoch;
            best = g;
        }
    }
    if (log) {
        log->best_epoch = best_epoch;
        log->best_val_loss = best_val;
    }
    return best;
}

DenseNet train_tandem(const DenseNet& forward, const DesignSpace& space, std::span<const EvalRecord> records,
                      const TrainConfig& cfg, TrainLog* log) {
    if (records.size() < 100) throw ConfigError("tandem training needs at least 100 records");
    if (forward.input_size() != space.encoded_size()) throw StructuralError("forward model does not match the design space");
    const auto d = encode_dataset(space, records);
    return train_tandem_raw(forward, d.y, 0.0, 1.0, cfg, log);
}

void project_simplex(std::span<double> v) {
    if (v.empty()) return;
    std::vector<double> u(v.begin(), v.end());
    std::sort(u.begin(), u.end(), std::greater<>());
    double cumulative = 0.0;
    double theta = 0.0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        cumulative += u[i];
        const double t = (cumulative - 1.0) / static_cast<double>(i + 1);
        if (u[i] - t > 0.0) theta = t;
    }
    for (auto& x : v) x = std::max(0.0, x - theta);
}

void project_encoded(const DesignSpace& space, std::span<double> encoded) {
    if (encoded.size() != space.encoded_size()) throw StructuralError("encoded vector length mismatch");
    std::size_t at = 0;
    for (const auto& p : space.params()) {
        if (p.is_categorical()) {
            project_simplex(encoded.subspan(at, p.choice_count()));
            at += p.choice_count();
        } else {
            encoded[at] = std::clamp(encoded[at], 0.0, 1.0);
            ++at;
        }
    }
}

DesignPoint decode_prediction(const DesignSpace& space, const Eigen::VectorXd& encoded) {
    return decode_onehot(space, std::span<const double>(encoded.data(), static_cast<std::size_t>(encoded.size())));
}

std::vector<InverseCandidate> gd_inverse(const DenseNet& model, const DesignSpace& space, const Eigen::VectorXd& target,
                                         std::size_t n_starts, std::size_t n_steps, Rng& rng, double step) {
    if (model.input_size() != space.encoded_size()) throw StructuralError("model input does not match the design space");
    if (target.size() != static_cast<Eigen::Index>(model.output_size())) throw StructuralError("target width mismatch");
    const auto loss_at = [&](const Eigen::VectorXd& x) { return (model.predict(x) - target).squaredNorm(); };
    const auto to_vec = [](const std::vector<double>& v) { return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size())).eval(); };

    std::vector<DesignPoint> starts;
    for (std::size_t s = 0; s < n_starts; ++s) starts.push_back(sample_uniform(space, rng));
    std::vector<InverseCandidate> finals(n_starts);
#pragma omp parallel for schedule(dynamic)
    for (std::ptrdiff_t s = 0; s < static_cast<std::ptrdiff_t>(n_starts); ++s) {
        Eigen::VectorXd x = to_vec(encode_onehot(space, starts[static_cast<std::size_t>(s)]));
        double loss = loss_at(x);
        double eta = step;
        for (std::size_t t = 0; t < n_steps; ++t) {
            const Eigen::VectorXd g = grad_input(model, x, target);
            bool moved = false;
            for (int tries = 0; tries < 40; ++tries) {
                Eigen::VectorXd xn = x - eta * g;
                project_encoded(space, std::span<double>(xn.data(), static_cast<std::size_t>(xn.size())));
                const double ln = loss_at(xn);
                if (ln < loss) {
                    x = std::move(xn);
                    loss = ln;
                    eta *= 1.5;
                    moved = true;
                    break;
                }
                eta *= 0.5;
            }
            if (!moved) break;
        }
        InverseCandidate c;
        c.x = decode_prediction(space, x);
        c.surrogate_loss = loss_at(to_vec(encode_onehot(space, c.x)));
        finals[static_cast<std::size_t>(s)] = std::move(c);
    }
    std::vector<InverseCandidate> all;
    for (const auto& p : starts) all.push_back({p, loss_at(to_vec(encode_onehot(space, p)))});
    for (auto& c : finals) all.push_back(std::move(c));
    std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.surrogate_loss < b.surrogate_loss; });
    std::vector<InverseCandidate> out;
    for (auto& c : all) {
        const bool dup = std::any_of(out.begin(), out.end(), [&](const auto& o) { return o.x == c.x; });
        if (!dup) out.push_back(std::move(c));
    }
    return out;
}

}  // namespace idkit
