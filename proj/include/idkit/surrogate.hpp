#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "idkit/design_space.hpp"
#include "idkit/records.hpp"

namespace idkit {

// Fully connected net: ReLU hidden layers, identity output, followed by a
// fixed per-output affine map (out_mean + out_scale * a) so training runs on
// standardized targets. Samples are columns.
struct DenseNet {
    std::vector<std::size_t> widths;      // input, hidden..., output
    std::vector<Eigen::MatrixXd> weights;  // weights[l] is widths[l+1] x widths[l]
    std::vector<Eigen::VectorXd> biases;
    Eigen::VectorXd out_mean;
    Eigen::VectorXd out_scale;

    // He-initialized weights, zero biases, identity output map.
    static DenseNet init(std::vector<std::size_t> widths, Rng& rng);

    std::size_t input_size() const { return widths.front(); }
    std::size_t output_size() const { return widths.back(); }
    std::size_t parameter_count() const;

    Eigen::MatrixXd forward(const Eigen::MatrixXd& x) const;
    Eigen::VectorXd predict(const Eigen::VectorXd& x) const;

    // Binary checkpoint (magic, widths, little-endian f64 row-major blocks)
    // plus <path>.json metadata.
    void save(const std::filesystem::path& path, const nlohmann::json& meta = {}) const;
    static DenseNet load(const std::filesystem::path& path);

    bool operator==(const DenseNet&) const;
};

struct TrainConfig {
    std::size_t epochs = 200;
    std::size_t batch_size = 64;
    double learning_rate = 0.01;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double validation_fraction = 0.1;
    std::vector<std::size_t> hidden = {256, 256, 256};
    double box_penalty = 10.0;  // tandem: weight of the out-of-box penalty

    void check() const;
};

struct TrainLog {
    struct Row {
        std::size_t epoch = 0;
        double train_loss = 0.0;
        double val_loss = 0.0;
    };
    std::vector<Row> rows;
    std::size_t best_epoch = 0;
    double best_val_loss = 0.0;

    void write_csv(const std::filesystem::path& path) const;
};

// Supervised regression x -> y (rows are samples). Mean squared error per
// element on standardized targets, mini-batch SGD with momentum; returns the
// weights from the epoch with the lowest validation loss. The output layer
// starts at zero, i.e. from the predict-the-mean model.
DenseNet train_regression(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, const TrainConfig& cfg,
                          TrainLog* log = nullptr);

// Design datasets: inputs are encode_onehot(x), outputs the responses.
struct EncodedData {
    Eigen::MatrixXd x;  // n x encoded_size
    Eigen::MatrixXd y;  // n x response_dim
};
EncodedData encode_dataset(const DesignSpace& space, std::span<const EvalRecord> records);

DenseNet train_forward(const DesignSpace& space, std::span<const EvalRecord> records, const TrainConfig& cfg,
                       TrainLog* log = nullptr);
DenseNet train_inverse(const DesignSpace& space, std::span<const EvalRecord> records, const TrainConfig& cfg,
                       TrainLog* log = nullptr);

// Gradient of sum_j (model(x)_j - target_j)^2 with respect to x.
Eigen::VectorXd grad_input(const DenseNet& model, const Eigen::VectorXd& x, const Eigen::VectorXd& target);

// Inverse net g trained through the frozen forward net f on the cycle loss
// mean((f(g(y)) - y)^2 / f.out_scale^2) plus box_penalty * squared excursion of
// g(y) outside [lo, hi]. Targets are rows of y. g's output map is centred on
// the box and g starts at the box centre.
DenseNet train_tandem_raw(const DenseNet& forward, const Eigen::MatrixXd& y, double lo, double hi,
                          const TrainConfig& cfg, TrainLog* log = nullptr);
DenseNet train_tandem(const DenseNet& forward, const DesignSpace& space, std::span<const EvalRecord> records,
                      const TrainConfig& cfg, TrainLog* log = nullptr);

// Euclidean projection onto the probability simplex.
void project_simplex(std::span<double> v);
// Clips continuous slots to [0, 1] and projects categorical blocks.
void project_encoded(const DesignSpace& space, std::span<double> encoded);

struct InverseCandidate {
    DesignPoint x;
    double surrogate_loss = 0.0;
};

// Multi-start projected descent on sum (model(x) - target)^2 in the encoded
// box, then snap categorical blocks to their argmax. Starts are included in
// the ranking; duplicates are dropped. Ascending surrogate loss.
std::vector<InverseCandidate> gd_inverse(const DenseNet& model, const DesignSpace& space,
                                         const Eigen::VectorXd& target, std::size_t n_starts, std::size_t n_steps,
                                         Rng& rng, double step = 0.05);

// Decodes inverse-net outputs into valid points.
DesignPoint decode_prediction(const DesignSpace& space, const Eigen::VectorXd& encoded);

}  // namespace idkit
