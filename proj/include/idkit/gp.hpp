#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace idkit {

// Zero-mean GP regression with a squared-exponential ARD kernel on
// standardized targets. Hyperparameters live in log space.
class GaussianProcess {
public:
    struct Hyper {
        std::vector<double> log_lengthscale;
        double log_signal = 0.0;
        double noise = 1e-6;  // observation noise variance, raw target units
    };

    explicit GaussianProcess(std::size_t dim, double noise = 1e-6);

    std::size_t dim() const { return dim_; }
    std::size_t size() const { return static_cast<std::size_t>(x_.rows()); }
    const Hyper& hyper() const { return hyper_; }
    void set_hyper(Hyper h);

    // Replaces the training set and refactorizes.
    void set_data(Eigen::MatrixXd x, const Eigen::VectorXd& y);
    // Appends one observation (raw units) and refactorizes.
    void add(const Eigen::VectorXd& x, double y);

    // Marginal-likelihood ascent on at most `max_points` of the most recent
    // observations; refactorizes on the full set afterwards.
    void fit(int iterations, std::size_t max_points);
    double log_marginal_likelihood() const;

    // Posterior mean and variance in raw target units.
    void predict(const Eigen::MatrixXd& xs, Eigen::VectorXd& mean, Eigen::VectorXd& var) const;
    double predict_mean(const Eigen::VectorXd& x) const;

    // Lowest observed target (raw units).
    double best() const;

private:
    Eigen::MatrixXd kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const;
    void factorize();
    // LML and its gradient w.r.t. (log lengthscales..., log signal) on a subset.
    double lml_and_grad(const Eigen::MatrixXd& x, const Eigen::VectorXd& ys, double scale, const Hyper& h,
                        Eigen::VectorXd* grad) const;

    std::size_t dim_;
    Hyper hyper_;
    Eigen::MatrixXd x_;
    Eigen::VectorXd y_raw_;
    Eigen::VectorXd ys_;
    double y_mean_ = 0.0;
    double y_scale_ = 1.0;
    double jitter_ = 0.0;
    Eigen::LLT<Eigen::MatrixXd> llt_;
    Eigen::VectorXd alpha_;
};

}  // namespace idkit
