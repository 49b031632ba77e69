#include "idkit/gp.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "idkit/error.hpp"

namespace idkit {

namespace {

constexpr double kLogLengthLo = -4.0;  // ~0.018
constexpr double kLogLengthHi = 3.0;   // ~20
constexpr double kLogSignalLo = -2.5;
constexpr double kLogSignalHi = 2.5;

}  // namespace

GaussianProcess::GaussianProcess(std::size_t dim, double noise) : dim_(dim) {
    if (dim == 0) throw ConfigError("GP input dimension must be positive");
    if (!(noise > 0.0)) throw ConfigError("GP noise must be positive");
    hyper_.log_lengthscale.assign(dim, std::log(0.5));
    hyper_.noise = noise;
    x_.resize(0, static_cast<Eigen::Index>(dim));
}

void GaussianProcess::set_hyper(Hyper h) {
    if (h.log_lengthscale.size() != dim_) throw StructuralError("lengthscale count does not match GP dimension");
    hyper_ = std::move(h);
    if (size() > 0) factorize();
}

Eigen::MatrixXd GaussianProcess::kernel(const Eigen::MatrixXd& a, const Eigen::MatrixXd& b) const {
    Eigen::VectorXd inv(static_cast<Eigen::Index>(dim_));
    for (std::size_t d = 0; d < dim_; ++d) inv(static_cast<Eigen::Index>(d)) = std::exp(-hyper_.log_lengthscale[d]);
    const Eigen::MatrixXd as = a * inv.asDiagonal();
    const Eigen::MatrixXd bs = b * inv.asDiagonal();
    Eigen::MatrixXd d2 = (-2.0 * as * bs.transpose()).colwise() + as.rowwise().squaredNorm();
    d2.rowwise() += bs.rowwise().squaredNorm().transpose();
    const double sf2 = std::exp(2.0 * hyper_.log_signal);
    return (d2.cwiseMax(0.0) * -0.5).array().exp().matrix() * sf2;
}

void GaussianProcess::set_data(Eigen::MatrixXd x, const Eigen::VectorXd& y) {
    if (x.cols() != static_cast<Eigen::Index>(dim_) || x.rows() != y.size())
        throw StructuralError("GP training data shape mismatch");
    x_ = std::move(x);
    y_raw_ = y;
    factorize();
}

void GaussianProcess::add(const Eigen::VectorXd& x, double y) {
    if (x.size() != static_cast<Eigen::Index>(dim_)) throw StructuralError("GP input dimension mismatch");
    x_.conservativeResize(x_.rows() + 1, Eigen::NoChange);
    x_.row(x_.rows() - 1) = x.transpose();
    y_raw_.conservativeResize(y_raw_.size() + 1);
    y_raw_(y_raw_.size() - 1) = y;
    factorize();
}

void GaussianProcess::factorize() {
    const Eigen::Index n = x_.rows();
    if (n == 0) return;
    y_mean_ = y_raw_.mean();
    const double var = n > 1 ? (y_raw_.array() - y_mean_).square().sum() / static_cast<double>(n - 1) : 0.0;
    y_scale_ = var > 1e-24 ? std::sqrt(var) : 1.0;
    ys_ = (y_raw_.array() - y_mean_) / y_scale_;
    const Eigen::MatrixXd k = kernel(x_, x_);
    jitter_ = 0.0;
    for (int attempt = 0; attempt < 10; ++attempt) {
        Eigen::MatrixXd kk = k;
        kk.diagonal().array() += hyper_.noise / (y_scale_ * y_scale_) + jitter_;
        llt_.compute(kk);
        if (llt_.info() == Eigen::Success) {
            alpha_ = llt_.solve(ys_);
            return;
        }
        jitter_ = jitter_ == 0.0 ? 1e-10 : jitter_ * 10.0;
    }
    throw NumericalError("GP covariance is not positive definite");
}

double GaussianProcess::lml_and_grad(const Eigen::MatrixXd& x, const Eigen::VectorXd& ys, double scale, const Hyper& h,
                                     Eigen::VectorXd* grad) const {
    const Eigen::Index n = x.rows();
    GaussianProcess probe(dim_, h.noise);
    probe.hyper_ = h;
    const Eigen::MatrixXd kf = probe.kernel(x, x);
    Eigen::MatrixXd k = kf;
    k.diagonal().array() += h.noise / (scale * scale) + jitter_;
    const Eigen::LLT<Eigen::MatrixXd> llt(k);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const Eigen::VectorXd alpha = llt.solve(ys);
    const Eigen::MatrixXd l = llt.matrixL();
    const double logdet = 2.0 * l.diagonal().array().log().sum();
    const double lml = -0.5 * ys.dot(alpha) - 0.5 * logdet - 0.5 * static_cast<double>(n) * std::log(2.0 * std::numbers::pi);
    if (grad) {
        const Eigen::MatrixXd kinv = llt.solve(Eigen::MatrixXd::Identity(n, n));
        const Eigen::MatrixXd w = alpha * alpha.transpose() - kinv;
        const Eigen::MatrixXd wk = w.cwiseProduct(kf);
        grad->resize(static_cast<Eigen::Index>(dim_) + 1);
        for (std::size_t d = 0; d < dim_; ++d) {
            const auto c = static_cast<Eigen::Index>(d);
            const double inv2 = std::exp(-2.0 * h.log_lengthscale[d]);
            double acc = 0.0;
            for (Eigen::Index j = 0; j < n; ++j) {
                for (Eigen::Index i = 0; i < n; ++i) {
                    const double diff = x(i, c) - x(j, c);
                    acc += wk(i, j) * diff * diff;
                }
            }
            (*grad)(c) = 0.5 * acc * inv2;
        }
        (*grad)(static_cast<Eigen::Index>(dim_)) = wk.sum();
    }
    return lml;
}

double GaussianProcess::log_marginal_likelihood() const {
    if (size() == 0) return 0.0;
    return lml_and_grad(x_, ys_, y_scale_, hyper_, nullptr);
}

void GaussianProcess::fit(int iterations, std::size_t max_points) {
    const Eigen::Index n = x_.rows();
    if (n < 2 || iterations <= 0) return;
    const Eigen::Index m = std::min<Eigen::Index>(n, static_cast<Eigen::Index>(std::max<std::size_t>(2, max_points)));
    const Eigen::MatrixXd xs = x_.bottomRows(m);
    Eigen::VectorXd ys = y_raw_.tail(m);
    const double mu = ys.mean();
    const double var = (ys.array() - mu).square().sum() / static_cast<double>(std::max<Eigen::Index>(1, m - 1));
    const double scale = var > 1e-24 ? std::sqrt(var) : 1.0;
    ys = (ys.array() - mu) / scale;

    const auto clamp = [](Hyper& h) {
        for (auto& v : h.log_lengthscale) v = std::clamp(v, kLogLengthLo, kLogLengthHi);
        h.log_signal = std::clamp(h.log_signal, kLogSignalLo, kLogSignalHi);
    };
    Hyper cur = hyper_;
    clamp(cur);
    Eigen::VectorXd g;
    double f = lml_and_grad(xs, ys, scale, cur, &g);
    double step = 0.5;
    for (int it = 0; it < iterations && step > 1e-4 && std::isfinite(f); ++it) {
        const double gmax = std::max(1.0, g.cwiseAbs().maxCoeff());
        Hyper next = cur;
        for (std::size_t d = 0; d < dim_; ++d) next.log_lengthscale[d] += step * g(static_cast<Eigen::Index>(d)) / gmax;
        next.log_signal += step * g(static_cast<Eigen::Index>(dim_)) / gmax;
        clamp(next);
        Eigen::VectorXd gn;
        const double fn = lml_and_grad(xs, ys, scale, next, &gn);
        if (std::isfinite(fn) && fn > f) {
            cur = next;
            f = fn;
            g = gn;
            step *= 1.3;
        } else {
            step *= 0.5;
        }
    }
    hyper_ = cur;
    factorize();
}

void GaussianProcess::predict(const Eigen::MatrixXd& xs, Eigen::VectorXd& mean, Eigen::VectorXd& var) const {
    if (size() == 0) {
        mean = Eigen::VectorXd::Zero(xs.rows());
        var = Eigen::VectorXd::Constant(xs.rows(), std::exp(2.0 * hyper_.log_signal));
        return;
    }
    const Eigen::MatrixXd ks = kernel(xs, x_);
    mean = (ks * alpha_).array() * y_scale_ + y_mean_;
    const Eigen::MatrixXd v = llt_.matrixL().solve(ks.transpose());
    const double sf2 = std::exp(2.0 * hyper_.log_signal);
    var = ((sf2 - v.colwise().squaredNorm().array()).max(0.0) * y_scale_ * y_scale_).matrix().transpose();
}

double GaussianProcess::predict_mean(const Eigen::VectorXd& x) const {
    Eigen::VectorXd mean, var;
    predict(x.transpose(), mean, var);
    return mean(0);
}

double GaussianProcess::best() const {
    if (size() == 0) return std::numeric_limits<double>::infinity();
    return y_raw_.minCoeff();
}

}  // namespace idkit
