#include "idkit/optimizers.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <limits>
#include <numbers>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "idkit/error.hpp"
#include "idkit/gp.hpp"

namespace idkit {

namespace {

using Unit = std::vector<double>;

double reflect01(double v) {
    // Fold onto [0, 1] by mirroring at the faces.
    v = std::fmod(std::abs(v), 2.0);
    return v > 1.0 ? 2.0 - v : v;
}

Unit random_unit(const DesignSpace& space, Rng& rng) {
    Unit u(space.size());
    for (std::size_t i = 0; i < space.size(); ++i) {
        const auto& p = space.param(i);
        if (p.is_categorical()) {
            const std::size_t k = p.choice_count();
            u[i] = static_cast<double>(uniform_index(rng, k)) / static_cast<double>(k);
        } else {
            u[i] = uniform01(rng);
        }
    }
    return u;
}

std::size_t choice_of(double u, std::size_t k) {
    const double scaled = std::floor(u * static_cast<double>(k) + 1e-9);
    if (!(scaled > 0.0)) return 0;
    return std::min(static_cast<std::size_t>(scaled), k - 1);
}

double norm_pdf(double z) { return std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi); }
double norm_cdf(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

void require(bool ok, const std::string& what) {
    if (!ok) throw ConfigError(what);
}

bool is_integer(double v) { return v == std::floor(v); }

}  // namespace

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::vector<Unit> propose(std::size_t batch, Rng& rng) = 0;
    virtual std::vector<DesignPoint> points(const DesignSpace& space, std::size_t batch, Rng& rng) {
        std::vector<DesignPoint> out;
        for (const auto& u : propose(batch, rng)) out.push_back(denormalize(space, u).point);
        return out;
    }
    virtual void observe(const Unit& u, double loss, bool warm) = 0;
    virtual bool serial() const { return false; }
};

namespace {

class RandomSearch final : public Strategy {
public:
    explicit RandomSearch(const DesignSpace& space) : space_(space) {}

    std::vector<Unit> propose(std::size_t batch, Rng& rng) override {
        std::vector<Unit> out;
        for (const auto& p : points(space_, batch, rng)) out.push_back(normalize(space_, p));
        return out;
    }
    std::vector<DesignPoint> points(const DesignSpace& space, std::size_t batch, Rng& rng) override {
        std::vector<DesignPoint> out;
        for (std::size_t b = 0; b < batch; ++b) out.push_back(sample_uniform(space, rng));
        return out;
    }
    void observe(const Unit&, double, bool) override {}

private:
    const DesignSpace& space_;
};

// (1+1)-ES with the 1/5 success rule.
class OnePlusOne final : public Strategy {
public:
    OnePlusOne(const DesignSpace& space, const OptimizerConfig& cfg, Rng& rng) : space_(space) {
        sigma_ = cfg.get("sigma0", 0.3);
        success_ = cfg.get("success", 1.22);
        failure_ = cfg.get("failure", 0.82);
        const std::size_t ncat = space.categorical_count();
        p_cat_ = cfg.get("p_cat", ncat > 0 ? 1.0 / static_cast<double>(ncat) : 0.0);
        incumbent_ = random_unit(space, rng);
    }

    bool serial() const override { return true; }

    std::vector<Unit> propose(std::size_t batch, Rng& rng) override {
        std::vector<Unit> out;
        for (std::size_t b = 0; b < batch; ++b) {
            Unit child = incumbent_;
            for (std::size_t i = 0; i < child.size(); ++i) {
                const auto& p = space_.param(i);
                if (p.is_categorical()) {
                    const std::size_t k = p.choice_count();
                    if (k > 1 && uniform01(rng) < p_cat_) {
                        const std::size_t cur = choice_of(child[i], k);
                        std::size_t next = uniform_index(rng, k - 1);
                        if (next >= cur) ++next;
                        child[i] = static_cast<double>(next) / static_cast<double>(k);
                    }
                } else {
                    child[i] = reflect01(child[i] + sigma_ * standard_normal(rng));
                }
            }
            out.push_back(std::move(child));
        }
        return out;
    }

    void observe(const Unit& u, double loss, bool warm) override {
        if (loss < incumbent_loss_) {
            incumbent_ = u;
            incumbent_loss_ = loss;
            if (!warm) sigma_ = std::min(1.0, sigma_ * success_);
        } else if (!warm) {
            sigma_ = std::max(1e-15, sigma_ * failure_);
        }
    }

    double sigma() const { return sigma_; }
    const Unit& incumbent() const { return incumbent_; }

private:
    const DesignSpace& space_;
    double sigma_;
    double success_;
    double failure_;
    double p_cat_;
    Unit incumbent_;
    double incumbent_loss_ = std::numeric_limits<double>::infinity();
};

// Univariate Parzen estimators per coordinate; the good set is the best
// ceil(gamma sqrt(n)) observations, capped at 25.
class Tpe final : public Strategy {
public:
    Tpe(const DesignSpace& space, const OptimizerConfig& cfg) : space_(space) {
        gamma_ = cfg.get("gamma", 0.25);
        n_candidates_ = static_cast<std::size_t>(cfg.get("n_candidates", 24));
        n_startup_ = static_cast<std::size_t>(cfg.get("n_startup", 10));
        prior_weight_ = cfg.get("prior_weight", 1.0);
    }

    std::vector<Unit> propose(std::size_t batch, Rng& rng) override {
        std::vector<Unit> out;
        if (obs_.size() < n_startup_) {
            for (std::size_t b = 0; b < batch; ++b) out.push_back(random_unit(space_, rng));
            return out;
        }
        std::vector<std::size_t> order(obs_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return obs_[a].second < obs_[b].second; });
        // good set of ceil(gamma sqrt(n)) points, at most 25, as in hyperopt
        const auto n_good = std::clamp<std::size_t>(
            static_cast<std::size_t>(std::ceil(gamma_ * std::sqrt(static_cast<double>(obs_.size())))), 1, 25);
        out.assign(batch, Unit(space_.size()));
        for (std::size_t d = 0; d < space_.size(); ++d) {
            std::vector<double> good, bad;
            for (std::size_t r = 0; r < order.size(); ++r) (r < n_good ? good : bad).push_back(obs_[order[r]].first[d]);
            const auto& p = space_.param(d);
            if (p.is_categorical()) {
                const auto l = counts(good, p.choice_count());
                const auto g = counts(bad, p.choice_count());
                for (auto& u : out) u[d] = pick_categorical(l, g, rng);
            } else {
                const Parzen l = build(good);
                const Parzen g = build(bad);
                for (auto& u : out) u[d] = pick_continuous(l, g, rng);
            }
        }
        return out;
    }

    void observe(const Unit& u, double loss, bool) override { obs_.emplace_back(u, loss); }

private:
    struct Parzen {
        std::vector<double> mu;
        std::vector<double> sigma;
        std::vector<double> weight;  // normalized
        std::vector<double> mass;    // truncation mass on [0, 1]

        double pdf(double x) const {
            double acc = 0.0;
            for (std::size_t j = 0; j < mu.size(); ++j) acc += weight[j] * norm_pdf((x - mu[j]) / sigma[j]) / (sigma[j] * mass[j]);
            return acc;
        }

        double sample(Rng& rng) const {
            double r = uniform01(rng);
            std::size_t j = 0;
            while (j + 1 < weight.size() && r >= weight[j]) {
                r -= weight[j];
                ++j;
            }
            for (int tries = 0; tries < 100; ++tries) {
                const double x = mu[j] + sigma[j] * standard_normal(rng);
                if (x >= 0.0 && x <= 1.0) return x;
            }
            return uniform01(rng);
        }
    };

    Parzen build(std::vector<double> values) const {
        // Prior component N(0.5, 1) plus one component per observation with the
        // nearest-neighbour bandwidth, clipped to [1/min(100, n+1), 1].
        Parzen pz;
        std::vector<std::pair<double, bool>> all;
        for (const double v : values) all.emplace_back(v, false);
        all.emplace_back(0.5, true);
        std::stable_sort(all.begin(), all.end(), [](const auto& a, const auto& b) { return a.first < b.first; });
        const double sigma_min = 1.0 / std::min(100.0, static_cast<double>(values.size()) + 1.0);
        double total = 0.0;
        for (std::size_t i = 0; i < all.size(); ++i) {
            const double v = all[i].first;
            double s = 1.0;
            if (!all[i].second) {
                const double left = i > 0 ? v - all[i - 1].first : v;
                const double right = i + 1 < all.size() ? all[i + 1].first - v : 1.0 - v;
                s = std::clamp(std::max(left, right), sigma_min, 1.0);
            }
            const double w = all[i].second ? prior_weight_ : 1.0;
            pz.mu.push_back(v);
            pz.sigma.push_back(s);
            pz.weight.push_back(w);
            pz.mass.push_back(std::max(1e-12, norm_cdf((1.0 - v) / s) - norm_cdf(-v / s)));
            total += w;
        }
        for (auto& w : pz.weight) w /= total;
        return pz;
    }

    double pick_continuous(const Parzen& l, const Parzen& g, Rng& rng) const {
        double best = 0.5;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n_candidates_; ++c) {
            const double x = l.sample(rng);
            const double score = std::log(l.pdf(x) + 1e-300) - std::log(g.pdf(x) + 1e-300);
            if (score > best_score) {
                best_score = score;
                best = x;
            }
        }
        return best;
    }

    // Smoothed empirical choice frequencies.
    std::vector<double> counts(const std::vector<double>& vals, std::size_t k) const {
        std::vector<double> p(k, prior_weight_);
        for (const double v : vals) p[choice_of(v, k)] += 1.0;
        double s = 0.0;
        for (const double x : p) s += x;
        for (auto& x : p) x /= s;
        return p;
    }

    double pick_categorical(const std::vector<double>& l, const std::vector<double>& g, Rng& rng) const {
        const std::size_t k = l.size();
        std::size_t best = 0;
        double best_score = -std::numeric_limits<double>::infinity();
        for (std::size_t c = 0; c < n_candidates_; ++c) {
            double r = uniform01(rng);
            std::size_t j = 0;
            while (j + 1 < k && r >= l[j]) {
                r -= l[j];
                ++j;
            }
            const double score = std::log(l[j]) - std::log(g[j]);
            if (score > best_score) {
                best_score = score;
                best = j;
            }
        }
        return static_cast<double>(best) / static_cast<double>(k);
    }

    const DesignSpace& space_;
    double gamma_;
    std::size_t n_candidates_;
    std::size_t n_startup_;
    double prior_weight_;
    std::vector<std::pair<Unit, double>> obs_;
};

// Sequential RACOS: shrink a random axis-aligned box around a positive
// sample until it excludes every negative, then resample a few coordinates.
class Sracos final : public Strategy {
public:
    Sracos(const DesignSpace& space, const OptimizerConfig& cfg) : space_(space) {
        epsilon_ = cfg.get("epsilon", 0.05);
        n_init_ = static_cast<std::size_t>(cfg.get("n_init", 10));
        positive_ = static_cast<std::size_t>(cfg.get("positive", 1));
        negative_ = static_cast<std::size_t>(cfg.get("negative", 10));
        uncertain_ = static_cast<std::size_t>(cfg.get("uncertain_bits", 1));
    }

    std::vector<Unit> propose(std::size_t batch, Rng& rng) override {
        std::vector<Unit> out;
        for (std::size_t b = 0; b < batch; ++b) {
            if (seen_ < n_init_ || pool_.size() <= positive_ || uniform01(rng) < epsilon_) {
                out.push_back(random_unit(space_, rng));
                continue;
            }
            out.push_back(sample_region(rng));
        }
        return out;
    }

    void observe(const Unit& u, double loss, bool) override {
        ++seen_;
        const auto at = std::upper_bound(pool_.begin(), pool_.end(), loss, [](double l, const auto& e) { return l < e.second; });
        pool_.insert(at, {u, loss});
        if (pool_.size() > positive_ + negative_) pool_.pop_back();
    }

    std::vector<double> positive_losses() const {
        std::vector<double> out;
        for (std::size_t i = 0; i < std::min(positive_, pool_.size()); ++i) out.push_back(pool_[i].second);
        return out;
    }
    std::vector<double> negative_losses() const {
        std::vector<double> out;
        for (std::size_t i = positive_; i < pool_.size(); ++i) out.push_back(pool_[i].second);
        return out;
    }

private:
    Unit sample_region(Rng& rng) const {
        const std::size_t dim = space_.size();
        const Unit& pos = pool_[uniform_index(rng, std::min(positive_, pool_.size()))].first;
        Unit lo(dim, 0.0), hi(dim, 1.0);
        for (std::size_t n = positive_; n < pool_.size(); ++n) {
            const Unit& neg = pool_[n].first;
            for (int guard = 0; guard < 64; ++guard) {
                bool inside = true;
                for (std::size_t d = 0; d < dim && inside; ++d) inside = neg[d] >= lo[d] && neg[d] <= hi[d];
                if (!inside) break;
                const std::size_t d = uniform_index(rng, dim);
                if (neg[d] < pos[d]) {
                    lo[d] = uniform(rng, neg[d], pos[d]);
                    if (lo[d] <= neg[d]) lo[d] = std::nextafter(neg[d], pos[d]);
                } else if (neg[d] > pos[d]) {
                    hi[d] = uniform(rng, pos[d], neg[d]);
                    if (hi[d] >= neg[d]) hi[d] = std::nextafter(neg[d], pos[d]);
                }
            }
        }
        Unit x = pos;
        for (int attempt = 0; attempt < 16; ++attempt) {
            x = pos;
            for (std::size_t b = 0; b < std::min(uncertain_, dim); ++b) {
                const std::size_t d = uniform_index(rng, dim);
                const double v = uniform(rng, lo[d], hi[d]);
                const auto& p = space_.param(d);
                x[d] = p.is_categorical() ? static_cast<double>(choice_of(v, p.choice_count())) / static_cast<double>(p.choice_count()) : v;
            }
            if (x != pos) break;
        }
        return x;
    }

    const DesignSpace& space_;
    double epsilon_;
    std::size_t n_init_;
    std::size_t positive_;
    std::size_t negative_;
    std::size_t uncertain_;
    std::size_t seen_ = 0;
    std::vector<std::pair<Unit, double>> pool_;  // ascending loss
};

// GP-EI in a one-hot embedding of the unit coordinates.
class Bayesian final : public Strategy {
public:
    Bayesian(const DesignSpace& space, const OptimizerConfig& cfg) : space_(space), gp_(embedded_size(space), cfg.get("noise", 1e-6)) {
        n_init_ = static_cast<std::size_t>(cfg.get("n_init", 5));
        n_raw_ = static_cast<std::size_t>(cfg.get("n_raw", 256));
        n_refine_ = static_cast<std::size_t>(cfg.get("n_refine", 4));
        refine_steps_ = static_cast<std::size_t>(cfg.get("refine_steps", 25));
        fit_growth_ = cfg.get("fit_growth", 1.25);
        fit_max_points_ = static_cast<std::size_t>(cfg.get("fit_max_points", 150));
        fit_iters_ = static_cast<int>(cfg.get("fit_iters", 40));
    }

    bool serial() const override { return true; }

    std::vector<Unit> propose(std::size_t batch, Rng& rng) override {
        std::vector<Unit> out;
        if (xs_.size() < n_init_) {
            for (std::size_t b = 0; b < batch; ++b) out.push_back(random_unit(space_, rng));
            return out;
        }
        sync();
        if (static_cast<double>(xs_.size()) >= next_fit_) {
            gp_.fit(fit_iters_, fit_max_points_);
            next_fit_ = std::max(static_cast<double>(xs_.size()) + 1.0, std::ceil(static_cast<double>(xs_.size()) * fit_growth_));
        }
        GaussianProcess model = gp_;
        for (std::size_t b = 0; b < batch; ++b) {
            Unit u = maximize_ei(model, rng);
            if (b + 1 < batch) {
                const Eigen::VectorXd e = embed(u);
                model.add(e, model.predict_mean(e));  // posterior-mean fantasy
            }
            out.push_back(std::move(u));
        }
        return out;
    }

    void observe(const Unit& u, double loss, bool) override {
        xs_.push_back(u);
        ys_.push_back(loss);
        dirty_ = true;
    }

    double posterior_mean(const Unit& u) {
        sync();
        return gp_.predict_mean(embed(u));
    }

private:
    static std::size_t embedded_size(const DesignSpace& space) {
        std::size_t n = 0;
        for (const auto& p : space.params()) n += p.is_categorical() ? p.choice_count() : 1;
        return n;
    }

    Eigen::VectorXd embed(const Unit& u) const {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(gp_.dim()));
        Eigen::Index at = 0;
        for (std::size_t i = 0; i < space_.size(); ++i) {
            const auto& p = space_.param(i);
            if (p.is_categorical()) {
                const std::size_t k = p.choice_count();
                e(at + static_cast<Eigen::Index>(choice_of(u[i], k))) = 1.0;
                at += static_cast<Eigen::Index>(k);
            } else {
                e(at++) = u[i];
            }
        }
        return e;
    }

    void sync() {
        if (!dirty_) return;
        Eigen::MatrixXd x(static_cast<Eigen::Index>(xs_.size()), static_cast<Eigen::Index>(gp_.dim()));
        Eigen::VectorXd y(static_cast<Eigen::Index>(ys_.size()));
        for (std::size_t i = 0; i < xs_.size(); ++i) {
            x.row(static_cast<Eigen::Index>(i)) = embed(xs_[i]).transpose();
            y(static_cast<Eigen::Index>(i)) = ys_[i];
        }
        gp_.set_data(std::move(x), y);
        dirty_ = false;
    }

    static double expected_improvement(double best, double mean, double var) {
        const double s = std::sqrt(std::max(var, 1e-300));
        const double imp = best - mean;
        if (s < 1e-150) return std::max(imp, 0.0);
        const double z = imp / s;
        return imp * norm_cdf(z) + s * norm_pdf(z);
    }

    Unit perturb(const Unit& u, double step, Rng& rng) const {
        Unit v = u;
        const std::size_t ncat = space_.categorical_count();
        for (std::size_t i = 0; i < v.size(); ++i) {
            const auto& p = space_.param(i);
            if (p.is_categorical()) {
                if (uniform01(rng) < 0.5 / static_cast<double>(std::max<std::size_t>(1, ncat))) {
                    const std::size_t k = p.choice_count();
                    v[i] = static_cast<double>(uniform_index(rng, k)) / static_cast<double>(k);
                }
            } else {
                v[i] = reflect01(v[i] + step * standard_normal(rng));
            }
        }
        return v;
    }

    Unit maximize_ei(const GaussianProcess& model, Rng& rng) const {
        const double best = model.best();
        std::vector<Unit> probes;
        for (std::size_t i = 0; i < n_raw_; ++i) probes.push_back(random_unit(space_, rng));
        // local probes around the best observations
        std::vector<std::size_t> order(ys_.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ys_[a] < ys_[b]; });
        for (std::size_t r = 0; r < std::min<std::size_t>(5, order.size()); ++r) {
            for (int j = 0; j < 16; ++j) probes.push_back(perturb(xs_[order[r]], 0.05, rng));
        }
        Eigen::MatrixXd e(static_cast<Eigen::Index>(probes.size()), static_cast<Eigen::Index>(model.dim()));
        for (std::size_t i = 0; i < probes.size(); ++i) e.row(static_cast<Eigen::Index>(i)) = embed(probes[i]).transpose();
        Eigen::VectorXd mean, var;
        model.predict(e, mean, var);
        std::vector<std::pair<double, std::size_t>> scored;
        for (std::size_t i = 0; i < probes.size(); ++i) {
            scored.emplace_back(expected_improvement(best, mean(static_cast<Eigen::Index>(i)), var(static_cast<Eigen::Index>(i))), i);
        }
        std::stable_sort(scored.begin(), scored.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
        Unit winner = probes[scored.front().second];
        double winner_ei = scored.front().first;
        for (std::size_t s = 0; s < std::min(n_refine_, scored.size()); ++s) {
            Unit cur = probes[scored[s].second];
            double cur_ei = scored[s].first;
            double step = 0.05;
            for (std::size_t t = 0; t < refine_steps_; ++t) {
                const Unit cand = perturb(cur, step, rng);
                Eigen::VectorXd m1, v1;
                model.predict(embed(cand).transpose(), m1, v1);
                const double ei = expected_improvement(best, m1(0), v1(0));
                if (ei > cur_ei) {
                    cur = cand;
                    cur_ei = ei;
                    step = std::min(0.2, step * 1.5);
                } else {
                    step = std::max(1e-6, step * 0.6);
                }
            }
            if (cur_ei > winner_ei) {
                winner = cur;
                winner_ei = cur_ei;
            }
        }
        return winner;
    }

    const DesignSpace& space_;
    GaussianProcess gp_;
    std::vector<Unit> xs_;
    std::vector<double> ys_;
    bool dirty_ = false;
    double next_fit_ = 0.0;
    std::size_t n_init_;
    std::size_t n_raw_;
    std::size_t n_refine_;
    std::size_t refine_steps_;
    double fit_growth_;
    std::size_t fit_max_points_;
    int fit_iters_;
};

void check_config(OptimizerKind kind, const DesignSpace& space, const OptimizerConfig& cfg) {
    std::set<std::string> allowed;
    switch (kind) {
        case OptimizerKind::rs: break;
        case OptimizerKind::tpe: allowed = {"gamma", "n_candidates", "n_startup", "prior_weight"}; break;
        case OptimizerKind::es: allowed = {"sigma0", "success", "failure", "p_cat"}; break;
        case OptimizerKind::sracos: allowed = {"epsilon", "n_init", "positive", "negative", "uncertain_bits"}; break;
        case OptimizerKind::bo:
            allowed = {"n_init", "noise", "n_raw", "n_refine", "refine_steps", "fit_growth", "fit_max_points", "fit_iters"};
            break;
    }
    for (const auto& [key, value] : cfg.values) {
        require(allowed.count(key) > 0, fmt::format("unknown {} option '{}'", to_string(kind), key));
        require(std::isfinite(value), fmt::format("{} option '{}' must be finite", to_string(kind), key));
    }
    const auto count = [&](const char* key, double lo) {
        if (const auto it = cfg.values.find(key); it != cfg.values.end())
            require(it->second >= lo && is_integer(it->second), fmt::format("{} must be an integer >= {}", key, lo));
    };
    const auto range = [&](const char* key, double lo, double hi, bool open_lo, bool open_hi) {
        if (const auto it = cfg.values.find(key); it != cfg.values.end()) {
            const double v = it->second;
            const bool ok = (open_lo ? v > lo : v >= lo) && (open_hi ? v < hi : v <= hi);
            require(ok, fmt::format("{} out of range", key));
        }
    };
    constexpr double inf = std::numeric_limits<double>::infinity();
    range("gamma", 0.0, 1.0, true, true);
    count("n_candidates", 1);
    count("n_startup", 1);
    range("prior_weight", 0.0, inf, true, true);
    range("sigma0", 0.0, 1.0, true, false);
    range("success", 1.0, inf, true, true);
    range("failure", 0.0, 1.0, true, true);
    range("p_cat", 0.0, 1.0, false, false);
    range("epsilon", 0.0, 1.0, false, false);
    count("n_init", 1);
    count("positive", 1);
    count("negative", 1);
    count("uncertain_bits", 1);
    range("noise", 0.0, inf, true, true);
    count("n_raw", 1);
    count("n_refine", 0);
    count("refine_steps", 0);
    range("fit_growth", 1.0, inf, true, true);
    count("fit_max_points", 2);
    count("fit_iters", 0);
    require(space.size() > 0, "design space is empty");
}

}  // namespace

double OptimizerConfig::get(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

OptimizerConfig OptimizerConfig::parse(std::string_view text) {
    OptimizerConfig cfg;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream words(line);
        std::string tok;
        while (words >> tok) {
            const auto eq = tok.find('=');
            if (eq == std::string::npos || eq == 0) throw ConfigError("expected key=value, got '" + tok + "'");
            const std::string key = tok.substr(0, eq);
            const std::string val = tok.substr(eq + 1);
            std::size_t used = 0;
            double v = 0.0;
            try {
                v = std::stod(val, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            if (used == 0 || used != val.size()) throw ConfigError("option '" + key + "' needs a numeric value");
            cfg.values[key] = v;
        }
    }
    return cfg;
}

OptimizerKind parse_optimizer_kind(std::string_view name) {
    std::string s(name);
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (s == "rs" || s == "random") return OptimizerKind::rs;
    if (s == "sracos") return OptimizerKind::sracos;
    if (s == "bo") return OptimizerKind::bo;
    if (s == "tpe") return OptimizerKind::tpe;
    if (s == "es" || s == "1+1") return OptimizerKind::es;
    throw ConfigError("unknown optimizer '" + std::string(name) + "'");
}

std::string to_string(OptimizerKind kind) {
    switch (kind) {
        case OptimizerKind::rs: return "rs";
        case OptimizerKind::sracos: return "sracos";
        case OptimizerKind::bo: return "bo";
        case OptimizerKind::tpe: return "tpe";
        case OptimizerKind::es: return "es";
    }
    return "?";
}

OptimizerSession::OptimizerSession(OptimizerKind kind, DesignSpace space, OptimizerConfig config, std::uint64_t seed)
    : kind_(kind), space_(std::move(space)), config_(std::move(config)), rng_(seed) {
    check_config(kind_, space_, config_);
    switch (kind_) {
        case OptimizerKind::rs: strategy_ = std::make_unique<RandomSearch>(space_); break;
        case OptimizerKind::es: strategy_ = std::make_unique<OnePlusOne>(space_, config_, rng_); break;
        case OptimizerKind::tpe: strategy_ = std::make_unique<Tpe>(space_, config_); break;
        case OptimizerKind::sracos: strategy_ = std::make_unique<Sracos>(space_, config_); break;
        case OptimizerKind::bo: strategy_ = std::make_unique<Bayesian>(space_, config_); break;
    }
}

OptimizerSession::~OptimizerSession() = default;
OptimizerSession::OptimizerSession(OptimizerSession&&) noexcept = default;
OptimizerSession& OptimizerSession::operator=(OptimizerSession&&) noexcept = default;

std::vector<Proposal> OptimizerSession::ask(std::size_t batch) {
    if (strategy_->serial() && !outstanding_.empty())
        throw ProtocolError(fmt::format("{} is strictly serial: tell the {} outstanding proposal(s) first", to_string(kind_), outstanding_.size()));
    std::vector<Proposal> out;
    if (batch == 0) return out;
    for (auto& x : strategy_->points(space_, batch, rng_)) {
        Proposal p{next_trial_++, std::move(x)};
        outstanding_.emplace(p.trial, p.x);
        out.push_back(std::move(p));
    }
    return out;
}

void OptimizerSession::tell(std::span<const EvalRecord> records) {
    for (const auto& r : records) {
        if (outstanding_.find(r.trial) == outstanding_.end()) throw ProtocolError(fmt::format("unknown proposal id {}", r.trial));
    }
    for (const auto& r : records) {
        const auto it = outstanding_.find(r.trial);
        if (it == outstanding_.end()) throw ProtocolError(fmt::format("proposal id {} told twice", r.trial));
        EvalRecord rec = r;
        rec.x = it->second;
        outstanding_.erase(it);
        // Failed evaluations stay in the history but do not inform the model.
        if (std::isfinite(rec.loss)) strategy_->observe(normalize(space_, rec.x), rec.loss, false);
        history_.push_back(std::move(rec));
    }
}

void OptimizerSession::warm_start(std::span<const EvalRecord> dataset, std::size_t top_k) {
    std::vector<const EvalRecord*> ranked;
    for (const auto& r : dataset) {
        if (std::isfinite(r.loss)) ranked.push_back(&r);
    }
    std::stable_sort(ranked.begin(), ranked.end(), [](const EvalRecord* a, const EvalRecord* b) {
        if (a->loss != b->loss) return a->loss < b->loss;
        return a->trial < b->trial;
    });
    ranked.resize(std::min(top_k, ranked.size()));
    for (const auto* r : ranked) {
        if (const auto v = validate(space_, r->x); !v) throw StructuralError("warm-start record is invalid: " + v.violations.front().message);
        if (kind_ != OptimizerKind::rs) strategy_->observe(normalize(space_, r->x), r->loss, true);
        history_.push_back(*r);
        ++warm_count_;
    }
}

std::optional<EvalRecord> OptimizerSession::best() const {
    const EvalRecord* b = nullptr;
    for (const auto& r : history_) {
        if (std::isfinite(r.loss) && (!b || r.loss < b->loss)) b = &r;
    }
    if (!b) return std::nullopt;
    return *b;
}

std::optional<double> OptimizerSession::es_sigma() const {
    if (const auto* es = dynamic_cast<const OnePlusOne*>(strategy_.get())) return es->sigma();
    return std::nullopt;
}

std::optional<DesignPoint> OptimizerSession::es_incumbent() const {
    if (const auto* es = dynamic_cast<const OnePlusOne*>(strategy_.get())) return denormalize(space_, es->incumbent()).point;
    return std::nullopt;
}

std::vector<double> OptimizerSession::sracos_positive_losses() const {
    if (const auto* s = dynamic_cast<const Sracos*>(strategy_.get())) return s->positive_losses();
    return {};
}

std::vector<double> OptimizerSession::sracos_negative_losses() const {
    if (const auto* s = dynamic_cast<const Sracos*>(strategy_.get())) return s->negative_losses();
    return {};
}

std::optional<double> OptimizerSession::bo_posterior_mean(const DesignPoint& x) const {
    if (auto* bo = dynamic_cast<Bayesian*>(strategy_.get())) return bo->posterior_mean(normalize(space_, x));
    return std::nullopt;
}

}  // namespace idkit
