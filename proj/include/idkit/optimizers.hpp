#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idkit/design_space.hpp"
#include "idkit/records.hpp"

namespace idkit {

enum class OptimizerKind { rs, sracos, bo, tpe, es };

OptimizerKind parse_optimizer_kind(std::string_view name);  // case-insensitive
std::string to_string(OptimizerKind kind);

// Plain key=value settings. Unknown keys and out-of-range values are rejected
// by the session constructor. Defaults per kind:
//   rs:     (none)
//   tpe:    gamma=0.25 n_candidates=24 n_startup=10 prior_weight=1
//   es:     sigma0=0.3 success=1.22 failure=0.82 p_cat=1/#categoricals
//   sracos: epsilon=0.05 n_init=10 positive=1 negative=10 uncertain_bits=1
//   bo:     n_init=5 noise=1e-6 n_raw=256 n_refine=4 refine_steps=25
//           fit_growth=1.25 fit_max_points=150 fit_iters=40
struct OptimizerConfig {
    std::map<std::string, double> values;

    double get(const std::string& key, double fallback) const;
    // "key=value" tokens or lines; '#' starts a comment.
    static OptimizerConfig parse(std::string_view text);
};

struct Proposal {
    std::uint64_t trial = 0;  // proposal id; echo it back in EvalRecord::trial
    DesignPoint x;
};

class Strategy;

// Ask/tell optimizer over a mixed space. All kinds search the normalized unit
// box; conditional bounds are resolved by denormalize. Minimizes loss.
class OptimizerSession {
public:
    OptimizerSession(OptimizerKind kind, DesignSpace space, OptimizerConfig config, std::uint64_t seed);
    ~OptimizerSession();
    OptimizerSession(OptimizerSession&&) noexcept;
    OptimizerSession& operator=(OptimizerSession&&) noexcept;

    // ES and BO are strictly serial: asking while proposals are outstanding
    // throws ProtocolError. Their batches come from serial simulation.
    std::vector<Proposal> ask(std::size_t batch = 1);
    // Records must carry trial ids of outstanding proposals.
    void tell(std::span<const EvalRecord> records);
    // Inserts the top_k lowest-loss records as prior history. These do not
    // consume proposal ids. RS ignores them.
    void warm_start(std::span<const EvalRecord> dataset, std::size_t top_k);

    OptimizerKind kind() const { return kind_; }
    const DesignSpace& space() const { return space_; }
    const OptimizerConfig& config() const { return config_; }
    const std::vector<EvalRecord>& history() const { return history_; }
    std::size_t warm_count() const { return warm_count_; }
    std::size_t outstanding() const { return outstanding_.size(); }
    std::optional<EvalRecord> best() const;

    // Introspection for tests and reports.
    std::optional<double> es_sigma() const;
    std::optional<DesignPoint> es_incumbent() const;
    std::vector<double> sracos_positive_losses() const;
    std::vector<double> sracos_negative_losses() const;
    // GP posterior mean (raw loss units) at a point, BO only.
    std::optional<double> bo_posterior_mean(const DesignPoint& x) const;

private:
    OptimizerKind kind_;
    DesignSpace space_;
    OptimizerConfig config_;
    Rng rng_;
    std::unique_ptr<Strategy> strategy_;
    std::vector<EvalRecord> history_;
    std::size_t warm_count_ = 0;
    std::uint64_t next_trial_ = 0;
    std::map<std::uint64_t, DesignPoint> outstanding_;
};

}  // namespace idkit
