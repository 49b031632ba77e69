#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "idkit/random.hpp"

namespace idkit {

struct Continuous {
    double lo = 0.0;
    double hi = 1.0;
    std::string unit;
};

struct Categorical {
    std::vector<std::string> choices;
};

// Upper bound tied to an earlier continuous parameter: [lo, hi_scale * x[ref]].
struct ConditionalContinuous {
    double lo = 0.0;
    std::string hi_ref;
    double hi_scale = 1.0;
    std::size_t ref_index = 0;  // resolved by DesignSpace
    std::string unit;
};

struct ParamSpec {
    std::string name;
    std::variant<Continuous, Categorical, ConditionalContinuous> kind;

    bool is_categorical() const { return std::holds_alternative<Categorical>(kind); }
    std::size_t choice_count() const;
};

using ParamValue = std::variant<double, std::string>;

struct DesignPoint {
    std::vector<ParamValue> values;

    std::size_t size() const { return values.size(); }
    double number(std::size_t i) const { return std::get<double>(values.at(i)); }
    const std::string& label(std::size_t i) const { return std::get<std::string>(values.at(i)); }
    bool operator==(const DesignPoint&) const = default;
};

using Response = std::vector<double>;

struct Violation {
    std::size_t index = 0;
    std::string name;
    std::string message;
};

struct ValidationResult {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    explicit operator bool() const { return ok(); }
};

struct Denormalized {
    DesignPoint point;
    bool clamped = false;
};

class DesignSpace {
public:
    DesignSpace(std::string name, std::vector<ParamSpec> params, std::size_t response_dim,
                std::vector<std::string> notes = {});

    static DesignSpace motf();
    static DesignSpace tpv();
    static DesignSpace scf();
    // "motf" | "tpv" | "scf"
    static DesignSpace by_name(std::string_view problem);

    const std::string& name() const { return name_; }
    const std::vector<ParamSpec>& params() const { return params_; }
    const ParamSpec& param(std::size_t i) const { return params_.at(i); }
    std::size_t size() const { return params_.size(); }
    std::size_t response_dim() const { return response_dim_; }
    // Free-text conventions carried in the problem card.
    const std::vector<std::string>& notes() const { return notes_; }
    std::size_t index_of(std::string_view param_name) const;
    std::size_t categorical_count() const;
    // Length of encode_onehot output.
    std::size_t encoded_size() const;

    // Index of the choice held at coordinate i; throws if not a valid label.
    std::size_t choice_index(const DesignPoint& p, std::size_t i) const;
    // Effective [lo, hi] of coordinate i given the rest of the point.
    std::pair<double, double> bounds(const DesignPoint& p, std::size_t i) const;

    // Problem card: plain-text key/value description of the space.
    std::string to_card() const;
    static DesignSpace from_card(std::string_view text);

private:
    std::string name_;
    std::vector<ParamSpec> params_;
    std::size_t response_dim_;
    std::vector<std::string> notes_;
};

// Feasibility test. Length mismatch raises StructuralError; bound and choice
// violations are collected, one entry per offending coordinate.
ValidationResult validate(const DesignSpace& space, const DesignPoint& point);

// Uniform draw; conditional coordinates are drawn after their reference.
DesignPoint sample_uniform(const DesignSpace& space, Rng& rng);

// Maps a valid point into the unit box. Categorical slot = index / choices.
// Conditional slot = (x - lo) / (hi_scale * x_ref - lo).
std::vector<double> normalize(const DesignSpace& space, const DesignPoint& point);
Denormalized denormalize(const DesignSpace& space, std::span<const double> unit);

// Categorical slots expand to one-hot blocks, continuous slots stay normalized.
std::vector<double> encode_onehot(const DesignSpace& space, const DesignPoint& point);
// Inverse of encode_onehot for arbitrary real vectors: argmax per block, clamp the rest.
DesignPoint decode_onehot(const DesignSpace& space, std::span<const double> encoded);

// Sum of squared differences.
double mse_loss(std::span<const double> y, std::span<const double> y_target);

}  // namespace idkit
