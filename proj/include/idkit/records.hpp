#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "idkit/design_space.hpp"
#include "json.hpp"

namespace idkit {

// One evaluated design: the unit of datasets and optimizer histories.
// Scores are S(x) = -loss; everything in the toolkit minimizes loss.
struct EvalRecord {
    DesignPoint x;
    std::optional<Response> y;
    double loss = 0.0;
    std::uint64_t trial = 0;
    double wall_time = 0.0;  // seconds
};

nlohmann::json point_to_json(const DesignPoint& p);
DesignPoint point_from_json(const nlohmann::json& j);

// {"x": [...], "y": [...], "loss": <num>, "trial": <uint>, "t": <sec>}
std::string record_to_line(const EvalRecord& r);
EvalRecord record_from_line(std::string_view line);

void write_records(const std::filesystem::path& path, std::span<const EvalRecord> records);
std::vector<EvalRecord> read_records(const std::filesystem::path& path);

// 64-bit FNV-1a, hex encoded. Used for cache keys and report digests.
std::string fnv1a_hex(std::string_view data);

}  // namespace idkit
