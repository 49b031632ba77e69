#include "idkit/records.hpp"

#include <fstream>

#include <fmt/format.h>

#include "idkit/error.hpp"

namespace idkit {

nlohmann::json point_to_json(const DesignPoint& p) {
    auto arr = nlohmann::json::array();
    for (const auto& v : p.values) {
        if (const auto* d = std::get_if<double>(&v)) {
            arr.push_back(*d);
        } else {
            arr.push_back(std::get<std::string>(v));
        }
    }
    return arr;
}

DesignPoint point_from_json(const nlohmann::json& j) {
    if (!j.is_array()) throw StructuralError("design point must be a JSON array");
    DesignPoint p;
    for (const auto& v : j) {
        if (v.is_number()) {
            p.values.emplace_back(v.get<double>());
        } else if (v.is_string()) {
            p.values.emplace_back(v.get<std::string>());
        } else {
            throw StructuralError("design point entries must be numbers or strings");
        }
    }
    return p;
}

std::string record_to_line(const EvalRecord& r) {
    nlohmann::ordered_json j;
    j["x"] = point_to_json(r.x);
    if (r.y) j["y"] = *r.y;
    j["loss"] = r.loss;
    j["trial"] = r.trial;
    j["t"] = r.wall_time;
    return j.dump();
}

EvalRecord record_from_line(std::string_view line) {
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
        throw StructuralError(std::string("malformed record: ") + e.what());
    }
    if (!j.is_object() || !j.contains("x") || !j.contains("loss")) throw StructuralError("record needs x and loss");
    EvalRecord r;
    r.x = point_from_json(j.at("x"));
    if (j.contains("y") && !j.at("y").is_null()) r.y = j.at("y").get<Response>();
    r.loss = j.at("loss").get<double>();
    r.trial = j.value("trial", std::uint64_t{0});
    r.wall_time = j.value("t", 0.0);
    return r;
}

void write_records(const std::filesystem::path& path, std::span<const EvalRecord> records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    for (const auto& r : records) out << record_to_line(r) << '\n';
}

std::vector<EvalRecord> read_records(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot read " + path.string());
    std::vector<EvalRecord> out;
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        out.push_back(record_from_line(line));
    }
    return out;
}

std::string fnv1a_hex(std::string_view data) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (const char c : data) {
        h ^= static_cast<unsigned char>(c);
        h *= 0x100000001b3ULL;
    }
    return fmt::format("{:016x}", h);
}

}  // namespace idkit
