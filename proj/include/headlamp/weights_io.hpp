#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

namespace headlamp {

/// Versioned binary container shared by transformer and probe weights:
///
///   "HLMP1" | u32 kind | u32 header_len | header (JSON, UTF-8) | tensor data
///
/// All integers are little-endian. The header lists tensors as
/// {"name", "rows", "cols"}; their data follows in that order as row-major
/// little-endian float32.
struct WeightFile {
    static constexpr std::uint32_t kTransformer = 1;
    static constexpr std::uint32_t kProbe = 2;

    std::uint32_t kind = kTransformer;
    nlohmann::json header = nlohmann::json::object();
    std::vector<std::pair<std::string, Eigen::MatrixXd>> tensors;

    const Eigen::MatrixXd& tensor(const std::string& name) const;
};

void write_weight_file(const std::filesystem::path& path, const WeightFile& file);
WeightFile read_weight_file(const std::filesystem::path& path);

}  // namespace headlamp
