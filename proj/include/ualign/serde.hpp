#pragma once

#include <Eigen/Dense>
#include <json.hpp>

#include <cstdint>
#include <string>

namespace ualign {

using json = nlohmann::json;

json matrix_to_json(const Eigen::MatrixXd& m);
Eigen::MatrixXd matrix_from_json(const json& j);

void save_json(const std::string& path, const json& j, int indent = -1);
json load_json(const std::string& path);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

// FNV-1a over a string; used for content hashes in checkpoints/manifests.
std::uint64_t fnv1a(const std::string& bytes);
std::string hex64(std::uint64_t v);

}  // namespace ualign
