#pragma once

// Binary run state: "DAVLABCK", a format version, the config hash, a JSON
// header describing the arrays, then each array as a u64 count followed by
// little-endian float64 values.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace davlab::ckpt {

inline constexpr std::uint32_t kFormatVersion = 1;

struct Checkpoint {
  std::uint32_t version = kFormatVersion;
  std::uint64_t config_hash = 0;
  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, std::vector<double>> arrays;

  const std::vector<double>& array(const std::string& name) const;
};

void save(const Checkpoint& ck, const std::string& path);
Checkpoint load(const std::string& path);

}  // namespace davlab::ckpt
