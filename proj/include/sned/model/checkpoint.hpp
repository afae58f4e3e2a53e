#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sned/model/network.hpp"

namespace sned {

/// Raised for malformed or mismatched checkpoint files.
class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct NamedArray {
  std::string name;
  Tensor<float> value;
};

/// SNW1 container: "SNW1", u64 LE header length, UTF-8 JSON header
/// {"format","config","meta","layers":[{name,shape,offset,count}]}, then f32 LE
/// payload in manifest order. Offsets are bytes from the payload start.
struct SnwFile {
  nlohmann::json config;
  nlohmann::json meta;
  std::vector<NamedArray> arrays;
};

void write_snw(const std::filesystem::path& path, const SnwFile& file);
SnwFile read_snw(const std::filesystem::path& path);

/// `native` records the spec an extracted network runs under (drop mask, resolution).
void save_network(const std::filesystem::path& path, const Supernet& net, const std::optional<SubnetSpec>& native = {},
                  nlohmann::json meta = nlohmann::json::object());
Supernet load_network(const std::filesystem::path& path, std::optional<SubnetSpec>* native = nullptr);

/// Network from raw arrays; names resolve axis bindings against the full layout.
Supernet network_from_arrays(const ModelConfig& config, std::vector<NamedArray> arrays);

/// Hex FNV-1a 64 digest of a file's bytes.
std::string file_digest(const std::filesystem::path& path);

}  // namespace sned
