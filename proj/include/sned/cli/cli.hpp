#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "sned/cli/run_config.hpp"
#include "sned/model/network.hpp"

namespace sned {

/// Entry point behind the `sned` binary. `args` excludes the program name.
/// Exit codes: 0 ok, 1 validation/usage error, 2 runtime error.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

/// EMA weights of a trained role plus the digest of the file they came from.
struct LoadedModel {
  Supernet network;
  std::string digest;
};
LoadedModel load_ema_model(const RunConfig& cfg, Role role);

std::filesystem::path role_checkpoint_dir(const RunConfig& cfg, Role role);

}  // namespace sned
