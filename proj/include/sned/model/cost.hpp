#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sned/model/network.hpp"

namespace sned {

struct FlopTerm {
  std::string name;
  std::int64_t flops = 0;
};

/// Per-term multiply-add count x2 for one sample (all F frames):
/// conv = 2*k^2*Cin*Cout*H'*W'*F, linear = 2*din*dout*tokens, attention core =
/// 4*N*M*d per sequence. Dropped components contribute no terms.
std::vector<FlopTerm> flop_breakdown(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec);
std::int64_t flop_count(const ModelConfig& config, const Layout& layout, const SubnetSpec& spec);

template <typename T>
std::int64_t flop_count(const Network<T>& net, const SubnetSpec& spec) {
  return flop_count(net.config, net.layout, spec);
}

}  // namespace sned
