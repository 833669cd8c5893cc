#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>

#include "fidn/model.hpp"
#include "fidn/objective.hpp"

namespace fidn {

// FIDN container: "FIDN", u32 version, u32 entry count, then per entry a
// u16 name length, the UTF-8 name and a TNSR payload. Entries are written in
// name order:
//   meta/net_config        network shape as small integers
//   w1/... w21/... w22/... parameters (prefix = group)
//   opt/step, opt/m/<param>, opt/v/<param>   optional Adam state
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelParams<float> params;
  std::optional<AdamState<float>> optimizer;
};

void write_checkpoint(std::ostream& out, const ModelParams<float>& params,
                      const AdamState<float>* optimizer = nullptr);
Checkpoint read_checkpoint(std::istream& in);

void save_checkpoint(const std::filesystem::path& path, const ModelParams<float>& params,
                     const AdamState<float>* optimizer = nullptr);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Tensor<float> encode_net_config(const NetConfig& config);
NetConfig decode_net_config(const Tensor<float>& encoded);

}  // namespace fidn
