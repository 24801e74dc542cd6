#pragma once

#include "instab/network.hpp"
#include "instab/tensor.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <vector>

// Container format shared by checkpoints, images and sinograms:
//
//   bytes 0..7   magic "INSTAB01"
//   bytes 8..15  header length N, uint64 little-endian
//   N bytes      UTF-8 JSON header
//   payload      raw little-endian float64 values, tensors back to back
//
// The header always carries "format_version" and "kind", plus a "tensors"
// array of {"name", "shape"} entries describing the payload order.

namespace instab {

inline constexpr int kFileFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct TensorBundle {
    nlohmann::json header; ///< user fields; "tensors"/"format_version" are filled on write
    std::vector<NamedTensor> tensors;

    const Tensor& get(const std::string& name) const;
};

void write_bundle(const std::filesystem::path& path, const std::string& kind, const TensorBundle& bundle);
TensorBundle read_bundle(const std::filesystem::path& path, const std::string& expected_kind = {});

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// Network checkpoint: header holds the network spec and per-layer shapes; payload is
/// weight then bias of each parametrised layer, in layer order.
void save_network(const std::filesystem::path& path, const NetworkSpec& spec, const NetworkParams& params,
                  const nlohmann::json& extra = {});
struct LoadedNetwork {
    NetworkSpec spec;
    NetworkParams params;
    nlohmann::json header;
};
LoadedNetwork load_network(const std::filesystem::path& path);

/// Tensor names used for parameter payloads, e.g. "lower/3/weight".
std::vector<NamedTensor> params_to_named(const NetworkParams& params, const std::string& prefix);
NetworkParams params_from_bundle(const NetworkSpec& spec, const TensorBundle& bundle, const std::string& prefix);

} // namespace instab
