#ifndef GRADESHI_CHECKPOINT_HPP
#define GRADESHI_CHECKPOINT_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "gradeshi/arch_config.hpp"
#include "gradeshi/dataset.hpp"
#include "gradeshi/network.hpp"
#include "gradeshi/optimization.hpp"

namespace gradeshi {

// File layout, all integers little-endian:
//   "GDSHCKPT"  u32 version  u32 header-bytes  header JSON
//   per tensor: u32 name-bytes, name, u8 dtype (1 = f32, 2 = f64),
//               4 x u32 extents, raw element data
// The header carries the architecture, class manifest, preprocessing,
// tensor count and (optionally) the Adam step counter and hyperparameters.
// Adam moments are stored as tensors named "adam.m:<param>" / "adam.v:<param>".
inline constexpr char kCheckpointMagic[8] = {'G', 'D', 'S', 'H', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Preprocessing {
    std::size_t image_size = 64;
    bool invert = true;

    friend bool operator==(const Preprocessing&, const Preprocessing&) = default;
};

template <typename T>
struct OptimizerSnapshot {
    std::uint64_t t = 0;
    AdamHyper hyper;
    std::map<std::string, AdamMoments<T>> moments;
};

template <typename T>
struct Checkpoint {
    ArchConfig arch;
    Manifest manifest;
    Preprocessing preprocessing;
    // Network state: parameters and batchnorm running statistics.
    std::map<std::string, BasicTensor<T>> tensors;
    std::optional<OptimizerSnapshot<T>> optimizer;
};

// The network must carry its ArchConfig (as built by build_network).
template <typename T>
void save_checkpoint(const Network<T>& net, const Manifest& manifest, const Preprocessing& preprocessing,
                     const std::filesystem::path& path, const AdamState<T>* optimizer = nullptr);

template <typename T>
Checkpoint<T> load_checkpoint(const std::filesystem::path& path);

// Rebuilds the network described by the checkpoint and loads its state.
template <typename T>
Network<T> network_from_checkpoint(const Checkpoint<T>& ckpt);

template <typename T>
AdamState<T> optimizer_from_checkpoint(const Checkpoint<T>& ckpt);

} // namespace gradeshi

#endif
