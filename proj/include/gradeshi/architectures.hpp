#ifndef GRADESHI_ARCHITECTURES_HPP
#define GRADESHI_ARCHITECTURES_HPP

#include <cstdint>

#include "gradeshi/arch_config.hpp"
#include "gradeshi/network.hpp"

namespace gradeshi {

// Width of the first simple-cnn convolution and of the mini-resnet stem.
inline constexpr std::size_t kSimpleCnnFirstWidth = 32;
inline constexpr std::size_t kResnetStemWidth = 64;
inline constexpr std::size_t kPoolSize = 3;
inline constexpr std::size_t kKernelSize = 3;

// Total spatial downsampling of the trunk for a resolved config.
std::size_t downsampling_factor(const ArchConfig& cfg);

// [conv3x3 -> relu -> maxpool3] per stage, then
// flatten -> dense -> relu -> dropout -> dense(classes) -> softmax.
template <typename T>
Network<T> build_simple_cnn(const ArchConfig& cfg, std::uint64_t seed);

// stem conv3x3(64) -> bn -> relu -> maxpool3, residual blocks
// (conv-bn-relu-conv-bn + skip, add, relu; 1x1 projection when the shape
// changes), then global-avg -> dropout -> dense(classes) -> softmax.
template <typename T>
Network<T> build_mini_resnet(const ArchConfig& cfg, std::uint64_t seed);

// stem conv3x3/2 -> bn -> relu, separable blocks (dw-bn-relu-pw-bn-relu,
// stride 2 at the start of every stage after the first), then
// global-avg -> dense -> relu -> dropout -> dense(classes) -> softmax.
template <typename T>
Network<T> build_mini_mobilenet(const ArchConfig& cfg, std::uint64_t seed);

// Dispatches on cfg.family and applies cfg.freeze_prefix.
template <typename T>
Network<T> build_network(const ArchConfig& cfg, std::uint64_t seed);

// Marks the first `prefix` trunk blocks (or nodes) non-trainable and every
// later unit trainable.
template <typename T>
Network<T>& set_trainable_prefix(Network<T>& net, std::size_t prefix, FreezeGranularity granularity);

// Re-draws parameters of every head node (unit == kHead).
template <typename T>
void reset_head(Network<T>& net, std::uint64_t seed);

} // namespace gradeshi

#endif
