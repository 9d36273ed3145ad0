#ifndef GRADESHI_ARCH_CONFIG_HPP
#define GRADESHI_ARCH_CONFIG_HPP

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace gradeshi {

enum class Family { simple_cnn, mini_resnet, mini_mobilenet };
enum class FreezeGranularity { block, layer };

std::string_view to_string(Family family) noexcept;
std::string_view to_string(FreezeGranularity granularity) noexcept;
Family parse_family(std::string_view text);
FreezeGranularity parse_granularity(std::string_view text);

struct ArchConfig {
    Family family = Family::simple_cnn;
    std::size_t image_size = 64;
    std::size_t input_channels = 1;
    std::size_t class_count = 84;
    // Empty / zero selects the family default (see resolved()).
    std::vector<std::size_t> stage_widths;
    std::size_t blocks_per_stage = 0;
    double dropout_rate = 0.5;
    std::size_t dense_units = 128;
    std::size_t freeze_prefix = 0;
    FreezeGranularity freeze_granularity = FreezeGranularity::block;

    // Family defaults filled in:
    //   simple-cnn     widths (32, 64), 1 conv per stage
    //   mini-resnet    widths (64, 128, 256), 2 residual blocks per stage
    //   mini-mobilenet widths (32, 64, 128, 256), 1 separable block per stage
    ArchConfig resolved() const;

    friend bool operator==(const ArchConfig&, const ArchConfig&) = default;
};

void to_json(nlohmann::json& j, const ArchConfig& cfg);
void from_json(const nlohmann::json& j, ArchConfig& cfg);

} // namespace gradeshi

#endif
