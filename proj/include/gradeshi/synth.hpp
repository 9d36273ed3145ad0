#ifndef GRADESHI_SYNTH_HPP
#define GRADESHI_SYNTH_HPP

#include <array>
#include <cstdint>
#include <filesystem>

#include "gradeshi/dataset.hpp"

namespace gradeshi::synth {

// Stand-in handwriting corpus: every class is a fixed set of random cubic
// Bezier strokes and every sample redraws them with jitter, black on white.
struct TreeSpec {
    std::size_t image_size = 80;
    std::uint64_t seed = 0;
    // Images per class for vowel, consonant, numeric, compound classes.
    std::array<std::size_t, kCategoryCount> per_class{10, 10, 10, 10};
    Manifest manifest = Manifest::standard();
};

// 8-bit grayscale pixels, row-major, size x size.
std::vector<unsigned char> render_sample(std::size_t class_id, std::size_t sample, std::size_t size,
                                         std::uint64_t seed);

// Writes <root>/<class-id>/<sample>.png plus <root>/manifest.json and returns
// the number of images written.
std::size_t write_tree(const std::filesystem::path& root, const TreeSpec& spec);

} // namespace gradeshi::synth

#endif
