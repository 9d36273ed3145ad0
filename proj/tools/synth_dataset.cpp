// Writes a synthetic class-per-directory glyph tree in the layout the
// gradeshi CLI reads.
#include <iostream>

#include <CLI11.hpp>

#include "gradeshi/synth.hpp"

int main(int argc, char** argv) {
    CLI::App app{"write a synthetic handwritten-glyph dataset tree"};
    std::string out;
    gradeshi::synth::TreeSpec spec;
    app.add_option("--out", out, "output root")->required();
    app.add_option("--size", spec.image_size, "image side in pixels");
    app.add_option("--seed", spec.seed, "glyph seed");
    app.add_option("--vowel", spec.per_class[0], "images per vowel class");
    app.add_option("--consonant", spec.per_class[1], "images per consonant class");
    app.add_option("--numeric", spec.per_class[2], "images per numeric class");
    app.add_option("--compound", spec.per_class[3], "images per compound class");
    CLI11_PARSE(app, argc, argv);
    try {
        const auto n = gradeshi::synth::write_tree(out, spec);
        std::cout << "wrote " << n << " images to " << out << '\n';
    } catch (const std::exception& e) {
        std::cerr << e.what() << '\n';
        return 1;
    }
    return 0;
}
