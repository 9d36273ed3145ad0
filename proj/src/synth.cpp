#include "gradeshi/synth.hpp"

#include <cmath>
#include <numbers>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gradeshi/random.hpp"

namespace gradeshi::synth {

namespace fs = std::filesystem;

namespace {

struct Point {
    double x, y;
};

using Stroke = std::array<Point, 4>;

constexpr std::uint64_t kClassSalt = 0x61a55e5;
constexpr std::uint64_t kSampleSalt = 0x5a3b1e;
constexpr int kSubpixelBits = 4;

std::vector<Stroke> prototype(std::size_t class_id, std::uint64_t seed) {
    Rng rng(mix_seed(seed ^ kClassSalt, class_id));
    const std::size_t strokes = 2 + rng.index(3);
    std::vector<Stroke> out(strokes);
    for (auto& s : out) {
        for (auto& p : s) {
            p = {rng.uniform(0.15, 0.85), rng.uniform(0.15, 0.85)};
        }
    }
    return out;
}

Point bezier(const Stroke& s, double t) {
    const double u = 1.0 - t;
    const double a = u * u * u, b = 3 * u * u * t, c = 3 * u * t * t, d = t * t * t;
    return {a * s[0].x + b * s[1].x + c * s[2].x + d * s[3].x, a * s[0].y + b * s[1].y + c * s[2].y + d * s[3].y};
}

} // namespace

std::vector<unsigned char> render_sample(std::size_t class_id, std::size_t sample, std::size_t size,
                                         std::uint64_t seed) {
    auto strokes = prototype(class_id, seed);
    Rng rng(mix_seed(mix_seed(seed ^ kSampleSalt, class_id), sample));
    const double angle = rng.normal() * 6.0 * std::numbers::pi / 180.0;
    const double zoom = rng.uniform(0.9, 1.1);
    const double dx = rng.uniform(-0.05, 0.05), dy = rng.uniform(-0.05, 0.05);
    const double ca = std::cos(angle), sa = std::sin(angle);
    const int thickness = std::max(1, static_cast<int>(std::lround(rng.uniform(0.04, 0.07) * static_cast<double>(size))));

    const int n = static_cast<int>(size);
    cv::Mat canvas(n, n, CV_8UC1, cv::Scalar(255));
    const double scale = static_cast<double>(size) * (1 << kSubpixelBits);
    for (auto& s : strokes) {
        for (auto& p : s) {
            p.x += rng.normal() * 0.03;
            p.y += rng.normal() * 0.03;
        }
        std::vector<cv::Point> poly;
        constexpr int kSegments = 32;
        for (int i = 0; i <= kSegments; ++i) {
            Point q = bezier(s, static_cast<double>(i) / kSegments);
            const double cx = q.x - 0.5, cy = q.y - 0.5;
            const double x = zoom * (ca * cx - sa * cy) + 0.5 + dx;
            const double y = zoom * (sa * cx + ca * cy) + 0.5 + dy;
            poly.emplace_back(static_cast<int>(std::lround(x * scale)), static_cast<int>(std::lround(y * scale)));
        }
        cv::polylines(canvas, std::vector<std::vector<cv::Point>>{poly}, false, cv::Scalar(0), thickness, cv::LINE_AA, kSubpixelBits);
    }
    return std::vector<unsigned char>(canvas.begin<unsigned char>(), canvas.end<unsigned char>());
}

std::size_t write_tree(const fs::path& root, const TreeSpec& spec) {
    fs::create_directories(root);
    spec.manifest.save(root / "manifest.json");
    std::size_t written = 0;
    const int n = static_cast<int>(spec.image_size);
    for (std::size_t id = 0; id < spec.manifest.size(); ++id) {
        const fs::path dir = root / std::to_string(id);
        fs::create_directories(dir);
        const std::size_t count = spec.per_class[static_cast<std::size_t>(spec.manifest.classes[id].category)];
        for (std::size_t k = 0; k < count; ++k) {
            auto pixels = render_sample(id, k, spec.image_size, spec.seed);
            cv::Mat img(n, n, CV_8UC1, pixels.data());
            char name[32];
            std::snprintf(name, sizeof name, "%05zu.png", k);
            if (!cv::imwrite((dir / name).string(), img)) {
                throw IoError("cannot write " + (dir / name).string());
            }
            ++written;
        }
    }
    return written;
}

} // namespace gradeshi::synth
