#ifndef GRADESHI_DATASET_HPP
#define GRADESHI_DATASET_HPP

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "gradeshi/tensor.hpp"

namespace gradeshi {

enum class Category { vowel, consonant, numeric, compound };

inline constexpr std::size_t kCategoryCount = 4;

std::string_view to_string(Category category) noexcept;
// Throws UsageError on an unknown name.
Category parse_category(std::string_view text);

struct ClassInfo {
    std::string name;
    Category category = Category::vowel;

    friend bool operator==(const ClassInfo&, const ClassInfo&) = default;
};

// Class id -> {display name, category}; ids are the vector positions.
struct Manifest {
    std::vector<ClassInfo> classes;

    std::size_t size() const noexcept { return classes.size(); }

    // 84 classes: 0-10 vowel, 11-49 consonant, 50-59 numeric, 60-83 compound.
    static Manifest standard();
    static Manifest load(const std::filesystem::path& path);
    void save(const std::filesystem::path& path) const;

    friend bool operator==(const Manifest&, const Manifest&) = default;
};

void to_json(nlohmann::json& j, const Manifest& m);
void from_json(const nlohmann::json& j, Manifest& m);

struct Entry {
    std::string path;
    std::size_t class_id = 0;
    Category category = Category::vowel;

    friend bool operator==(const Entry&, const Entry&) = default;
};

struct DatasetIndex {
    std::vector<Entry> entries;
    Manifest manifest;
    // source_ids[id] is the class id this class had in the scanned tree.
    std::vector<std::size_t> source_ids;
    // Files that were found but are not a PNG, JPEG or BMP image.
    std::vector<std::string> unreadable;

    std::size_t class_count() const noexcept { return manifest.size(); }
    std::size_t size() const noexcept { return entries.size(); }
    std::vector<std::size_t> class_counts() const;
    std::map<Category, std::size_t> category_counts() const;
};

// <root>/<class-id>/<files>, entries sorted by (class id, file name).
DatasetIndex scan_dataset(const std::filesystem::path& root, const Manifest& manifest);

// Grayscale (colour is converted to luma), bilinear resize to size x size,
// scaled to [0, 1]; invert maps v -> 1 - v. Result shape (1, size, size, 1).
Tensor load_image(const std::filesystem::path& path, std::size_t size, bool invert = true);

template <typename T = float>
BasicTensor<T> one_hot(std::size_t class_id, std::size_t class_count);

struct SplitSpec {
    double train_fraction = 0.8;
    std::uint64_t seed = 0;
    bool stratified = true;
};

struct SplitResult {
    DatasetIndex train;
    DatasetIndex test;
};

// Per class floor(f * n) entries go to train; leftover slots up to
// round(f * total) then go to train one per class in ascending class id.
// Each subset keeps the canonical (class id, file name) order.
SplitResult stratified_split(const DatasetIndex& index, const SplitSpec& spec);

// Keeps a seeded random selection of at most per_class entries of every class.
DatasetIndex subsample_per_class(const DatasetIndex& index, std::size_t per_class, std::uint64_t seed);
// Keeps `total` entries allocated across classes like the train side of a split.
DatasetIndex subsample_total(const DatasetIndex& index, std::size_t total, std::uint64_t seed);

// Only classes of one category, ids re-densified; source_ids keeps the map.
DatasetIndex filter_category(const DatasetIndex& index, Category category);
// Only the first `count` classes.
DatasetIndex limit_classes(const DatasetIndex& index, std::size_t count);

// Epoch-e visiting order of `count` rows, cut into batches of at most b rows.
// The permutation depends only on (seed, epoch); the short tail is kept.
std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch);

// Decoded examples held in memory: images (N, S, S, 1), labels as class ids.
template <typename T>
struct ImageSet {
    BasicTensor<T> images;
    std::vector<std::size_t> labels;
    std::size_t class_count = 0;

    std::size_t size() const noexcept { return labels.size(); }
    // Stacks the given rows into (n, S, S, 1) images and (n, C) one-hot labels.
    std::pair<BasicTensor<T>, BasicTensor<T>> batch(std::span<const std::size_t> rows) const;
};

template <typename T = float>
ImageSet<T> load_images(const DatasetIndex& index, std::size_t image_size, bool invert = true);

struct Batch {
    Tensor images;
    Tensor labels;
};

// Loads each batch from disk on access.
class BatchSequence {
public:
    BatchSequence(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed, std::uint64_t epoch,
                  std::size_t image_size, bool invert = true);

    std::size_t size() const noexcept { return plan_.size(); }
    const std::vector<std::size_t>& rows(std::size_t i) const { return plan_.at(i); }
    Batch operator[](std::size_t i) const;

private:
    const DatasetIndex* index_;
    std::vector<std::vector<std::size_t>> plan_;
    std::size_t image_size_;
    bool invert_;
};

// `path,class-id` per line.
void write_listing(const std::filesystem::path& path, const DatasetIndex& index);
DatasetIndex read_listing(const std::filesystem::path& path, const Manifest& manifest);

} // namespace gradeshi

#endif
