#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <tuple>

#include <opencv2/imgcodecs.hpp>

#include "gradeshi/dataset.hpp"
#include "gradeshi/random.hpp"
#include "gradeshi/synth.hpp"
#include "support/temp_dir.hpp"

using namespace gradeshi;
namespace fs = std::filesystem;

namespace {

Manifest four_classes() {
    return Manifest{{{"a", Category::vowel},
                     {"ka", Category::consonant},
                     {"one", Category::numeric},
                     {"kka", Category::compound}}};
}

// In-memory index with the given per-class counts; paths are never opened.
DatasetIndex fake_index(const Manifest& manifest, const std::vector<std::size_t>& counts) {
    DatasetIndex index;
    index.manifest = manifest;
    index.source_ids.resize(manifest.size());
    std::iota(index.source_ids.begin(), index.source_ids.end(), 0);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        for (std::size_t i = 0; i < counts[c]; ++i) {
            char name[32];
            std::snprintf(name, sizeof name, "%zu/%06zu.png", c, i);
            index.entries.push_back(Entry{name, c, manifest.classes[c].category});
        }
    }
    return index;
}

Manifest uniform_manifest(std::size_t classes) {
    Manifest m;
    for (std::size_t c = 0; c < classes; ++c) m.classes.push_back({"c" + std::to_string(c), Category::consonant});
    return m;
}

void write_gray(const fs::path& path, const cv::Mat& img) { ASSERT_TRUE(cv::imwrite(path.string(), img)); }

std::set<std::string> paths_of(const DatasetIndex& index) {
    std::set<std::string> out;
    for (const auto& e : index.entries) out.insert(e.path);
    return out;
}

} // namespace

// ---- manifest ---------------------------------------------------------------------

TEST(Manifest, StandardPartition) {
    const auto m = Manifest::standard();
    ASSERT_EQ(m.size(), 84u);
    std::array<std::size_t, kCategoryCount> counts{};
    for (const auto& c : m.classes) ++counts[static_cast<std::size_t>(c.category)];
    EXPECT_EQ(counts, (std::array<std::size_t, 4>{11, 39, 10, 24}));
    EXPECT_EQ(m.classes[0].category, Category::vowel);
    EXPECT_EQ(m.classes[10].category, Category::vowel);
    EXPECT_EQ(m.classes[11].category, Category::consonant);
    EXPECT_EQ(m.classes[49].category, Category::consonant);
    EXPECT_EQ(m.classes[50].category, Category::numeric);
    EXPECT_EQ(m.classes[59].category, Category::numeric);
    EXPECT_EQ(m.classes[60].category, Category::compound);
    EXPECT_EQ(m.classes[83].category, Category::compound);
}

TEST(Manifest, SaveLoadRoundTrip) {
    check::TempDir dir;
    const auto m = four_classes();
    m.save(dir.path() / "manifest.json");
    EXPECT_EQ(Manifest::load(dir.path() / "manifest.json"), m);
    std::ofstream(dir.path() / "bad.json") << "{\"classes\": 3}";
    EXPECT_THROW(Manifest::load(dir.path() / "bad.json"), DataError);
    EXPECT_THROW(parse_category("punctuation"), UsageError);
    EXPECT_EQ(parse_category("compound"), Category::compound);
}

// ---- scan ---------------------------------------------------------------------------

TEST(Scan, CountsSyntheticTree) {
    check::TempDir dir;
    synth::TreeSpec spec;
    spec.image_size = 16;
    spec.per_class = {4, 3, 2, 1};
    spec.manifest = four_classes();
    EXPECT_EQ(synth::write_tree(dir.path(), spec), 10u);
    const auto index = scan_dataset(dir.path(), four_classes());
    EXPECT_EQ(index.size(), 10u);
    EXPECT_EQ(index.class_count(), 4u);
    EXPECT_EQ(index.class_counts(), (std::vector<std::size_t>{4, 3, 2, 1}));
    EXPECT_EQ(index.category_counts().at(Category::consonant), 3u);
    EXPECT_TRUE(index.unreadable.empty());
    for (std::size_t i = 1; i < index.size(); ++i) {
        const auto& a = index.entries[i - 1];
        const auto& b = index.entries[i];
        EXPECT_TRUE(a.class_id < b.class_id || (a.class_id == b.class_id && a.path < b.path));
    }
    for (const auto& e : index.entries) EXPECT_EQ(e.category, four_classes().classes[e.class_id].category);
}

TEST(Scan, ListsUnreadableFilesAndSkipsHidden) {
    check::TempDir dir;
    synth::TreeSpec spec;
    spec.image_size = 16;
    spec.per_class = {2, 2, 2, 2};
    spec.manifest = four_classes();
    synth::write_tree(dir.path(), spec);
    std::ofstream(dir.path() / "1" / "broken.png") << "not an image";
    std::ofstream(dir.path() / "2" / ".DS_Store") << "junk";
    const auto index = scan_dataset(dir.path(), four_classes());
    EXPECT_EQ(index.size(), 8u);
    ASSERT_EQ(index.unreadable.size(), 1u);
    EXPECT_NE(index.unreadable[0].find("broken.png"), std::string::npos);
}

TEST(Scan, MissingClassDirectoryNamesTheClass) {
    check::TempDir dir;
    for (const char* c : {"0", "1", "3"}) fs::create_directories(dir.path() / c);
    try {
        scan_dataset(dir.path(), four_classes());
        FAIL() << "expected IngestionError";
    } catch (const IngestionError& e) {
        EXPECT_NE(std::string(e.what()).find("class 2"), std::string::npos) << e.what();
    }
}

TEST(Scan, EmptyDirectoryIsAnError) {
    check::TempDir dir;
    EXPECT_THROW(scan_dataset(dir.path(), four_classes()), IngestionError);
    for (const char* c : {"0", "1", "2", "3"}) fs::create_directories(dir.path() / c);
    EXPECT_THROW(scan_dataset(dir.path(), four_classes()), IngestionError);
    EXPECT_THROW(scan_dataset(dir.path() / "nope", four_classes()), IngestionError);
}

TEST(Scan, UnknownClassDirectoryIsAnError) {
    check::TempDir dir;
    synth::TreeSpec spec;
    spec.image_size = 16;
    spec.per_class = {1, 1, 1, 1};
    spec.manifest = four_classes();
    synth::write_tree(dir.path(), spec);
    fs::create_directories(dir.path() / "7");
    EXPECT_THROW(scan_dataset(dir.path(), four_classes()), IngestionError);
}

// ---- load_image -------------------------------------------------------------------

TEST(LoadImage, SameSizeIsPlainScaling) {
    check::TempDir dir;
    cv::Mat img(5, 5, CV_8UC1);
    for (int i = 0; i < 25; ++i) img.data[i] = static_cast<unsigned char>(i * 10);
    write_gray(dir.path() / "g.png", img);
    const auto t = load_image(dir.path() / "g.png", 5, false);
    ASSERT_EQ(t.shape(), Shape(1, 5, 5, 1));
    for (int i = 0; i < 25; ++i) EXPECT_FLOAT_EQ(t[i], static_cast<float>(i * 10) / 255.0f);
    const auto inv = load_image(dir.path() / "g.png", 5, true);
    for (int i = 0; i < 25; ++i) EXPECT_FLOAT_EQ(inv[i], 1.0f - t[i]);
}

TEST(LoadImage, WhiteInvertsToZero) {
    check::TempDir dir;
    write_gray(dir.path() / "w.png", cv::Mat(7, 9, CV_8UC1, cv::Scalar(255)));
    const auto t = load_image(dir.path() / "w.png", 4, true);
    ASSERT_EQ(t.shape(), Shape(1, 4, 4, 1));
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_EQ(t[i], 0.0f);
}

TEST(LoadImage, CheckerboardAveragesToHalf) {
    check::TempDir dir;
    cv::Mat img = (cv::Mat_<unsigned char>(2, 2) << 0, 255, 255, 0);
    write_gray(dir.path() / "c.png", img);
    const auto t = load_image(dir.path() / "c.png", 1, false);
    ASSERT_EQ(t.shape(), Shape(1, 1, 1, 1));
    EXPECT_NEAR(t[0], 0.5f, 1e-6f);
}

TEST(LoadImage, ColourBecomesLuma) {
    check::TempDir dir;
    write_gray(dir.path() / "rgb.bmp", cv::Mat(3, 3, CV_8UC3, cv::Scalar(255, 255, 255)));
    const auto t = load_image(dir.path() / "rgb.bmp", 3, false);
    ASSERT_EQ(t.shape(), Shape(1, 3, 3, 1));
    for (std::size_t i = 0; i < t.size(); ++i) EXPECT_FLOAT_EQ(t[i], 1.0f);
}

TEST(LoadImage, UndecodableFileNamesPath) {
    check::TempDir dir;
    std::ofstream(dir.path() / "bad.png", std::ios::binary) << "\x89PNG\r\n\x1a\n garbage";
    try {
        load_image(dir.path() / "bad.png", 8);
        FAIL() << "expected ImageError";
    } catch (const ImageError& e) {
        EXPECT_NE(std::string(e.what()).find("bad.png"), std::string::npos);
    }
}

// ---- labels -------------------------------------------------------------------------

TEST(OneHot, PlacesSingleOne) {
    const auto y = one_hot(2, 5);
    EXPECT_EQ(y.shape(), Shape::matrix(1, 5));
    EXPECT_EQ(y.values(), (std::vector<float>{0, 0, 1, 0, 0}));
    EXPECT_EQ(one_hot<double>(83, 84)[83], 1.0);
    EXPECT_THROW(one_hot(5, 5), LabelError);
}

// ---- split ----------------------------------------------------------------------------

TEST(Split, TenEntriesGiveEightAndTwo) {
    const auto r = stratified_split(fake_index(uniform_manifest(1), {10}), SplitSpec{0.8, 3, true});
    EXPECT_EQ(r.train.size(), 8u);
    EXPECT_EQ(r.test.size(), 2u);
}

TEST(Split, DeterministicForSeed) {
    const auto index = fake_index(uniform_manifest(5), {17, 23, 9, 40, 11});
    const auto a = stratified_split(index, SplitSpec{0.8, 42, true});
    const auto b = stratified_split(index, SplitSpec{0.8, 42, true});
    const auto c = stratified_split(index, SplitSpec{0.8, 43, true});
    EXPECT_EQ(a.train.entries, b.train.entries);
    EXPECT_EQ(a.test.entries, b.test.entries);
    EXPECT_NE(a.train.entries, c.train.entries);
}

TEST(Split, Invariants) {
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
        Rng rng(seed);
        const std::size_t classes = 2 + rng.index(12);
        std::vector<std::size_t> counts(classes);
        for (auto& n : counts) n = 2 + rng.index(60);
        const auto index = fake_index(uniform_manifest(classes), counts);
        const double f = 0.05 + 0.9 * rng.uniform();
        const auto r = stratified_split(index, SplitSpec{f, seed, true});

        const auto train = paths_of(r.train), test = paths_of(r.test);
        EXPECT_EQ(train.size() + test.size(), index.size());
        for (const auto& p : test) EXPECT_EQ(train.count(p), 0u);
        EXPECT_EQ(r.train.size(), static_cast<std::size_t>(std::llround(f * static_cast<double>(index.size()))))
            << "f=" << f;
        const auto tc = r.train.class_counts();
        const auto sc = r.test.class_counts();
        for (std::size_t k = 0; k < classes; ++k) {
            EXPECT_EQ(tc[k] + sc[k], counts[k]);
            EXPECT_LT(std::abs(static_cast<double>(tc[k]) - f * static_cast<double>(counts[k])), 1.0)
                << "class " << k << " f=" << f;
        }
        EXPECT_TRUE(std::is_sorted(r.train.entries.begin(), r.train.entries.end(),
                                   [](const Entry& a, const Entry& b) {
                                       return std::tie(a.class_id, a.path) < std::tie(b.class_id, b.path);
                                   }));
    }
}

TEST(Split, FullDatasetScaleCounts) {
    // 166,105 entries over 84 classes.
    std::vector<std::size_t> counts(84, 1977);
    for (std::size_t c = 0; c < 37; ++c) ++counts[c];
    ASSERT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), 166105u);
    const auto index = fake_index(Manifest::standard(), counts);
    const auto r = stratified_split(index, SplitSpec{0.8, 7, true});
    EXPECT_EQ(r.train.size(), 132884u);
    EXPECT_EQ(r.test.size(), 33221u);
}

TEST(Split, UnstratifiedKeepsTotals) {
    const auto index = fake_index(uniform_manifest(3), {10, 20, 30});
    const auto r = stratified_split(index, SplitSpec{0.8, 1, false});
    EXPECT_EQ(r.train.size(), 48u);
    EXPECT_EQ(r.test.size(), 12u);
    EXPECT_EQ(paths_of(r.train).size() + paths_of(r.test).size(), 60u);
}

TEST(Split, Errors) {
    const auto index = fake_index(uniform_manifest(2), {10, 10});
    EXPECT_THROW(stratified_split(index, SplitSpec{0.0, 1, true}), SplitError);
    EXPECT_THROW(stratified_split(index, SplitSpec{1.0, 1, true}), SplitError);
    const auto tiny = fake_index(uniform_manifest(2), {10, 1});
    EXPECT_THROW(stratified_split(tiny, SplitSpec{0.8, 1, true}), SplitError);
}

// ---- filtering and subsampling -----------------------------------------------------

TEST(Filter, VowelsOfFullScaleIndex) {
    // 21,783 vowel images over 11 classes, 144,322 others.
    std::vector<std::size_t> counts(84);
    for (std::size_t c = 0; c < 11; ++c) counts[c] = 1980 + (c < 3 ? 1 : 0);
    for (std::size_t c = 11; c < 84; ++c) counts[c] = 1977 + (c < 12 ? 1 : 0);
    ASSERT_EQ(std::accumulate(counts.begin(), counts.end(), std::size_t{0}), 166105u);
    const auto index = fake_index(Manifest::standard(), counts);
    const auto vowels = filter_category(index, Category::vowel);
    EXPECT_EQ(vowels.class_count(), 11u);
    EXPECT_EQ(vowels.size(), 21783u);
}

TEST(Filter, RedensifiesIds) {
    const auto index = fake_index(Manifest::standard(), std::vector<std::size_t>(84, 3));
    const auto numeric = filter_category(index, Category::numeric);
    ASSERT_EQ(numeric.class_count(), 10u);
    EXPECT_EQ(numeric.source_ids.front(), 50u);
    EXPECT_EQ(numeric.source_ids.back(), 59u);
    for (const auto& e : numeric.entries) {
        EXPECT_LT(e.class_id, 10u);
        EXPECT_EQ(e.category, Category::numeric);
    }
    EXPECT_EQ(numeric.manifest.classes[0].name, Manifest::standard().classes[50].name);
    const auto only_vowels = fake_index(four_classes(), {3, 0, 0, 0});
    EXPECT_THROW(filter_category(only_vowels, Category::compound), FilterError);
}

TEST(Filter, LimitClasses) {
    const auto index = fake_index(uniform_manifest(6), {2, 3, 4, 5, 6, 7});
    const auto first = limit_classes(index, 3);
    EXPECT_EQ(first.class_count(), 3u);
    EXPECT_EQ(first.size(), 9u);
    EXPECT_THROW(limit_classes(index, 7), FilterError);
    EXPECT_THROW(limit_classes(index, 0), FilterError);
}

TEST(Subsample, PerClassCapsEveryClass) {
    const auto index = fake_index(uniform_manifest(3), {10, 3, 8});
    const auto sub = subsample_per_class(index, 5, 9);
    EXPECT_EQ(sub.class_counts(), (std::vector<std::size_t>{5, 3, 5}));
    EXPECT_EQ(subsample_per_class(index, 5, 9).entries, sub.entries);
    for (const auto& p : paths_of(sub)) EXPECT_EQ(paths_of(index).count(p), 1u);
}

TEST(Subsample, TotalMatchesRequest) {
    const auto index = fake_index(uniform_manifest(4), {25, 25, 25, 25});
    const auto sub = subsample_total(index, 30, 2);
    EXPECT_EQ(sub.size(), 30u);
    for (std::size_t n : sub.class_counts()) {
        EXPECT_GE(n, 7u);
        EXPECT_LE(n, 8u);
    }
}

// ---- batching ---------------------------------------------------------------------------

TEST(BatchPlan, TenRowsInBatchesOfFour) {
    const auto plan = batch_plan(10, 4, 5, 0);
    ASSERT_EQ(plan.size(), 3u);
    EXPECT_EQ(plan[0].size(), 4u);
    EXPECT_EQ(plan[1].size(), 4u);
    EXPECT_EQ(plan[2].size(), 2u);
    std::vector<std::size_t> all;
    for (const auto& b : plan) all.insert(all.end(), b.begin(), b.end());
    std::sort(all.begin(), all.end());
    std::vector<std::size_t> expected(10);
    std::iota(expected.begin(), expected.end(), 0);
    EXPECT_EQ(all, expected);
}

TEST(BatchPlan, DependsOnlyOnSeedAndEpoch) {
    EXPECT_EQ(batch_plan(50, 8, 3, 2), batch_plan(50, 8, 3, 2));
    EXPECT_NE(batch_plan(50, 8, 3, 0), batch_plan(50, 8, 3, 1));
    EXPECT_NE(batch_plan(50, 8, 3, 0), batch_plan(50, 8, 4, 0));
    EXPECT_THROW(batch_plan(10, 0, 1, 0), ParameterError);
}

TEST(ImageSet, BatchesStackImagesAndLabels) {
    check::TempDir dir;
    synth::TreeSpec spec;
    spec.image_size = 12;
    spec.per_class = {3, 3, 3, 3};
    spec.manifest = four_classes();
    synth::write_tree(dir.path(), spec);
    const auto index = scan_dataset(dir.path(), four_classes());
    const auto set = load_images(index, 10);
    ASSERT_EQ(set.size(), 12u);
    EXPECT_EQ(set.images.shape(), Shape(12, 10, 10, 1));
    for (std::size_t i = 0; i < set.images.size(); ++i) {
        EXPECT_GE(set.images[i], 0.0f);
        EXPECT_LE(set.images[i], 1.0f);
    }
    const std::vector<std::size_t> rows = {11, 0, 5};
    const auto [x, y] = set.batch(rows);
    EXPECT_EQ(x.shape(), Shape(3, 10, 10, 1));
    EXPECT_EQ(y.shape(), Shape::matrix(3, 4));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        float sum = 0;
        for (std::size_t c = 0; c < 4; ++c) sum += y.at(r, 0, 0, c);
        EXPECT_EQ(sum, 1.0f);
        EXPECT_EQ(y.at(r, 0, 0, index.entries[rows[r]].class_id), 1.0f);
        const auto single = load_image(index.entries[rows[r]].path, 10);
        for (std::size_t i = 0; i < single.size(); ++i) EXPECT_EQ(x[r * 100 + i], single[i]);
    }

    BatchSequence seq(index, 5, 1, 0, 10);
    ASSERT_EQ(seq.size(), 3u);
    const auto b = seq[2];
    EXPECT_EQ(b.images.shape(), Shape(2, 10, 10, 1));
    const auto [xs, ys] = set.batch(seq.rows(2));
    EXPECT_EQ(b.images.values(), xs.values());
    EXPECT_EQ(b.labels.values(), ys.values());
}

// ---- listings -----------------------------------------------------------------------------

TEST(Listing, RoundTrip) {
    check::TempDir dir;
    const auto index = fake_index(four_classes(), {2, 1, 3, 1});
    write_listing(dir.path() / "list.txt", index);
    const auto back = read_listing(dir.path() / "list.txt", four_classes());
    EXPECT_EQ(back.entries, index.entries);
    EXPECT_EQ(back.manifest, index.manifest);
}

TEST(Listing, Errors) {
    check::TempDir dir;
    std::ofstream(dir.path() / "bad.txt") << "a.png,0\nno-comma-here\n";
    EXPECT_THROW(read_listing(dir.path() / "bad.txt", four_classes()), DataError);
    std::ofstream(dir.path() / "range.txt") << "a.png,9\n";
    EXPECT_THROW(read_listing(dir.path() / "range.txt", four_classes()), LabelError);
}
