#include "gradeshi/dataset.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "gradeshi/parallel.hpp"
#include "gradeshi/random.hpp"

namespace gradeshi {

namespace fs = std::filesystem;

namespace {

constexpr std::array<std::string_view, kCategoryCount> kCategoryNames = {"vowel", "consonant", "numeric",
                                                                         "compound"};

std::string two_digit(std::size_t i) {
    std::string s = std::to_string(i);
    return s.size() < 2 ? "0" + s : s;
}

std::optional<std::size_t> parse_index(std::string_view text) {
    std::size_t value = 0;
    const auto* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, value);
    if (ec != std::errc() || ptr != end || text.empty()) {
        return std::nullopt;
    }
    return value;
}

bool looks_like_image(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    std::array<unsigned char, 8> head{};
    in.read(reinterpret_cast<char*>(head.data()), head.size());
    const auto got = static_cast<std::size_t>(in.gcount());
    constexpr std::array<unsigned char, 8> png = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
    if (got >= 8 && std::equal(png.begin(), png.end(), head.begin())) {
        return true;
    }
    if (got >= 3 && head[0] == 0xff && head[1] == 0xd8 && head[2] == 0xff) {
        return true;
    }
    return got >= 2 && head[0] == 'B' && head[1] == 'M';
}

// Entries of each class, in index order.
std::vector<std::vector<std::size_t>> rows_by_class(const DatasetIndex& index) {
    std::vector<std::vector<std::size_t>> rows(index.class_count());
    for (std::size_t i = 0; i < index.entries.size(); ++i) {
        rows.at(index.entries[i].class_id).push_back(i);
    }
    return rows;
}

// Per-class quota: floor(f * n_c), then one extra per class in ascending id
// until the quotas sum to target. Only classes with a fractional remainder
// get an extra, so no class deviates from f * n_c by a whole sample. With
// keep_one, classes that would lose their last held-out entry are served
// only after every other candidate.
std::vector<std::size_t> allocate(const std::vector<std::size_t>& counts, double fraction, std::size_t target,
                                  bool keep_one) {
    std::vector<std::size_t> quota(counts.size());
    std::vector<bool> candidate(counts.size());
    std::size_t assigned = 0;
    for (std::size_t c = 0; c < counts.size(); ++c) {
        const double exact = fraction * static_cast<double>(counts[c]);
        quota[c] = std::min(counts[c], static_cast<std::size_t>(std::floor(exact)));
        candidate[c] = exact > static_cast<double>(quota[c]) && quota[c] < counts[c];
        assigned += quota[c];
    }
    for (int pass = 0; pass < 2 && assigned < target; ++pass) {
        for (std::size_t c = 0; c < counts.size() && assigned < target; ++c) {
            const bool empties_test = quota[c] + 1 == counts[c];
            if (!candidate[c] || (pass == 0 && keep_one && empties_test)) {
                continue;
            }
            candidate[c] = false;
            ++quota[c];
            ++assigned;
        }
    }
    return quota;
}

DatasetIndex with_entries(const DatasetIndex& index, std::vector<std::size_t> rows) {
    std::sort(rows.begin(), rows.end());
    DatasetIndex out;
    out.manifest = index.manifest;
    out.source_ids = index.source_ids;
    out.entries.reserve(rows.size());
    for (std::size_t r : rows) {
        out.entries.push_back(index.entries[r]);
    }
    return out;
}

// Chooses quota[c] rows of class c after a seeded shuffle; returns the chosen
// rows and the rest.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> pick(const DatasetIndex& index,
                                                                   const std::vector<std::size_t>& quota,
                                                                   std::uint64_t seed) {
    auto rows = rows_by_class(index);
    std::vector<std::size_t> chosen, rest;
    for (std::size_t c = 0; c < rows.size(); ++c) {
        Rng rng(mix_seed(seed, c));
        shuffle(rows[c].begin(), rows[c].end(), rng);
        chosen.insert(chosen.end(), rows[c].begin(), rows[c].begin() + static_cast<std::ptrdiff_t>(quota[c]));
        rest.insert(rest.end(), rows[c].begin() + static_cast<std::ptrdiff_t>(quota[c]), rows[c].end());
    }
    return {std::move(chosen), std::move(rest)};
}

DatasetIndex keep_classes(const DatasetIndex& index, const std::vector<std::size_t>& kept) {
    std::vector<std::size_t> remap(index.class_count(), index.class_count());
    DatasetIndex out;
    for (std::size_t new_id = 0; new_id < kept.size(); ++new_id) {
        const std::size_t old = kept[new_id];
        remap[old] = new_id;
        out.manifest.classes.push_back(index.manifest.classes[old]);
        out.source_ids.push_back(index.source_ids.empty() ? old : index.source_ids[old]);
    }
    for (const auto& e : index.entries) {
        if (remap[e.class_id] != index.class_count()) {
            out.entries.push_back(Entry{e.path, remap[e.class_id], e.category});
        }
    }
    return out;
}

} // namespace

std::string_view to_string(Category category) noexcept { return kCategoryNames[static_cast<std::size_t>(category)]; }

Category parse_category(std::string_view text) {
    for (std::size_t i = 0; i < kCategoryNames.size(); ++i) {
        if (kCategoryNames[i] == text) {
            return static_cast<Category>(i);
        }
    }
    throw UsageError("unknown category '" + std::string(text) + "'");
}

Manifest Manifest::standard() {
    Manifest m;
    for (std::size_t i = 0; i < 11; ++i) {
        m.classes.push_back({"vowel_" + two_digit(i), Category::vowel});
    }
    for (std::size_t i = 0; i < 39; ++i) {
        m.classes.push_back({"consonant_" + two_digit(i), Category::consonant});
    }
    for (std::size_t i = 0; i < 10; ++i) {
        m.classes.push_back({"digit_" + std::to_string(i), Category::numeric});
    }
    for (std::size_t i = 0; i < 24; ++i) {
        m.classes.push_back({"compound_" + two_digit(i), Category::compound});
    }
    return m;
}

void to_json(nlohmann::json& j, const Manifest& m) {
    j = nlohmann::json::object();
    auto& classes = j["classes"] = nlohmann::json::array();
    for (std::size_t i = 0; i < m.classes.size(); ++i) {
        classes.push_back({{"id", i}, {"name", m.classes[i].name}, {"category", to_string(m.classes[i].category)}});
    }
}

void from_json(const nlohmann::json& j, Manifest& m) {
    m.classes.clear();
    const auto& classes = j.at("classes");
    m.classes.resize(classes.size());
    std::vector<bool> seen(classes.size(), false);
    for (const auto& c : classes) {
        const auto id = c.at("id").get<std::size_t>();
        if (id >= classes.size() || seen[id]) {
            throw DataError("manifest class ids must be dense and unique, got " + std::to_string(id));
        }
        seen[id] = true;
        m.classes[id] = ClassInfo{c.at("name").get<std::string>(), parse_category(c.at("category").get<std::string>())};
    }
}

Manifest Manifest::load(const fs::path& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read manifest " + path.string());
    }
    try {
        return nlohmann::json::parse(in).get<Manifest>();
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed manifest " + path.string() + ": " + e.what());
    }
}

void Manifest::save(const fs::path& path) const {
    std::ofstream out(path);
    out << nlohmann::json(*this).dump(2) << '\n';
    if (!out) {
        throw IoError("cannot write manifest " + path.string());
    }
}

std::vector<std::size_t> DatasetIndex::class_counts() const {
    std::vector<std::size_t> counts(class_count(), 0);
    for (const auto& e : entries) {
        ++counts.at(e.class_id);
    }
    return counts;
}

std::map<Category, std::size_t> DatasetIndex::category_counts() const {
    std::map<Category, std::size_t> counts;
    for (const auto& e : entries) {
        ++counts[e.category];
    }
    return counts;
}

DatasetIndex scan_dataset(const fs::path& root, const Manifest& manifest) {
    if (!fs::is_directory(root)) {
        throw IngestionError("dataset root " + root.string() + " is not a directory");
    }
    if (manifest.size() == 0) {
        throw IngestionError("manifest has no classes");
    }
    for (const auto& dir : fs::directory_iterator(root)) {
        if (!dir.is_directory()) {
            continue;
        }
        const auto id = parse_index(dir.path().filename().string());
        if (id && *id >= manifest.size()) {
            throw IngestionError("class directory " + dir.path().string() + " is not in the manifest");
        }
    }
    DatasetIndex index;
    index.manifest = manifest;
    index.source_ids.resize(manifest.size());
    std::iota(index.source_ids.begin(), index.source_ids.end(), std::size_t{0});
    for (std::size_t id = 0; id < manifest.size(); ++id) {
        const fs::path dir = root / std::to_string(id);
        if (!fs::is_directory(dir)) {
            throw IngestionError("missing directory for class " + std::to_string(id) + " (" +
                                 manifest.classes[id].name + ")");
        }
        std::vector<fs::path> files;
        for (const auto& f : fs::directory_iterator(dir)) {
            if (f.is_regular_file() && f.path().filename().string().front() != '.') {
                files.push_back(f.path());
            }
        }
        std::sort(files.begin(), files.end(),
                  [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
        for (const auto& f : files) {
            if (looks_like_image(f)) {
                index.entries.push_back(Entry{f.string(), id, manifest.classes[id].category});
            } else {
                index.unreadable.push_back(f.string());
            }
        }
    }
    if (index.entries.empty()) {
        throw IngestionError("no images under " + root.string());
    }
    return index;
}

Tensor load_image(const fs::path& path, std::size_t size, bool invert) {
    if (size == 0) {
        throw ParameterError("image size must be positive");
    }
    cv::Mat raw = cv::imread(path.string(), cv::IMREAD_GRAYSCALE);
    if (raw.empty()) {
        throw ImageError("cannot decode " + path.string());
    }
    cv::Mat pixels;
    raw.convertTo(pixels, CV_32F);
    const int s = static_cast<int>(size);
    if (pixels.rows != s || pixels.cols != s) {
        cv::Mat resized;
        cv::resize(pixels, resized, cv::Size(s, s), 0.0, 0.0, cv::INTER_LINEAR);
        pixels = resized;
    }
    Tensor out(Shape(1, size, size, 1));
    for (int r = 0; r < s; ++r) {
        const float* row = pixels.ptr<float>(r);
        for (int c = 0; c < s; ++c) {
            const float v = std::clamp(row[c] / 255.0f, 0.0f, 1.0f);
            out[static_cast<std::size_t>(r) * size + static_cast<std::size_t>(c)] = invert ? 1.0f - v : v;
        }
    }
    return out;
}

template <typename T>
BasicTensor<T> one_hot(std::size_t class_id, std::size_t class_count) {
    if (class_id >= class_count) {
        throw LabelError("class id " + std::to_string(class_id) + " is outside [0, " + std::to_string(class_count) +
                         ")");
    }
    BasicTensor<T> out(Shape::matrix(1, class_count));
    out[class_id] = T(1);
    return out;
}

SplitResult stratified_split(const DatasetIndex& index, const SplitSpec& spec) {
    if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
        throw SplitError("train fraction must lie in (0, 1), got " + std::to_string(spec.train_fraction));
    }
    const auto counts = index.class_counts();
    const auto target = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(index.size())));
    std::vector<std::size_t> train_rows, test_rows;
    if (spec.stratified) {
        for (std::size_t c = 0; c < counts.size(); ++c) {
            if (counts[c] < 2) {
                throw SplitError("class " + std::to_string(c) + " (" + index.manifest.classes[c].name + ") has " +
                                 std::to_string(counts[c]) + " entries, need at least 2");
            }
        }
        auto quota = allocate(counts, spec.train_fraction, target, true);
        std::tie(train_rows, test_rows) = pick(index, quota, spec.seed);
    } else {
        std::vector<std::size_t> rows(index.size());
        std::iota(rows.begin(), rows.end(), std::size_t{0});
        Rng rng(spec.seed);
        shuffle(rows.begin(), rows.end(), rng);
        train_rows.assign(rows.begin(), rows.begin() + static_cast<std::ptrdiff_t>(target));
        test_rows.assign(rows.begin() + static_cast<std::ptrdiff_t>(target), rows.end());
    }
    SplitResult out{with_entries(index, std::move(train_rows)), with_entries(index, std::move(test_rows))};
    out.train.unreadable = index.unreadable;
    return out;
}

DatasetIndex subsample_per_class(const DatasetIndex& index, std::size_t per_class, std::uint64_t seed) {
    auto quota = index.class_counts();
    for (auto& q : quota) {
        q = std::min(q, per_class);
    }
    return with_entries(index, pick(index, quota, seed).first);
}

DatasetIndex subsample_total(const DatasetIndex& index, std::size_t total, std::uint64_t seed) {
    if (total >= index.size()) {
        return index;
    }
    const double fraction = static_cast<double>(total) / static_cast<double>(index.size());
    const auto quota = allocate(index.class_counts(), fraction, total, false);
    return with_entries(index, pick(index, quota, seed).first);
}

DatasetIndex filter_category(const DatasetIndex& index, Category category) {
    std::vector<std::size_t> kept;
    for (std::size_t c = 0; c < index.class_count(); ++c) {
        if (index.manifest.classes[c].category == category) {
            kept.push_back(c);
        }
    }
    DatasetIndex out = keep_classes(index, kept);
    if (out.entries.empty()) {
        throw FilterError("no entries in category " + std::string(to_string(category)));
    }
    return out;
}

DatasetIndex limit_classes(const DatasetIndex& index, std::size_t count) {
    if (count == 0 || count > index.class_count()) {
        throw FilterError("cannot keep " + std::to_string(count) + " of " + std::to_string(index.class_count()) +
                          " classes");
    }
    std::vector<std::size_t> kept(count);
    std::iota(kept.begin(), kept.end(), std::size_t{0});
    DatasetIndex out = keep_classes(index, kept);
    if (out.entries.empty()) {
        throw FilterError("no entries in the first " + std::to_string(count) + " classes");
    }
    return out;
}

std::vector<std::vector<std::size_t>> batch_plan(std::size_t count, std::size_t batch_size, std::uint64_t seed,
                                                 std::uint64_t epoch) {
    if (batch_size == 0) {
        throw ParameterError("batch size must be at least 1");
    }
    std::vector<std::size_t> order(count);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(mix_seed(seed, epoch));
    shuffle(order.begin(), order.end(), rng);
    std::vector<std::vector<std::size_t>> plan;
    for (std::size_t begin = 0; begin < count; begin += batch_size) {
        const std::size_t end = std::min(count, begin + batch_size);
        plan.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin),
                          order.begin() + static_cast<std::ptrdiff_t>(end));
    }
    return plan;
}

template <typename T>
std::pair<BasicTensor<T>, BasicTensor<T>> ImageSet<T>::batch(std::span<const std::size_t> rows) const {
    const Shape& s = images.shape();
    const std::size_t per = s.features();
    BasicTensor<T> x(Shape(rows.size(), s.height(), s.width(), s.channels()));
    BasicTensor<T> y(Shape::matrix(rows.size(), class_count));
    auto src = images.data();
    auto dst = x.data();
    for (std::size_t i = 0; i < rows.size(); ++i) {
        const std::size_t r = rows[i];
        if (r >= labels.size()) {
            throw ParameterError("row " + std::to_string(r) + " is outside the image set");
        }
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(r * per), per,
                    dst.begin() + static_cast<std::ptrdiff_t>(i * per));
        y[i * class_count + labels[r]] = T(1);
    }
    return {std::move(x), std::move(y)};
}

template <typename T>
ImageSet<T> load_images(const DatasetIndex& index, std::size_t image_size, bool invert) {
    ImageSet<T> set;
    set.class_count = index.class_count();
    set.images = BasicTensor<T>(Shape(index.size(), image_size, image_size, 1));
    set.labels.resize(index.size());
    const std::size_t per = image_size * image_size;
    auto dst = set.images.data();
    parallel_for(index.size(), 16, [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i) {
            const Tensor img = load_image(index.entries[i].path, image_size, invert);
            std::copy(img.data().begin(), img.data().end(), dst.begin() + static_cast<std::ptrdiff_t>(i * per));
            set.labels[i] = index.entries[i].class_id;
        }
    });
    return set;
}

BatchSequence::BatchSequence(const DatasetIndex& index, std::size_t batch_size, std::uint64_t seed,
                             std::uint64_t epoch, std::size_t image_size, bool invert)
    : index_(&index), plan_(batch_plan(index.size(), batch_size, seed, epoch)), image_size_(image_size),
      invert_(invert) {}

Batch BatchSequence::operator[](std::size_t i) const {
    const auto& rows = plan_.at(i);
    const std::size_t c = index_->class_count();
    const std::size_t per = image_size_ * image_size_;
    Batch b{Tensor(Shape(rows.size(), image_size_, image_size_, 1)), Tensor(Shape::matrix(rows.size(), c))};
    for (std::size_t k = 0; k < rows.size(); ++k) {
        const Entry& e = index_->entries[rows[k]];
        const Tensor img = load_image(e.path, image_size_, invert_);
        std::copy(img.data().begin(), img.data().end(), b.images.data().begin() + static_cast<std::ptrdiff_t>(k * per));
        b.labels[k * c + e.class_id] = 1.0f;
    }
    return b;
}

void write_listing(const fs::path& path, const DatasetIndex& index) {
    std::ofstream out(path);
    for (const auto& e : index.entries) {
        out << e.path << ',' << e.class_id << '\n';
    }
    if (!out) {
        throw IoError("cannot write listing " + path.string());
    }
}

DatasetIndex read_listing(const fs::path& path, const Manifest& manifest) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read listing " + path.string());
    }
    DatasetIndex index;
    index.manifest = manifest;
    index.source_ids.resize(manifest.size());
    std::iota(index.source_ids.begin(), index.source_ids.end(), std::size_t{0});
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') {
            line.pop_back();
        }
        if (line.empty()) {
            continue;
        }
        const auto comma = line.rfind(',');
        const auto id = comma == std::string::npos ? std::nullopt : parse_index(std::string_view(line).substr(comma + 1));
        if (!id) {
            throw DataError(path.string() + ":" + std::to_string(line_no) + ": expected 'path,class-id'");
        }
        if (*id >= manifest.size()) {
            throw LabelError(path.string() + ":" + std::to_string(line_no) + ": class id " + std::to_string(*id) +
                             " is outside [0, " + std::to_string(manifest.size()) + ")");
        }
        index.entries.push_back(Entry{line.substr(0, comma), *id, manifest.classes[*id].category});
    }
    return index;
}

template Tensor one_hot<float>(std::size_t, std::size_t);
template TensorD one_hot<double>(std::size_t, std::size_t);
template struct ImageSet<float>;
template struct ImageSet<double>;
template ImageSet<float> load_images<float>(const DatasetIndex&, std::size_t, bool);
template ImageSet<double> load_images<double>(const DatasetIndex&, std::size_t, bool);

} // namespace gradeshi
