#include "gradeshi/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "gradeshi/architectures.hpp"

namespace gradeshi {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

namespace fs = std::filesystem;

namespace {

constexpr std::string_view kMomentPrefixM = "adam.m:";
constexpr std::string_view kMomentPrefixV = "adam.v:";

template <typename T>
constexpr std::uint8_t dtype_code() {
    return sizeof(T) == 4 ? 1 : 2;
}

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

std::uint32_t checked_u32(std::size_t v, const std::string& what) {
    if (v > std::numeric_limits<std::uint32_t>::max()) {
        throw FormatError(what + " does not fit in 32 bits");
    }
    return static_cast<std::uint32_t>(v);
}

template <typename T>
void put_tensor(std::string& out, const std::string& name, const BasicTensor<T>& t) {
    put_u32(out, checked_u32(name.size(), "tensor name"));
    out += name;
    out.push_back(static_cast<char>(dtype_code<T>()));
    for (std::size_t e : t.shape().extents) {
        put_u32(out, checked_u32(e, "extent of " + name));
    }
    out.append(reinterpret_cast<const char*>(t.data().data()), t.size() * sizeof(T));
}

class Reader {
public:
    Reader(std::string bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

    bool done() const noexcept { return pos_ == bytes_.size(); }

    const char* take(std::size_t n, const char* what) {
        if (bytes_.size() - pos_ < n) {
            throw IntegrityError(path_ + ": truncated while reading " + what);
        }
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }

    std::uint32_t u32(const char* what) {
        std::uint32_t v;
        std::memcpy(&v, take(4, what), 4);
        return v;
    }

private:
    std::string bytes_;
    std::string path_;
    std::size_t pos_ = 0;
};

} // namespace

template <typename T>
void save_checkpoint(const Network<T>& net, const Manifest& manifest, const Preprocessing& preprocessing,
                     const fs::path& path, const AdamState<T>* optimizer) {
    if (!net.config()) {
        throw StateError("network has no architecture config to save");
    }
    const auto state = net.state();
    std::size_t count = state.size();
    nlohmann::json header;
    header["arch"] = *net.config();
    header["manifest"] = manifest;
    header["preprocessing"] = {{"image_size", preprocessing.image_size}, {"invert", preprocessing.invert}};
    if (optimizer != nullptr) {
        const auto& h = optimizer->hyper();
        header["optimizer"] = {{"t", optimizer->t()},
                               {"lr", h.lr},
                               {"beta1", h.beta1},
                               {"beta2", h.beta2},
                               {"epsilon", h.epsilon}};
        count += 2 * optimizer->moments().size();
    }
    header["tensor_count"] = count;
    const std::string text = header.dump();

    std::string out(kCheckpointMagic, sizeof kCheckpointMagic);
    put_u32(out, kCheckpointVersion);
    put_u32(out, checked_u32(text.size(), "header"));
    out += text;
    for (const auto& [name, t] : state) {
        put_tensor(out, name, t);
    }
    if (optimizer != nullptr) {
        for (const auto& [name, mv] : optimizer->moments()) {
            put_tensor(out, std::string(kMomentPrefixM) + name, mv.m);
            put_tensor(out, std::string(kMomentPrefixV) + name, mv.v);
        }
    }

    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) {
            throw IoError("cannot write checkpoint " + path.string());
        }
    }
    std::error_code ec;
    fs::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move checkpoint into place at " + path.string() + ": " + ec.message());
    }
}

template <typename T>
Checkpoint<T> load_checkpoint(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) {
        throw IoError("cannot read checkpoint " + path.string());
    }
    Reader in(std::string(std::istreambuf_iterator<char>(f), {}), path.string());

    if (std::memcmp(in.take(sizeof kCheckpointMagic, "magic"), kCheckpointMagic, sizeof kCheckpointMagic) != 0) {
        throw FormatError(path.string() + " is not a checkpoint (bad magic)");
    }
    const auto version = in.u32("version");
    if (version != kCheckpointVersion) {
        throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version));
    }
    const auto header_len = in.u32("header length");
    Checkpoint<T> ckpt;
    std::size_t count = 0;
    std::optional<std::uint64_t> opt_t;
    try {
        const auto header = nlohmann::json::parse(std::string_view(in.take(header_len, "header"), header_len));
        ckpt.arch = header.at("arch").get<ArchConfig>();
        ckpt.manifest = header.at("manifest").get<Manifest>();
        ckpt.preprocessing.image_size = header.at("preprocessing").at("image_size").get<std::size_t>();
        ckpt.preprocessing.invert = header.at("preprocessing").at("invert").get<bool>();
        count = header.at("tensor_count").get<std::size_t>();
        if (header.contains("optimizer")) {
            const auto& o = header["optimizer"];
            OptimizerSnapshot<T> snap;
            snap.t = o.at("t").get<std::uint64_t>();
            snap.hyper = AdamHyper{o.at("lr").get<double>(), o.at("beta1").get<double>(), o.at("beta2").get<double>(),
                                   o.at("epsilon").get<double>()};
            ckpt.optimizer = std::move(snap);
        }
    } catch (const nlohmann::json::exception& e) {
        throw FormatError(path.string() + ": malformed header: " + e.what());
    }

    for (std::size_t i = 0; i < count; ++i) {
        const auto name_len = in.u32("tensor name length");
        std::string name(in.take(name_len, "tensor name"), name_len);
        const auto dtype = static_cast<std::uint8_t>(*in.take(1, "dtype"));
        if (dtype != dtype_code<T>()) {
            throw FormatError(path.string() + ": tensor '" + name + "' has dtype " + std::to_string(dtype) +
                              ", expected " + std::to_string(dtype_code<T>()));
        }
        Shape shape;
        for (auto& e : shape.extents) {
            e = in.u32("tensor extents");
        }
        std::size_t elements = 0;
        try {
            elements = shape.size();
        } catch (const ShapeError&) {
            throw IntegrityError(path.string() + ": tensor '" + name + "' has impossible extents");
        }
        if (elements > std::numeric_limits<std::size_t>::max() / sizeof(T)) {
            throw IntegrityError(path.string() + ": tensor '" + name + "' has impossible extents");
        }
        const std::size_t bytes = elements * sizeof(T);
        const char* raw = in.take(bytes, ("data of '" + name + "'").c_str());
        BasicTensor<T> t(shape);
        std::memcpy(t.data().data(), raw, bytes);

        auto moment = [&](std::string_view prefix) -> BasicTensor<T>* {
            if (!ckpt.optimizer || name.compare(0, prefix.size(), prefix) != 0) {
                return nullptr;
            }
            auto& mv = ckpt.optimizer->moments[name.substr(prefix.size())];
            return prefix == kMomentPrefixM ? &mv.m : &mv.v;
        };
        BasicTensor<T>* slot = moment(kMomentPrefixM);
        if (slot == nullptr) {
            slot = moment(kMomentPrefixV);
        }
        if (slot == nullptr) {
            slot = &ckpt.tensors[name];
        }
        if (!slot->empty()) {
            throw IntegrityError(path.string() + ": duplicate tensor '" + name + "'");
        }
        *slot = std::move(t);
    }
    if (!in.done()) {
        throw IntegrityError(path.string() + ": data beyond the " + std::to_string(count) +
                             " tensors declared in the header");
    }
    return ckpt;
}

template <typename T>
Network<T> network_from_checkpoint(const Checkpoint<T>& ckpt) {
    Network<T> net = build_network<T>(ckpt.arch, 0);
    net.load_state(ckpt.tensors);
    return net;
}

template <typename T>
AdamState<T> optimizer_from_checkpoint(const Checkpoint<T>& ckpt) {
    if (!ckpt.optimizer) {
        return AdamState<T>();
    }
    AdamState<T> state(ckpt.optimizer->hyper);
    state.restore(ckpt.optimizer->t, ckpt.optimizer->moments);
    return state;
}

#define GRADESHI_INSTANTIATE(T)                                                                       \
    template void save_checkpoint(const Network<T>&, const Manifest&, const Preprocessing&,           \
                                  const fs::path&, const AdamState<T>*);                              \
    template Checkpoint<T> load_checkpoint<T>(const fs::path&);                                       \
    template Network<T> network_from_checkpoint(const Checkpoint<T>&);                                \
    template AdamState<T> optimizer_from_checkpoint(const Checkpoint<T>&);

GRADESHI_INSTANTIATE(float)
GRADESHI_INSTANTIATE(double)
#undef GRADESHI_INSTANTIATE

} // namespace gradeshi
