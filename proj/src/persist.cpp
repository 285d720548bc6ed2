#include "geoflow/persist.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace geoflow {
namespace fs = std::filesystem;

namespace {

constexpr char kVolumeMagic[4] = {'G', 'V', 'L', '1'};
constexpr char kCheckpointMagic[4] = {'G', 'C', 'K', '1'};
constexpr std::size_t kHeaderBytes = 4 + 2 + 1 + 3 * 4;

template <typename U>
void put(std::string& out, U v) {
    static_assert(std::is_trivially_copyable_v<U>);
    unsigned char b[sizeof(U)];
    std::memcpy(b, &v, sizeof(U));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
    out.append(reinterpret_cast<const char*>(b), sizeof(U));
}

class Reader {
public:
    Reader(const std::string& bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        unsigned char b[sizeof(U)];
        std::memcpy(b, bytes_.data() + pos_, sizeof(U));
        if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(U));
        pos_ += sizeof(U);
        U v;
        std::memcpy(&v, b, sizeof(U));
        return v;
    }
    std::string take(std::size_t n) {
        need(n);
        std::string s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw DataError(what_ + ": truncated file");
    }
    const std::string& bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

std::string header(VolumeKind kind, std::int64_t x, std::int64_t y, std::int64_t z) {
    std::string out(kVolumeMagic, 4);
    put<std::uint16_t>(out, kVolumeFileVersion);
    put<std::uint8_t>(out, static_cast<std::uint8_t>(kind));
    for (auto e : {x, y, z}) {
        if (e <= 0 || e > UINT32_MAX) throw ShapeError("volume extent out of range");
        put<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    }
    return out;
}

VolumeHeader parse_header(Reader& r, const std::string& what) {
    if (r.take(4) != std::string(kVolumeMagic, 4)) throw DataError(what + ": not a volume file");
    if (auto v = r.get<std::uint16_t>(); v != kVolumeFileVersion)
        throw DataError(what + ": unsupported version " + std::to_string(v));
    VolumeHeader h;
    const auto kind = r.get<std::uint8_t>();
    if (kind > 3) throw DataError(what + ": unknown kind " + std::to_string(kind));
    h.kind = static_cast<VolumeKind>(kind);
    h.x = r.get<std::uint32_t>();
    h.y = r.get<std::uint32_t>();
    h.z = r.get<std::uint32_t>();
    if (!h.x || !h.y || !h.z) throw DataError(what + ": zero extent");
    return h;
}

struct Loaded {
    VolumeHeader h;
    std::string payload;
};

Loaded load(const fs::path& path, VolumeKind expected, std::size_t element_bytes) {
    const std::string bytes = read_file(path);
    Reader r(bytes, path.string());
    Loaded out{parse_header(r, path.string()), {}};
    if (out.h.kind != expected)
        throw DataError(path.string() + ": kind " + std::to_string(static_cast<int>(out.h.kind)) + ", expected " +
                        std::to_string(static_cast<int>(expected)));
    const std::size_t voxels = std::size_t{out.h.x} * out.h.y * out.h.z;
    const std::size_t n = r.remaining();
    if (n == 0 || n % (voxels * element_bytes) != 0 ||
        (expected != VolumeKind::Continuous && n != voxels * element_bytes))
        throw DataError(path.string() + ": payload length " + std::to_string(n) + " does not match extents");
    out.payload = r.take(n);
    return out;
}

void put_floats(std::string& out, std::span<const float> values) {
    for (float v : values) put<float>(out, v);
}

std::vector<float> get_floats(const std::string& payload, const std::string& what) {
    Reader r(payload, what);
    std::vector<float> v(payload.size() / 4);
    for (auto& f : v) f = r.get<float>();
    return v;
}

}  // namespace

void write_file_atomic(const fs::path& path, const std::string& bytes) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    const fs::path tmp = path.string() + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) throw ConfigError("cannot write " + tmp.string());
        f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
        if (!f) throw ConfigError("write failed for " + tmp.string());
    }
    fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

VolumeHeader read_volume_header(const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot read " + path.string());
    std::string bytes(kHeaderBytes, '\0');
    f.read(bytes.data(), static_cast<std::streamsize>(kHeaderBytes));
    bytes.resize(static_cast<std::size_t>(f.gcount()));
    Reader r(bytes, path.string());
    return parse_header(r, path.string());
}

void write_categorical(const fs::path& path, const CategoricalVolume& vol) {
    const Dims& d = vol.dims();
    std::string out = header(VolumeKind::Categorical, d.x, d.y, d.z);
    out.append(reinterpret_cast<const char*>(vol.labels().data()), vol.labels().size());
    write_file_atomic(path, out);
}

CategoricalVolume read_categorical(const fs::path& path) {
    auto [h, payload] = load(path, VolumeKind::Categorical, 1);
    CategoricalVolume vol({h.x, h.y, h.z}, 1);
    std::memcpy(vol.labels().data(), payload.data(), payload.size());
    for (auto l : vol.labels())
        if (!is_valid_category(l)) throw DataError(path.string() + ": invalid label " + std::to_string(l));
    return vol;
}

void write_condition(const fs::path& path, const ConditionVolume& cond) {
    const Dims& d = cond.dims();
    std::string out = header(VolumeKind::Condition, d.x, d.y, d.z);
    out.append(reinterpret_cast<const char*>(cond.labels.labels().data()), cond.labels.labels().size());
    write_file_atomic(path, out);
}

ConditionVolume read_condition(const fs::path& path) {
    auto [h, payload] = load(path, VolumeKind::Condition, 1);
    ConditionVolume c{LabelGrid<std::int8_t>({h.x, h.y, h.z}, kUnsampled), {}};
    std::memcpy(c.labels.labels().data(), payload.data(), payload.size());
    const Dims& d = c.dims();
    for (std::int64_t x = 0; x < d.x; ++x)
        for (std::int64_t y = 0; y < d.y; ++y) {
            bool full = true;
            for (std::int64_t z = 0; z < d.z && full; ++z) full = c.labels.at(x, y, z) != kUnsampled;
            if (full) c.borehole_columns.emplace_back(x, y);
        }
    validate_condition(c);
    return c;
}

void write_continuous(const fs::path& path, const tc::Tensor<float>& cv) {
    if (cv.rank() != 4) throw ShapeError("continuous volume must be [K, X, Y, Z], got " + tc::shape_str(cv.shape()));
    std::string out = header(VolumeKind::Continuous, cv.dim(1), cv.dim(2), cv.dim(3));
    put_floats(out, cv.data());
    write_file_atomic(path, out);
}

tc::Tensor<float> read_continuous(const fs::path& path) {
    auto [h, payload] = load(path, VolumeKind::Continuous, 4);
    const std::int64_t k = static_cast<std::int64_t>(payload.size() / (4 * std::size_t{h.x} * h.y * h.z));
    return tc::Tensor<float>({k, h.x, h.y, h.z}, get_floats(payload, path.string()));
}

void write_fieldmap(const fs::path& path, const FieldMap& map) {
    if (static_cast<std::int64_t>(map.values.size()) != std::int64_t{map.nx} * map.ny)
        throw ShapeError("field map value count does not match nx * ny");
    std::string out = header(VolumeKind::FieldMap, map.nx, map.ny, 1);
    for (double v : map.values) put<float>(out, static_cast<float>(v));
    write_file_atomic(path, out);
}

FieldMap read_fieldmap(const fs::path& path) {
    auto [h, payload] = load(path, VolumeKind::FieldMap, 4);
    if (h.z != 1) throw DataError(path.string() + ": field map must have Z = 1");
    FieldMap m;
    m.nx = static_cast<int>(h.x);
    m.ny = static_cast<int>(h.y);
    for (float v : get_floats(payload, path.string())) m.values.push_back(v);
    return m;
}

void write_checkpoint(const fs::path& path, const Checkpoint& ckpt) {
    std::string out(kCheckpointMagic, 4);
    put<std::uint16_t>(out, kCheckpointVersion);
    const std::string meta = ckpt.metadata.dump();
    put<std::uint32_t>(out, static_cast<std::uint32_t>(meta.size()));
    out += meta;
    put<std::uint32_t>(out, static_cast<std::uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        if (name.size() > UINT16_MAX) throw ConfigError("tensor name too long");
        put<std::uint16_t>(out, static_cast<std::uint16_t>(name.size()));
        out += name;
        put<std::uint8_t>(out, static_cast<std::uint8_t>(t.rank()));
        for (auto e : t.shape()) put<std::uint64_t>(out, static_cast<std::uint64_t>(e));
        put_floats(out, t.data());
    }
    write_file_atomic(path, out);
}

Checkpoint read_checkpoint(const fs::path& path) {
    const std::string bytes = read_file(path);
    const std::string what = path.string();
    Reader r(bytes, what);
    if (r.take(4) != std::string(kCheckpointMagic, 4)) throw DataError(what + ": not a checkpoint");
    if (auto v = r.get<std::uint16_t>(); v != kCheckpointVersion)
        throw DataError(what + ": unsupported checkpoint version " + std::to_string(v));
    Checkpoint ckpt;
    const std::string meta = r.take(r.get<std::uint32_t>());
    try {
        ckpt.metadata = nlohmann::json::parse(meta);
    } catch (const nlohmann::json::exception& e) {
        throw DataError(what + ": bad metadata: " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        std::string name = r.take(r.get<std::uint16_t>());
        tc::Shape shape(r.get<std::uint8_t>());
        std::size_t n = 1;
        for (auto& e : shape) {
            e = static_cast<std::int64_t>(r.get<std::uint64_t>());
            n *= static_cast<std::size_t>(e);
        }
        if (n > r.remaining() / 4) throw DataError(what + ": truncated file");
        ckpt.tensors.emplace(std::move(name), tc::Tensor<float>(shape, get_floats(r.take(4 * n), what)));
    }
    if (r.remaining() != 0) throw DataError(what + ": trailing bytes");
    return ckpt;
}

}  // namespace geoflow
