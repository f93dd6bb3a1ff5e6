#include "steer/hub.hpp"

#include "binary_io.hpp"
#include "steer/errors.hpp"

#include <boost/crc.hpp>

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>

namespace steer {

namespace {

constexpr char kMagic[4] = {'C', 'L', 'M', 'V'};
constexpr std::uint32_t kVersion = 1;
constexpr std::size_t kHeaderSize = 8;
constexpr std::size_t kTrailerSize = 8;

struct HubImage {
    std::vector<unsigned char> bytes;
    std::vector<HubEntry> entries;
};

std::span<const unsigned char> payload_of(const HubImage& img, const HubEntry& e) {
    return std::span<const unsigned char>(img.bytes).subspan(e.offset, e.size);
}

HubImage parse_image(std::vector<unsigned char> bytes, const std::string& path) {
    HubImage img;
    img.bytes = std::move(bytes);
    const auto& b = img.bytes;
    const std::span<const unsigned char> all(b);
    if (b.size() < kHeaderSize + kTrailerSize) throw FormatError("hub " + path + " is truncated");
    if (!std::equal(kMagic, kMagic + 4, b.begin())) throw FormatError("hub " + path + " has bad magic");
    detail::ByteReader head(all.subspan(4, 4), "hub header");
    if (auto v = head.u32(); v != kVersion) {
        throw FormatError("hub " + path + " has unsupported version " + std::to_string(v));
    }
    detail::ByteReader tail(all.subspan(b.size() - kTrailerSize), "hub trailer");
    const std::uint64_t index_offset = tail.u64();
    if (index_offset < kHeaderSize || index_offset > b.size() - kTrailerSize - 8) {
        throw FormatError("hub " + path + " has a bad index offset");
    }
    auto index = all.subspan(index_offset, b.size() - kTrailerSize - index_offset);
    auto index_body = index.first(index.size() - 4);
    detail::ByteReader crc_reader(index.last(4), "hub index");
    if (crc_reader.u32() != crc32c(index_body)) throw FormatError("hub " + path + " index checksum mismatch");

    detail::ByteReader r(index_body, "hub index");
    const std::uint32_t count = r.u32();
    for (std::uint32_t i = 0; i < count; ++i) {
        HubEntry e;
        e.trait = r.text(r.u16());
        auto id = r.bytes(32);
        std::copy(id.begin(), id.end(), e.model_id.bytes.begin());
        e.hidden_dim = r.u32();
        const std::uint32_t n_layers = r.u32();
        if (n_layers > r.remaining() / 4) throw FormatError("hub index is truncated");
        for (std::uint32_t k = 0; k < n_layers; ++k) e.layers.push_back(static_cast<int>(r.u32()));
        e.offset = r.u64();
        e.size = r.u64();
        e.checksum = r.u32();
        e.meta.pair_count = r.u32();
        const auto rp = r.u8();
        if (rp > 1) throw FormatError("hub index has unknown read position");
        e.meta.read_position = static_cast<ReadPosition>(rp);
        e.meta.timestamp = r.i64();
        if (e.offset < kHeaderSize || e.offset > index_offset || e.size > index_offset - e.offset) {
            throw FormatError("hub entry '" + e.trait + "' points outside the payload area");
        }
        img.entries.push_back(std::move(e));
    }
    if (r.remaining() != 0) throw FormatError("hub index has trailing bytes");
    return img;
}

HubImage read_image(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) return {};
    return parse_image(detail::read_binary_file(path.string()), path.string());
}

std::vector<unsigned char> encode_payload(const ControlVector& v) {
    detail::ByteWriter w;
    w.u16(static_cast<std::uint16_t>(v.trait.size()));
    w.text(v.trait);
    w.bytes(v.model_id.bytes);
    w.u32(static_cast<std::uint32_t>(v.layer_vectors.size()));
    for (const auto& [layer, values] : v.layer_vectors) {
        w.u32(static_cast<std::uint32_t>(layer));
        for (float x : values) w.f32(x);
    }
    return std::move(w.buffer());
}

ControlVector decode_payload(std::span<const unsigned char> bytes, const HubEntry& e) {
    detail::ByteReader r(bytes, "hub payload '" + e.trait + "'");
    ControlVector v;
    v.trait = r.text(r.u16());
    auto id = r.bytes(32);
    std::copy(id.begin(), id.end(), v.model_id.bytes.begin());
    if (v.trait != e.trait || v.model_id != e.model_id) {
        throw FormatError("hub payload for '" + e.trait + "' does not match its index entry");
    }
    v.hidden_dim = e.hidden_dim;
    const std::uint32_t n_layers = r.u32();
    for (std::uint32_t k = 0; k < n_layers; ++k) {
        const int layer = static_cast<int>(r.u32());
        std::vector<float> values(e.hidden_dim);
        for (auto& x : values) x = r.f32();
        v.layer_vectors.emplace(layer, std::move(values));
    }
    if (r.remaining() != 0) throw FormatError("hub payload for '" + e.trait + "' has trailing bytes");
    v.meta = e.meta;
    return v;
}

void encode_entry(detail::ByteWriter& w, const HubEntry& e) {
    w.u16(static_cast<std::uint16_t>(e.trait.size()));
    w.text(e.trait);
    w.bytes(e.model_id.bytes);
    w.u32(e.hidden_dim);
    w.u32(static_cast<std::uint32_t>(e.layers.size()));
    for (int l : e.layers) w.u32(static_cast<std::uint32_t>(l));
    w.u64(e.offset);
    w.u64(e.size);
    w.u32(e.checksum);
    w.u32(e.meta.pair_count);
    w.u8(static_cast<std::uint8_t>(e.meta.read_position));
    w.i64(e.meta.timestamp);
}

class FileLock {
public:
    explicit FileLock(const std::filesystem::path& path) {
        fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_CLOEXEC, 0644);
        if (fd_ < 0) throw Error("cannot open lock file " + path.string() + ": " + std::strerror(errno));
        while (::flock(fd_, LOCK_EX) != 0) {
            if (errno != EINTR) {
                ::close(fd_);
                throw Error("cannot lock " + path.string() + ": " + std::strerror(errno));
            }
        }
    }
    ~FileLock() {
        ::flock(fd_, LOCK_UN);
        ::close(fd_);
    }
    FileLock(const FileLock&) = delete;
    FileLock& operator=(const FileLock&) = delete;

private:
    int fd_ = -1;
};

void write_all_and_sync(const std::filesystem::path& path, const std::vector<unsigned char>& bytes) {
    int fd = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
    if (fd < 0) throw Error("cannot create " + path.string() + ": " + std::strerror(errno));
    std::size_t done = 0;
    while (done < bytes.size()) {
        auto n = ::write(fd, bytes.data() + done, bytes.size() - done);
        if (n < 0) {
            if (errno == EINTR) continue;
            int err = errno;
            ::close(fd);
            throw Error("write to " + path.string() + " failed: " + std::strerror(err));
        }
        done += static_cast<std::size_t>(n);
    }
    if (::fsync(fd) != 0 || ::close(fd) != 0) throw Error("cannot sync " + path.string());
}

}  // namespace

std::uint32_t crc32c(std::span<const unsigned char> bytes) {
    boost::crc_optimal<32, 0x1EDC6F41, 0xFFFFFFFF, 0xFFFFFFFF, true, true> crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

Hub::Hub(std::filesystem::path path) : path_(std::move(path)) {}

std::uint32_t Hub::save(const ControlVector& vector, bool replace) const {
    vector.validate();
    auto lock_path = path_;
    lock_path += ".lock";
    FileLock lock(lock_path);

    HubImage old = read_image(path_);
    auto existing = std::find_if(old.entries.begin(), old.entries.end(), [&](const HubEntry& e) {
        return e.trait == vector.trait && e.model_id == vector.model_id;
    });
    if (existing != old.entries.end() && !replace) {
        throw DuplicateError("hub already holds trait '" + vector.trait + "' for model " +
                             vector.model_id.hex().substr(0, 12) + " (use replace)");
    }

    HubEntry fresh;
    fresh.trait = vector.trait;
    fresh.model_id = vector.model_id;
    fresh.hidden_dim = static_cast<std::uint32_t>(vector.hidden_dim);
    fresh.layers = vector.layers();
    fresh.meta = vector.meta;
    const auto payload = encode_payload(vector);
    fresh.checksum = crc32c(payload);
    fresh.size = payload.size();

    std::uint32_t id = 0;
    std::vector<HubEntry> entries;
    detail::ByteWriter out;
    out.text(std::string_view(kMagic, 4));
    out.u32(kVersion);
    for (std::size_t i = 0; i < old.entries.size(); ++i) {
        if (existing != old.entries.end() && i == static_cast<std::size_t>(existing - old.entries.begin())) {
            id = static_cast<std::uint32_t>(i);
            fresh.offset = out.size();
            out.bytes(payload);
            entries.push_back(fresh);
            continue;
        }
        HubEntry e = old.entries[i];
        auto bytes = payload_of(old, e);
        e.offset = out.size();
        out.bytes(bytes);
        entries.push_back(std::move(e));
    }
    if (existing == old.entries.end()) {
        id = static_cast<std::uint32_t>(entries.size());
        fresh.offset = out.size();
        out.bytes(payload);
        entries.push_back(fresh);
    }

    const std::uint64_t index_offset = out.size();
    detail::ByteWriter index;
    index.u32(static_cast<std::uint32_t>(entries.size()));
    for (const auto& e : entries) encode_entry(index, e);
    const auto index_crc = crc32c(index.buffer());
    out.bytes(index.buffer());
    out.u32(index_crc);
    out.u64(index_offset);

    auto tmp = path_;
    tmp += ".tmp";
    write_all_and_sync(tmp, out.buffer());
    std::error_code ec;
    std::filesystem::rename(tmp, path_, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw Error("cannot move new hub into place at " + path_.string());
    }
    auto dir = path_.parent_path().empty() ? std::filesystem::path(".") : path_.parent_path();
    if (int dfd = ::open(dir.c_str(), O_RDONLY | O_DIRECTORY | O_CLOEXEC); dfd >= 0) {
        ::fsync(dfd);
        ::close(dfd);
    }
    return id;
}

ControlVector Hub::load(const std::string& trait, const ModelId& model_id) const {
    if (!std::filesystem::exists(path_)) throw NotFoundError("hub " + path_.string() + " does not exist");
    HubImage img = read_image(path_);
    for (const auto& e : img.entries) {
        if (e.trait != trait || e.model_id != model_id) continue;
        auto bytes = payload_of(img, e);
        if (crc32c(bytes) != e.checksum) throw ChecksumError(trait, "payload bytes do not match the stored CRC32C");
        return decode_payload(bytes, e);
    }
    throw NotFoundError("hub " + path_.string() + " has no trait '" + trait + "' for model " +
                        model_id.hex().substr(0, 12));
}

std::vector<HubEntry> Hub::list() const { return read_image(path_).entries; }

std::vector<HubEntry> Hub::list_for(const ModelId& model_id) const {
    auto all = list();
    std::vector<HubEntry> out;
    for (auto& e : all) {
        if (e.model_id == model_id) out.push_back(std::move(e));
    }
    return out;
}

nlohmann::ordered_json Hub::export_json() const {
    auto entries = nlohmann::ordered_json::array();
    for (const auto& e : list()) {
        auto v = load(e.trait, e.model_id);
        nlohmann::ordered_json j;
        j["trait"] = e.trait;
        j["model_id"] = e.model_id.hex();
        j["hidden_dim"] = e.hidden_dim;
        j["layers"] = e.layers;
        j["checksum"] = e.checksum;
        j["meta"] = {{"pair_count", e.meta.pair_count},
                     {"read_position", to_string(e.meta.read_position)},
                     {"timestamp", e.meta.timestamp}};
        auto vectors = nlohmann::ordered_json::object();
        for (const auto& [layer, values] : v.layer_vectors) vectors[std::to_string(layer)] = values;
        j["vectors"] = std::move(vectors);
        entries.push_back(std::move(j));
    }
    return {{"hub", path_.string()}, {"entries", std::move(entries)}};
}

}  // namespace steer
