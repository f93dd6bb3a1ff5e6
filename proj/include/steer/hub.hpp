#pragma once

#include "steer/model.hpp"
#include "steer/steering.hpp"

#include "json.hpp"

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace steer {

struct HubEntry {
    std::string trait;
    ModelId model_id;
    std::uint32_t hidden_dim = 0;
    std::vector<int> layers;
    std::uint64_t offset = 0;
    std::uint64_t size = 0;
    std::uint32_t checksum = 0;  // CRC32C of the payload bytes
    ExtractionMeta meta;
};

/// CRC-32C (Castagnoli), as used for hub payloads.
std::uint32_t crc32c(std::span<const unsigned char> bytes);

/// Single-file store of control vectors keyed by (trait, model id).
///
/// Layout: "CLMV" | u32 version=1 | payloads... | index | u64 index offset.
/// Payload: u16 trait length, trait, 32-byte model id, u32 layer count, then per
/// layer u32 index and hidden_dim f32 values. The index lists every entry with
/// its offset, size, CRC32C and extraction metadata, followed by a CRC32C of the
/// index itself.
///
/// Every save rewrites the file to a temporary sibling and renames it into
/// place under an exclusive lock on `<path>.lock`, so readers always see either
/// the old or the new file.
class Hub {
public:
    explicit Hub(std::filesystem::path path);

    const std::filesystem::path& path() const { return path_; }

    /// Stores `vector` and returns its entry id (position in the index). An
    /// existing (trait, model id) entry is only overwritten with `replace`, and
    /// keeps its id.
    std::uint32_t save(const ControlVector& vector, bool replace = false) const;

    /// Throws NotFoundError when absent and ChecksumError when the payload does
    /// not match its stored CRC.
    ControlVector load(const std::string& trait, const ModelId& model_id) const;

    /// Index entries in insertion order, without reading payloads. A missing
    /// file is an empty hub.
    std::vector<HubEntry> list() const;

    /// Entries belonging to `model_id` only.
    std::vector<HubEntry> list_for(const ModelId& model_id) const;

    /// Human-readable dump (floats as decimals, not a lossless format).
    nlohmann::ordered_json export_json() const;

private:
    std::filesystem::path path_;
};

}  // namespace steer
