#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

namespace steer {

using TokenId = std::int32_t;
using TokenSequence = std::vector<TokenId>;

/// Byte-level tokenizer by default: ids 0..255 are raw bytes and, when the
/// vocabulary has room, id 256 is end-of-sequence. A vocab file replaces the
/// byte table with explicit `id<TAB>token` lines (backslash escapes \n \t \\),
/// encoded by greedy longest match.
class Tokenizer {
public:
    static constexpr TokenId kByteEos = 256;

    static Tokenizer byte_level(int vocab_size);
    static Tokenizer from_vocab_file(const std::filesystem::path& path, int vocab_size);
    static Tokenizer from_vocab_text(std::string_view text, int vocab_size);

    TokenSequence encode(std::string_view text) const;
    std::string decode(std::span<const TokenId> ids) const;
    std::string token_text(TokenId id) const;

    std::optional<TokenId> eos() const { return eos_; }
    int vocab_size() const { return vocab_size_; }
    bool is_byte_level() const { return pieces_.empty(); }

private:
    int vocab_size_ = 0;
    std::optional<TokenId> eos_;
    std::vector<std::string> pieces_;  // id -> text, vocab-file mode only
    std::unordered_map<std::string, TokenId> lookup_;
    std::size_t longest_piece_ = 0;
};

}  // namespace steer
