#include "steer/tokenizer.hpp"

#include "steer/errors.hpp"
#include "steer/text_util.hpp"

#include <algorithm>

namespace steer {

namespace {

std::string unescape(std::string_view s, std::size_t line_no) {
    std::string out;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] != '\\') {
            out.push_back(s[i]);
            continue;
        }
        if (++i == s.size()) throw FormatError("vocab line " + std::to_string(line_no) + ": dangling backslash");
        switch (s[i]) {
            case 'n': out.push_back('\n'); break;
            case 't': out.push_back('\t'); break;
            case 'r': out.push_back('\r'); break;
            case '\\': out.push_back('\\'); break;
            default:
                throw FormatError("vocab line " + std::to_string(line_no) + ": unknown escape '\\" +
                                  std::string(1, s[i]) + "'");
        }
    }
    return out;
}

}  // namespace

Tokenizer Tokenizer::byte_level(int vocab_size) {
    Tokenizer t;
    t.vocab_size_ = vocab_size;
    if (vocab_size > kByteEos) t.eos_ = kByteEos;
    return t;
}

Tokenizer Tokenizer::from_vocab_text(std::string_view text, int vocab_size) {
    Tokenizer t;
    t.vocab_size_ = vocab_size;
    t.pieces_.assign(static_cast<std::size_t>(vocab_size), std::string());
    std::vector<bool> seen(static_cast<std::size_t>(vocab_size), false);
    std::size_t line_no = 0;
    for (auto line : detail::split_lines(text)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        auto tab = line.find('\t');
        if (tab == std::string_view::npos) {
            throw FormatError("vocab line " + std::to_string(line_no) + ": expected id<TAB>token");
        }
        int id = detail::parse_int(line.substr(0, tab));
        if (id < 0 || id >= vocab_size) {
            throw FormatError("vocab line " + std::to_string(line_no) + ": id " + std::to_string(id) +
                              " outside vocabulary");
        }
        auto piece = unescape(line.substr(tab + 1), line_no);
        if (seen[static_cast<std::size_t>(id)]) {
            throw FormatError("vocab line " + std::to_string(line_no) + ": id " + std::to_string(id) + " repeated");
        }
        seen[static_cast<std::size_t>(id)] = true;
        if (piece == "<eos>") {
            t.eos_ = id;
            continue;
        }
        if (piece.empty()) throw FormatError("vocab line " + std::to_string(line_no) + ": empty token");
        if (!t.lookup_.emplace(piece, id).second) {
            throw FormatError("vocab line " + std::to_string(line_no) + ": duplicate token text");
        }
        t.longest_piece_ = std::max(t.longest_piece_, piece.size());
        t.pieces_[static_cast<std::size_t>(id)] = std::move(piece);
    }
    if (t.lookup_.empty()) throw FormatError("vocab file defines no tokens");
    return t;
}

Tokenizer Tokenizer::from_vocab_file(const std::filesystem::path& path, int vocab_size) {
    return from_vocab_text(detail::read_text_file(path), vocab_size);
}

TokenSequence Tokenizer::encode(std::string_view text) const {
    TokenSequence out;
    if (is_byte_level()) {
        out.reserve(text.size());
        for (unsigned char c : text) {
            if (c >= vocab_size_) {
                throw TokenizeError("byte " + std::to_string(c) + " has no id in a vocabulary of " +
                                    std::to_string(vocab_size_));
            }
            out.push_back(static_cast<TokenId>(c));
        }
        return out;
    }
    std::size_t pos = 0;
    while (pos < text.size()) {
        std::size_t len = std::min(longest_piece_, text.size() - pos);
        for (; len > 0; --len) {
            auto it = lookup_.find(std::string(text.substr(pos, len)));
            if (it != lookup_.end()) {
                out.push_back(it->second);
                break;
            }
        }
        if (len == 0) throw TokenizeError("no vocabulary entry matches text at byte " + std::to_string(pos));
        pos += len;
    }
    return out;
}

std::string Tokenizer::token_text(TokenId id) const {
    if (id < 0 || id >= vocab_size_) throw RangeError("token id " + std::to_string(id) + " out of range");
    if (eos_ && id == *eos_) return {};
    if (is_byte_level()) return id < 256 ? std::string(1, static_cast<char>(id)) : std::string();
    return pieces_[static_cast<std::size_t>(id)];
}

std::string Tokenizer::decode(std::span<const TokenId> ids) const {
    std::string out;
    for (auto id : ids) out += token_text(id);
    return out;
}

}  // namespace steer
