#include "steer/text_util.hpp"

#include "steer/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <iterator>
#include <set>

namespace steer::detail {

std::string_view trim(std::string_view s) {
    const char* ws = " \t\r\n\f\v";
    auto b = s.find_first_not_of(ws);
    if (b == std::string_view::npos) return {};
    auto e = s.find_last_not_of(ws);
    return s.substr(b, e - b + 1);
}

std::vector<std::string_view> split_lines(std::string_view text) {
    std::vector<std::string_view> lines;
    std::size_t start = 0;
    while (start <= text.size()) {
        auto nl = text.find('\n', start);
        if (nl == std::string_view::npos) {
            if (start < text.size()) lines.push_back(text.substr(start));
            break;
        }
        lines.push_back(text.substr(start, nl - start));
        start = nl + 1;
    }
    return lines;
}

std::vector<std::string> split(std::string_view text, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        auto pos = text.find(sep, start);
        out.emplace_back(text.substr(start, pos == std::string_view::npos ? text.npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string format_float(float v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

double parse_double(std::string_view text) {
    text = trim(text);
    // from_chars does not accept a leading '+'
    if (!text.empty() && text.front() == '+') text.remove_prefix(1);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw PreconditionError("not a number: '" + std::string(text) + "'");
    }
    return v;
}

int parse_int(std::string_view text) {
    text = trim(text);
    int v = 0;
    auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || text.empty()) {
        throw PreconditionError("not an integer: '" + std::string(text) + "'");
    }
    return v;
}

std::vector<int> parse_int_list(std::string_view text) {
    std::set<int> values;
    for (const auto& raw : split(text, ',')) {
        std::string_view item = trim(raw);
        if (item.empty()) continue;
        auto dash = item.find('-', 1);
        if (dash != std::string_view::npos) {
            int lo = parse_int(item.substr(0, dash));
            int hi = parse_int(item.substr(dash + 1));
            if (hi < lo) throw PreconditionError("empty range '" + std::string(item) + "'");
            for (int v = lo; v <= hi; ++v) values.insert(v);
        } else {
            values.insert(parse_int(item));
        }
    }
    return {values.begin(), values.end()};
}

std::vector<double> parse_double_list(std::string_view text) {
    std::vector<double> out;
    for (const auto& raw : split(text, ',')) {
        if (trim(raw).empty()) continue;
        out.push_back(parse_double(raw));
    }
    return out;
}

std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("failed writing " + path.string());
}

std::filesystem::path resource_dir() {
    if (const char* env = std::getenv("STEER_RESOURCE_DIR"); env != nullptr && *env != '\0') return env;
    return STEER_RESOURCE_DIR;
}

std::string csv_field(std::string_view value) {
    if (value.find_first_of(",\"\r\n") == std::string_view::npos) return std::string(value);
    std::string out = "\"";
    for (char c : value) {
        if (c == '"') out += '"';
        out += c;
    }
    out += '"';
    return out;
}

namespace {

constexpr std::string_view kReplacement = "\xEF\xBF\xBD";

// Length of the UTF-8 sequence introduced by `lead`, or 0 if it cannot start one.
std::size_t sequence_length(unsigned char lead) {
    if (lead < 0x80) return 1;
    if (lead >= 0xC2 && lead <= 0xDF) return 2;
    if (lead >= 0xE0 && lead <= 0xEF) return 3;
    if (lead >= 0xF0 && lead <= 0xF4) return 4;
    return 0;
}

// Whether b may follow `lead` as the second byte (excludes overlongs and surrogates).
bool valid_second(unsigned char lead, unsigned char b) {
    if ((b & 0xC0) != 0x80) return false;
    if (lead == 0xE0) return b >= 0xA0;
    if (lead == 0xED) return b <= 0x9F;
    if (lead == 0xF0) return b >= 0x90;
    if (lead == 0xF4) return b <= 0x8F;
    return true;
}

}  // namespace

std::string Utf8Accumulator::push(std::string_view bytes) {
    pending_.append(bytes);
    std::string out;
    std::size_t i = 0;
    while (i < pending_.size()) {
        const auto lead = static_cast<unsigned char>(pending_[i]);
        const std::size_t len = sequence_length(lead);
        if (len == 0) {
            out += kReplacement;
            ++i;
            continue;
        }
        std::size_t ok = 1;
        while (ok < len && i + ok < pending_.size()) {
            const auto b = static_cast<unsigned char>(pending_[i + ok]);
            const bool good = ok == 1 ? valid_second(lead, b) : (b & 0xC0) == 0x80;
            if (!good) break;
            ++ok;
        }
        if (ok == len) {
            out.append(pending_, i, len);
            i += len;
        } else if (i + ok == pending_.size()) {
            break;  // might still complete with the next push
        } else {
            out += kReplacement;
            i += ok;
        }
    }
    pending_.erase(0, i);
    return out;
}

std::string Utf8Accumulator::finish() {
    std::string out = pending_.empty() ? "" : std::string(kReplacement);
    pending_.clear();
    return out;
}

std::string sanitize_utf8(std::string_view bytes) {
    Utf8Accumulator acc;
    auto out = acc.push(bytes);
    return out + acc.finish();
}

std::string hex_encode(const unsigned char* data, std::size_t size) {
    static const char* digits = "0123456789abcdef";
    std::string out;
    out.reserve(size * 2);
    for (std::size_t i = 0; i < size; ++i) {
        out.push_back(digits[data[i] >> 4]);
        out.push_back(digits[data[i] & 0xF]);
    }
    return out;
}

}  // namespace steer::detail
