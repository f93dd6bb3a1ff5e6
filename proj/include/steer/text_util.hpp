#pragma once

// Small string helpers shared by the parsers and the CLI.

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace steer::detail {

std::string_view trim(std::string_view s);
std::vector<std::string_view> split_lines(std::string_view text);
std::vector<std::string> split(std::string_view text, char sep);

// Shortest text that parses back to the same value.
std::string format_float(float v);
std::string format_double(double v);

double parse_double(std::string_view text);
int parse_int(std::string_view text);

// "3,5,7" or "2-4" style integer lists (ranges inclusive); result sorted, unique.
std::vector<int> parse_int_list(std::string_view text);
std::vector<double> parse_double_list(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view text);

// $STEER_RESOURCE_DIR when set, otherwise the source tree's resources/.
std::filesystem::path resource_dir();

// RFC 4180 style field quoting for CSV output.
std::string csv_field(std::string_view value);

// Feeds raw bytes and returns the text completed so far as valid UTF-8.
// Incomplete trailing sequences are held back until the next push; invalid
// bytes become U+FFFD.
class Utf8Accumulator {
public:
    std::string push(std::string_view bytes);
    // Flushes a dangling incomplete sequence as U+FFFD.
    std::string finish();

private:
    std::string pending_;
};

std::string sanitize_utf8(std::string_view bytes);

std::string hex_encode(const unsigned char* data, std::size_t size);

}  // namespace steer::detail
