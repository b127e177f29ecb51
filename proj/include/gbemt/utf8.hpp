#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gbemt::utf8 {

// Byte offset of the first invalid sequence, or nullopt when `text` is valid UTF-8.
std::optional<std::size_t> find_invalid(std::string_view text);

// Splits valid UTF-8 into one string per code point.
std::vector<std::string> characters(std::string_view text);

std::vector<char32_t> code_points(std::string_view text);

bool is_space(char32_t cp);

// Trims Unicode whitespace from both ends.
std::string trim(std::string_view text);

// Trim plus collapse of internal whitespace runs to a single ASCII space.
std::string normalize_whitespace(std::string_view text);

std::vector<std::string> split_whitespace(std::string_view text);

}  // namespace gbemt::utf8
