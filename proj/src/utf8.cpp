#include "gbemt/utf8.hpp"

namespace gbemt::utf8 {
namespace {

// Length of the sequence starting at text[i] and its code point, or 0 on malformed input.
std::size_t decode_one(std::string_view text, std::size_t i, char32_t& cp) {
  const auto b0 = static_cast<unsigned char>(text[i]);
  if (b0 < 0x80) {
    cp = b0;
    return 1;
  }
  std::size_t len = 0;
  char32_t min = 0;
  if ((b0 & 0xE0) == 0xC0) {
    len = 2;
    cp = b0 & 0x1F;
    min = 0x80;
  } else if ((b0 & 0xF0) == 0xE0) {
    len = 3;
    cp = b0 & 0x0F;
    min = 0x800;
  } else if ((b0 & 0xF8) == 0xF0) {
    len = 4;
    cp = b0 & 0x07;
    min = 0x10000;
  } else {
    return 0;
  }
  if (i + len > text.size()) return 0;
  for (std::size_t k = 1; k < len; ++k) {
    const auto b = static_cast<unsigned char>(text[i + k]);
    if ((b & 0xC0) != 0x80) return 0;
    cp = (cp << 6) | (b & 0x3F);
  }
  if (cp < min || cp > 0x10FFFF || (cp >= 0xD800 && cp <= 0xDFFF)) return 0;
  return len;
}

template <typename Fn>
void for_each_char(std::string_view text, Fn&& fn) {
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = 0;
    std::size_t len = decode_one(text, i, cp);
    if (len == 0) len = 1;  // callers validate first; stay total on bad bytes
    fn(i, len, cp);
    i += len;
  }
}

}  // namespace

std::optional<std::size_t> find_invalid(std::string_view text) {
  std::size_t i = 0;
  while (i < text.size()) {
    char32_t cp = 0;
    const std::size_t len = decode_one(text, i, cp);
    if (len == 0) return i;
    i += len;
  }
  return std::nullopt;
}

std::vector<std::string> characters(std::string_view text) {
  std::vector<std::string> out;
  for_each_char(text, [&](std::size_t pos, std::size_t len, char32_t) {
    out.emplace_back(text.substr(pos, len));
  });
  return out;
}

std::vector<char32_t> code_points(std::string_view text) {
  std::vector<char32_t> out;
  for_each_char(text, [&](std::size_t, std::size_t, char32_t cp) { out.push_back(cp); });
  return out;
}

bool is_space(char32_t cp) {
  switch (cp) {
    case 0x09: case 0x0A: case 0x0B: case 0x0C: case 0x0D: case 0x1C:
    case 0x1D: case 0x1E: case 0x1F: case 0x20:
    case 0x85: case 0xA0: case 0x1680: case 0x2028: case 0x2029:
    case 0x202F: case 0x205F: case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200A;
  }
}

std::string trim(std::string_view text) {
  std::size_t begin = text.size();
  std::size_t end = 0;
  for_each_char(text, [&](std::size_t pos, std::size_t len, char32_t cp) {
    if (is_space(cp)) return;
    if (begin == text.size()) begin = pos;
    end = pos + len;
  });
  if (begin >= end) return {};
  return std::string(text.substr(begin, end - begin));
}

std::vector<std::string> split_whitespace(std::string_view text) {
  std::vector<std::string> words;
  std::string current;
  for_each_char(text, [&](std::size_t pos, std::size_t len, char32_t cp) {
    if (is_space(cp)) {
      if (!current.empty()) words.push_back(std::move(current));
      current.clear();
    } else {
      current.append(text.substr(pos, len));
    }
  });
  if (!current.empty()) words.push_back(std::move(current));
  return words;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  for (const auto& w : split_whitespace(text)) {
    if (!out.empty()) out.push_back(' ');
    out += w;
  }
  return out;
}

}  // namespace gbemt::utf8
