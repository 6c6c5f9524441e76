// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <algorithm>
#include <cctype>
#include <string>
#include <string_view>
#include <vector>

namespace unisign::text {

/// Splits UTF-8 into code-point substrings. Invalid bytes become single-byte pieces.
inline std::vector<std::string> utf8_chars(std::string_view s) {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < s.size();) {
    const auto c = static_cast<unsigned char>(s[i]);
    std::size_t len = 1;
    if (c >= 0xF0) len = 4;
    else if (c >= 0xE0) len = 3;
    else if (c >= 0xC0) len = 2;
    if (i + len > s.size()) len = 1;
    out.emplace_back(s.substr(i, len));
    i += len;
  }
  return out;
}

inline char32_t code_point(std::string_view ch) {
  const auto b = [&](std::size_t i) { return static_cast<char32_t>(static_cast<unsigned char>(ch[i])); };
  switch (ch.size()) {
    case 2: return ((b(0) & 0x1F) << 6) | (b(1) & 0x3F);
    case 3: return ((b(0) & 0x0F) << 12) | ((b(1) & 0x3F) << 6) | (b(2) & 0x3F);
    case 4: return ((b(0) & 0x07) << 18) | ((b(1) & 0x3F) << 12) | ((b(2) & 0x3F) << 6) | (b(3) & 0x3F);
    default: return ch.empty() ? 0 : b(0);
  }
}

/// CJK ideographs, kana, hangul and CJK/full-width punctuation: written without spaces.
inline bool is_cjk(std::string_view ch) {
  const char32_t c = code_point(ch);
  return (c >= 0x3000 && c <= 0x30FF) || (c >= 0x3400 && c <= 0x4DBF) || (c >= 0x4E00 && c <= 0x9FFF) ||
         (c >= 0xAC00 && c <= 0xD7AF) || (c >= 0xF900 && c <= 0xFAFF) || (c >= 0xFF00 && c <= 0xFFEF);
}

inline bool is_space(std::string_view ch) { return ch.size() == 1 && std::isspace(static_cast<unsigned char>(ch[0])); }

/// ASCII punctuation plus the common CJK and full-width marks.
inline bool is_punctuation(std::string_view ch) {
  if (ch.size() == 1) return std::ispunct(static_cast<unsigned char>(ch[0])) != 0;
  const char32_t c = code_point(ch);
  return (c >= 0x3000 && c <= 0x303F) || (c >= 0xFF01 && c <= 0xFF0F) || (c >= 0xFF1A && c <= 0xFF20) ||
         (c >= 0xFF3B && c <= 0xFF40) || (c >= 0xFF5B && c <= 0xFF65) || (c >= 0x2010 && c <= 0x2027);
}

/// Words for modeling: whitespace-separated runs, with every CJK character its own word.
inline std::vector<std::string> split_words(std::string_view s) {
  std::vector<std::string> words;
  std::string cur;
  auto flush = [&] {
    if (!cur.empty()) words.push_back(std::move(cur));
    cur.clear();
  };
  for (const auto& ch : utf8_chars(s)) {
    if (is_space(ch)) {
      flush();
    } else if (is_cjk(ch)) {
      flush();
      words.push_back(ch);
    } else {
      cur += ch;
    }
  }
  flush();
  return words;
}

/// Joins words with single spaces, omitting spaces next to CJK characters.
inline std::string join_words(const std::vector<std::string>& words) {
  std::string out;
  for (std::size_t i = 0; i < words.size(); ++i) {
    if (i > 0) {
      const auto prev = utf8_chars(words[i - 1]), next = utf8_chars(words[i]);
      if (!is_cjk(prev.back()) && !is_cjk(next.front())) out += ' ';
    }
    out += words[i];
  }
  return out;
}

/// Canonical spacing: trimmed, single spaces, none around CJK characters.
inline std::string normalize(std::string_view s) { return join_words(split_words(s)); }

inline std::string ascii_lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

inline bool contains_cjk(std::string_view s) {
  for (const auto& ch : utf8_chars(s))
    if (is_cjk(ch) && !is_punctuation(ch)) return true;
  return false;
}

}  // namespace unisign::text
