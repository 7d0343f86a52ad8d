#pragma once

#include <cctype>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "medsum/common.hpp"

namespace medsum {

using CodePoint = std::uint32_t;

// Decodes one UTF-8 sequence starting at `i`, advancing `i`.
// Throws FormatError with the byte offset on malformed input.
inline CodePoint utf8_decode(std::string_view s, std::size_t& i) {
  const auto bad = [&](std::size_t at) -> CodePoint {
    throw FormatError("malformed UTF-8 at byte offset " + std::to_string(at));
  };
  const unsigned char b0 = static_cast<unsigned char>(s[i]);
  if (b0 < 0x80) {
    ++i;
    return b0;
  }
  int len = 0;
  CodePoint cp = 0;
  if ((b0 & 0xe0) == 0xc0) {
    len = 2;
    cp = b0 & 0x1f;
  } else if ((b0 & 0xf0) == 0xe0) {
    len = 3;
    cp = b0 & 0x0f;
  } else if ((b0 & 0xf8) == 0xf0) {
    len = 4;
    cp = b0 & 0x07;
  } else {
    return bad(i);
  }
  if (i + static_cast<std::size_t>(len) > s.size()) return bad(i);
  for (int k = 1; k < len; ++k) {
    const unsigned char b = static_cast<unsigned char>(s[i + k]);
    if ((b & 0xc0) != 0x80) return bad(i + k);
    cp = (cp << 6) | (b & 0x3f);
  }
  // Reject overlong encodings and surrogates.
  if ((len == 2 && cp < 0x80) || (len == 3 && cp < 0x800) ||
      (len == 4 && cp < 0x10000) || (cp >= 0xd800 && cp <= 0xdfff) ||
      cp > 0x10ffff)
    return bad(i);
  i += static_cast<std::size_t>(len);
  return cp;
}

inline void utf8_append(std::string& out, CodePoint cp) {
  if (cp < 0x80) {
    out.push_back(static_cast<char>(cp));
  } else if (cp < 0x800) {
    out.push_back(static_cast<char>(0xc0 | (cp >> 6)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else if (cp < 0x10000) {
    out.push_back(static_cast<char>(0xe0 | (cp >> 12)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  } else {
    out.push_back(static_cast<char>(0xf0 | (cp >> 18)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 12) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | ((cp >> 6) & 0x3f)));
    out.push_back(static_cast<char>(0x80 | (cp & 0x3f)));
  }
}

inline std::vector<CodePoint> utf8_decode_all(std::string_view s) {
  std::vector<CodePoint> out;
  out.reserve(s.size());
  std::size_t i = 0;
  while (i < s.size()) out.push_back(utf8_decode(s, i));
  return out;
}

inline bool is_unicode_space(CodePoint cp) {
  switch (cp) {
    case 0x09:
    case 0x0a:
    case 0x0b:
    case 0x0c:
    case 0x0d:
    case 0x20:
    case 0x85:
    case 0xa0:
    case 0x1680:
    case 0x2028:
    case 0x2029:
    case 0x202f:
    case 0x205f:
    case 0x3000:
      return true;
    default:
      return cp >= 0x2000 && cp <= 0x200a;
  }
}

inline CodePoint to_lower_cp(CodePoint cp) {
  if (cp >= 'A' && cp <= 'Z') return cp + 0x20;
  // Latin-1 supplement, excluding the multiplication sign.
  if (cp >= 0xc0 && cp <= 0xde && cp != 0xd7) return cp + 0x20;
  // Latin Extended-A: upper/lower mostly alternate in pairs.
  if (cp >= 0x100 && cp <= 0x137 && cp % 2 == 0) return cp + 1;
  if (cp >= 0x139 && cp <= 0x148 && cp % 2 == 1) return cp + 1;
  if (cp >= 0x14a && cp <= 0x177 && cp % 2 == 0) return cp + 1;
  if (cp == 0x178) return 0xff;
  if (cp >= 0x179 && cp <= 0x17e && cp % 2 == 1) return cp + 1;
  return cp;
}

// Canonical composition for the combining marks that occur in practice in
// Latin-script text (NFC for this subset; other sequences pass through).
inline CodePoint compose_mark(CodePoint base, CodePoint mark) {
  struct Entry {
    CodePoint base, mark, composed;
  };
  static constexpr Entry kTable[] = {
      {'a', 0x300, 0xe0}, {'a', 0x301, 0xe1}, {'a', 0x302, 0xe2},
      {'a', 0x303, 0xe3}, {'a', 0x308, 0xe4}, {'a', 0x30a, 0xe5},
      {'e', 0x300, 0xe8}, {'e', 0x301, 0xe9}, {'e', 0x302, 0xea},
      {'e', 0x308, 0xeb}, {'i', 0x300, 0xec}, {'i', 0x301, 0xed},
      {'i', 0x302, 0xee}, {'i', 0x308, 0xef}, {'o', 0x300, 0xf2},
      {'o', 0x301, 0xf3}, {'o', 0x302, 0xf4}, {'o', 0x303, 0xf5},
      {'o', 0x308, 0xf6}, {'u', 0x300, 0xf9}, {'u', 0x301, 0xfa},
      {'u', 0x302, 0xfb}, {'u', 0x308, 0xfc}, {'y', 0x301, 0xfd},
      {'y', 0x308, 0xff}, {'n', 0x303, 0xf1}, {'c', 0x327, 0xe7},
      {'c', 0x30c, 0x10d}, {'s', 0x30c, 0x161}, {'z', 0x30c, 0x17e},
      {'e', 0x30c, 0x11b}, {'r', 0x30c, 0x159},
  };
  for (const auto& e : kTable)
    if (e.base == base && e.mark == mark) return e.composed;
  return 0;
}

inline bool is_combining_mark(CodePoint cp) {
  return cp >= 0x300 && cp <= 0x36f;
}

// Canonical text form used for duplicate detection and model input:
// compose combining marks, lowercase, map all Unicode whitespace to ' ',
// collapse whitespace runs, strip ends. Idempotent.
inline std::string normalize_text(std::string_view raw) {
  std::vector<CodePoint> cps = utf8_decode_all(raw);
  std::vector<CodePoint> composed;
  composed.reserve(cps.size());
  for (CodePoint cp : cps) {
    if (!composed.empty() && is_combining_mark(cp)) {
      if (CodePoint c = compose_mark(to_lower_cp(composed.back()), cp)) {
        composed.back() = c;
        continue;
      }
    }
    composed.push_back(cp);
  }
  std::string out;
  out.reserve(raw.size());
  bool pending_space = false;
  bool seen_char = false;
  for (CodePoint cp : composed) {
    if (is_unicode_space(cp)) {
      pending_space = seen_char;
      continue;
    }
    if (pending_space) {
      out.push_back(' ');
      pending_space = false;
    }
    utf8_append(out, to_lower_cp(cp));
    seen_char = true;
  }
  return out;
}

// Whitespace split; callers normalize first when canonical tokens matter.
inline std::vector<std::string> split_whitespace(std::string_view s) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < s.size()) {
    while (i < s.size() && s[i] == ' ') ++i;
    std::size_t j = i;
    while (j < s.size() && s[j] != ' ') ++j;
    if (j > i) out.emplace_back(s.substr(i, j - i));
    i = j;
  }
  return out;
}

inline bool is_ascii_punct(CodePoint cp) {
  return cp < 0x80 && std::ispunct(static_cast<int>(cp));
}

// Scoring tokenizer: lowercase, whitespace and punctuation act as
// delimiters, no stemming. Used by ROUGE and entity-set comparisons.
inline std::vector<std::string> eval_tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::string cur;
  std::size_t i = 0;
  while (i < text.size()) {
    CodePoint cp = utf8_decode(text, i);
    if (is_unicode_space(cp) || is_ascii_punct(cp)) {
      if (!cur.empty()) {
        out.push_back(cur);
        cur.clear();
      }
    } else {
      utf8_append(cur, to_lower_cp(cp));
    }
  }
  if (!cur.empty()) out.push_back(cur);
  return out;
}

}  // namespace medsum
