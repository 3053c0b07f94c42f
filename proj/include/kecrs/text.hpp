#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <vector>

namespace kecrs::text {

/// ASCII case folding; bytes outside ASCII pass through unchanged.
std::string fold_case(std::string_view s);

/// Word character: ASCII letter or digit, or any non-ASCII byte.
bool is_word_byte(unsigned char c);

/// Lowercased whitespace-plus-punctuation tokenization: maximal runs of word
/// bytes form one token, every other non-space byte is a token on its own.
std::vector<std::string> tokenize(std::string_view s);

struct WordSpan {
    std::string word;  // case-folded
    std::size_t begin = 0;
    std::size_t end = 0;  // one past the last byte
};

/// Maximal word-byte runs with their byte ranges.
std::vector<WordSpan> word_spans(std::string_view s);

std::string join(const std::vector<std::string>& parts, std::string_view sep);

std::string trim(std::string_view s);

std::vector<std::string> split(std::string_view s, char sep);

}  // namespace kecrs::text
