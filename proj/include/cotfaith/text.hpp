#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace cotfaith {

std::string trim(std::string_view s);
std::string to_lower(std::string_view s);
bool contains_ci(std::string_view haystack, std::string_view needle);
std::string replace_all(std::string s, std::string_view from, std::string_view to);

// Word-level tokenization shared by the toy transformer and the scripted
// backend: runs of [A-Za-z0-9_'] form one token, every other non-space
// character is its own token.
std::vector<std::string> word_tokenize(std::string_view text);

std::vector<std::string> split_lines(std::string_view text);

}  // namespace cotfaith
