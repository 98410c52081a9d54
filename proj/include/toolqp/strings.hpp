#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace toolqp {

std::string_view trim(std::string_view text);
std::string to_lower(std::string_view text);

// Collapses whitespace runs to single spaces and trims the ends.
std::string normalize_whitespace(std::string_view text);

// Lowercased alphanumeric word tokens.
std::vector<std::string> tokenize_words(std::string_view text);

// FNV-1a, used for corpus provenance hashes and the hash embedder.
std::uint64_t fnv1a64(std::string_view data, std::uint64_t seed = 1469598103934665603ull);

std::string hex64(std::uint64_t value);

}  // namespace toolqp
