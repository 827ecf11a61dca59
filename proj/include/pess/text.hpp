#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace pess {

// Canonical text normalization used everywhere before comparison,
// tokenization or embedding: lowercase (ASCII), collapse runs of
// whitespace to single spaces, trim the ends.
std::string normalize_text(std::string_view text);

// Whitespace tokenization of already-normalized text.
std::vector<std::string> split_tokens(std::string_view normalized);

std::string join_tokens(const std::vector<std::string>& tokens);

// 64-bit FNV-1a. Stable across platforms; used for feature hashing and
// checkpoint fingerprints.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 1469598103934665603ull);

}  // namespace pess
