#pragma once

// `key = value` text format shared by configuration files and image sidecars.
// One pair per line; `#` starts a comment; blank lines are ignored.

#include "ropdda/datagen.hpp"

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ropdda::kv {

struct Entry {
    std::string key;
    std::string value;
    std::size_t line = 0;
};

/// Throws ConfigError naming the line for malformed lines or duplicate keys.
std::vector<Entry> parse(std::string_view text);

std::uint64_t to_u64(std::string_view value, std::string_view key);
double to_double(std::string_view value, std::string_view key);
bool to_bool(std::string_view value, std::string_view key);
std::vector<double> to_doubles(std::string_view value, std::string_view key);
std::vector<std::size_t> to_sizes(std::string_view value, std::string_view key);

/// Shortest round-trip representation.
std::string format_double(double v);

/// Sets one ImageSpec field by name (size, base_address, gadget_density,
/// class_weights, register_weights, junk_rate). Returns false for unknown
/// fields; throws ConfigError for bad values.
bool set_image_field(datagen::ImageSpec &spec, std::string_view field, std::string_view value);

} // namespace ropdda::kv
