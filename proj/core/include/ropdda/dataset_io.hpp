#pragma once

// Text dataset files and raw image files with a metadata sidecar.
//
// Dataset file layout:
//
//   ropdda-dataset v1 seed=<u64>
//   @train <count>
//   <domain>,<label>,<origin>,<hex bytes>
//   ...
//   @validation <count>
//   ...
//   @test <count>
//   ...
//
// Every section is always present, in this order; counts make truncation
// detectable.

#include "ropdda/datagen.hpp"

#include <cstdint>
#include <filesystem>
#include <string>

namespace ropdda::io {

inline constexpr int kDatasetFormatVersion = 1;

struct DatasetFile {
    std::uint64_t seed = 0;
    datagen::Partitions partitions;

    bool operator==(const DatasetFile &) const = default;
};

/// Throws IoError.
void write_dataset(const std::filesystem::path &path, const DatasetFile &file);

/// Throws IoError when unreadable, FormatError (with line number) when corrupt.
DatasetFile read_dataset(const std::filesystem::path &path);

std::string format_record(const Sample &s);
/// `line_no` is only used in error messages.
Sample parse_record(const std::string &line, std::size_t line_no);

/// Writes `<stem>.bin` (raw bytes) and `<stem>.meta` (key = value sidecar).
void write_image(const std::filesystem::path &stem, const datagen::SyntheticImage &image);

/// Reloads the image bytes and re-derives the ground-truth gadget offsets by
/// synthesizing again from the recorded spec and seed; a mismatch with the
/// stored bytes raises FormatError.
datagen::SyntheticImage read_image(const std::filesystem::path &stem);

/// key = value rendering of an image spec; prefix is prepended to each key.
std::string format_image_spec(const datagen::ImageSpec &spec, const std::string &prefix);

} // namespace ropdda::io
