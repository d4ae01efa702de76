// Copyright (c) 2026, siftlab authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "siftlab/landscape.hpp"
#include "siftlab/sift.hpp"

namespace siftlab {

// Binary files are little-endian and end with a CRC-32 (zlib polynomial) of
// every preceding byte. Header: 4-byte magic, u32 version, then a per-format
// body.
//
// Increment ("SIFT"): u32 element tag (1 = f32, 2 = f64), u64 tensor count,
// then per tensor: u32 name length, name bytes, u32 rank, u64 extents[rank],
// u64 count, u64 indices[count] (strictly increasing), values[count].
//
// Checkpoint ("SIFC"): u32 element tag, u64 tensor count, then per tensor:
// name, rank, extents as above, values[product(extents)].
//
// Mask ("SIFM"): f64 rate, u32 granularity, u32 provenance, u64 seed,
// u64 calibration batches, u64 tensor count, then per tensor: name, rank,
// extents, u64 count, u64 indices[count].
inline constexpr std::uint32_t kFormatVersion = 1;

std::vector<std::uint8_t> encode_increment(const SparseIncrement& increment);
/// Throws FormatError with the failing check's code.
SparseIncrement decode_increment(const std::vector<std::uint8_t>& bytes);
void save_increment(const std::filesystem::path& path, const SparseIncrement& increment);
SparseIncrement load_increment(const std::filesystem::path& path);

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, Precision element_type);
ParamSet load_checkpoint(const std::filesystem::path& path);

void save_mask(const std::filesystem::path& path, const MaskSelection& mask);
MaskSelection load_mask(const std::filesystem::path& path);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes);
void write_text(const std::filesystem::path& path, const std::string& text);

/// Shortest decimal that round-trips; "nan", "inf", "-inf" otherwise.
std::string format_double(double v);

/// Header lines start with '#'. 1-D columns: alpha,loss,flag. 2-D columns:
/// alpha,beta,loss,flag. flag is 1 for a non-finite loss (printed as nan/inf).
std::string scan_csv(const LandscapeScan& scan);
void write_scan_csv(const std::filesystem::path& path, const LandscapeScan& scan);

/// Pretty-printed with keys in insertion order and a trailing newline.
void write_report_json(const std::filesystem::path& path, const nlohmann::ordered_json& report);

/// Generic CSV from a header and rows of preformatted cells.
std::string csv_table(const std::vector<std::string>& header, const std::vector<std::vector<std::string>>& rows);

}  // namespace siftlab
