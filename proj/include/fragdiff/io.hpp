#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "fragdiff/tensor.hpp"

namespace fragdiff {

std::uint64_t fnv1a(std::string_view bytes);
std::string hex64(std::uint64_t value);

std::string read_file(const std::string& path);
// Writes to a sibling temp file, flushes it and renames it over `path`.
void write_file_atomic(const std::string& path, const std::string& content);
void append_line(const std::string& path, const std::string& line);
void ensure_directory(const std::string& path);

// Embedding file: "EMB1", u64 rows, u64 cols (little endian), then
// rows * cols float32 values, row-major.
Matrix read_embedding_file(const std::string& path);
void write_embedding_file(const std::string& path, const Matrix& m);

// Residue letters of a FASTA-like text; '>' header lines and whitespace are
// skipped, letters are upper-cased.
std::string parse_fasta(std::string_view text);
std::string read_fasta(const std::string& path);

// Non-empty lines that do not start with '#', trailing whitespace removed.
std::vector<std::string> read_lines(const std::string& path);

}  // namespace fragdiff
