#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace calbound::csv {

// Fixed 17-significant-digit formatting so CSV output is bit-exact across
// platforms and re-runs. '.' decimal separator, no locale dependence.
std::string format_double(double v);

std::string join_row(const std::vector<std::string>& fields);

// Writes rows with LF line endings; header row mandatory. Creates parent
// directories as needed and replaces any existing file atomically (write to
// temp, rename).
void write_file(const std::filesystem::path& path, const std::string& header,
                const std::vector<std::string>& rows);

std::string read_file(const std::filesystem::path& path);

// FNV-1a 64-bit content hash, printed as 16 hex digits.
std::string fnv1a_hex(const std::string& bytes);

}  // namespace calbound::csv
