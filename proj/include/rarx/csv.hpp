#pragma once

#include <filesystem>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "rarx/signal.hpp"

namespace rarx {

/// Formats a double so that parsing it back gives the same value.
std::string format_real(double x);

/// Columns t,v_d,v_q,i_d,i_q with a header row.
void write_samples_csv(std::ostream& out, std::span<const DqSample> samples);
void write_samples_csv(const std::filesystem::path& path, std::span<const DqSample> samples);

/// Reads the format written above. Throws ConfigError on a malformed header
/// or row, SequencingError if time does not increase.
std::vector<DqSample> read_samples_csv(std::istream& in);
std::vector<DqSample> read_samples_csv(const std::filesystem::path& path);

/// Splits one CSV line on commas (no quoting: every field is numeric or a
/// bare token).
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace rarx
