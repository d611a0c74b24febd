#ifndef GEOCAPS_CSV_HPP_
#define GEOCAPS_CSV_HPP_

#include <string>
#include <vector>

namespace geocaps {

// Locale-independent number formatting (dot decimal separator always).
std::string format_number(double v, int significant_digits = 9);

std::string csv_row(const std::vector<std::string>& cells);

void write_text_file(const std::string& path, const std::string& contents);

std::string read_text_file(const std::string& path);

}  // namespace geocaps

#endif  // GEOCAPS_CSV_HPP_
