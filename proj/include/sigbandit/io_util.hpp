#ifndef SIGBANDIT_IO_UTIL_HPP
#define SIGBANDIT_IO_UTIL_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace sigbandit {

// shortest decimal string that round-trips the exact double (%.17g fallback)
std::string format_double(double x);

// fixed human-readable formatting for console output
std::string format_fixed(double x, int digits);

std::string fnv1a_hex(const std::string& data);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);
bool file_exists(const std::string& path);

// splits a line on commas; no quoting (none of our fields contain commas)
std::vector<std::string> split_csv_line(const std::string& line);
std::vector<std::string> split_string(const std::string& s, char sep);

double parse_double(const std::string& s);   // throws on trailing garbage
int64_t parse_int(const std::string& s);

std::string trim(const std::string& s);

}  // namespace sigbandit

#endif
