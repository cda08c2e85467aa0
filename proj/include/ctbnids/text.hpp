#ifndef CTBNIDS_TEXT_HPP
#define CTBNIDS_TEXT_HPP

// Small helpers shared by the text file readers and writers.

#include <string>
#include <string_view>
#include <vector>

namespace ctbnids::text {

// Shortest representation that parses back to the same double.
std::string format_number(double x);

// Strict parse of the whole field; throws InputError mentioning `where`.
double parse_number(std::string_view field, const std::string& where);
long long parse_integer(std::string_view field, const std::string& where);

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
// Splits on runs of spaces and tabs.
std::vector<std::string_view> tokens(std::string_view s);

// "<source>:<line>" for error messages.
std::string location(const std::string& source, std::size_t line);

}  // namespace ctbnids::text

#endif
