#pragma once

#include <cstdint>
#include <string>

namespace nmt {

// Shortest decimal form that round-trips the exact double, so logs and
// checkpoint headers are byte-stable across runs.
std::string fmt_double(double v);

// Fixed-point rendering with `digits` decimals, for human-facing reports.
std::string fmt_fixed(double v, int digits);

// Inverse of fmt_double; throws InputError on malformed or trailing input.
double parse_double(const std::string& text);

std::int64_t parse_int(const std::string& text);

}  // namespace nmt
