#pragma once

// Text checkpoint format, version 1:
//
//   FACE-FORGE-CKPT-1
//   <parameter count>
//   <name> <rank> <dim_0> ... <dim_{rank-1}>
//   <values, space separated, shortest round-trip decimal form>
//   ... (two lines per parameter, in name order)
//
// Values are written with std::to_chars (shortest representation that
// parses back to the same double), so save/load is bit-exact.

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <system_error>

#include "faceforge/numerics/parameters.hpp"

namespace faceforge {

inline constexpr const char* kCheckpointHeader = "FACE-FORGE-CKPT-1";

inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
  double v = 0.0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), v);
  if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
    throw DataError("invalid number '" + std::string(s) + "'");
  }
  return v;
}

inline void write_checkpoint(std::ostream& os, const Parameters& params) {
  os << kCheckpointHeader << '\n' << params.size() << '\n';
  for (const auto& [name, t] : params) {
    os << name << ' ' << t.rank();
    for (std::size_t d : t.shape()) os << ' ' << d;
    os << '\n';
    bool first = true;
    for (double v : t.values()) {
      if (!first) os << ' ';
      os << format_double(v);
      first = false;
    }
    os << '\n';
  }
}

inline Parameters read_checkpoint(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != kCheckpointHeader) {
    throw DataError("checkpoint: missing header " + std::string(kCheckpointHeader));
  }
  std::size_t count = 0;
  if (!std::getline(is, line)) throw DataError("checkpoint: missing parameter count");
  {
    auto res = std::from_chars(line.data(), line.data() + line.size(), count);
    if (res.ec != std::errc() || res.ptr != line.data() + line.size()) {
      throw DataError("checkpoint: bad parameter count '" + line + "'");
    }
  }
  Parameters params;
  for (std::size_t p = 0; p < count; ++p) {
    if (!std::getline(is, line)) throw DataError("checkpoint: truncated at parameter " + std::to_string(p));
    std::istringstream head(line);
    std::string name;
    std::size_t rank = 0;
    if (!(head >> name >> rank)) throw DataError("checkpoint: bad record header '" + line + "'");
    Shape shape(rank);
    for (auto& d : shape) {
      if (!(head >> d)) throw DataError("checkpoint: bad shape for '" + name + "'");
    }
    if (!std::getline(is, line)) throw DataError("checkpoint: missing values for '" + name + "'");
    std::vector<double> values;
    std::istringstream body(line);
    std::string tok;
    while (body >> tok) values.push_back(parse_double(tok));
    if (values.size() != shape_size(shape)) {
      throw DataError("checkpoint: '" + name + "' has " + std::to_string(values.size()) + " values for shape " +
                      shape_string(shape));
    }
    params.add(name, Tensor(std::move(shape), std::move(values)));
  }
  return params;
}

inline void save_checkpoint(const std::string& path, const Parameters& params) {
  std::ofstream os(path);
  if (!os) throw DataError("cannot write checkpoint " + path);
  write_checkpoint(os, params);
}

inline Parameters load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open checkpoint " + path);
  return read_checkpoint(is);
}

}  // namespace faceforge
