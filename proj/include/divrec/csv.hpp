#pragma once

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace divrec {

// Plain comma split; ids in our files never contain commas or quotes.
inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r')
    fields.back().pop_back();
  return fields;
}

inline std::ifstream open_input(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open for reading: " + path);
  return in;
}

inline std::ofstream open_output(const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for writing: " + path);
  return out;
}

inline int64_t parse_int64(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  int64_t v = 0;
  try {
    v = std::stoll(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("expected integer for " + what + ", got '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error("expected integer for " + what + ", got '" + s + "'");
  return v;
}

inline double parse_double(const std::string& s, const std::string& what) {
  std::size_t used = 0;
  double v = 0;
  try {
    v = std::stod(s, &used);
  } catch (const std::exception&) {
    throw std::runtime_error("expected number for " + what + ", got '" + s + "'");
  }
  if (used != s.size()) throw std::runtime_error("expected number for " + what + ", got '" + s + "'");
  return v;
}

}  // namespace divrec
