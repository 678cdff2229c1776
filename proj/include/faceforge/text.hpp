#pragma once

#include <cctype>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace faceforge {

// Lowercases, splits on whitespace, and strips leading/trailing ASCII
// punctuation from each token. Tokens that become empty are dropped.
inline std::vector<std::string> tokenize(std::string_view text) {
  std::vector<std::string> out;
  std::istringstream is{std::string(text)};
  std::string raw;
  while (is >> raw) {
    std::size_t b = 0, e = raw.size();
    while (b < e && std::ispunct(static_cast<unsigned char>(raw[b]))) ++b;
    while (e > b && std::ispunct(static_cast<unsigned char>(raw[e - 1]))) --e;
    if (b == e) continue;
    std::string tok = raw.substr(b, e - b);
    for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    out.push_back(std::move(tok));
  }
  return out;
}

inline std::string join(const std::vector<std::string>& tokens, std::string_view sep = " ") {
  std::string out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    if (i) out += sep;
    out += tokens[i];
  }
  return out;
}

}  // namespace faceforge
