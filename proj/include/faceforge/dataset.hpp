#pragma once

// Caption dataset records (JSONL, one sample per line).
//
//   {"id": "s1", "video_id": "v1", "frames": [[...], ...] | "frames/s1.txt",
//    "caption": "...", "emotion_words": [...]?, "triplet": [s, p, o]?}
//
// A string `frames` value is a path, relative to the dataset file, to a text
// matrix with one whitespace-separated frame per line.

#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "faceforge/numerics/checkpoint.hpp"
#include "faceforge/numerics/errors.hpp"
#include "faceforge/numerics/tensor.hpp"
#include "faceforge/retrieval.hpp"
#include "json.hpp"

namespace faceforge {

struct SampleRecord {
  std::string id;
  std::string video_id;
  Tensor frames;  // N×d
  std::string caption;
  std::optional<std::vector<std::string>> emotion_words;
  std::optional<Triplet> triplet;

  friend bool operator==(const SampleRecord& a, const SampleRecord& b) {
    return a.id == b.id && a.video_id == b.video_id && a.frames == b.frames && a.caption == b.caption &&
           a.emotion_words == b.emotion_words && a.triplet == b.triplet;
  }
};

inline Tensor read_matrix_text(std::istream& is, const std::string& origin) {
  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    std::istringstream ls(line);
    std::vector<double> row;
    std::string tok;
    while (ls >> tok) {
      try {
        row.push_back(parse_double(tok));
      } catch (const DataError&) {
        throw DataError(origin + ":" + std::to_string(line_no) + ": bad number '" + tok + "'");
      }
    }
    if (row.empty()) continue;
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(origin + ":" + std::to_string(line_no) + ": row has " + std::to_string(row.size()) +
                      " values, expected " + std::to_string(rows.front().size()));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw DataError(origin + ": empty frame matrix");
  return Tensor::from_rows(rows);
}

namespace detail {

inline Tensor frames_from_json(const nlohmann::json& j, const std::filesystem::path& base, const std::string& where) {
  if (j.is_string()) {
    const auto path = base / j.get<std::string>();
    std::ifstream is(path);
    if (!is) throw DataError(where + ": cannot open frames file " + path.string());
    return read_matrix_text(is, path.string());
  }
  if (!j.is_array() || j.empty()) throw DataError(where + ": 'frames' must be a non-empty matrix or a path");
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) {
    if (!r.is_array() || r.empty()) throw DataError(where + ": every frame must be a non-empty number array");
    std::vector<double> row;
    for (const auto& x : r) {
      if (!x.is_number()) throw DataError(where + ": non-numeric frame value");
      row.push_back(x.get<double>());
    }
    if (!rows.empty() && row.size() != rows.front().size()) {
      throw DataError(where + ": ragged frames (" + std::to_string(row.size()) + " vs " +
                      std::to_string(rows.front().size()) + " values)");
    }
    rows.push_back(std::move(row));
  }
  return Tensor::from_rows(rows);
}

inline std::string required_string(const nlohmann::json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) throw DataError(where + ": missing '" + key + "'");
  if (!j[key].is_string() || j[key].get<std::string>().empty()) {
    throw DataError(where + ": '" + key + "' must be a non-empty string");
  }
  return j[key].get<std::string>();
}

}  // namespace detail

// `expected_dim` = 0 skips the width check.
inline std::vector<SampleRecord> read_dataset(std::istream& is, const std::string& origin = "dataset",
                                              std::size_t expected_dim = 0,
                                              const std::filesystem::path& base = {}) {
  std::vector<SampleRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(is, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::string where = origin + ":" + std::to_string(line_no);
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw DataError(where + ": invalid JSON (" + e.what() + ")");
    }
    if (!j.is_object()) throw DataError(where + ": record must be a JSON object");
    SampleRecord r;
    r.id = detail::required_string(j, "id", where);
    r.video_id = j.contains("video_id") ? detail::required_string(j, "video_id", where) : r.id;
    r.caption = detail::required_string(j, "caption", where);
    if (!j.contains("frames")) throw DataError(where + ": missing 'frames'");
    r.frames = detail::frames_from_json(j["frames"], base, where);
    if (expected_dim != 0 && r.frames.cols() != expected_dim) {
      throw DataError(where + ": frames have width " + std::to_string(r.frames.cols()) + " but d is " +
                      std::to_string(expected_dim));
    }
    if (j.contains("emotion_words")) {
      if (!j["emotion_words"].is_array()) throw DataError(where + ": 'emotion_words' must be a string array");
      std::vector<std::string> words;
      for (const auto& w : j["emotion_words"]) {
        if (!w.is_string()) throw DataError(where + ": 'emotion_words' must be a string array");
        words.push_back(w.get<std::string>());
      }
      r.emotion_words = std::move(words);
    }
    if (j.contains("triplet")) {
      const auto& t = j["triplet"];
      if (!t.is_array() || t.size() != 3 || !t[0].is_string() || !t[1].is_string() || !t[2].is_string()) {
        throw DataError(where + ": 'triplet' must be three strings");
      }
      try {
        r.triplet = Triplet(t[0].get<std::string>(), t[1].get<std::string>(), t[2].get<std::string>());
      } catch (const std::exception& e) {
        throw DataError(where + ": " + e.what());
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

inline std::vector<SampleRecord> load_dataset(const std::string& path, std::size_t expected_dim = 0) {
  std::ifstream is(path);
  if (!is) throw DataError("cannot open dataset " + path);
  return read_dataset(is, path, expected_dim, std::filesystem::path(path).parent_path());
}

// Frames are written inline with shortest round-trip formatting.
inline std::string sample_json_line(const SampleRecord& r) {
  std::string s = "{\"id\":" + nlohmann::json(r.id).dump() + ",\"video_id\":" + nlohmann::json(r.video_id).dump() +
                  ",\"caption\":" + nlohmann::json(r.caption).dump();
  if (r.emotion_words) s += ",\"emotion_words\":" + nlohmann::json(*r.emotion_words).dump();
  if (r.triplet) {
    s += ",\"triplet\":" + nlohmann::json({r.triplet->subject, r.triplet->predicate, r.triplet->object}).dump();
  }
  s += ",\"frames\":[";
  for (std::size_t i = 0; i < r.frames.rows(); ++i) {
    if (i) s += ",";
    s += "[";
    for (std::size_t c = 0; c < r.frames.cols(); ++c) {
      if (c) s += ",";
      s += format_double(r.frames(i, c));
    }
    s += "]";
  }
  s += "]}";
  return s;
}

inline void write_dataset(std::ostream& os, const std::vector<SampleRecord>& records) {
  for (const auto& r : records) os << sample_json_line(r) << '\n';
}

}  // namespace faceforge
