#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "dd/tensor.hpp"

namespace dd::io {

// Minimal npz support: a stored (uncompressed) zip of .npy members, readable
// by numpy. Float arrays use '<f4', integer arrays '<i4'.
struct NpzEntry {
  std::vector<int64_t> shape;
  bool is_int = false;
  std::vector<float> f32;
  std::vector<int32_t> i32;
};

void save_npz(const std::string& path, const std::map<std::string, NpzEntry>& entries);
// Throws "corrupt-checkpoint" on malformed/truncated archives.
std::map<std::string, NpzEntry> load_npz(const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);  // throws "file-not-found"

// CSV with a single header row; all cells kept as strings.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  int column(const std::string& name) const;  // -1 when absent
};

void write_csv(const std::string& path, const CsvTable& table);
CsvTable read_csv(const std::string& path);
std::string csv_to_string(const CsvTable& table);

}  // namespace dd::io
