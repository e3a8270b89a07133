#pragma once

#include <string>
#include <vector>

#include "isplit/gradcam.hpp"

namespace isplit {

std::string fmt_double(double v);

using CsvRow = std::vector<std::string>;

void write_csv(const std::string& path, const CsvRow& header, const std::vector<CsvRow>& rows);

/// Parses a CSV written by write_csv (simple quoting rules). The first row
/// is the header.
std::vector<CsvRow> read_csv(const std::string& path);

// CUI curve schema: layer_index, layer_name, cui_value, scope, reduction.
void write_cui_csv(const std::string& path, const CuiCurve& curve);
CuiCurve read_cui_csv(const std::string& path);

struct SweepRow {
  int layer = -1;
  std::string layer_name;
  long long raw_bytes = 0;
  long long encoded_bytes = 0;
  double est_transfer_s = 0;
  double accuracy = 0;
};

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows);
std::vector<SweepRow> read_sweep_csv(const std::string& path);

}  // namespace isplit
