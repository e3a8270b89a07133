#include "isplit/csvio.hpp"

#include <cstdio>
#include <fstream>

namespace isplit {

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

namespace {

bool needs_quoting(const std::string& s) {
  return s.find_first_of(",\"\n") != std::string::npos;
}

std::string quote(const std::string& s) {
  if (!needs_quoting(s)) return s;
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += "\"\"";
    else out += c;
  }
  out += '"';
  return out;
}

std::vector<std::string> parse_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          cur += '"';
          ++i;
        } else {
          quoted = false;
        }
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  out.push_back(cur);
  return out;
}

}  // namespace

void write_csv(const std::string& path, const CsvRow& header, const std::vector<CsvRow>& rows) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw DataError("cannot open '" + path + "' for write");
  auto emit = [&out](const CsvRow& row) {
    for (std::size_t i = 0; i < row.size(); ++i) out << (i ? "," : "") << quote(row[i]);
    out << '\n';
  };
  emit(header);
  for (const auto& row : rows) emit(row);
  if (!out) throw DataError("short write to '" + path + "'");
}

std::vector<CsvRow> read_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path + "'");
  std::vector<CsvRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    rows.push_back(parse_line(line));
  }
  if (rows.empty()) throw DataError("'" + path + "' holds no CSV rows");
  return rows;
}

void write_cui_csv(const std::string& path, const CuiCurve& curve) {
  std::vector<CsvRow> rows;
  const std::string scope = to_string(curve.scope);
  const std::string reduction = to_string(curve.reduction);
  for (std::size_t i = 0; i < curve.layer_indices.size(); ++i)
    rows.push_back({std::to_string(curve.layer_indices[i]), curve.layer_names[i],
                    fmt_double(curve.values[i]), scope, reduction});
  write_csv(path, {"layer_index", "layer_name", "cui_value", "scope", "reduction"}, rows);
}

CuiCurve read_cui_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows[0] != CsvRow{"layer_index", "layer_name", "cui_value", "scope", "reduction"})
    throw DataError("'" + path + "' is not a CUI curve CSV");
  CuiCurve curve;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 5) throw DataError("'" + path + "': malformed row " + std::to_string(i));
    curve.layer_indices.push_back(std::stoi(rows[i][0]));
    curve.layer_names.push_back(rows[i][1]);
    curve.values.push_back(std::stod(rows[i][2]));
    if (i == 1) {
      if (rows[i][3] == "per_image") curve.scope = CuiScope::per_image;
      else if (rows[i][3] == "per_class") curve.scope = CuiScope::per_class;
      else curve.scope = CuiScope::general;
      curve.reduction = cui_reduction_from_string(rows[i][4]);
    }
  }
  return curve;
}

void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
  std::vector<CsvRow> out;
  for (const auto& r : rows)
    out.push_back({std::to_string(r.layer), r.layer_name, std::to_string(r.raw_bytes),
                   std::to_string(r.encoded_bytes), fmt_double(r.est_transfer_s),
                   fmt_double(r.accuracy)});
  write_csv(path, {"layer", "layer_name", "raw_bytes", "encoded_bytes", "est_transfer_s", "accuracy"},
            out);
}

std::vector<SweepRow> read_sweep_csv(const std::string& path) {
  const auto rows = read_csv(path);
  if (rows[0] != CsvRow{"layer", "layer_name", "raw_bytes", "encoded_bytes", "est_transfer_s",
                        "accuracy"})
    throw DataError("'" + path + "' is not a sweep CSV");
  std::vector<SweepRow> out;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].size() != 6) throw DataError("'" + path + "': malformed row " + std::to_string(i));
    SweepRow r;
    r.layer = std::stoi(rows[i][0]);
    r.layer_name = rows[i][1];
    r.raw_bytes = std::stoll(rows[i][2]);
    r.encoded_bytes = std::stoll(rows[i][3]);
    r.est_transfer_s = std::stod(rows[i][4]);
    r.accuracy = std::stod(rows[i][5]);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace isplit
