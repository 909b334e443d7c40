#include "xsell/csv.hpp"

#include <fmt/format.h>

#include <cmath>
#include <fstream>
#include <sstream>

#include "xsell/error.hpp"

namespace xsell {

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw DataError(fmt::format("missing CSV column '{}'", name));
}

bool CsvTable::has_column(std::string_view name) const {
  for (const auto& h : header) {
    if (h == name) return true;
  }
  return false;
}

CsvTable parse_csv(std::string_view text, const std::string& source_name) {
  CsvTable table;
  std::vector<std::string> record;
  std::string cell;
  bool in_quotes = false;
  bool cell_started = false;
  std::size_t line = 1;

  auto end_record = [&] {
    record.push_back(std::move(cell));
    cell.clear();
    cell_started = false;
    if (table.header.empty()) {
      table.header = std::move(record);
    } else {
      if (record.size() != table.header.size()) {
        throw DataError(fmt::format("{}:{}: expected {} fields, found {}",
                                    source_name, line, table.header.size(),
                                    record.size()));
      }
      table.rows.push_back(std::move(record));
    }
    record.clear();
  };

  for (std::size_t i = 0; i < text.size(); ++i) {
    const char c = text[i];
    if (in_quotes) {
      if (c == '"') {
        if (i + 1 < text.size() && text[i + 1] == '"') {
          cell.push_back('"');
          ++i;
        } else {
          in_quotes = false;
        }
      } else {
        if (c == '\n') ++line;
        cell.push_back(c);
      }
      continue;
    }
    switch (c) {
      case '"':
        in_quotes = true;
        cell_started = true;
        break;
      case ',':
        record.push_back(std::move(cell));
        cell.clear();
        cell_started = true;
        break;
      case '\r':
        break;
      case '\n':
        end_record();
        ++line;
        break;
      default:
        cell.push_back(c);
        cell_started = true;
    }
  }
  if (in_quotes) {
    throw DataError(fmt::format("{}: unterminated quoted field", source_name));
  }
  if (cell_started || !record.empty()) end_record();
  if (table.header.empty()) {
    throw DataError(fmt::format("{}: empty CSV (no header)", source_name));
  }
  return table;
}

CsvTable read_csv(const std::filesystem::path& path) {
  return parse_csv(read_file(path), path.string());
}

void CsvWriter::row(const std::vector<std::string>& cells) {
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out_.push_back(',');
    const std::string& c = cells[i];
    if (c.find_first_of(",\"\n\r") == std::string::npos) {
      out_ += c;
      continue;
    }
    out_.push_back('"');
    for (char ch : c) {
      if (ch == '"') out_.push_back('"');
      out_.push_back(ch);
    }
    out_.push_back('"');
  }
  out_.push_back('\n');
}

std::string format_double(double v) {
  if (std::isnan(v)) return "";
  return fmt::format("{}", v);
}

std::string format_fixed(double v, int decimals) {
  if (std::isnan(v)) return "";
  std::string s = fmt::format("{:.{}f}", v, decimals);
  // Avoid "-0.00".
  if (s.front() == '-' && s.find_first_not_of("-0.") == std::string::npos) {
    s.erase(0, 1);
  }
  return s;
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file_atomic(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::filesystem::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("short write to " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace xsell
