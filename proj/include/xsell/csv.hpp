#pragma once

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace xsell {

// Fixed dialect: UTF-8, comma separator, '.' decimal point, header row,
// RFC 4180 double-quote escaping, '\n' line endings on output.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of `name` in the header; throws DataError when absent.
  std::size_t column(std::string_view name) const;
  bool has_column(std::string_view name) const;
};

CsvTable parse_csv(std::string_view text, const std::string& source_name);
CsvTable read_csv(const std::filesystem::path& path);

class CsvWriter {
 public:
  void row(const std::vector<std::string>& cells);
  const std::string& str() const { return out_; }

 private:
  std::string out_;
};

// Shortest round-trip representation; the same double always yields the same
// bytes.
std::string format_double(double v);
// Fixed-point with the given number of decimals.
std::string format_fixed(double v, int decimals);

std::string read_file(const std::filesystem::path& path);
// Writes to a sibling temp file and renames it into place.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace xsell
