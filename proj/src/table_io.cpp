#include "xsell/table_io.hpp"

#include <fmt/format.h>

#include <charconv>
#include <cmath>

#include "xsell/error.hpp"

namespace xsell {

namespace {

std::string cell_to_string(const Cell& c) {
  return std::visit(
      [](const auto& v) -> std::string {
        using T = std::decay_t<decltype(v)>;
        if constexpr (std::is_same_v<T, int>) {
          return std::to_string(v);
        } else if constexpr (std::is_same_v<T, double>) {
          return format_double(v);
        } else if constexpr (std::is_same_v<T, Money>) {
          return v.str();
        } else if constexpr (std::is_same_v<T, bool>) {
          return v ? "1" : "0";
        } else {
          return v;
        }
      },
      c);
}

[[noreturn]] void bad_cell(const std::string& source, std::size_t row,
                           std::string_view column, std::string_view value,
                           std::string_view what) {
  // Row numbers are 1-based data rows (the header is row 0).
  throw DataError(fmt::format("{}: row {}, column '{}': {} '{}'", source, row, column, what,
                              value));
}

double parse_double_cell(std::string_view s, const std::string& source, std::size_t row,
                         std::string_view column) {
  double v = 0.0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size() || !std::isfinite(v)) {
    bad_cell(source, row, column, s, "non-numeric value");
  }
  return v;
}

int parse_int_cell(std::string_view s, const std::string& source, std::size_t row,
                   std::string_view column) {
  int v = 0;
  const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    bad_cell(source, row, column, s, "non-integer value");
  }
  return v;
}

bool parse_bool_cell(std::string_view s, const std::string& source, std::size_t row,
                     std::string_view column) {
  if (s == "1" || s == "true" || s == "True" || s == "TRUE") return true;
  if (s == "0" || s == "false" || s == "False" || s == "FALSE") return false;
  bad_cell(source, row, column, s, "non-boolean value");
}

}  // namespace

std::string write_customer_csv(const std::vector<CustomerRecord>& records) {
  CsvWriter w;
  std::vector<std::string> cells;
  cells.emplace_back(kCustomerIdColumn);
  cells.emplace_back(kYearColumn);
  for (const auto& col : customer_columns()) cells.emplace_back(col.info.name);
  w.row(cells);
  for (const auto& r : records) {
    cells.clear();
    cells.push_back(r.customer_id);
    cells.push_back(std::to_string(r.year));
    for (const auto& col : customer_columns()) cells.push_back(cell_to_string(col.get(r)));
    w.row(cells);
  }
  return w.str();
}

std::vector<CustomerRecord> parse_customer_csv(const CsvTable& table,
                                               const std::string& source_name) {
  const std::size_t id_col = table.column(kCustomerIdColumn);
  const std::size_t year_col = table.column(kYearColumn);
  std::vector<std::size_t> col_index;
  for (const auto& col : customer_columns()) col_index.push_back(table.column(col.info.name));

  std::vector<CustomerRecord> out;
  out.reserve(table.rows.size());
  const auto columns = customer_columns();
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    const std::size_t row_no = r + 1;
    CustomerRecord rec;
    rec.customer_id = row[id_col];
    if (rec.customer_id.empty()) bad_cell(source_name, row_no, kCustomerIdColumn, "", "empty id");
    rec.year = parse_int_cell(row[year_col], source_name, row_no, kYearColumn);
    for (std::size_t c = 0; c < columns.size(); ++c) {
      const auto& col = columns[c];
      const std::string& s = row[col_index[c]];
      switch (col.info.kind) {
        case ColumnKind::Integer:
          col.set(rec, parse_int_cell(s, source_name, row_no, col.info.name));
          break;
        case ColumnKind::Numeric:
          col.set(rec, s.empty() ? kMissing
                                 : parse_double_cell(s, source_name, row_no, col.info.name));
          break;
        case ColumnKind::Money:
          try {
            col.set(rec, Money::parse(s));
          } catch (const DataError&) {
            bad_cell(source_name, row_no, col.info.name, s, "invalid money value");
          }
          break;
        case ColumnKind::Boolean:
          col.set(rec, parse_bool_cell(s, source_name, row_no, col.info.name));
          break;
        case ColumnKind::Categorical:
          col.set(rec, s);
          break;
      }
    }
    rec.validate();
    out.push_back(std::move(rec));
  }
  return out;
}

std::vector<CustomerRecord> read_customer_csv(const std::filesystem::path& path) {
  return parse_customer_csv(read_csv(path), path.string());
}

std::string write_contract_csv(const std::vector<ContractRecord>& contracts) {
  CsvWriter w;
  w.row({"contract_id", "customer_id", "contract_type", "start_date", "end_date", "tariff_id",
         "yearly_consumption_kwh", "salutation", "address_key"});
  for (const auto& c : contracts) {
    w.row({c.contract_id, c.customer_id, std::string(short_name(c.type)),
           format_date(c.start_date), c.end_date ? format_date(*c.end_date) : "", c.tariff_id,
           c.yearly_consumption_kwh ? format_double(*c.yearly_consumption_kwh) : "",
           c.salutation, c.address_key});
  }
  return w.str();
}

std::vector<ContractRecord> parse_contract_csv(const CsvTable& table,
                                               const std::string& source_name) {
  const auto id = table.column("contract_id");
  const auto cust = table.column("customer_id");
  const auto type = table.column("contract_type");
  const auto start = table.column("start_date");
  const auto end = table.column("end_date");
  const auto tariff = table.column("tariff_id");
  const auto kwh = table.column("yearly_consumption_kwh");
  const auto sal = table.column("salutation");
  const auto addr = table.column("address_key");
  std::vector<ContractRecord> out;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto& row = table.rows[r];
    ContractRecord c;
    try {
      c.contract_id = row[id];
      c.customer_id = row[cust];
      c.type = parse_contract_type(row[type]);
      c.start_date = parse_date(row[start]);
      if (!row[end].empty()) c.end_date = parse_date(row[end]);
      c.tariff_id = row[tariff];
      if (!row[kwh].empty()) c.yearly_consumption_kwh = parse_double_cell(row[kwh], source_name, r + 1, "yearly_consumption_kwh");
      c.salutation = row[sal];
      c.address_key = row[addr];
      c.validate();
    } catch (const DataError& e) {
      throw DataError(fmt::format("{}: row {}: {}", source_name, r + 1, e.what()));
    }
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace xsell
