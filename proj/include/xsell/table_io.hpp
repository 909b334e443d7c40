#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xsell/csv.hpp"
#include "xsell/schema.hpp"

namespace xsell {

// Customer-year CSV: "CustomerId,Year" followed by every entry of
// customer_columns() in dictionary order. Empty numeric cells are missing
// values; booleans are written 0/1 and accept 0/1/true/false; money is
// fixed-point with two decimals.
std::string write_customer_csv(const std::vector<CustomerRecord>& records);
// Columns may appear in any order; every dictionary column is required.
// Throws DataError with row and column on unparseable cells.
std::vector<CustomerRecord> parse_customer_csv(const CsvTable& table,
                                               const std::string& source_name);
std::vector<CustomerRecord> read_customer_csv(const std::filesystem::path& path);

// Contract CSV: contract_id,customer_id,contract_type,start_date,end_date,
// tariff_id,yearly_consumption_kwh,salutation,address_key
std::string write_contract_csv(const std::vector<ContractRecord>& contracts);
std::vector<ContractRecord> parse_contract_csv(const CsvTable& table,
                                               const std::string& source_name);

}  // namespace xsell
