#pragma once

#include <cstddef>
#include <iosfwd>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace crowdcal::csv {

// Minimal RFC-4180 style reader: comma separated, optional double quotes,
// CRLF tolerated. Good enough for the flat trial tables this project emits
// and ingests.
class Reader {
 public:
  explicit Reader(std::istream& in);

  // Reads the header row. Returns false on an empty stream.
  bool read_header();
  const std::vector<std::string>& header() const { return header_; }

  // Next data row; nullopt at end of stream. Blank lines are skipped.
  std::optional<std::vector<std::string>> next();

  // 1-based physical line number of the row last returned.
  std::size_t line() const { return line_; }

  // Index of a header column, or throws ContractError.
  std::size_t column(std::string_view name) const;

 private:
  std::istream& in_;
  std::vector<std::string> header_;
  std::size_t line_ = 0;
};

std::vector<std::string> split_line(std::string_view line);

// Shortest decimal that parses back to exactly the same double.
std::string format_double(double value);

// Quotes a field only when it needs it.
std::string escape(std::string_view field);

void write_row(std::ostream& out, const std::vector<std::string>& fields);

double parse_double(std::string_view text);
long long parse_int(std::string_view text);

}  // namespace crowdcal::csv
