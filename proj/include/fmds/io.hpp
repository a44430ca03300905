#pragma once

#include <Eigen/Dense>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fmds/basis.hpp"
#include "fmds/coeffs.hpp"
#include "fmds/dissim.hpp"
#include "fmds/error.hpp"
#include "fmds/optimizer.hpp"

namespace fmds::io {

/// Shortest decimal form that round-trips to the same double.
inline std::string fmt_double(double v) {
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v)
      break;
  }
  return buf;
}

inline std::string trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos)
    return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(first, last - first + 1));
}

inline std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const auto comma = line.find(',', start);
    fields.push_back(trim(line.substr(start, comma - start)));
    if (comma == std::string_view::npos)
      break;
    start = comma + 1;
  }
  return fields;
}

/// Parsed CSV body with 1-based source line numbers for error messages.
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;
  std::vector<int> line_numbers;
};

inline CsvTable read_csv(std::istream &in, const std::string &source) {
  CsvTable table;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty())
      continue;
    auto fields = split_csv_line(line);
    if (table.header.empty()) {
      table.header = std::move(fields);
      continue;
    }
    if (fields.size() != table.header.size())
      throw Error(Errc::parse_error, source + ":" + std::to_string(line_no) +
                                         ": expected " +
                                         std::to_string(table.header.size()) +
                                         " fields, got " + std::to_string(fields.size()));
    table.rows.push_back(std::move(fields));
    table.line_numbers.push_back(line_no);
  }
  if (table.header.empty())
    throw Error(Errc::parse_error, source + ": empty file");
  return table;
}

inline std::ifstream open_in(const std::filesystem::path &path) {
  std::ifstream in(path);
  if (!in)
    throw Error(Errc::parse_error, "cannot open " + path.string());
  return in;
}

inline std::ofstream open_out(const std::filesystem::path &path) {
  if (path.has_parent_path())
    std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out)
    throw Error(Errc::parse_error, "cannot write " + path.string());
  return out;
}

inline void expect_header(const CsvTable &table, const std::vector<std::string> &want,
                          const std::string &source) {
  if (table.header != want) {
    std::string joined;
    for (const auto &w : want)
      joined += (joined.empty() ? "" : ",") + w;
    throw Error(Errc::parse_error, source + ":1: expected header '" + joined + "'");
  }
}

inline double parse_double(const std::string &field, const std::string &source,
                           int line) {
  try {
    std::size_t used = 0;
    const double v = std::stod(field, &used);
    if (used != field.size() || !std::isfinite(v))
      throw std::invalid_argument(field);
    return v;
  } catch (const std::exception &) {
    throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                       ": not a number: '" + field + "'");
  }
}

inline long parse_long(const std::string &field, const std::string &source, int line) {
  try {
    std::size_t used = 0;
    const long v = std::stol(field, &used);
    if (used != field.size())
      throw std::invalid_argument(field);
    return v;
  } catch (const std::exception &) {
    throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                       ": not an integer: '" + field + "'");
  }
}

// ---------------------------------------------------------------------------
// Prices

struct PriceIngest {
  PricePanel panel;
  std::vector<std::string> warnings;
};

inline bool valid_iso_date(const std::string &d) {
  if (d.size() != 10 || d[4] != '-' || d[7] != '-')
    return false;
  for (int i : {0, 1, 2, 3, 5, 6, 8, 9})
    if (d[static_cast<std::size_t>(i)] < '0' || d[static_cast<std::size_t>(i)] > '9')
      return false;
  const int month = std::stoi(d.substr(5, 2));
  const int day = std::stoi(d.substr(8, 2));
  return month >= 1 && month <= 12 && day >= 1 && day <= 31;
}

/// Reads `date,ticker,close` rows. Months are calendar months of the dates;
/// trading days of a month are all dates seen in it. Tickers missing any
/// trading day are dropped with a warning.
inline PriceIngest read_prices(std::istream &in, const std::string &source) {
  const CsvTable table = read_csv(in, source);
  expect_header(table, {"date", "ticker", "close"}, source);

  std::vector<std::string> tickers;
  std::unordered_map<std::string, std::size_t> ticker_ix;
  std::map<std::string, std::set<std::string>> month_dates;
  std::map<std::pair<std::string, std::string>, double> close; // (date, ticker)

  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const int line = table.line_numbers[r];
    const std::string &date = row[0];
    const std::string &ticker = row[1];
    if (!valid_iso_date(date))
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": bad date '" + date + "'");
    if (ticker.empty())
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) + ": empty ticker");
    const double price = parse_double(row[2], source, line);
    if (!(price > 0.0))
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": close must be positive");
    if (!close.emplace(std::make_pair(date, ticker), price).second)
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": duplicate row for " + ticker + " on " + date);
    if (ticker_ix.emplace(ticker, tickers.size()).second)
      tickers.push_back(ticker);
    month_dates[date.substr(0, 7)].insert(date);
  }

  PriceIngest out;
  std::vector<std::string> kept;
  for (const auto &ticker : tickers) {
    std::string missing;
    for (const auto &[month, dates] : month_dates) {
      for (const auto &date : dates)
        if (!close.count({date, ticker})) {
          missing = date;
          break;
        }
      if (!missing.empty())
        break;
    }
    if (missing.empty())
      kept.push_back(ticker);
    else
      out.warnings.push_back("dropping ticker " + ticker + ": no close on " + missing);
  }

  out.panel.tickers = kept;
  for (const auto &[month, dates] : month_dates) {
    out.panel.months.push_back(month);
    Eigen::MatrixXd y(static_cast<Eigen::Index>(kept.size()),
                      static_cast<Eigen::Index>(dates.size()));
    for (std::size_t i = 0; i < kept.size(); ++i) {
      Eigen::Index c = 0;
      for (const auto &date : dates)
        y(static_cast<Eigen::Index>(i), c++) = close.at({date, kept[i]});
    }
    out.panel.closes.push_back(std::move(y));
  }
  return out;
}

inline PriceIngest read_prices(const std::filesystem::path &path) {
  auto in = open_in(path);
  return read_prices(in, path.string());
}

// ---------------------------------------------------------------------------
// Dissimilarities

/// Long format `i,j,t,d` with 1-based i < j. Every pair must appear once at
/// every distinct t.
inline DissimilaritySeries read_dissim_long(std::istream &in, const std::string &source) {
  const CsvTable table = read_csv(in, source);
  expect_header(table, {"i", "j", "t", "d"}, source);
  if (table.rows.empty())
    throw Error(Errc::parse_error, source + ": no data rows");

  struct Entry {
    long i, j;
    double t, d;
    int line;
  };
  std::vector<Entry> entries;
  std::set<double> times;
  long n = 0;
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const int line = table.line_numbers[r];
    Entry e{parse_long(row[0], source, line), parse_long(row[1], source, line),
            parse_double(row[2], source, line), parse_double(row[3], source, line), line};
    if (e.i < 1 || e.j <= e.i)
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": need 1 <= i < j");
    if (e.d < 0.0)
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": negative dissimilarity");
    n = std::max(n, e.j);
    times.insert(e.t);
    entries.push_back(e);
  }

  std::vector<double> grid(times.begin(), times.end());
  std::map<double, Eigen::Index> col;
  for (std::size_t k = 0; k < grid.size(); ++k)
    col[grid[k]] = static_cast<Eigen::Index>(k);
  const auto pairs = pair_count(n);
  Eigen::MatrixXd values = Eigen::MatrixXd::Constant(pairs, static_cast<Eigen::Index>(grid.size()),
                                                     -1.0);
  for (const auto &e : entries) {
    double &cell = values(pair_index(e.i - 1, e.j - 1), col[e.t]);
    if (cell >= 0.0)
      throw Error(Errc::parse_error, source + ":" + std::to_string(e.line) +
                                         ": duplicate entry");
    cell = e.d;
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r)
    for (Eigen::Index k = 0; k < values.cols(); ++k)
      if (values(r, k) < 0.0) {
        const Pair pr = pair_at(r);
        throw Error(Errc::parse_error, source + ": missing entry for pair (" +
                                           std::to_string(pr.i + 1) + "," +
                                           std::to_string(pr.j + 1) + ") at t=" +
                                           fmt_double(grid[static_cast<std::size_t>(k)]));
      }
  return {static_cast<int>(n), std::move(grid), std::move(values)};
}

inline DissimilaritySeries read_dissim_long(const std::filesystem::path &path) {
  auto in = open_in(path);
  return read_dissim_long(in, path.string());
}

inline void write_dissim_long(std::ostream &out, const DissimilaritySeries &series) {
  out << "i,j,t,d\n";
  for (int j = 1; j < series.n(); ++j)
    for (int i = 0; i < j; ++i)
      for (int k = 0; k < series.m(); ++k)
        out << i + 1 << ',' << j + 1 << ','
            << fmt_double(series.grid()[static_cast<std::size_t>(k)]) << ','
            << fmt_double(series(i, j, k)) << '\n';
}

/// Wide super-matrix CSV: `i,j,<t_1>,...,<t_m>`, rows in upper-triangle order.
inline void write_super_matrix(std::ostream &out, const DissimilaritySeries &series) {
  const Eigen::MatrixXd table = build_super_matrix(series);
  out << "i,j";
  for (double t : series.grid())
    out << ',' << fmt_double(t);
  out << '\n';
  for (Eigen::Index r = 0; r < table.rows(); ++r) {
    const Pair pr = pair_at(r);
    out << pr.i + 1 << ',' << pr.j + 1;
    for (Eigen::Index k = 0; k < table.cols(); ++k)
      out << ',' << fmt_double(table(r, k));
    out << '\n';
  }
}

inline DissimilaritySeries read_super_matrix(std::istream &in, const std::string &source) {
  const CsvTable table = read_csv(in, source);
  if (table.header.size() < 3 || table.header[0] != "i" || table.header[1] != "j")
    throw Error(Errc::parse_error, source + ":1: expected header 'i,j,<t>...'");
  std::vector<double> grid;
  for (std::size_t c = 2; c < table.header.size(); ++c)
    grid.push_back(parse_double(table.header[c], source, 1));
  const auto rows = static_cast<std::int64_t>(table.rows.size());
  long n = 2;
  while (pair_count(n) < rows)
    ++n;
  if (pair_count(n) != rows)
    throw Error(Errc::parse_error, source + ": row count is not n(n-1)/2");
  Eigen::MatrixXd values(rows, static_cast<Eigen::Index>(grid.size()));
  for (std::int64_t r = 0; r < rows; ++r) {
    const auto &row = table.rows[static_cast<std::size_t>(r)];
    const int line = table.line_numbers[static_cast<std::size_t>(r)];
    const Pair want = pair_at(r);
    if (parse_long(row[0], source, line) != want.i + 1 ||
        parse_long(row[1], source, line) != want.j + 1)
      throw Error(Errc::parse_error, source + ":" + std::to_string(line) +
                                         ": rows must follow upper-triangle pair order");
    for (std::size_t c = 2; c < row.size(); ++c)
      values(r, static_cast<Eigen::Index>(c - 2)) = parse_double(row[c], source, line);
  }
  return {static_cast<int>(n), std::move(grid), std::move(values)};
}

// ---------------------------------------------------------------------------
// Fitted coefficients

/// Everything needed to rebuild x_i(t) from an exported coefficient file.
struct CoeffModel {
  CoeffSet coeffs;
  BasisSpec spec;
  std::vector<std::string> labels;
  std::uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();

  std::string label(int i) const {
    return labels.empty() ? std::to_string(i + 1) : labels[static_cast<std::size_t>(i)];
  }

  int find_label(const std::string &name) const {
    for (int i = 0; i < coeffs.n(); ++i)
      if (label(i) == name)
        return i;
    throw Error(Errc::unknown_label, "no object labelled '" + name + "'");
  }
};

inline std::filesystem::path sidecar_path(const std::filesystem::path &csv) {
  auto side = csv;
  side.replace_extension(".json");
  return side;
}

inline nlohmann::json fit_config_json(const FitConfig &c) {
  return {{"alpha", c.alpha},           {"gamma1", c.gamma1},
          {"gamma2", c.gamma2},         {"e", c.e},
          {"epsilon", c.epsilon},       {"max_sweeps", c.max_sweeps},
          {"pair_step_cap", c.pair_step_cap}, {"seed", c.seed}};
}

/// Writes `object,row,col,value` (1-based) plus the JSON sidecar.
inline void write_coeffs(const std::filesystem::path &csv, const CoeffModel &model) {
  {
    auto out = open_out(csv);
    out << "object,row,col,value\n";
    for (int i = 0; i < model.coeffs.n(); ++i)
      for (int r = 0; r < model.coeffs.p(); ++r)
        for (int c = 0; c < model.coeffs.q(); ++c)
          out << i + 1 << ',' << r + 1 << ',' << c + 1 << ','
              << fmt_double(model.coeffs[i](r, c)) << '\n';
  }
  nlohmann::json side = {
      {"n", model.coeffs.n()},
      {"p", model.coeffs.p()},
      {"q", model.coeffs.q()},
      {"L", model.spec.interior_knots()},
      {"domain", {model.spec.domain_lo(), model.spec.domain_hi()}},
      {"seed", model.seed},
      {"config", model.config},
      {"labels", model.labels},
  };
  auto out = open_out(sidecar_path(csv));
  out << side.dump(2) << '\n';
}

inline CoeffModel read_coeffs(const std::filesystem::path &csv) {
  nlohmann::json side;
  {
    auto in = open_in(sidecar_path(csv));
    try {
      in >> side;
    } catch (const nlohmann::json::exception &ex) {
      throw Error(Errc::parse_error, sidecar_path(csv).string() + ": " + ex.what());
    }
  }
  const int n = side.at("n").get<int>();
  const int p = side.at("p").get<int>();
  const int q = side.at("q").get<int>();
  BasisSpec spec(side.at("L").get<int>(), side.at("domain").at(0).get<double>(),
                 side.at("domain").at(1).get<double>());
  if (spec.q() != q)
    throw Error(Errc::dimension_mismatch, "sidecar q inconsistent with L");

  auto in = open_in(csv);
  const CsvTable table = read_csv(in, csv.string());
  expect_header(table, {"object", "row", "col", "value"}, csv.string());
  CoeffSet coeffs(n, p, q);
  std::vector<bool> seen(static_cast<std::size_t>(n * p * q), false);
  for (std::size_t r = 0; r < table.rows.size(); ++r) {
    const auto &row = table.rows[r];
    const int line = table.line_numbers[r];
    const long i = parse_long(row[0], csv.string(), line);
    const long a = parse_long(row[1], csv.string(), line);
    const long b = parse_long(row[2], csv.string(), line);
    if (i < 1 || i > n || a < 1 || a > p || b < 1 || b > q)
      throw Error(Errc::parse_error, csv.string() + ":" + std::to_string(line) +
                                         ": index out of range");
    coeffs[static_cast<int>(i - 1)](a - 1, b - 1) = parse_double(row[3], csv.string(), line);
    seen[static_cast<std::size_t>(((i - 1) * p + (a - 1)) * q + (b - 1))] = true;
  }
  if (std::find(seen.begin(), seen.end(), false) != seen.end())
    throw Error(Errc::parse_error, csv.string() + ": missing coefficient entries");

  CoeffModel model{std::move(coeffs), std::move(spec), {}, side.value("seed", std::uint64_t{0}),
                   side.value("config", nlohmann::json::object())};
  if (side.contains("labels"))
    model.labels = side.at("labels").get<std::vector<std::string>>();
  if (!model.labels.empty() && static_cast<int>(model.labels.size()) != n)
    throw Error(Errc::dimension_mismatch, "sidecar label count differs from n");
  return model;
}

// ---------------------------------------------------------------------------
// Run manifests

inline std::string sha256_file(const std::filesystem::path &path) {
  auto in = open_in(path);
  EVP_MD_CTX *ctx = EVP_MD_CTX_new();
  EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
  char buf[1 << 15];
  while (in.read(buf, sizeof buf) || in.gcount() > 0)
    EVP_DigestUpdate(ctx, buf, static_cast<std::size_t>(in.gcount()));
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  EVP_DigestFinal_ex(ctx, digest, &len);
  EVP_MD_CTX_free(ctx);
  std::ostringstream hex;
  for (unsigned int i = 0; i < len; ++i)
    hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(digest[i]);
  return hex.str();
}

inline std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

} // namespace fmds::io
