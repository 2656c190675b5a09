#pragma once

// Text persistence. Floats are written as the shortest decimal that parses
// back to the identical double.
//
//   imc-obs v1    "# imc-obs v1 d1=<d1> d2=<d2>" then "i j value" per line,
//                 0-based indices, sorted row-major
//   imc-dense v1  "# imc-dense v1 rows=<r> cols=<c>" then one comma-separated
//                 row per line
//   reports       trace.csv, report.csv, config.echo (key=value)

#include "imc/solver.hpp"
#include "imc/types.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_set>

namespace imc {

inline std::string format_double(double x) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, res.ptr);
}

/// Strict parse: the whole token must be a decimal floating-point literal.
inline std::optional<double> parse_double(std::string_view token) {
  if (!token.empty() && token.front() == '+') token.remove_prefix(1);
  double x = 0.0;
  const auto res = std::from_chars(token.data(), token.data() + token.size(), x);
  if (token.empty() || res.ec != std::errc() || res.ptr != token.data() + token.size()) return std::nullopt;
  return x;
}

template <class Int>
std::optional<Int> parse_integer(std::string_view token) {
  Int x{};
  const auto res = std::from_chars(token.data(), token.data() + token.size(), x);
  if (token.empty() || res.ec != std::errc() || res.ptr != token.data() + token.size()) return std::nullopt;
  return x;
}

inline std::string_view trim(std::string_view s) {
  const auto first = s.find_first_not_of(" \t\r\n");
  if (first == std::string_view::npos) return {};
  const auto last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  if (sep == ' ') {
    std::size_t pos = 0;
    while (pos < line.size()) {
      const auto start = line.find_first_not_of(" \t", pos);
      if (start == std::string_view::npos) break;
      const auto end = line.find_first_of(" \t", start);
      out.push_back(line.substr(start, end == std::string_view::npos ? line.size() - start : end - start));
      pos = end == std::string_view::npos ? line.size() : end;
    }
    return out;
  }
  std::size_t start = 0;
  for (;;) {
    const auto end = line.find(sep, start);
    out.push_back(trim(line.substr(start, end == std::string_view::npos ? std::string_view::npos : end - start)));
    if (end == std::string_view::npos) break;
    start = end + 1;
  }
  return out;
}

namespace detail {

[[noreturn]] inline void format_error(const std::filesystem::path& path, std::size_t line, const std::string& what) {
  fail(ErrorKind::data_format, path.string() + ":" + std::to_string(line) + ": " + what);
}

inline std::ifstream open_for_read(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::io, "cannot open '" + path.string() + "' for reading");
  return in;
}

inline std::ofstream open_for_write(const std::filesystem::path& path) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) fail(ErrorKind::io, "cannot open '" + path.string() + "' for writing");
  return out;
}

inline void finish_write(std::ofstream& out, const std::filesystem::path& path) {
  out.flush();
  if (!out) fail(ErrorKind::io, "write failed for '" + path.string() + "'");
}

/// Parses "key=value" header fields after a fixed magic prefix.
inline std::map<std::string, Index, std::less<>> parse_header(const std::filesystem::path& path,
                                                              std::string_view line, std::string_view magic,
                                                              std::initializer_list<std::string_view> keys) {
  line = trim(line);
  if (line.substr(0, magic.size()) != magic) format_error(path, 1, "expected header '" + std::string(magic) + " ...'");
  std::map<std::string, Index, std::less<>> out;
  for (const auto field : split_fields(line.substr(magic.size()), ' ')) {
    const auto eq = field.find('=');
    if (eq == std::string_view::npos) format_error(path, 1, "malformed header field '" + std::string(field) + "'");
    const auto value = parse_integer<Index>(field.substr(eq + 1));
    if (!value || *value < 1) format_error(path, 1, "header field '" + std::string(field) + "' must be a positive integer");
    out.emplace(std::string(field.substr(0, eq)), *value);
  }
  for (const auto key : keys)
    if (!out.contains(key)) format_error(path, 1, "header is missing '" + std::string(key) + "='");
  if (out.size() != keys.size()) format_error(path, 1, "header has unexpected fields");
  return out;
}

}  // namespace detail

inline void save_observations(const std::filesystem::path& path, const ObservationSet& obs) {
  auto out = detail::open_for_write(path);
  out << "# imc-obs v1 d1=" << obs.d1() << " d2=" << obs.d2() << '\n';
  for (const Entry& e : obs.entries()) out << e.row << ' ' << e.col << ' ' << format_double(e.value) << '\n';
  detail::finish_write(out, path);
}

inline ObservationSet load_observations(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) detail::format_error(path, 1, "empty file");
  const auto header = detail::parse_header(path, line, "# imc-obs v1", {"d1", "d2"});
  const Index d1 = header.find("d1")->second;
  const Index d2 = header.find("d2")->second;
  std::vector<Entry> entries;
  std::unordered_set<std::int64_t> seen;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    const auto body = trim(line);
    if (body.empty()) continue;
    const auto fields = split_fields(body, ' ');
    if (fields.size() != 3) detail::format_error(path, lineno, "expected 'i j value'");
    const auto i = parse_integer<std::int32_t>(fields[0]);
    const auto j = parse_integer<std::int32_t>(fields[1]);
    const auto v = parse_double(fields[2]);
    if (!i || !j || !v) detail::format_error(path, lineno, "malformed entry '" + std::string(body) + "'");
    if (*i < 0 || *i >= d1 || *j < 0 || *j >= d2)
      detail::format_error(path, lineno, "index (" + std::to_string(*i) + ", " + std::to_string(*j) +
                                             ") outside " + std::to_string(d1) + "x" + std::to_string(d2));
    if (!seen.insert(static_cast<std::int64_t>(*i) * d2 + *j).second)
      detail::format_error(path, lineno, "duplicate entry (" + std::to_string(*i) + ", " + std::to_string(*j) + ")");
    entries.push_back({*i, *j, *v});
  }
  return ObservationSet(d1, d2, std::move(entries));
}

inline void save_dense(const std::filesystem::path& path, const Matrix& m) {
  auto out = detail::open_for_write(path);
  out << "# imc-dense v1 rows=" << m.rows() << " cols=" << m.cols() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) {
      if (j > 0) out << ',';
      out << format_double(m(i, j));
    }
    out << '\n';
  }
  detail::finish_write(out, path);
}

inline Matrix load_dense(const std::filesystem::path& path) {
  auto in = detail::open_for_read(path);
  std::string line;
  if (!std::getline(in, line)) detail::format_error(path, 1, "empty file");
  const auto header = detail::parse_header(path, line, "# imc-dense v1", {"rows", "cols"});
  const Index rows = header.find("rows")->second;
  const Index cols = header.find("cols")->second;
  Matrix m(rows, cols);
  Index row = 0;
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    if (row == rows) detail::format_error(path, lineno, "more rows than the header's " + std::to_string(rows));
    const auto fields = split_fields(line, ',');
    if (static_cast<Index>(fields.size()) != cols)
      detail::format_error(path, lineno, "expected " + std::to_string(cols) + " columns, found " +
                                             std::to_string(fields.size()));
    for (Index j = 0; j < cols; ++j) {
      const auto v = parse_double(fields[static_cast<std::size_t>(j)]);
      if (!v) detail::format_error(path, lineno, "malformed number '" + std::string(fields[static_cast<std::size_t>(j)]) + "'");
      m(row, j) = *v;
    }
    ++row;
  }
  if (row != rows)
    detail::format_error(path, lineno, "truncated: found " + std::to_string(row) + " of " + std::to_string(rows) + " rows");
  return m;
}

/// Ordered key=value settings with the line each key came from (0 when set
/// programmatically).
class Settings {
 public:
  struct Value {
    std::string text;
    std::size_t line = 0;
  };

  void set(std::string key, std::string value, std::size_t line = 0) { values_[std::move(key)] = {std::move(value), line}; }
  bool contains(std::string_view key) const { return values_.find(key) != values_.end(); }
  const Value* find(std::string_view key) const {
    const auto it = values_.find(key);
    return it == values_.end() ? nullptr : &it->second;
  }
  const std::map<std::string, Value, std::less<>>& values() const noexcept { return values_; }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + "=" + v.text + "\n";
    return out;
  }

 private:
  std::map<std::string, Value, std::less<>> values_;
};

/// "key=value" lines; '#' starts a comment; blank lines ignored. Repeated keys
/// and malformed lines are rejected with their line number.
inline Settings parse_settings(std::istream& in, const std::string& origin) {
  Settings s;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    std::string_view body = line;
    if (const auto hash = body.find('#'); hash != std::string_view::npos) body = body.substr(0, hash);
    body = trim(body);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string_view::npos)
      fail(ErrorKind::invalid_argument, origin + ":" + std::to_string(lineno) + ": expected key=value");
    const std::string key(trim(body.substr(0, eq)));
    if (key.empty()) fail(ErrorKind::invalid_argument, origin + ":" + std::to_string(lineno) + ": empty key");
    if (s.contains(key))
      fail(ErrorKind::invalid_argument, origin + ":" + std::to_string(lineno) + ": repeated key '" + key + "'");
    s.set(key, std::string(trim(body.substr(eq + 1))), lineno);
  }
  return s;
}

inline Settings load_settings(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(ErrorKind::invalid_argument, "cannot open config file '" + path.string() + "'");
  return parse_settings(in, path.string());
}

inline void save_text(const std::filesystem::path& path, std::string_view text) {
  auto out = detail::open_for_write(path);
  out << text;
  detail::finish_write(out, path);
}

inline constexpr std::string_view kTraceHeader = "phase,iter,data_passes,loss,rel_error,procrustes_dist,wall_ms";

inline std::string trace_csv(const Trace& trace) {
  std::string out(kTraceHeader);
  out += '\n';
  for (const TraceRecord& rec : trace) {
    out += std::to_string(rec.phase) + ',' + std::to_string(rec.iter) + ',' + format_double(rec.data_passes) + ',' +
           format_double(rec.loss) + ',' + format_double(rec.rel_error) + ',' + format_double(rec.procrustes_dist) +
           ',' + format_double(rec.wall_ms) + '\n';
  }
  return out;
}

inline std::string report_csv(const RecoveryReport& r) {
  const auto opt = [](const std::optional<double>& v) {
    return v ? format_double(*v) : std::string("nan");
  };
  std::string out =
      "rel_error,procrustes_dist,success,final_loss,data_passes,phase2_iters,phase3_iters_run,stop_reason,"
      "sigma1_hat,kappa_hat,eta,tau,mu0,mu0_source,delta,bound_left,bound_right\n";
  out += opt(r.rel_error) + ',' + opt(r.procrustes_dist) + ',' +
         (r.success ? std::string(*r.success ? "1" : "0") : std::string("nan")) + ',' + format_double(r.final_loss) +
         ',' + format_double(r.data_passes) + ',' + std::to_string(r.phase2_iters) + ',' +
         std::to_string(r.phase3_iters_run) + ',' + r.stop_reason + ',' + format_double(r.sigma1_hat) + ',' +
         format_double(r.kappa_hat) + ',' + format_double(r.eta) + ',' + format_double(r.tau) + ',' +
         format_double(r.mu0) + ',' + (r.mu0_source.empty() ? "none" : r.mu0_source) + ',' +
         format_double(r.delta) + ',' + format_double(r.bound_left) + ',' + format_double(r.bound_right) + '\n';
  return out;
}

/// Solver keys of a configuration in config-file form. Optional settings that
/// are unset are omitted so a rerun resolves them the same way.
inline Settings solver_settings(const SolverConfig& c) {
  Settings s;
  s.set("rank", std::to_string(c.rank));
  if (c.phase2_iters) s.set("phase2_iters", std::to_string(*c.phase2_iters));
  s.set("phase3_iters", std::to_string(c.phase3_iters));
  if (c.eta) s.set("eta", format_double(*c.eta));
  if (c.tau) s.set("tau", format_double(*c.tau));
  s.set("c_eta", format_double(c.c_eta));
  s.set("c_tau", format_double(c.c_tau));
  if (c.mu0) s.set("mu0", format_double(*c.mu0));
  if (c.delta) s.set("delta", format_double(*c.delta));
  s.set("theory_delta", c.theory_delta ? "true" : "false");
  s.set("lambda", format_double(c.lambda));
  s.set("stop_tol", format_double(c.stop_tol));
  s.set("max_data_passes", format_double(c.max_data_passes));
  s.set("init_pass_charge", format_double(c.init_pass_charge));
  s.set("success_threshold", format_double(c.success_threshold));
  s.set("max_projection_sweeps", std::to_string(c.max_projection_sweeps));
  s.set("svd", std::string(to_string(c.svd_method)));
  s.set("record_timing", c.record_timing ? "true" : "false");
  return s;
}

/// Writes trace.csv, report.csv and config.echo into `dir`. `extra` carries
/// the non-solver settings (data source, sampling, seed) of the run.
inline void save_report(const RecoveryReport& report, const std::filesystem::path& dir, const Settings& extra = {}) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) fail(ErrorKind::io, "cannot create directory '" + dir.string() + "': " + ec.message());
  save_text(dir / "trace.csv", trace_csv(report.trace));
  save_text(dir / "report.csv", report_csv(report));
  Settings echo = solver_settings(report.config);
  echo.set("seed", std::to_string(report.config.seed));
  for (const auto& [k, v] : extra.values()) echo.set(k, v.text);
  save_text(dir / "config.echo", echo.to_text());
}

}  // namespace imc
