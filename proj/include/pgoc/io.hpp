#pragma once

#include <Eigen/Dense>
#include <charconv>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <variant>
#include <vector>

#include "pgoc/model.hpp"
#include "pgoc/ocp.hpp"

namespace pgoc {

/// Shortest round-trip decimal representation; stable across runs.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  try {
    std::size_t pos = 0;
    const double v = std::stod(std::string(s), &pos);
    while (pos < s.size() && (s[pos] == ' ' || s[pos] == '\t')) ++pos;
    if (pos != s.size()) throw std::invalid_argument("trailing characters");
    return v;
  } catch (const std::exception&) {
    throw std::invalid_argument(context + ": cannot parse number '" + std::string(s) + "'");
  }
}

namespace detail {

inline std::string trim(std::string_view s) {
  std::size_t b = 0, e = s.size();
  while (b < e && (s[b] == ' ' || s[b] == '\t' || s[b] == '\r')) ++b;
  while (e > b && (s[e - 1] == ' ' || s[e - 1] == '\t' || s[e - 1] == '\r')) --e;
  return std::string(s.substr(b, e - b));
}

inline std::vector<std::string> split(const std::string& line, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= line.size(); ++i) {
    if (i == line.size() || line[i] == sep) {
      out.push_back(line.substr(start, i - start));
      start = i + 1;
    }
  }
  return out;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Dataset CSV: header `t,u_1..u_nu,y_1..y_ny`, rows for t = T .. -1.
// ---------------------------------------------------------------------------

inline void write_dataset_csv(const Dataset& data, std::ostream& os) {
  os << "t";
  for (Eigen::Index j = 0; j < data.input_dim(); ++j) os << ",u_" << (j + 1);
  for (Eigen::Index j = 0; j < data.output_dim(); ++j) os << ",y_" << (j + 1);
  os << "\n";
  for (Eigen::Index i = 0; i < data.length(); ++i) {
    os << (data.start_index() + i);
    for (Eigen::Index j = 0; j < data.input_dim(); ++j) {
      os << "," << format_double(data.inputs(i, j));
    }
    for (Eigen::Index j = 0; j < data.output_dim(); ++j) {
      os << "," << format_double(data.outputs(i, j));
    }
    os << "\n";
  }
}

inline void write_dataset_csv(const Dataset& data, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw std::runtime_error("cannot open for writing: " + path);
  write_dataset_csv(data, os);
}

inline Dataset read_dataset_csv(std::istream& is, const std::string& name = "<stream>") {
  std::string line;
  if (!std::getline(is, line)) throw std::runtime_error(name + ": empty dataset file");
  const auto header = detail::split(detail::trim(line), ',');
  if (header.empty() || header[0] != "t") {
    throw std::runtime_error(name + ": dataset header must start with 't'");
  }
  int n_u = 0, n_y = 0;
  for (std::size_t i = 1; i < header.size(); ++i) {
    if (header[i].rfind("u_", 0) == 0) {
      ++n_u;
      if (n_y > 0) throw std::runtime_error(name + ": u columns must precede y columns");
    } else if (header[i].rfind("y_", 0) == 0) {
      ++n_y;
    } else {
      throw std::runtime_error(name + ": unexpected column '" + header[i] + "'");
    }
  }
  if (n_u < 1 || n_y < 1) throw std::runtime_error(name + ": need u_* and y_* columns");

  std::vector<std::vector<double>> rows;
  std::vector<std::int64_t> times;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    const std::string t = detail::trim(line);
    if (t.empty()) continue;
    const auto cells = detail::split(t, ',');
    if (static_cast<int>(cells.size()) != 1 + n_u + n_y) {
      throw std::runtime_error(name + ":" + std::to_string(line_no) + ": wrong column count");
    }
    times.push_back(static_cast<std::int64_t>(
        parse_double(cells[0], name + ":" + std::to_string(line_no))));
    std::vector<double> row(n_u + n_y);
    for (int j = 0; j < n_u + n_y; ++j) {
      row[j] = parse_double(cells[j + 1], name + ":" + std::to_string(line_no));
    }
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::runtime_error(name + ": no data rows");
  const auto len = static_cast<Eigen::Index>(rows.size());
  for (Eigen::Index i = 0; i < len; ++i) {
    if (times[i] != -static_cast<std::int64_t>(len) + i) {
      throw std::runtime_error(name + ": time column must run contiguously from -" +
                               std::to_string(len) + " to -1");
    }
  }
  MatrixXd u(len, n_u), y(len, n_y);
  for (Eigen::Index i = 0; i < len; ++i) {
    for (int j = 0; j < n_u; ++j) u(i, j) = rows[i][j];
    for (int j = 0; j < n_y; ++j) y(i, j) = rows[i][n_u + j];
  }
  return Dataset(std::move(u), std::move(y));
}

inline Dataset read_dataset_csv_file(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot open dataset: " + path);
  return read_dataset_csv(is, path);
}

// ---------------------------------------------------------------------------
// Declarative config files: a small TOML subset. Sections, `key = value`
// pairs, `#` comments, strings, numbers, booleans and flat arrays. Repeated
// keys are kept in order (used for constraint lists).
// ---------------------------------------------------------------------------

struct ConfigValue {
  std::variant<std::string, double, bool, std::vector<double>, std::vector<std::string>> value;
  int line = 0;

  bool is_string() const { return std::holds_alternative<std::string>(value); }
  bool is_number() const { return std::holds_alternative<double>(value); }
  bool is_bool() const { return std::holds_alternative<bool>(value); }
  bool is_number_list() const { return std::holds_alternative<std::vector<double>>(value); }
};

class ConfigFile {
 public:
  static ConfigFile parse(std::istream& is, const std::string& name = "<config>") {
    ConfigFile cfg;
    cfg.name_ = name;
    std::string line;
    std::string section;
    int line_no = 0;
    while (std::getline(is, line)) {
      ++line_no;
      std::string t = detail::trim(line);
      if (const auto hash = find_comment(t); hash != std::string::npos) {
        t = detail::trim(t.substr(0, hash));
      }
      if (t.empty()) continue;
      if (t.front() == '[') {
        if (t.back() != ']') cfg.fail(line_no, "unterminated section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        if (section.empty()) cfg.fail(line_no, "empty section name");
        continue;
      }
      const auto eq = t.find('=');
      if (eq == std::string::npos) cfg.fail(line_no, "expected 'key = value'");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string raw = detail::trim(t.substr(eq + 1));
      if (key.empty()) cfg.fail(line_no, "empty key");
      if (raw.empty()) cfg.fail(line_no, "missing value for '" + key + "'");
      cfg.entries_[section].push_back({key, cfg.parse_value(raw, line_no)});
    }
    return cfg;
  }

  static ConfigFile parse_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    return parse(is, path);
  }

  bool has(const std::string& section, const std::string& key) const {
    return find(section, key) != nullptr;
  }

  double number(const std::string& section, const std::string& key, double fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (!v->is_number()) fail(v->line, "'" + key + "' must be a number");
    return std::get<double>(v->value);
  }

  double required_number(const std::string& section, const std::string& key) const {
    const ConfigValue* v = find(section, key);
    if (!v) throw std::runtime_error(name_ + ": missing required key '" + key + "' in [" +
                                     section + "]");
    if (!v->is_number()) fail(v->line, "'" + key + "' must be a number");
    return std::get<double>(v->value);
  }

  int integer(const std::string& section, const std::string& key, int fallback) const {
    const double v = number(section, key, static_cast<double>(fallback));
    return static_cast<int>(v);
  }

  std::string str(const std::string& section, const std::string& key,
                  const std::string& fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (!v->is_string()) fail(v->line, "'" + key + "' must be a string");
    return std::get<std::string>(v->value);
  }

  bool boolean(const std::string& section, const std::string& key, bool fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (!v->is_bool()) fail(v->line, "'" + key + "' must be a boolean");
    return std::get<bool>(v->value);
  }

  std::vector<double> numbers(const std::string& section, const std::string& key,
                              std::vector<double> fallback) const {
    const ConfigValue* v = find(section, key);
    if (!v) return fallback;
    if (v->is_number()) return {std::get<double>(v->value)};
    if (!v->is_number_list()) fail(v->line, "'" + key + "' must be a number array");
    return std::get<std::vector<double>>(v->value);
  }

  /// Every value bound to a repeated key, in file order.
  std::vector<std::string> strings_multi(const std::string& section, const std::string& key) const {
    std::vector<std::string> out;
    const auto it = entries_.find(section);
    if (it == entries_.end()) return out;
    for (const auto& [k, v] : it->second) {
      if (k != key) continue;
      if (!v.is_string()) fail(v.line, "'" + key + "' must be a string");
      out.push_back(std::get<std::string>(v.value));
    }
    return out;
  }

 private:
  static std::size_t find_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
      if (s[i] == '"') in_string = !in_string;
      if (s[i] == '#' && !in_string) return i;
    }
    return std::string::npos;
  }

  ConfigValue parse_value(const std::string& raw, int line_no) const {
    ConfigValue v;
    v.line = line_no;
    if (raw.front() == '"') {
      if (raw.size() < 2 || raw.back() != '"') fail(line_no, "unterminated string");
      v.value = raw.substr(1, raw.size() - 2);
      return v;
    }
    if (raw == "true" || raw == "false") {
      v.value = (raw == "true");
      return v;
    }
    if (raw.front() == '[') {
      if (raw.back() != ']') fail(line_no, "unterminated array");
      std::vector<double> nums;
      const std::string inner = detail::trim(raw.substr(1, raw.size() - 2));
      if (!inner.empty()) {
        for (const std::string& cell : detail::split(inner, ',')) {
          nums.push_back(parse_double(detail::trim(cell),
                                      name_ + ":" + std::to_string(line_no)));
        }
      }
      v.value = std::move(nums);
      return v;
    }
    v.value = parse_double(raw, name_ + ":" + std::to_string(line_no));
    return v;
  }

  const ConfigValue* find(const std::string& section, const std::string& key) const {
    const auto it = entries_.find(section);
    if (it == entries_.end()) return nullptr;
    const ConfigValue* found = nullptr;
    for (const auto& [k, v] : it->second) {
      if (k == key) found = &v;  // last occurrence wins for scalar lookups
    }
    return found;
  }

  [[noreturn]] void fail(int line, const std::string& what) const {
    throw std::runtime_error(name_ + ":" + std::to_string(line) + ": " + what);
  }

  std::string name_;
  std::map<std::string, std::vector<std::pair<std::string, ConfigValue>>> entries_;
};

/// Parse one output-constraint declaration of the form
///   y[<component>] >= <bound> @ <t_begin>:<t_end>
/// (or <=). Window bounds are inclusive.
inline OutputConstraint parse_output_constraint(const std::string& text) {
  const auto fail = [&](const std::string& why) -> void {
    throw std::runtime_error("constraint '" + text + "': " + why +
                             " (expected: y[<i>] >= <bound> @ <t0>:<t1>)");
  };
  std::string s = detail::trim(text);
  if (s.rfind("y[", 0) != 0) fail("must start with y[");
  const auto close = s.find(']');
  if (close == std::string::npos) fail("missing ]");
  OutputConstraint c;
  c.component = static_cast<int>(parse_double(detail::trim(s.substr(2, close - 2)), text));
  s = detail::trim(s.substr(close + 1));
  if (s.rfind(">=", 0) == 0) {
    c.is_lower = true;
  } else if (s.rfind("<=", 0) == 0) {
    c.is_lower = false;
  } else {
    fail("missing >= or <=");
  }
  s = detail::trim(s.substr(2));
  const auto at = s.find('@');
  if (at == std::string::npos) fail("missing @ window");
  c.bound = parse_double(detail::trim(s.substr(0, at)), text);
  const std::string window = detail::trim(s.substr(at + 1));
  const auto colon = window.find(':');
  if (colon == std::string::npos) fail("window must be <t0>:<t1>");
  c.t_begin = static_cast<int>(parse_double(detail::trim(window.substr(0, colon)), text));
  c.t_end = static_cast<int>(parse_double(detail::trim(window.substr(colon + 1)), text));
  return c;
}

inline std::string format_output_constraint(const OutputConstraint& c) {
  return "y[" + std::to_string(c.component) + "] " + (c.is_lower ? ">=" : "<=") + " " +
         format_double(c.bound) + " @ " + std::to_string(c.t_begin) + ":" +
         std::to_string(c.t_end);
}

}  // namespace pgoc
