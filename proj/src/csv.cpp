#include "rarx/csv.hpp"

#include <charconv>
#include <fstream>
#include <istream>
#include <ostream>

#include <fmt/format.h>

#include "rarx/errors.hpp"

namespace rarx {

std::string format_real(double x) { return fmt::format("{:.17g}", x); }

void write_samples_csv(std::ostream& out, std::span<const DqSample> samples) {
  out << "t,v_d,v_q,i_d,i_q\n";
  for (const auto& s : samples) {
    out << fmt::format("{:.17g},{:.17g},{:.17g},{:.17g},{:.17g}\n", s.t, s.v_dq.x(), s.v_dq.y(), s.i_dq.x(),
                       s.i_dq.y());
  }
}

void write_samples_csv(const std::filesystem::path& path, std::span<const DqSample> samples) {
  std::ofstream out(path);
  if (!out) throw ConfigError(fmt::format("cannot write {}", path.string()));
  write_samples_csv(out, samples);
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t from = 0;
  while (true) {
    const auto comma = line.find(',', from);
    fields.push_back(line.substr(from, comma - from));
    if (comma == std::string::npos) break;
    from = comma + 1;
  }
  if (!fields.empty() && !fields.back().empty() && fields.back().back() == '\r') fields.back().pop_back();
  return fields;
}

namespace {

double parse_real(const std::string& field, std::size_t line_no) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  const auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last)
    throw ConfigError(fmt::format("line {}: '{}' is not a number", line_no, field));
  return v;
}

}  // namespace

std::vector<DqSample> read_samples_csv(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw ConfigError("empty sample file");
  const auto header = split_csv_line(line);
  if (header != std::vector<std::string>{"t", "v_d", "v_q", "i_d", "i_q"})
    throw ConfigError(fmt::format("unexpected header '{}'", line));
  std::vector<DqSample> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto f = split_csv_line(line);
    if (f.size() != 5) throw ConfigError(fmt::format("line {}: expected 5 fields, got {}", line_no, f.size()));
    DqSample s;
    s.t = parse_real(f[0], line_no);
    s.v_dq = {parse_real(f[1], line_no), parse_real(f[2], line_no)};
    s.i_dq = {parse_real(f[3], line_no), parse_real(f[4], line_no)};
    if (!out.empty() && !(s.t > out.back().t))
      throw SequencingError(fmt::format("line {}: time {} does not advance", line_no, s.t));
    out.push_back(s);
  }
  return out;
}

std::vector<DqSample> read_samples_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(fmt::format("cannot read {}", path.string()));
  return read_samples_csv(in);
}

}  // namespace rarx
