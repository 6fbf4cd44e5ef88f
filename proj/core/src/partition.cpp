#include "scm/partition.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>
#include <unordered_map>

#include "scm/errors.hpp"

namespace scm {

int Partition::locate(double t) const {
  if (edges.size() < 2 || !(t >= edges.front() && t <= edges.back())) return -1;
  if (t == edges.back()) return blocks() - 1;
  const auto it = std::upper_bound(edges.begin(), edges.end(), t);
  return static_cast<int>(it - edges.begin()) - 1;
}

Partition make_partition(std::span<const double> edges) {
  if (edges.size() < 2) {
    throw ConfigError("partition", "at least two partition edges are required");
  }
  for (std::size_t k = 0; k < edges.size(); ++k) {
    if (!std::isfinite(edges[k])) throw ConfigError("partition", "partition edges must be finite");
    if (k > 0 && !(edges[k] > edges[k - 1])) {
      std::ostringstream os;
      os << "partition edges must be strictly increasing (edge " << k << " = " << edges[k]
         << " after " << edges[k - 1] << ")";
      throw ConfigError("partition", os.str());
    }
  }
  return Partition{std::vector<double>(edges.begin(), edges.end())};
}

Partition uniform_partition(double lo, double hi, int count) {
  if (count < 1 || !(hi > lo)) {
    throw ConfigError("partition", "uniform partition needs count >= 1 and hi > lo");
  }
  std::vector<double> edges(count + 1);
  for (int j = 0; j <= count; ++j) edges[j] = lo + (hi - lo) * j / count;
  edges.back() = hi;
  return make_partition(edges);
}

std::size_t LongData::observation_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += static_cast<std::size_t>(s.t.size());
  return n;
}

double LongData::min_time() const {
  double lo = std::numeric_limits<double>::infinity();
  for (const auto& s : subjects)
    if (s.t.size() > 0) lo = std::min(lo, s.t.minCoeff());
  return lo;
}

double LongData::max_time() const {
  double hi = -std::numeric_limits<double>::infinity();
  for (const auto& s : subjects)
    if (s.t.size() > 0) hi = std::max(hi, s.t.maxCoeff());
  return hi;
}

void LongData::validate() const {
  for (const auto& s : subjects) {
    const auto m = s.t.size();
    if (s.y.size() != m || s.x.rows() != m || s.z.rows() != m || s.x.cols() != q ||
        s.z.cols() != p) {
      throw DataError("partition", "subject " + std::to_string(s.id) + ": inconsistent dimensions");
    }
    for (Eigen::Index k = 1; k < m; ++k) {
      if (!(s.t[k] > s.t[k - 1])) {
        std::ostringstream os;
        os << "subject " << s.id << ": times must be strictly increasing (" << s.t[k - 1]
           << " then " << s.t[k] << ")";
        throw DataError("partition", os.str());
      }
    }
  }
}

std::size_t BlockData::observation_count() const {
  std::size_t n = 0;
  for (const auto& s : subjects) n += static_cast<std::size_t>(s.t.size());
  return n;
}

std::vector<BlockData> split(const LongData& data, const Partition& part) {
  data.validate();
  const int J = part.blocks();
  std::vector<BlockData> blocks(J);
  for (int j = 0; j < J; ++j) {
    blocks[j].index = j;
    blocks[j].lo = part.lo(j);
    blocks[j].hi = part.hi(j);
    blocks[j].q = data.q;
    blocks[j].p = data.p;
    blocks[j].total_subjects = data.subject_count();
  }

  std::vector<int> owner;
  std::vector<Eigen::Index> counts(J);
  for (int i = 0; i < data.subject_count(); ++i) {
    const auto& s = data.subjects[i];
    const auto m = s.t.size();
    owner.assign(static_cast<std::size_t>(m), -1);
    std::fill(counts.begin(), counts.end(), 0);
    for (Eigen::Index k = 0; k < m; ++k) {
      const int j = part.locate(s.t[k]);
      if (j < 0) {
        std::ostringstream os;
        os << "observation (id " << s.id << ", time " << s.t[k] << ") outside partition ["
           << part.edges.front() << ", " << part.edges.back() << "]";
        throw DataError("partition", os.str());
      }
      owner[static_cast<std::size_t>(k)] = j;
      ++counts[j];
    }
    for (int j = 0; j < J; ++j) {
      if (counts[j] == 0) continue;
      SubjectBlock sb;
      sb.subject = i;
      sb.t.resize(counts[j]);
      sb.y.resize(counts[j]);
      sb.x.resize(counts[j], data.q);
      sb.z.resize(counts[j], data.p);
      Eigen::Index r = 0;
      for (Eigen::Index k = 0; k < m; ++k) {
        if (owner[static_cast<std::size_t>(k)] != j) continue;
        sb.t[r] = s.t[k];
        sb.y[r] = s.y[k];
        sb.x.row(r) = s.x.row(k);
        sb.z.row(r) = s.z.row(k);
        ++r;
      }
      blocks[j].subjects.push_back(std::move(sb));
    }
  }

  for (const auto& b : blocks) {
    if (b.subjects.empty()) {
      std::ostringstream os;
      os << "partition set [" << b.lo << ", " << b.hi << ") contains no observations";
      throw ConfigError("partition", os.str(), b.index, "choose edges that cover the observed times");
    }
  }
  return blocks;
}

namespace {

std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    auto field = line.substr(start, pos == std::string_view::npos ? pos : pos - start);
    while (!field.empty() && (field.front() == ' ' || field.front() == '\t')) field.remove_prefix(1);
    while (!field.empty() && (field.back() == ' ' || field.back() == '\t' || field.back() == '\r'))
      field.remove_suffix(1);
    out.push_back(field);
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

double parse_number(std::string_view field, const std::string& where) {
  double value = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  const auto res = std::from_chars(first, last, value);
  if (field.empty() || res.ec != std::errc() || res.ptr != last || !std::isfinite(value)) {
    throw DataError("partition", "missing or non-numeric value '" + std::string(field) + "' at " +
                                     where, std::nullopt, "missing values are not supported");
  }
  return value;
}

}  // namespace

LongData parse_long_csv(std::istream& in, int q, int p, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) throw DataError("partition", source + ": empty file");
  const auto header = split_fields(line);
  std::vector<std::string> expected{"id", "time", "y"};
  for (int u = 1; u <= q; ++u) expected.push_back("x" + std::to_string(u));
  for (int k = 1; k <= p; ++k) expected.push_back("z" + std::to_string(k));
  bool header_ok = header.size() == expected.size();
  for (std::size_t c = 0; header_ok && c < expected.size(); ++c) header_ok = header[c] == expected[c];
  if (!header_ok) {
    std::string want;
    for (const auto& e : expected) want += (want.empty() ? "" : ",") + e;
    throw DataError("partition", source + ": header must be '" + want + "' for q=" +
                                     std::to_string(q) + ", p=" + std::to_string(p));
  }

  struct Rows {
    long long id;
    std::vector<double> t, y, x, z;
  };
  std::vector<Rows> rows;
  std::unordered_map<long long, std::size_t> index;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    const auto fields = split_fields(line);
    const std::string where = source + ":" + std::to_string(line_no);
    if (fields.size() != expected.size()) {
      throw DataError("partition", where + ": expected " + std::to_string(expected.size()) +
                                       " columns, found " + std::to_string(fields.size()));
    }
    const double id_value = parse_number(fields[0], where);
    const auto id = static_cast<long long>(id_value);
    if (static_cast<double>(id) != id_value) throw DataError("partition", where + ": id must be an integer");
    auto [it, inserted] = index.try_emplace(id, rows.size());
    if (inserted) rows.push_back(Rows{id, {}, {}, {}, {}});
    auto& r = rows[it->second];
    r.t.push_back(parse_number(fields[1], where));
    r.y.push_back(parse_number(fields[2], where));
    for (int u = 0; u < q; ++u) r.x.push_back(parse_number(fields[3 + u], where));
    for (int k = 0; k < p; ++k) r.z.push_back(parse_number(fields[3 + q + k], where));
  }

  LongData data;
  data.q = q;
  data.p = p;
  data.subjects.reserve(rows.size());
  for (auto& r : rows) {
    const auto m = static_cast<Eigen::Index>(r.t.size());
    SubjectSeries s;
    s.id = r.id;
    s.t = Eigen::Map<Eigen::VectorXd>(r.t.data(), m);
    s.y = Eigen::Map<Eigen::VectorXd>(r.y.data(), m);
    s.x = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        r.x.data(), m, q);
    s.z = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(
        r.z.data(), m, p);
    data.subjects.push_back(std::move(s));
  }
  data.validate();
  return data;
}

LongData read_long_csv(const std::filesystem::path& path, int q, int p) {
  std::ifstream in(path);
  if (!in) throw DataError("partition", "cannot open data file " + path.string());
  return parse_long_csv(in, q, p, path.string());
}

void write_long_csv(std::ostream& out, const LongData& data) {
  out << "id,time,y";
  for (int u = 1; u <= data.q; ++u) out << ",x" << u;
  for (int k = 1; k <= data.p; ++k) out << ",z" << k;
  out << '\n';
  out << std::setprecision(17);
  for (const auto& s : data.subjects) {
    for (Eigen::Index k = 0; k < s.t.size(); ++k) {
      out << s.id << ',' << s.t[k] << ',' << s.y[k];
      for (int u = 0; u < data.q; ++u) out << ',' << s.x(k, u);
      for (int l = 0; l < data.p; ++l) out << ',' << s.z(k, l);
      out << '\n';
    }
  }
}

}  // namespace scm
