#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace scm {

// Edges c_0 < c_1 < ... < c_J. Block j (0-based) covers [c_j, c_{j+1}),
// the last block is closed on the right so c_J is kept.
struct Partition {
  std::vector<double> edges;

  int blocks() const { return static_cast<int>(edges.size()) - 1; }
  double lo(int j) const { return edges[j]; }
  double hi(int j) const { return edges[j + 1]; }
  double width(int j) const { return edges[j + 1] - edges[j]; }
  // Block index for t, or -1 when t is outside [c_0, c_J].
  int locate(double t) const;
};

Partition make_partition(std::span<const double> edges);
// `count` equal-width blocks covering [lo, hi].
Partition uniform_partition(double lo, double hi, int count);

// One subject's full series. Times are strictly increasing.
struct SubjectSeries {
  long long id = 0;
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;  // M_i x q
  Eigen::MatrixXd z;  // M_i x p
};

// Long-format observations grouped by subject. Subjects are addressed by
// their dense position in `subjects`; the original id is kept alongside.
struct LongData {
  int q = 0;
  int p = 0;
  std::vector<SubjectSeries> subjects;

  int subject_count() const { return static_cast<int>(subjects.size()); }
  std::size_t observation_count() const;
  double min_time() const;
  double max_time() const;
  void validate() const;
};

struct SubjectBlock {
  int subject = 0;  // dense index into LongData::subjects
  Eigen::VectorXd t;
  Eigen::VectorXd y;
  Eigen::MatrixXd x;
  Eigen::MatrixXd z;

  Eigen::Index size() const { return t.size(); }
};

struct BlockData {
  int index = 0;
  double lo = 0.0;
  double hi = 0.0;
  int q = 0;
  int p = 0;
  int total_subjects = 0;  // N of the source data
  std::vector<SubjectBlock> subjects;

  int subject_count() const { return static_cast<int>(subjects.size()); }
  bool complete() const { return subject_count() == total_subjects; }
  std::size_t observation_count() const;
};

// Assign every observation to exactly one block. Observations outside
// [c_0, c_J] raise DataError; a block with no observations raises ConfigError.
std::vector<BlockData> split(const LongData& data, const Partition& part);

// CSV with header `id,time,y,x1..xq,z1..zp`.
LongData read_long_csv(const std::filesystem::path& path, int q, int p);
LongData parse_long_csv(std::istream& in, int q, int p, const std::string& source = "<stream>");
void write_long_csv(std::ostream& out, const LongData& data);

}  // namespace scm
