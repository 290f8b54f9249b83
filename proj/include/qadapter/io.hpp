#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <string>

namespace qadapter {

// FNV-1a over the canonical text form; used to fingerprint artifacts.
std::uint64_t fnv1a64(const std::string& text);
std::string fingerprint_hex(const std::string& text);

// Dense matrix with a one-line header:
//   #qadapter-matrix v1 kind=<kind> rows=<r> cols=<c> [key=value ...]
// followed by rows of %.17g values. Round-trips bit-exactly.
struct MatrixFile {
  std::string kind;
  Eigen::MatrixXd matrix;
  std::map<std::string, std::string> meta;
};

void save_matrix(const MatrixFile& mf, const std::string& path);
MatrixFile load_matrix(const std::string& path,
                       const std::string& expected_kind = "");

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);
bool file_exists(const std::string& path);

}  // namespace qadapter
