#include "qadapter/io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "qadapter/errors.hpp"

namespace qadapter {

std::uint64_t fnv1a64(const std::string& text) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fingerprint_hex(const std::string& text) {
  char buf[20];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(text)));
  return buf;
}

void save_matrix(const MatrixFile& mf, const std::string& path) {
  std::ostringstream out;
  out << "#qadapter-matrix v1 kind=" << mf.kind << " rows=" << mf.matrix.rows()
      << " cols=" << mf.matrix.cols();
  for (const auto& [k, v] : mf.meta) out << " " << k << "=" << v;
  out << "\n";
  char buf[40];
  for (Eigen::Index i = 0; i < mf.matrix.rows(); ++i) {
    for (Eigen::Index j = 0; j < mf.matrix.cols(); ++j) {
      std::snprintf(buf, sizeof(buf), "%.17g", mf.matrix(i, j));
      if (j) out << " ";
      out << buf;
    }
    out << "\n";
  }
  write_text_file(path, out.str());
}

MatrixFile load_matrix(const std::string& path, const std::string& expected_kind) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact: " + path);
  MatrixFile mf;
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty file");
  std::istringstream hs(line);
  std::string magic, version, kv;
  hs >> magic >> version;
  if (magic != "#qadapter-matrix" || version != "v1") {
    throw ParseError(path + ": expected '#qadapter-matrix v1' header");
  }
  Eigen::Index rows = -1, cols = -1;
  while (hs >> kv) {
    auto eq = kv.find('=');
    if (eq == std::string::npos) {
      throw ParseError(path + ": malformed header field '" + kv + "'");
    }
    std::string key = kv.substr(0, eq);
    std::string val = kv.substr(eq + 1);
    if (key == "kind") {
      mf.kind = val;
    } else if (key == "rows") {
      rows = std::stoll(val);
    } else if (key == "cols") {
      cols = std::stoll(val);
    } else {
      mf.meta[key] = val;
    }
  }
  if (rows < 0 || cols < 1) throw ParseError(path + ": header missing rows/cols");
  if (!expected_kind.empty() && mf.kind != expected_kind) {
    throw ArtifactError(path + ": expected kind '" + expected_kind +
                        "', found '" + mf.kind + "'");
  }
  mf.matrix.resize(rows, cols);
  for (Eigen::Index i = 0; i < rows; ++i) {
    if (!std::getline(in, line)) {
      throw ParseError(path + ": truncated at row " + std::to_string(i));
    }
    std::istringstream rs(line);
    for (Eigen::Index j = 0; j < cols; ++j) {
      if (!(rs >> mf.matrix(i, j))) {
        throw ParseError(path + ": bad value at row " + std::to_string(i) +
                         ", col " + std::to_string(j));
      }
    }
  }
  return mf;
}

void write_text_file(const std::string& path, const std::string& content) {
  std::filesystem::path p(path);
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ArtifactError("cannot open " + path + " for writing");
  out << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact: " + path);
  std::ostringstream out;
  out << in.rdbuf();
  return out.str();
}

bool file_exists(const std::string& path) {
  return std::filesystem::exists(path);
}

}  // namespace qadapter
