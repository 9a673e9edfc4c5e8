#pragma once

// Parameter snapshot container.
//
//   fewshot-snapshot 1\n
//   arch <text>\n
//   config_hash <16 hex digits>\n
//   producer <text>\n                   (tool version and run-manifest hash)
//   tensors <count>\n
//   tensor <name> <rows> <cols>\n      (count lines)
//   end\n
//   then per tensor, in header order: u64 rows, u64 cols, rows*cols f64
//   row-major; all little-endian.

#include <bit>
#include <charconv>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

#include "fewshot/error.hpp"
#include "fewshot/learners/network.hpp"

namespace fewshot {

struct Snapshot {
  std::string arch;
  std::uint64_t config_hash = 0;
  std::string producer;
  std::vector<std::pair<std::string, Matrix>> tensors;

  const Matrix& tensor(const std::string& name) const {
    for (const auto& [n, m] : tensors)
      if (n == name) return m;
    throw ValidationError("snapshot has no tensor '" + name + "'");
  }

  bool has(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.first == name) return true;
    return false;
  }

  bool operator==(const Snapshot&) const = default;
};

inline constexpr std::string_view kSnapshotMagic = "fewshot-snapshot 1";

namespace detail {

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline std::uint64_t get_u64(std::string_view in, std::size_t& pos) {
  if (pos + 8 > in.size()) throw ValidationError("snapshot payload is truncated");
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(in[pos + i])) << (8 * i);
  pos += 8;
  return v;
}

inline bool valid_token(const std::string& s) {
  if (s.empty()) return false;
  for (char c : s)
    if (c == ' ' || c == '\n' || c == '\t' || c == '\r') return false;
  return true;
}

}  // namespace detail

inline std::string encode_snapshot(const Snapshot& s) {
  if (s.arch.find('\n') != std::string::npos || s.producer.find('\n') != std::string::npos)
    throw ValidationError("snapshot header fields must be one line");
  std::string out(kSnapshotMagic);
  out += "\narch " + s.arch + "\n";
  char hash[17];
  std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(s.config_hash));
  out += "config_hash " + std::string(hash) + "\n";
  out += "producer " + s.producer + "\n";
  out += "tensors " + std::to_string(s.tensors.size()) + "\n";
  for (const auto& [name, m] : s.tensors) {
    if (!detail::valid_token(name)) throw ValidationError("invalid tensor name '" + name + "'");
    out += "tensor " + name + " " + std::to_string(m.rows()) + " " + std::to_string(m.cols()) + "\n";
  }
  out += "end\n";
  for (const auto& [name, m] : s.tensors) {
    detail::put_u64(out, static_cast<std::uint64_t>(m.rows()));
    detail::put_u64(out, static_cast<std::uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) detail::put_u64(out, std::bit_cast<std::uint64_t>(m(r, c)));
  }
  return out;
}

inline Snapshot decode_snapshot(std::string_view bytes) {
  std::size_t pos = 0;
  auto next_line = [&]() {
    const auto nl = bytes.find('\n', pos);
    if (nl == std::string_view::npos) throw ValidationError("snapshot header is truncated");
    std::string line(bytes.substr(pos, nl - pos));
    pos = nl + 1;
    return line;
  };
  if (next_line() != kSnapshotMagic) throw ValidationError("not a fewshot snapshot (bad magic or version)");
  Snapshot s;
  auto line = next_line();
  if (line.rfind("arch ", 0) != 0) throw ValidationError("snapshot header lacks arch");
  s.arch = line.substr(5);
  line = next_line();
  if (line.rfind("config_hash ", 0) != 0 || line.size() != 12 + 16) throw ValidationError("snapshot header lacks config_hash");
  const auto hex = line.substr(12);
  if (std::from_chars(hex.data(), hex.data() + hex.size(), s.config_hash, 16).ptr != hex.data() + hex.size())
    throw ValidationError("snapshot config_hash is not hexadecimal");
  line = next_line();
  if (line.rfind("producer ", 0) != 0) throw ValidationError("snapshot header lacks producer");
  s.producer = line.substr(9);
  line = next_line();
  std::size_t count = 0;
  if (std::sscanf(line.c_str(), "tensors %zu", &count) != 1) throw ValidationError("snapshot header lacks tensor count");
  std::vector<std::tuple<std::string, std::uint64_t, std::uint64_t>> shapes;
  for (std::size_t i = 0; i < count; ++i) {
    std::istringstream ts(next_line());
    std::string kw, name;
    std::uint64_t rows = 0, cols = 0;
    if (!(ts >> kw >> name >> rows >> cols) || kw != "tensor") throw ValidationError("malformed tensor header line");
    shapes.emplace_back(name, rows, cols);
  }
  if (next_line() != "end") throw ValidationError("snapshot header lacks end marker");
  for (const auto& [name, rows, cols] : shapes) {
    if (detail::get_u64(bytes, pos) != rows || detail::get_u64(bytes, pos) != cols)
      throw ValidationError("tensor '" + name + "' shape disagrees with header");
    if (cols != 0 && rows > (bytes.size() - pos) / 8 / cols) throw ValidationError("snapshot payload is truncated");
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
      for (Eigen::Index c = 0; c < m.cols(); ++c) m(r, c) = std::bit_cast<double>(detail::get_u64(bytes, pos));
    s.tensors.emplace_back(name, std::move(m));
  }
  if (pos != bytes.size()) throw ValidationError("trailing bytes after snapshot payload");
  return s;
}

inline void save_snapshot(const Snapshot& s, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write snapshot '" + path + "'");
  const auto bytes = encode_snapshot(s);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing snapshot '" + path + "'");
}

inline Snapshot load_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open snapshot '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return decode_snapshot(ss.str());
}

/// Tensors `<prefix>.<layer>.weight` and `<prefix>.<layer>.bias` (bias as a column).
inline void add_network(Snapshot& s, const std::string& prefix, const Mlp& net) {
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    const auto& layer = net.layers()[l];
    s.tensors.emplace_back(prefix + "." + std::to_string(l) + ".weight", layer.weight);
    s.tensors.emplace_back(prefix + "." + std::to_string(l) + ".bias", Matrix(layer.bias));
  }
}

inline Mlp extract_network(const Snapshot& s, const std::string& prefix) {
  std::vector<DenseLayer> layers;
  for (std::size_t l = 0;; ++l) {
    const auto w = prefix + "." + std::to_string(l) + ".weight";
    if (!s.has(w)) break;
    const Matrix& b = s.tensor(prefix + "." + std::to_string(l) + ".bias");
    const Matrix& wm = s.tensor(w);
    if (b.cols() != 1 || b.rows() != wm.rows()) throw ValidationError("bias shape mismatch in '" + prefix + "'");
    if (!layers.empty() && layers.back().weight.rows() != wm.cols())
      throw ValidationError("layer widths do not chain in '" + prefix + "'");
    layers.push_back({wm, b.col(0)});
  }
  if (layers.empty()) throw ValidationError("snapshot has no network '" + prefix + "'");
  std::vector<std::size_t> dims{static_cast<std::size_t>(layers.front().weight.cols())};
  for (const auto& l : layers) dims.push_back(static_cast<std::size_t>(l.weight.rows()));
  Mlp net(dims);
  net.layers() = std::move(layers);
  return net;
}

}  // namespace fewshot
