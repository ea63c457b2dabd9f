#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <vector>

#include "x2d3d/core/kdtree.hpp"
#include "x2d3d/detect2d/dog.hpp"
#include "x2d3d/detect3d/iss.hpp"
#include "x2d3d/embed/layers.hpp"
#include "x2d3d/io/binary.hpp"

namespace x2d3d {

struct DbEntry {
  Keypoint3D keypoint;
  Descriptor descriptor;
};

struct Candidate {
  Keypoint3D keypoint;
  double distance = 0.0;
  std::size_t entry = 0;  // insertion index in the database
};

/// A query keypoint with its nearest map keypoints, closest first.
struct MatchHypothesis {
  Keypoint2D query;
  std::vector<Candidate> candidates;
};

inline double similarity(const Descriptor& p, const Descriptor& q) {
  if (p.dim() != q.dim()) throw Error(ErrorCode::kDimensionMismatch, "descriptor dimensions differ");
  return std::sqrt(squared_distance(p.values.data(), q.values.data(), static_cast<std::size_t>(p.dim())));
}

enum class SearchMode { kAuto, kKdTree, kBruteForce };

/// Map descriptors with exact k-nearest-neighbor retrieval. Above
/// kBruteForceDim dimensions a linear scan replaces the k-d tree.
class DescriptorDB {
 public:
  static constexpr int kBruteForceDim = 32;

  DescriptorDB() = default;

  static DescriptorDB build(std::vector<DbEntry> entries, SearchMode mode = SearchMode::kAuto) {
    if (entries.empty()) throw Error(ErrorCode::kEmptyInput, "descriptor database needs at least one entry");
    DescriptorDB db;
    db.dim_ = entries.front().descriptor.dim();
    if (db.dim_ <= 0) throw Error(ErrorCode::kDimensionMismatch, "descriptor dimension must be positive");
    std::vector<double> flat;
    flat.reserve(entries.size() * static_cast<std::size_t>(db.dim_));
    for (const auto& e : entries) {
      if (e.descriptor.dim() != db.dim_) throw Error(ErrorCode::kDimensionMismatch, "mixed descriptor dimensions");
      flat.insert(flat.end(), e.descriptor.values.data(), e.descriptor.values.data() + db.dim_);
    }
    db.entries_ = std::move(entries);
    db.kdtree_ = mode == SearchMode::kKdTree || (mode == SearchMode::kAuto && db.dim_ <= kBruteForceDim);
    if (db.kdtree_) {
      db.tree_ = KdTree(std::move(flat), static_cast<std::size_t>(db.dim_));
    } else {
      db.flat_ = std::move(flat);
    }
    return db;
  }

  std::size_t size() const { return entries_.size(); }
  int dim() const { return dim_; }
  bool uses_kdtree() const { return kdtree_; }
  const std::vector<DbEntry>& entries() const { return entries_; }

  /// min(k, size) nearest entries, ascending distance, ties by insertion index.
  std::vector<Candidate> knn(const Descriptor& query, int k) const {
    if (query.dim() != dim_) throw Error(ErrorCode::kDimensionMismatch, "query dimension differs from database");
    if (entries_.empty()) throw Error(ErrorCode::kEmptyDatabase, "query against an empty database");
    const auto kk = static_cast<std::size_t>(std::max(k, 0));
    std::vector<Neighbor> nn;
    if (kdtree_) {
      nn = tree_.knn(std::span<const double>(query.values.data(), static_cast<std::size_t>(dim_)), kk);
    } else {
      const auto d = static_cast<std::size_t>(dim_);
      nn.reserve(entries_.size());
      for (std::size_t i = 0; i < entries_.size(); ++i) nn.push_back({i, squared_distance(query.values.data(), flat_.data() + i * d, d)});
      const std::size_t m = std::min(kk, nn.size());
      std::partial_sort(nn.begin(), nn.begin() + static_cast<std::ptrdiff_t>(m), nn.end());
      nn.resize(m);
    }
    std::vector<Candidate> out;
    out.reserve(nn.size());
    for (const auto& n : nn) out.push_back({entries_[n.index].keypoint, std::sqrt(n.dist2), n.index});
    return out;
  }

 private:
  std::vector<DbEntry> entries_;
  int dim_ = 0;
  bool kdtree_ = false;
  KdTree tree_;
  std::vector<double> flat_;
};

// Little-endian layout:
//   "X2DB" | u32 version | u32 D | u64 count
//   per entry: f64 x, y, z | f64 saliency | f64 descriptor[D]
inline constexpr char kDbMagic[] = "X2DB";
inline constexpr std::uint32_t kDbVersion = 1;

inline void write_db(std::ostream& out, const DescriptorDB& db) {
  io::put_bytes(out, std::string(kDbMagic, 4));
  io::put<std::uint32_t>(out, kDbVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(db.dim()));
  io::put<std::uint64_t>(out, db.size());
  for (const auto& e : db.entries()) {
    for (int i = 0; i < 3; ++i) io::put<double>(out, e.keypoint.position(i));
    io::put<double>(out, e.keypoint.saliency);
    for (Eigen::Index i = 0; i < e.descriptor.values.size(); ++i) io::put<double>(out, e.descriptor.values(i));
  }
}

inline DescriptorDB read_db(std::istream& in, SearchMode mode = SearchMode::kAuto) {
  if (io::get_bytes(in, 4) != std::string(kDbMagic, 4)) throw Error(ErrorCode::kFormat, "bad descriptor database magic");
  if (io::get<std::uint32_t>(in) != kDbVersion) throw Error(ErrorCode::kFormat, "unsupported descriptor database version");
  const auto dim = io::get<std::uint32_t>(in);
  const auto count = io::get<std::uint64_t>(in);
  std::vector<DbEntry> entries;
  entries.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
  for (std::uint64_t n = 0; n < count; ++n) {
    DbEntry e;
    for (int i = 0; i < 3; ++i) e.keypoint.position(i) = io::get<double>(in);
    e.keypoint.saliency = io::get<double>(in);
    e.descriptor.values.resize(dim);
    for (std::uint32_t i = 0; i < dim; ++i) e.descriptor.values(i) = io::get<double>(in);
    entries.push_back(std::move(e));
  }
  return DescriptorDB::build(std::move(entries), mode);
}

inline void save_db(const std::filesystem::path& path, const DescriptorDB& db) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  write_db(f, db);
}

inline DescriptorDB load_db(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_db(f);
}

}  // namespace x2d3d
