#pragma once

#include <charconv>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "x2d3d/core/error.hpp"
#include "x2d3d/detect3d/point_cloud.hpp"

namespace x2d3d::io {

namespace detail {

inline void append_double(std::string& out, double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);  // shortest round-trip form
  out.append(buf, res.ptr);
}

}  // namespace detail

/// ASCII PLY with `property double x/y/z` and, when present, `property double intensity`.
inline std::string to_ply(const PointCloud& cloud) {
  std::string out = "ply\nformat ascii 1.0\ncomment frame " + cloud.frame + "\nelement vertex " +
                    std::to_string(cloud.size()) +
                    "\nproperty double x\nproperty double y\nproperty double z\n";
  if (cloud.has_intensity()) out += "property double intensity\n";
  out += "end_header\n";
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    detail::append_double(out, p.x());
    out += ' ';
    detail::append_double(out, p.y());
    out += ' ';
    detail::append_double(out, p.z());
    if (cloud.has_intensity()) {
      out += ' ';
      detail::append_double(out, cloud.intensity[i]);
    }
    out += '\n';
  }
  return out;
}

inline void write_ply(const std::filesystem::path& path, const PointCloud& cloud) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  const std::string s = to_ply(cloud);
  f.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline PointCloud parse_ply(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != "ply") throw Error(ErrorCode::kFormat, "missing ply magic");
  PointCloud cloud;
  std::size_t count = 0;
  std::vector<std::string> props;
  bool in_vertex = false;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    std::string tok;
    ls >> tok;
    if (tok == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") throw Error(ErrorCode::kFormat, "only ascii ply is supported");
    } else if (tok == "comment") {
      std::string key;
      if (ls >> key && key == "frame") ls >> cloud.frame;
    } else if (tok == "element") {
      std::string name;
      ls >> name >> count;
      in_vertex = name == "vertex";
    } else if (tok == "property" && in_vertex) {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (tok == "end_header") {
      break;
    }
  }
  int ix = -1, iy = -1, iz = -1, ii = -1;
  for (int k = 0; k < static_cast<int>(props.size()); ++k) {
    if (props[k] == "x") ix = k;
    if (props[k] == "y") iy = k;
    if (props[k] == "z") iz = k;
    if (props[k] == "intensity") ii = k;
  }
  if (ix < 0 || iy < 0 || iz < 0) throw Error(ErrorCode::kFormat, "ply lacks x/y/z properties");
  cloud.points.reserve(count);
  std::vector<double> vals(props.size());
  for (std::size_t n = 0; n < count; ++n) {
    for (auto& v : vals) {
      if (!(in >> v)) throw Error(ErrorCode::kFormat, "truncated ply body");
    }
    cloud.points.emplace_back(vals[ix], vals[iy], vals[iz]);
    if (ii >= 0) cloud.intensity.push_back(vals[ii]);
  }
  return cloud;
}

inline PointCloud read_ply(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return parse_ply(f);
}

}  // namespace x2d3d::io
