#pragma once

#include <filesystem>
#include <fstream>
#include <sstream>

#include "x2d3d/embed/image_embedder.hpp"
#include "x2d3d/embed/point_embedder.hpp"
#include "x2d3d/io/binary.hpp"

namespace x2d3d {

// Little-endian layout:
//   "X2D3D" | u32 version | u32 D | u32 tensor count
//   per tensor: u32 name length | name | u32 rank | u32 dims[rank] | f64 payload
inline constexpr char kCheckpointMagic[] = "X2D3D";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ImageEmbedder image;
  PointEmbedder point;
};

inline void write_checkpoint(std::ostream& out, const ImageEmbedder& image, const PointEmbedder& point) {
  io::put_bytes(out, std::string(kCheckpointMagic, 5));
  io::put<std::uint32_t>(out, kCheckpointVersion);
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(image.config().dim));
  io::put<std::uint32_t>(out, static_cast<std::uint32_t>(image.params().size() + point.params().size()));
  for (const ParamSet* set : {&image.params(), &point.params()}) {
    for (const auto& t : *set) {
      io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.name.size()));
      io::put_bytes(out, t.name);
      io::put<std::uint32_t>(out, static_cast<std::uint32_t>(t.value.shape.size()));
      for (int d : t.value.shape) io::put<std::uint32_t>(out, static_cast<std::uint32_t>(d));
      for (double v : t.value.data) io::put<double>(out, v);
    }
  }
}

inline Checkpoint read_checkpoint(std::istream& in, int image_input_side = kPatchSide) {
  if (io::get_bytes(in, 5) != std::string(kCheckpointMagic, 5)) throw Error(ErrorCode::kFormat, "bad checkpoint magic");
  if (io::get<std::uint32_t>(in) != kCheckpointVersion) throw Error(ErrorCode::kFormat, "unsupported checkpoint version");
  const auto dim = io::get<std::uint32_t>(in);
  const auto count = io::get<std::uint32_t>(in);
  ParamSet image, point;
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = io::get_bytes(in, io::get<std::uint32_t>(in));
    const auto rank = io::get<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < rank; ++r) t.value.shape.push_back(static_cast<int>(io::get<std::uint32_t>(in)));
    t.value.data.resize(Tensor::count(t.value.shape));
    for (auto& v : t.value.data) v = io::get<double>(in);
    if (t.name.rfind("image.", 0) == 0) {
      image.push_back(std::move(t));
    } else if (t.name.rfind("point.", 0) == 0) {
      point.push_back(std::move(t));
    } else {
      throw Error(ErrorCode::kFormat, "unknown tensor prefix: " + t.name);
    }
  }
  Checkpoint ck{ImageEmbedder::from_params(std::move(image), image_input_side), PointEmbedder::from_params(std::move(point))};
  if (static_cast<std::uint32_t>(ck.image.config().dim) != dim || static_cast<std::uint32_t>(ck.point.config().dim) != dim) {
    throw Error(ErrorCode::kFormat, "checkpoint dimension header disagrees with tensors");
  }
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const ImageEmbedder& image, const PointEmbedder& point) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  write_checkpoint(f, image, point);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw Error(ErrorCode::kIo, "cannot open " + path.string());
  return read_checkpoint(f);
}

}  // namespace x2d3d
