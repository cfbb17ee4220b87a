// io.hpp
//
// File formats: a versioned binary checkpoint container (magic, version, JSON
// metadata, named float64 tensors with shape headers), binary PGM/PPM images,
// and raw float64 feature maps.

#pragma once

#include <filesystem>
#include <map>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "nbvsplat/common.hpp"

namespace nbv {

struct Tensor {
  std::vector<std::int64_t> shape;
  std::vector<double> data;
};

struct Checkpoint {
  static constexpr std::uint32_t kVersion = 1;

  nlohmann::json meta = nlohmann::json::object();
  std::map<std::string, Tensor> tensors;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  void put(const std::string& name, const Vec<double>& v);
  void put(const std::string& name, const RowMat<double>& m);
  Vec<double> vec(const std::string& name) const;
  RowMat<double> mat(const std::string& name) const;
};

/// Engine state as text, the stream format of <random>.
std::string rng_to_string(const std::mt19937_64& rng);
std::mt19937_64 rng_from_string(const std::string& text);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// 8-bit grayscale; values are rounded and clamped to [0, 255].
void write_pgm(const std::filesystem::path& path, const Image& gray);
/// 8-bit RGB from an image in [0, 1].
void write_ppm(const std::filesystem::path& path, const Image& rgb);
/// Reads P5/P6 files back to [0, 255] (PGM) or [0, 1] (PPM) doubles.
Image read_pnm(const std::filesystem::path& path);

void write_labels(const std::filesystem::path& path, const LabelMap& labels);
LabelMap read_labels(const std::filesystem::path& path);

void write_feature_map(const std::filesystem::path& path, const Image& features);
Image read_feature_map(const std::filesystem::path& path);

/// Scales a nonnegative single-channel map so its maximum becomes 255.
Image normalize_heatmap(const Image& heat);

void write_text(const std::filesystem::path& path, const std::string& text);
std::string read_text(const std::filesystem::path& path);

}  // namespace nbv
