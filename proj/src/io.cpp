#include "nbvsplat/io.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nbv {
namespace {

constexpr char kCheckpointMagic[8] = {'N', 'B', 'V', 'C', 'K', 'P', 'T', '\0'};
constexpr char kFeatureMagic[8] = {'N', 'B', 'V', 'F', 'E', 'A', 'T', '\0'};

template <typename T>
void put_raw(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T get_raw(std::istream& is, const std::string& what) {
  T v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!is) throw Error("truncated file while reading " + what);
  return v;
}

std::ofstream open_out(const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw Error("cannot open " + path.string() + " for writing");
  return os;
}

std::ifstream open_in(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw Error("cannot open " + path.string());
  return is;
}

// Next whitespace-delimited header token of a PNM file, skipping comments.
std::string pnm_token(std::istream& is) {
  std::string tok;
  int c;
  while ((c = is.get()) != EOF) {
    if (c == '#') {
      while ((c = is.get()) != EOF && c != '\n') {
      }
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(char(c));
  }
  return tok;
}

unsigned char to_byte(double v) { return static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 255.0))); }

}  // namespace

void Checkpoint::put(const std::string& name, const Vec<double>& v) {
  tensors[name] = Tensor{{v.size()}, std::vector<double>(v.data(), v.data() + v.size())};
}

void Checkpoint::put(const std::string& name, const RowMat<double>& m) {
  tensors[name] = Tensor{{m.rows(), m.cols()}, std::vector<double>(m.data(), m.data() + m.size())};
}

Vec<double> Checkpoint::vec(const std::string& name) const {
  const auto it = tensors.find(name);
  NBV_REQUIRE(it != tensors.end(), ContractError, "checkpoint has no tensor '" + name + "'");
  return Eigen::Map<const Vec<double>>(it->second.data.data(), Index(it->second.data.size()));
}

RowMat<double> Checkpoint::mat(const std::string& name) const {
  const auto it = tensors.find(name);
  NBV_REQUIRE(it != tensors.end(), ContractError, "checkpoint has no tensor '" + name + "'");
  const Tensor& t = it->second;
  NBV_REQUIRE(t.shape.size() == 2, ContractError, "tensor '" + name + "' is not a matrix");
  return Eigen::Map<const RowMat<double>>(t.data.data(), t.shape[0], t.shape[1]);
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  std::ofstream os = open_out(path);
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  put_raw<std::uint32_t>(os, Checkpoint::kVersion);
  const std::string meta = ckpt.meta.dump();
  put_raw<std::uint64_t>(os, meta.size());
  os.write(meta.data(), std::streamsize(meta.size()));
  put_raw<std::uint64_t>(os, ckpt.tensors.size());
  for (const auto& [name, t] : ckpt.tensors) {
    put_raw<std::uint32_t>(os, std::uint32_t(name.size()));
    os.write(name.data(), std::streamsize(name.size()));
    put_raw<std::uint32_t>(os, std::uint32_t(t.shape.size()));
    std::int64_t count = 1;
    for (auto d : t.shape) {
      put_raw<std::int64_t>(os, d);
      count *= d;
    }
    NBV_REQUIRE(count == std::int64_t(t.data.size()), ContractError, "tensor '" + name + "' shape disagrees with data");
    os.write(reinterpret_cast<const char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
  }
  if (!os) throw Error("failed writing " + path.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
    throw Error(path.string() + " is not a checkpoint file");
  const auto version = get_raw<std::uint32_t>(is, "version");
  if (version != Checkpoint::kVersion)
    throw Error("unsupported checkpoint version " + std::to_string(version) + " in " + path.string());
  Checkpoint ckpt;
  const auto meta_len = get_raw<std::uint64_t>(is, "metadata length");
  std::string meta(meta_len, '\0');
  is.read(meta.data(), std::streamsize(meta_len));
  if (!is) throw Error("truncated checkpoint metadata in " + path.string());
  ckpt.meta = nlohmann::json::parse(meta);
  const auto count = get_raw<std::uint64_t>(is, "tensor count");
  for (std::uint64_t k = 0; k < count; ++k) {
    const auto name_len = get_raw<std::uint32_t>(is, "tensor name");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    Tensor t;
    const auto ndim = get_raw<std::uint32_t>(is, "tensor rank");
    std::int64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      t.shape.push_back(get_raw<std::int64_t>(is, "tensor shape"));
      n *= t.shape.back();
    }
    t.data.resize(std::size_t(n));
    is.read(reinterpret_cast<char*>(t.data.data()), std::streamsize(t.data.size() * sizeof(double)));
    if (!is) throw Error("truncated tensor '" + name + "' in " + path.string());
    ckpt.tensors.emplace(std::move(name), std::move(t));
  }
  return ckpt;
}

void write_pgm(const std::filesystem::path& path, const Image& gray) {
  NBV_REQUIRE(gray.channels == 1, ContractError, "PGM needs a single-channel image");
  std::ofstream os = open_out(path);
  os << "P5\n" << gray.width << " " << gray.height << "\n255\n";
  for (double v : gray.data) os.put(char(to_byte(v)));
  if (!os) throw Error("failed writing " + path.string());
}

void write_ppm(const std::filesystem::path& path, const Image& rgb) {
  NBV_REQUIRE(rgb.channels == 3, ContractError, "PPM needs a 3-channel image");
  std::ofstream os = open_out(path);
  os << "P6\n" << rgb.width << " " << rgb.height << "\n255\n";
  for (double v : rgb.data) os.put(char(to_byte(255.0 * v)));
  if (!os) throw Error("failed writing " + path.string());
}

Image read_pnm(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  const std::string kind = pnm_token(is);
  NBV_REQUIRE(kind == "P5" || kind == "P6", ContractError, path.string() + ": only binary PGM/PPM is supported");
  const int w = std::stoi(pnm_token(is));
  const int h = std::stoi(pnm_token(is));
  const int maxval = std::stoi(pnm_token(is));
  NBV_REQUIRE(maxval == 255, ContractError, path.string() + ": only 8-bit images are supported");
  const int c = kind == "P5" ? 1 : 3;
  Image img(h, w, c);
  std::vector<unsigned char> buf(img.data.size());
  is.read(reinterpret_cast<char*>(buf.data()), std::streamsize(buf.size()));
  if (!is) throw Error("truncated image data in " + path.string());
  for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = c == 1 ? double(buf[i]) : double(buf[i]) / 255.0;
  return img;
}

void write_labels(const std::filesystem::path& path, const LabelMap& labels) {
  Image gray(labels.height, labels.width, 1);
  for (std::size_t i = 0; i < labels.data.size(); ++i) {
    NBV_REQUIRE(labels.data[i] >= 0 && labels.data[i] < 256, ContractError, "label does not fit in 8 bits");
    gray.data[i] = labels.data[i];
  }
  write_pgm(path, gray);
}

LabelMap read_labels(const std::filesystem::path& path) {
  const Image gray = read_pnm(path);
  NBV_REQUIRE(gray.channels == 1, ContractError, path.string() + " is not a label map");
  LabelMap labels(gray.height, gray.width, 1);
  for (std::size_t i = 0; i < gray.data.size(); ++i) labels.data[i] = int(gray.data[i]);
  return labels;
}

void write_feature_map(const std::filesystem::path& path, const Image& features) {
  std::ofstream os = open_out(path);
  os.write(kFeatureMagic, sizeof(kFeatureMagic));
  put_raw<std::int32_t>(os, features.height);
  put_raw<std::int32_t>(os, features.width);
  put_raw<std::int32_t>(os, features.channels);
  os.write(reinterpret_cast<const char*>(features.data.data()), std::streamsize(features.data.size() * sizeof(double)));
  if (!os) throw Error("failed writing " + path.string());
}

Image read_feature_map(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  char magic[8];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kFeatureMagic, sizeof(magic)) != 0)
    throw Error(path.string() + " is not a feature map file");
  const int h = get_raw<std::int32_t>(is, "height");
  const int w = get_raw<std::int32_t>(is, "width");
  const int c = get_raw<std::int32_t>(is, "channels");
  Image img(h, w, c);
  is.read(reinterpret_cast<char*>(img.data.data()), std::streamsize(img.data.size() * sizeof(double)));
  if (!is) throw Error("truncated feature data in " + path.string());
  return img;
}

Image normalize_heatmap(const Image& heat) {
  NBV_REQUIRE(heat.channels == 1, ContractError, "heatmap must have one channel");
  Image out(heat.height, heat.width, 1);
  double peak = 0.0;
  for (double v : heat.data) peak = std::max(peak, v);
  if (peak <= 0.0) return out;
  for (std::size_t i = 0; i < heat.data.size(); ++i) out.data[i] = 255.0 * std::max(heat.data[i], 0.0) / peak;
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream os = open_out(path);
  os << text;
  if (!os) throw Error("failed writing " + path.string());
}

std::string read_text(const std::filesystem::path& path) {
  std::ifstream is = open_in(path);
  std::ostringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

std::string rng_to_string(const std::mt19937_64& rng) {
  std::ostringstream ss;
  ss << rng;
  return ss.str();
}

std::mt19937_64 rng_from_string(const std::string& text) {
  std::mt19937_64 rng;
  std::istringstream ss(text);
  ss >> rng;
  NBV_REQUIRE(!ss.fail(), ContractError, "malformed random engine state");
  return rng;
}

}  // namespace nbv
