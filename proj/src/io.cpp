#include "tempoflow/io.hpp"

#include <png.h>

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <regex>
#include <sstream>

#include <json.hpp>

#include "tempoflow/errors.hpp"

namespace tempoflow::io {

namespace {

static_assert(std::endian::native == std::endian::little, "tempoflow assumes a little-endian host");

void put_u32(std::string& out, std::uint32_t v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

void put_f32(std::string& out, float v) {
  char b[4];
  std::memcpy(b, &v, 4);
  out.append(b, 4);
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  std::uint32_t v;
  std::memcpy(&v, s.data() + at, 4);
  return v;
}

float get_f32(const std::string& s, std::size_t at, bool big_endian = false) {
  std::uint32_t bits = get_u32(s, at);
  if (big_endian) bits = __builtin_bswap32(bits);
  return std::bit_cast<float>(bits);
}

// Whitespace-separated header tokens (with '#' comments) as used by PFM/PGM.
// Stops after `count` tokens and the single whitespace byte that follows.
std::vector<std::string> header_tokens(const std::string& s, std::size_t count, std::size_t& pos) {
  std::vector<std::string> tokens;
  pos = 0;
  while (tokens.size() < count) {
    while (pos < s.size() && (std::isspace(static_cast<unsigned char>(s[pos])) || s[pos] == '#')) {
      if (s[pos] == '#') {
        while (pos < s.size() && s[pos] != '\n') ++pos;
      } else {
        ++pos;
      }
    }
    if (pos >= s.size()) throw DataError("bad_header", "truncated header");
    std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    tokens.push_back(s.substr(start, pos - start));
    // Magic tokens are at most two characters; stop a fused "P5" + payload.
    if (tokens.size() == 1 && tokens[0].size() > 2) throw DataError("bad_header", "bad magic token");
  }
  if (pos >= s.size()) throw DataError("truncated", "missing payload");
  ++pos;
  return tokens;
}

Index parse_dim(const std::string& token) {
  try {
    std::size_t used = 0;
    const long v = std::stol(token, &used);
    if (used != token.size() || v <= 0 || v > (1 << 20)) throw DataError("bad_header", "invalid dimension " + token);
    return v;
  } catch (const std::logic_error&) {
    throw DataError("bad_header", "invalid dimension " + token);
  }
}

}  // namespace

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("io", "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("io", "cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("io", "short write to " + path.string());
}

fs::path indexed_name(const std::string& prefix, int index, const std::string& ext) {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%04d", index);
  return prefix + "_" + buf + "." + ext;
}

std::vector<fs::path> list_indexed(const fs::path& dir, const std::string& prefix, const std::string& ext) {
  if (!fs::is_directory(dir)) throw DataError("missing_files", "not a directory: " + dir.string());
  const std::regex pattern(prefix + "_([0-9]+)\\." + ext);
  std::vector<std::pair<long, fs::path>> found;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::smatch m;
    const std::string name = entry.path().filename().string();
    if (std::regex_match(name, m, pattern)) found.emplace_back(std::stol(m[1]), entry.path());
  }
  if (found.empty()) throw DataError("missing_files", "no " + prefix + "_*." + ext + " files in " + dir.string());
  std::sort(found.begin(), found.end());
  std::vector<fs::path> out;
  for (auto& f : found) out.push_back(std::move(f.second));
  return out;
}

void write_flo(const fs::path& path, const FlowField& flow) {
  if (!flow.all_finite()) throw DataError("non_finite", "flow contains non-finite values");
  std::string out = "PIEH";
  put_u32(out, static_cast<std::uint32_t>(flow.width()));
  put_u32(out, static_cast<std::uint32_t>(flow.height()));
  for (Index y = 0; y < flow.height(); ++y) {
    for (Index x = 0; x < flow.width(); ++x) {
      put_f32(out, static_cast<float>(flow.dx(y, x)));
      put_f32(out, static_cast<float>(flow.dy(y, x)));
    }
  }
  write_file(path, out);
}

FlowField read_flo(const fs::path& path) {
  const std::string s = read_file(path);
  if (s.size() < 12) throw DataError("truncated", path.string() + ": file shorter than the .flo header");
  if (s.compare(0, 4, "PIEH") != 0) throw DataError("bad_magic", path.string() + ": missing PIEH magic");
  const auto w = static_cast<std::int32_t>(get_u32(s, 4));
  const auto h = static_cast<std::int32_t>(get_u32(s, 8));
  if (w <= 0 || h <= 0 || w > (1 << 20) || h > (1 << 20)) {
    throw DataError("bad_header", path.string() + ": invalid dimensions");
  }
  const std::size_t expected = 12 + static_cast<std::size_t>(w) * h * 8;
  if (s.size() < expected) throw DataError("truncated", path.string() + ": truncated payload");
  if (s.size() > expected) throw DataError("trailing_data", path.string() + ": unexpected trailing bytes");
  FlowField flow(w, h);
  std::size_t at = 12;
  for (Index y = 0; y < h; ++y) {
    for (Index x = 0; x < w; ++x) {
      const float u = get_f32(s, at), v = get_f32(s, at + 4);
      if (!std::isfinite(u) || !std::isfinite(v)) throw DataError("non_finite", path.string() + ": non-finite flow");
      flow.dx(y, x) = u;
      flow.dy(y, x) = v;
      at += 8;
    }
  }
  return flow;
}

void write_pfm(const fs::path& path, const DepthMap& depth) {
  const Index w = depth.width(), h = depth.height();
  std::string out = "Pf\n" + std::to_string(w) + " " + std::to_string(h) + "\n-1.0\n";
  for (Index y = h - 1; y >= 0; --y) {
    for (Index x = 0; x < w; ++x) put_f32(out, static_cast<float>(depth.depth(y, x)));
  }
  write_file(path, out);
}

DepthMap read_pfm(const fs::path& path) {
  const std::string s = read_file(path);
  std::size_t pos = 0;
  const auto tokens = header_tokens(s, 4, pos);
  if (tokens[0] == "PF") throw DataError("unsupported_variant", path.string() + ": colour PFM is not supported");
  if (tokens[0] != "Pf") throw DataError("bad_magic", path.string() + ": not a PFM file");
  const Index w = parse_dim(tokens[1]), h = parse_dim(tokens[2]);
  double scale = 0.0;
  try {
    scale = std::stod(tokens[3]);
  } catch (const std::logic_error&) {
    throw DataError("bad_header", path.string() + ": invalid scale");
  }
  if (scale == 0.0 || !std::isfinite(scale)) throw DataError("bad_header", path.string() + ": invalid scale");
  const bool big_endian = scale > 0.0;
  const std::size_t expected = pos + static_cast<std::size_t>(w * h) * 4;
  if (s.size() < expected) throw DataError("truncated", path.string() + ": truncated payload");
  DepthMap depth;
  depth.depth.resize(h, w);
  std::size_t at = pos;
  for (Index y = h - 1; y >= 0; --y) {
    for (Index x = 0; x < w; ++x) {
      const float v = get_f32(s, at, big_endian);
      if (!std::isfinite(v)) throw DataError("non_finite", path.string() + ": non-finite depth");
      depth.depth(y, x) = v;
      at += 4;
    }
  }
  return depth;
}

void write_png(const fs::path& path, const Tensor& frame) {
  require(frame.shape().size() == 3 && frame.dim(0) == 3, "write_png: frame must be [3,H,W]");
  const Index h = frame.dim(1), w = frame.dim(2), plane = w * h;
  std::vector<png_byte> rgb(static_cast<std::size_t>(3 * plane));
  const Eigen::ArrayXd& d = frame.data();
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) {
      const double v = std::clamp(d[c * plane + p], 0.0, 1.0);
      rgb[3 * p + c] = static_cast<png_byte>(std::floor(v * 255.0 + 0.5));
    }
  }
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(w);
  image.height = static_cast<png_uint_32>(h);
  image.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&image, path.string().c_str(), 0, rgb.data(), 0, nullptr)) {
    throw DataError("io", "cannot write " + path.string() + ": " + image.message);
  }
}

Tensor read_png(const fs::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof image);
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.string().c_str())) {
    throw DataError("bad_png", path.string() + ": " + image.message);
  }
  const png_uint_32 native = image.format;
  if (native & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&image);
    throw DataError("bad_bit_depth", path.string() + ": only 8-bit PNG frames are supported");
  }
  if (!(native & PNG_FORMAT_FLAG_COLOR) || (native & PNG_FORMAT_FLAG_ALPHA)) {
    png_image_free(&image);
    throw DataError("bad_channels", path.string() + ": frames must be 3-channel RGB");
  }
  image.format = PNG_FORMAT_RGB;
  const Index w = image.width, h = image.height, plane = w * h;
  std::vector<png_byte> rgb(PNG_IMAGE_SIZE(image));
  if (!png_image_finish_read(&image, nullptr, rgb.data(), 0, nullptr)) {
    throw DataError("bad_png", path.string() + ": " + image.message);
  }
  Eigen::ArrayXd d(3 * plane);
  for (Index p = 0; p < plane; ++p) {
    for (Index c = 0; c < 3; ++c) d[c * plane + p] = rgb[3 * p + c] / 255.0;
  }
  return Tensor::from_data({3, h, w}, std::move(d));
}

void write_pgm(const fs::path& path, const OcclusionMask& mask) {
  std::string out = "P5\n" + std::to_string(mask.width) + " " + std::to_string(mask.height) + "\n255\n";
  for (auto v : mask.occluded) out.push_back(v ? static_cast<char>(255) : '\0');
  write_file(path, out);
}

OcclusionMask read_pgm(const fs::path& path) {
  const std::string s = read_file(path);
  if (s.size() >= 2 && s[0] == 'P' && s[1] != '5') {
    throw DataError("unsupported_variant", path.string() + ": only binary P5 PGM is supported");
  }
  std::size_t pos = 0;
  const auto tokens = header_tokens(s, 4, pos);
  if (tokens[0] != "P5") throw DataError("bad_magic", path.string() + ": not a PGM file");
  const Index w = parse_dim(tokens[1]), h = parse_dim(tokens[2]);
  if (tokens[3] != "255") throw DataError("bad_bit_depth", path.string() + ": masks must be 8-bit (maxval 255)");
  if (s.size() < pos + static_cast<std::size_t>(w * h)) throw DataError("truncated", path.string() + ": truncated payload");
  OcclusionMask mask(w, h);
  for (Index p = 0; p < w * h; ++p) mask.occluded[p] = static_cast<unsigned char>(s[pos + p]) != 0;
  return mask;
}

void write_latents(const fs::path& dir, const LatentSequence& latents) {
  require(!latents.latents.empty(), "write_latents: empty sequence");
  const Shape shape = latents.latents[0].shape();
  std::string raw;
  for (const auto& z : latents.latents) {
    require(z.shape() == shape, "write_latents: latents differ in shape");
    raw.append(reinterpret_cast<const char*>(z.data().data()), static_cast<std::size_t>(z.numel()) * sizeof(double));
  }
  nlohmann::json meta;
  meta["format"] = "f64le";
  meta["count"] = latents.latents.size();
  meta["shape"] = shape;
  meta["level"] = latents.level;
  write_file(dir / "latents.f64", raw);
  write_file(dir / "latents.json", meta.dump(2) + "\n");
}

LatentSequence read_latents(const fs::path& dir) {
  nlohmann::json meta;
  try {
    meta = nlohmann::json::parse(read_file(dir / "latents.json"));
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_header", "latents.json: " + std::string(e.what()));
  }
  Shape shape;
  std::size_t count = 0;
  LatentSequence seq;
  try {
    if (meta.at("format").get<std::string>() != "f64le") throw DataError("unsupported_variant", "latent format");
    shape = meta.at("shape").get<Shape>();
    count = meta.at("count").get<std::size_t>();
    seq.level = meta.at("level").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw DataError("bad_header", "latents.json: " + std::string(e.what()));
  }
  if (shape.size() != 3 || count == 0) throw DataError("bad_header", "latents.json: invalid shape or count");
  for (Index d : shape) {
    if (d <= 0) throw DataError("bad_header", "latents.json: invalid shape");
  }
  const Index n = shape_numel(shape);
  const std::string raw = read_file(dir / "latents.f64");
  const std::size_t expected = count * static_cast<std::size_t>(n) * sizeof(double);
  if (raw.size() < expected) throw DataError("truncated", "latents.f64: truncated payload");
  if (raw.size() > expected) throw DataError("trailing_data", "latents.f64: unexpected trailing bytes");
  for (std::size_t i = 0; i < count; ++i) {
    Eigen::ArrayXd d(n);
    std::memcpy(d.data(), raw.data() + i * n * sizeof(double), n * sizeof(double));
    if (!d.allFinite()) throw DataError("non_finite", "latents.f64: non-finite values");
    seq.latents.push_back(Tensor::from_data(shape, std::move(d)));
  }
  return seq;
}

}  // namespace tempoflow::io
