#include "ternkit/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstring>
#include <string>

#include "ternkit/serialize.hpp"

namespace ternkit {

namespace {

// Next whitespace-separated PGM header token, skipping comments.
std::size_t header_number(const std::vector<std::uint8_t>& b, std::size_t& pos, const std::string& name) {
  while (pos < b.size()) {
    if (b[pos] == '#') {
      while (pos < b.size() && b[pos] != '\n') ++pos;
    } else if (std::isspace(b[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  std::size_t v = 0;
  std::size_t digits = 0;
  while (pos < b.size() && std::isdigit(b[pos])) {
    v = v * 10 + (b[pos++] - '0');
    if (++digits > 9) throw LoadError(LoadErrorKind::Malformed, name + ": header value too large");
  }
  if (digits == 0) throw LoadError(LoadErrorKind::Malformed, name + ": malformed PGM header");
  return v;
}

}  // namespace

DenseTensor read_pgm(const std::filesystem::path& path) {
  const auto b = read_file(path);
  const std::string name = path.string();
  if (b.size() < 2 || b[0] != 'P' || b[1] != '5') throw LoadError(LoadErrorKind::BadMagic, name + ": not a P5 PGM");
  std::size_t pos = 2;
  const std::size_t w = header_number(b, pos, name);
  const std::size_t h = header_number(b, pos, name);
  const std::size_t maxval = header_number(b, pos, name);
  if (w == 0 || h == 0 || maxval == 0 || maxval > 65535) {
    throw LoadError(LoadErrorKind::Malformed, name + ": bad PGM geometry");
  }
  if (pos >= b.size() || !std::isspace(b[pos])) throw LoadError(LoadErrorKind::Malformed, name + ": bad PGM header");
  ++pos;
  const std::size_t bytes_per = maxval > 255 ? 2 : 1;
  if (b.size() - pos < w * h * bytes_per) throw LoadError(LoadErrorKind::Truncated, name + ": truncated PGM data");
  DenseTensor img({h, w});
  for (std::size_t i = 0; i < w * h; ++i) {
    img[i] = bytes_per == 1 ? b[pos + i] : static_cast<double>((b[pos + 2 * i] << 8) | b[pos + 2 * i + 1]);
  }
  return img;
}

void write_pgm(const std::filesystem::path& path, const DenseTensor& image, unsigned maxval) {
  if (image.rank() != 2) throw DomainError("write_pgm: expected an (H,W) image, got " + shape_string(image.shape()));
  if (maxval == 0 || maxval > 255) throw DomainError("write_pgm: maxval must be in 1..255");
  const std::string header =
      "P5\n" + std::to_string(image.dim(1)) + " " + std::to_string(image.dim(0)) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  for (double v : image.storage()) {
    const double c = std::clamp(std::isfinite(v) ? std::round(v) : 0.0, 0.0, static_cast<double>(maxval));
    out.push_back(static_cast<std::uint8_t>(c));
  }
  write_file(path, out);
}

void write_mask_pgm(const std::filesystem::path& path, const MaskTensor& mask) {
  if (mask.rank() != 2) throw DomainError("write_mask_pgm: expected an (H,W) mask");
  DenseTensor img(mask.shape());
  for (std::size_t i = 0; i < mask.size(); ++i) img[i] = mask[i] ? 255.0 : 0.0;
  write_pgm(path, img);
}

DenseTensor read_tensor(const std::filesystem::path& path) {
  const auto b = read_file(path);
  const std::string name = path.string();
  if (b.size() < 4 || std::memcmp(b.data(), "TFT1", 4) != 0) {
    throw LoadError(LoadErrorKind::BadMagic, name + ": bad magic");
  }
  auto u32_at = [&](std::size_t off) {
    if (b.size() < off + 4) throw LoadError(LoadErrorKind::Truncated, name + ": truncated tensor header");
    std::uint32_t v;
    std::memcpy(&v, b.data() + off, 4);
    return static_cast<std::size_t>(v);
  };
  const std::size_t rank = u32_at(4);
  if (rank == 0 || rank > 8) throw LoadError(LoadErrorKind::Malformed, name + ": unsupported rank");
  Shape shape(rank);
  std::size_t count = 1;
  for (std::size_t i = 0; i < rank; ++i) {
    shape[i] = u32_at(8 + 4 * i);
    if (shape[i] == 0 || shape[i] > (std::size_t{1} << 31) / count) {
      throw LoadError(LoadErrorKind::Malformed, name + ": bad tensor extent");
    }
    count *= shape[i];
  }
  const std::size_t off = 8 + 4 * rank;
  if (b.size() - off < count * 4) throw LoadError(LoadErrorKind::Truncated, name + ": truncated tensor payload");
  if (b.size() - off > count * 4) throw LoadError(LoadErrorKind::Malformed, name + ": trailing bytes");
  DenseTensor t(shape);
  for (std::size_t i = 0; i < count; ++i) {
    float f;
    std::memcpy(&f, b.data() + off + 4 * i, 4);
    t[i] = f;
  }
  return t;
}

void write_tensor(const std::filesystem::path& path, const DenseTensor& t) {
  std::vector<std::uint8_t> out{'T', 'F', 'T', '1'};
  auto put32 = [&](std::uint32_t v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out.insert(out.end(), p, p + 4);
  };
  put32(static_cast<std::uint32_t>(t.rank()));
  for (std::size_t d : t.shape()) put32(static_cast<std::uint32_t>(d));
  for (double v : t.storage()) {
    const float f = static_cast<float>(v);
    const auto* p = reinterpret_cast<const std::uint8_t*>(&f);
    out.insert(out.end(), p, p + 4);
  }
  write_file(path, out);
}

DenseTensor load_stack(const std::filesystem::path& path) {
  DenseTensor t = path.extension() == ".pgm" ? read_pgm(path) : read_tensor(path);
  Shape s = t.shape();
  if (s.size() == 2) s = {1, 1, s[0], s[1]};
  else if (s.size() == 3) s = {1, s[0], s[1], s[2]};
  else if (s.size() != 4) throw DomainError(path.string() + ": expected a tensor of rank 2, 3 or 4");
  t.reshape(s);
  return t;
}

}  // namespace ternkit
