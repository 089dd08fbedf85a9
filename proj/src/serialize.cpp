#include "ternkit/serialize.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>

#include <zlib.h>

namespace ternkit {

static_assert(std::endian::native == std::endian::little, "model files are written in host byte order");

namespace {

constexpr char kMagic[4] = {'T', 'N', 'N', '1'};

std::uint32_t crc_of(std::span<const std::uint8_t> bytes) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < bytes.size()) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(bytes.size() - done, std::numeric_limits<uInt>::max()));
    crc = crc32(crc, bytes.data() + done, chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

class Writer {
 public:
  template <typename T>
  void put(T v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
    out_.insert(out_.end(), p, p + sizeof(T));
  }
  void u32(std::size_t v) {
    if (v > std::numeric_limits<std::uint32_t>::max()) throw DomainError("value does not fit the model format");
    put(static_cast<std::uint32_t>(v));
  }
  template <typename T>
  void array(std::span<const T> v) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(v.data());
    out_.insert(out_.end(), p, p + v.size_bytes());
  }
  void floats(const std::vector<float>& v) {
    u32(v.size());
    array<float>(v);
  }
  std::vector<std::uint8_t>& bytes() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

// Raised inside the reader and translated by deserialize().
struct OutOfData {};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> bytes) : in_(bytes) {}

  template <typename T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, in_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t u32() { return get<std::uint32_t>(); }
  template <typename T>
  std::vector<T> array(std::size_t n) {
    if (n > (in_.size() - pos_) / sizeof(T)) throw OutOfData{};
    std::vector<T> v(n);
    std::memcpy(v.data(), in_.data() + pos_, n * sizeof(T));
    pos_ += n * sizeof(T);
    return v;
  }
  std::vector<float> floats() { return array<float>(u32()); }
  std::size_t remaining() const { return in_.size() - pos_; }

 private:
  void need(std::size_t n) {
    if (in_.size() - pos_ < n) throw OutOfData{};
  }
  std::span<const std::uint8_t> in_;
  std::size_t pos_ = 0;
};

std::vector<std::uint64_t> full_value_plane(std::size_t rows, std::size_t length) {
  const std::size_t wpr = words_for(length);
  std::vector<std::uint64_t> v(rows * wpr, ~std::uint64_t{0});
  if (const std::size_t tail = length % kLanesPerWord; tail != 0) {
    for (std::size_t r = 0; r < rows; ++r) v[r * wpr + wpr - 1] = (std::uint64_t{1} << tail) - 1;
  }
  return v;
}

Model parse_body(Reader& r) {
  Model m;
  const std::size_t count = r.u32();
  m.spec.input_h = r.u32();
  m.spec.input_w = r.u32();
  m.spec.input_slices = r.u32();
  m.spec.width = r.u32();
  const auto mode = r.get<std::uint8_t>();
  if (mode > static_cast<std::uint8_t>(Mode::BinaryFull)) {
    throw LoadError(LoadErrorKind::Malformed, "unknown mode byte " + std::to_string(mode));
  }
  m.spec.mode = static_cast<Mode>(mode);
  m.ternarize_input = r.get<std::uint8_t>() != 0;
  m.eval_beta = r.get<float>();
  for (std::size_t i = 0; i < count; ++i) {
    LayerSpec l;
    const auto kind = r.get<std::uint8_t>();
    const auto precision = r.get<std::uint8_t>();
    if (kind < 1 || kind > static_cast<std::uint8_t>(LayerKind::Prediction)) {
      throw LoadError(LoadErrorKind::Malformed, "layer " + std::to_string(i) + ": unknown kind " + std::to_string(kind));
    }
    if (precision > static_cast<std::uint8_t>(Precision::Binary1Bit)) {
      throw LoadError(LoadErrorKind::Malformed, "layer " + std::to_string(i) + ": unknown precision");
    }
    l.kind = static_cast<LayerKind>(kind);
    l.kernel_h = r.u32();
    l.kernel_w = r.u32();
    l.stride = r.u32();
    l.dilation = r.u32();
    l.padding = r.u32();
    l.in_channels = r.u32();
    l.out_channels = r.u32();
    l.declared_out.h = r.u32();
    l.declared_out.w = r.u32();
    l.save_as = r.get<std::int32_t>();
    l.skip_from = r.get<std::int32_t>();
    l.flop_out.h = r.u32();
    l.flop_out.w = r.u32();
    l.flop_kernel.h = r.u32();
    l.flop_kernel.w = r.u32();

    LayerParams params;
    if (l.has_weights()) {
      ConvParams p;
      p.precision = static_cast<Precision>(precision);
      if (p.precision == Precision::Float32) {
        p.weights = r.floats();
      } else {
        const std::size_t words = r.u32();
        if (words != l.out_channels * words_for(l.patch_size())) {
          throw LoadError(LoadErrorKind::Malformed, "layer " + std::to_string(i) + ": plane length mismatch");
        }
        // Binary layers store only the sign plane; every lane is nonzero.
        auto value = p.precision == Precision::Binary1Bit ? full_value_plane(l.out_channels, l.patch_size())
                                                          : r.array<std::uint64_t>(words);
        auto sign = r.array<std::uint64_t>(words);
        auto alpha = r.array<float>(l.out_channels);
        const Shape shape{l.out_channels, l.patch_size()};
        p.packed = PackedTernaryTensor(shape, std::move(sign), std::move(value), std::move(alpha));
      }
      p.bias = r.floats();
      params = std::move(p);
    } else if (l.kind == LayerKind::BatchNorm) {
      BNParams bn;
      const std::size_t c = r.u32();
      bn.mean = r.array<float>(c);
      bn.variance = r.array<float>(c);
      bn.gain = r.array<float>(c);
      bn.shift = r.array<float>(c);
      bn.epsilon = r.get<float>();
      params = std::move(bn);
    }
    m.spec.layers.push_back(l);
    m.params.push_back(std::move(params));
  }
  return m;
}

}  // namespace

std::vector<std::uint8_t> serialize(const Model& model) {
  model.validate();
  Writer w;
  w.array<char>(kMagic);
  w.u32(model.spec.layers.size());
  w.u32(model.spec.input_h);
  w.u32(model.spec.input_w);
  w.u32(model.spec.input_slices);
  w.u32(model.spec.width);
  w.put(static_cast<std::uint8_t>(model.spec.mode));
  w.put(static_cast<std::uint8_t>(model.ternarize_input ? 1 : 0));
  w.put(model.eval_beta);
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    const auto* conv = std::get_if<ConvParams>(&model.params[i]);
    w.put(static_cast<std::uint8_t>(l.kind));
    w.put(static_cast<std::uint8_t>(conv ? conv->precision : Precision::Float32));
    for (std::size_t v : {l.kernel_h, l.kernel_w, l.stride, l.dilation, l.padding, l.in_channels, l.out_channels,
                          l.declared_out.h, l.declared_out.w}) {
      w.u32(v);
    }
    w.put(static_cast<std::int32_t>(l.save_as));
    w.put(static_cast<std::int32_t>(l.skip_from));
    for (std::size_t v : {l.flop_out.h, l.flop_out.w, l.flop_kernel.h, l.flop_kernel.w}) w.u32(v);

    if (conv) {
      if (conv->precision == Precision::Float32) {
        w.floats(conv->weights);
      } else {
        w.u32(conv->packed.value_words().size());
        if (conv->precision == Precision::Ternary2Bit) w.array<std::uint64_t>(conv->packed.value_words());
        w.array<std::uint64_t>(conv->packed.sign_words());
        w.array<float>(conv->packed.scales());
      }
      w.floats(conv->bias);
    } else if (const auto* bn = std::get_if<BNParams>(&model.params[i])) {
      w.u32(bn->channels());
      w.array<float>(bn->mean);
      w.array<float>(bn->variance);
      w.array<float>(bn->gain);
      w.array<float>(bn->shift);
      w.put(bn->epsilon);
    }
  }
  w.put(crc_of(w.bytes()));
  return std::move(w.bytes());
}

Model deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < sizeof(kMagic)) throw LoadError(LoadErrorKind::Truncated, "truncated model file");
  if (std::memcmp(bytes.data(), kMagic, sizeof(kMagic)) != 0) throw LoadError(LoadErrorKind::BadMagic, "bad magic");
  if (bytes.size() < sizeof(kMagic) + 8) throw LoadError(LoadErrorKind::Truncated, "truncated model file");

  const auto body = bytes.subspan(0, bytes.size() - 4);
  std::uint32_t stored = 0;
  std::memcpy(&stored, bytes.data() + body.size(), 4);
  const bool crc_ok = crc_of(body) == stored;

  // The structure is walked before the checksum verdict so that a short file
  // reports truncation rather than a checksum mismatch.
  Reader r(body.subspan(sizeof(kMagic)));
  Model m;
  try {
    m = parse_body(r);
  } catch (const OutOfData&) {
    if (crc_ok) throw LoadError(LoadErrorKind::Malformed, "model file layout is inconsistent");
    throw LoadError(LoadErrorKind::Truncated, "truncated model file");
  } catch (const LoadError&) {
    if (crc_ok) throw;
    throw LoadError(LoadErrorKind::ChecksumMismatch, "checksum mismatch");
  }
  if (!crc_ok) throw LoadError(LoadErrorKind::ChecksumMismatch, "checksum mismatch");
  if (r.remaining() != 0) throw LoadError(LoadErrorKind::Malformed, "trailing bytes after the last layer");
  try {
    m.validate();
  } catch (const DomainError& e) {
    throw LoadError(LoadErrorKind::Malformed, std::string("invalid model: ") + e.what());
  }
  return m;
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError(LoadErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw LoadError(LoadErrorKind::Io, "read error on " + path.string());
  return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError(LoadErrorKind::Io, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError(LoadErrorKind::Io, "write error on " + path.string());
}

void save_model(const Model& model, const std::filesystem::path& path) { write_file(path, serialize(model)); }

Model load_model(const std::filesystem::path& path) { return deserialize(read_file(path)); }

}  // namespace ternkit
