#include <filesystem>
#include <random>

#include "doctest.h"
#include "ternkit/image_io.hpp"
#include "ternkit/serialize.hpp"

using namespace ternkit;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / "ternkit_test_serialize";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Model randomized_bn(Model m, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> ud(0.1f, 2.0f);
  for (auto& p : m.params)
    if (auto* bn = std::get_if<BNParams>(&p))
      for (std::size_t c = 0; c < bn->channels(); ++c) {
        bn->mean[c] = ud(rng) - 1.0f;
        bn->variance[c] = ud(rng);
        bn->gain[c] = ud(rng);
        bn->shift[c] = ud(rng) - 1.0f;
      }
  return m;
}

LoadErrorKind load_error_kind(const std::vector<std::uint8_t>& bytes) {
  try {
    deserialize(bytes);
  } catch (const LoadError& e) {
    return e.kind();
  }
  FAIL("no LoadError raised");
  return LoadErrorKind::Io;
}

}  // namespace

TEST_CASE("roundtrip is bit-exact for every precision") {
  const auto fm = randomized_bn(init_model(build_toy(4, 3, 3, 16, 16), 1), 2);
  for (Mode mode : {Mode::Float, Mode::TernaryWeightsOnly, Mode::TernaryFull, Mode::BinaryFull}) {
    CAPTURE(to_string(mode));
    auto m = quantize_model(fm, mode);
    m.eval_beta = 5.5f;
    m.ternarize_input = mode == Mode::TernaryFull;
    const auto bytes = serialize(m);
    const auto back = deserialize(bytes);
    CHECK(back == m);
    CHECK(serialize(back) == bytes);
  }
  const auto sparse = quantize_model(fm, Mode::TernaryFull, 0.5);
  CHECK(deserialize(serialize(sparse)) == sparse);
}

TEST_CASE("table1-shaped model roundtrips through a file") {
  const auto m = quantize_model(init_model(build_table1(), 3), Mode::TernaryFull);
  const auto path = temp_path("table1.tnn");
  save_model(m, path);
  CHECK(load_model(path) == m);
}

TEST_CASE("ternary file size follows the format arithmetic") {
  const auto m = randomized_bn(quantize_model(init_model(build_toy(8), 4), Mode::TernaryFull), 5);
  const std::size_t header = 4 + 4 + 4 * 4 + 1 + 1 + 4;
  const std::size_t per_layer = 1 + 1 + 9 * 4 + 2 * 4 + 4 * 4;
  std::size_t weights = 0, scales = 0, bn = 0, floats = 0;
  for (const auto& l : m.spec.layers) {
    if (l.kind == LayerKind::Conv) {
      weights += l.out_channels * 2 * words_for(l.patch_size()) * 8;
      scales += 4 * l.out_channels;
      floats += 4 + 4;  // word count, bias length
    } else if (l.kind == LayerKind::Prediction) {
      floats += 4 + 4 * l.weight_count() + 4 + 4 * l.out_channels;
    } else if (l.kind == LayerKind::BatchNorm) {
      bn += 4 + 4 * 4 * l.in_channels + 4;
    }
  }
  const std::size_t expected = header + per_layer * m.spec.layers.size() + weights + scales + bn + floats + 4;
  CHECK(serialize(m).size() == expected);
}

TEST_CASE("load errors are distinct") {
  const auto bytes = serialize(quantize_model(init_model(build_toy(4, 3, 3, 16, 16), 6), Mode::TernaryFull));

  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  CHECK(load_error_kind(bad_magic) == LoadErrorKind::BadMagic);
  try {
    deserialize(bad_magic);
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()) == "bad magic");
  }

  for (std::size_t keep : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    CAPTURE(keep);
    CHECK(load_error_kind({bytes.begin(), bytes.begin() + static_cast<std::ptrdiff_t>(keep)}) ==
          LoadErrorKind::Truncated);
  }

  auto flipped = bytes;
  flipped[bytes.size() / 2] ^= 0x10;
  CHECK(load_error_kind(flipped) == LoadErrorKind::ChecksumMismatch);
  auto bad_crc = bytes;
  bad_crc.back() ^= 1;
  CHECK(load_error_kind(bad_crc) == LoadErrorKind::ChecksumMismatch);

  CHECK_THROWS_AS(load_model(temp_path("does_not_exist.tnn")), LoadError);
  try {
    load_model(temp_path("does_not_exist.tnn"));
  } catch (const LoadError& e) {
    CHECK(e.kind() == LoadErrorKind::Io);
  }
}

TEST_CASE("pgm io") {
  DenseTensor img({2, 3}, {0, 10, 20, 30, 255, 300});
  const auto path = temp_path("img.pgm");
  write_pgm(path, img);
  CHECK(read_pgm(path) == DenseTensor({2, 3}, {0, 10, 20, 30, 255, 255}));
  write_mask_pgm(path, MaskTensor({1, 2}, {0, 1}));
  CHECK(read_pgm(path) == DenseTensor({1, 2}, {0, 255}));

  // 16-bit with a comment in the header.
  const std::string header = "P5\n# note\n2 1\n1000\n";
  std::vector<std::uint8_t> raw(header.begin(), header.end());
  for (std::uint8_t b : {0x01, 0x02, 0x03, 0xE8}) raw.push_back(b);
  write_file(path, raw);
  CHECK(read_pgm(path) == DenseTensor({1, 2}, {258, 1000}));
  raw.pop_back();
  write_file(path, raw);
  CHECK_THROWS_AS(read_pgm(path), LoadError);
  write_pgm(path, img);
  CHECK(load_stack(path).shape() == Shape{1, 1, 2, 3});
}

TEST_CASE("tensor file io") {
  const DenseTensor t({2, 3, 4}, std::vector<double>(24, 0.5));
  const auto path = temp_path("t.tft");
  write_tensor(path, t);
  CHECK(read_tensor(path) == t);
  CHECK(load_stack(path).shape() == Shape{1, 2, 3, 4});
  auto raw = read_file(path);
  raw[0] = 'Q';
  write_file(path, raw);
  CHECK_THROWS_AS(read_tensor(path), LoadError);
}
