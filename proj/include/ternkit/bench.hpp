#pragma once

#include <cstddef>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace ternkit {

// Raised when the two GEMM paths disagree; no timing is reported then.
class BenchError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct BenchShape {
  std::size_t rows = 1024;
  std::size_t c = 576;
  std::size_t filters = 64;
};

struct BenchOptions {
  int repetitions = 7;
  int warmup = 1;
  int threads = 1;
  std::uint64_t seed = 1;
};

// float_ns / ternary_ns: median wall time of one full GEMM call.
struct BenchReport {
  BenchShape shape;
  double float_ns = 0.0;
  double ternary_ns = 0.0;
  double speedup = 0.0;
  std::int64_t checksum = 0;  // shared by both paths
  int threads = 1;
};

// Random ternary operands, checked for identical outputs, then timed:
// scalar float GEMM on the codes vs packed ternary GEMM.
BenchReport run_bench(const BenchShape& shape, const BenchOptions& options = {});

// c in {64, 192, 576, 1152, 2304} at 1024 rows and 64 filters, plus a one-row case.
std::vector<BenchShape> default_bench_shapes();

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports);

}  // namespace ternkit
