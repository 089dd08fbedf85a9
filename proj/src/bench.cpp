#include "ternkit/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <random>

#include "ternkit/kernels.hpp"
#include "ternkit/packed_tensor.hpp"

namespace ternkit {

namespace {

CodeTensor random_codes(std::mt19937_64& rng, std::size_t rows, std::size_t c) {
  std::uniform_int_distribution<int> d(-1, 1);
  CodeTensor t({rows, c});
  for (auto& v : t.storage()) v = static_cast<std::int8_t>(d(rng));
  return t;
}

// Position-weighted sum so that swapped outputs change the value.
std::int64_t checksum_of(const std::vector<std::int64_t>& values) {
  std::int64_t s = 0;
  for (std::size_t i = 0; i < values.size(); ++i) s += values[i] * static_cast<std::int64_t>(i % 8191 + 1);
  return s;
}

template <typename Fn>
double median_ns(const BenchOptions& o, Fn&& fn) {
  for (int i = 0; i < o.warmup; ++i) fn();
  std::vector<double> t;
  for (int i = 0; i < o.repetitions; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    fn();
    const auto t1 = std::chrono::steady_clock::now();
    t.push_back(std::chrono::duration<double, std::nano>(t1 - t0).count());
  }
  std::sort(t.begin(), t.end());
  return t[t.size() / 2];
}

}  // namespace

BenchReport run_bench(const BenchShape& shape, const BenchOptions& o) {
  if (shape.rows == 0 || shape.c == 0 || shape.filters == 0) throw DomainError("bench: empty problem shape");
  if (o.repetitions < 1 || o.warmup < 0 || o.threads < 1) throw DomainError("bench: invalid options");

  std::mt19937_64 rng(o.seed);
  const CodeTensor a = random_codes(rng, shape.rows, shape.c);
  const CodeTensor b = random_codes(rng, shape.filters, shape.c);
  std::vector<float> af(a.storage().begin(), a.storage().end());
  std::vector<float> bf(b.storage().begin(), b.storage().end());
  std::vector<float> cf(shape.rows * shape.filters);
  const PackedTernaryTensor ap = pack(a), bp = pack(b);

  auto run_float = [&] { gemm_float<float>(af, bf, cf, shape.rows, shape.filters, shape.c, o.threads); };
  auto run_ternary = [&] { return ternary_gemm_int(ap, bp, o.threads); };

  // Outputs are integers well inside float's exact range, so they compare exactly.
  run_float();
  const auto ti = run_ternary();
  std::vector<std::int64_t> fv(cf.size()), tv(cf.size());
  for (std::size_t i = 0; i < cf.size(); ++i) {
    fv[i] = std::llround(cf[i]);
    tv[i] = ti[i];
    if (static_cast<float>(fv[i]) != cf[i]) throw BenchError("bench: float GEMM produced a non-integer output");
  }
  const std::int64_t fsum = checksum_of(fv), tsum = checksum_of(tv);
  if (fv != tv || fsum != tsum) {
    throw BenchError("bench: checksum mismatch (float " + std::to_string(fsum) + ", ternary " + std::to_string(tsum) +
                     ")");
  }

  BenchReport r;
  r.shape = shape;
  r.threads = o.threads;
  r.checksum = fsum;
  r.float_ns = median_ns(o, run_float);
  r.ternary_ns = median_ns(o, [&] { (void)run_ternary(); });
  r.speedup = r.float_ns / r.ternary_ns;
  return r;
}

std::vector<BenchShape> default_bench_shapes() {
  std::vector<BenchShape> shapes;
  for (std::size_t c : {64, 192, 576, 1152, 2304}) shapes.push_back({1024, c, 64});
  shapes.push_back({1, 576, 64});
  return shapes;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports) {
  out << "rows,c,filters,float_ns,ternary_ns,speedup\n";
  char buf[160];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%.0f,%.0f,%.3f\n", r.shape.rows, r.shape.c, r.shape.filters,
                  r.float_ns, r.ternary_ns, r.speedup);
    out << buf;
  }
}

}  // namespace ternkit
