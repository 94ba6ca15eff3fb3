#pragma once

// Deterministic parallel reduction over replica indices.
//
// Work is cut into fixed-size blocks of consecutive replica indices.  Any
// number of workers may claim blocks in any order, but each block's partial
// accumulator is produced by a single worker scanning its indices in order,
// and the partials are folded together in block order at the end.  The
// result is therefore a pure function of (replica count, block size,
// per-replica work), bit-identical for every worker count.

#include <algorithm>
#include <array>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

namespace subcrit {

inline constexpr std::uint64_t kDefaultBlockSize = 8192;

inline int resolve_workers(int workers) {
  if (workers > 0) return workers;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : static_cast<int>(hw);
}

// Acc must be copyable.  work(acc, i) accumulates replica i into acc;
// combine(into, from) folds a block partial into the running total.
template <class Acc, class Work, class Combine>
Acc replica_reduce(std::uint64_t count, int workers, const Acc& zero, Work work, Combine combine,
                   std::uint64_t block_size = kDefaultBlockSize) {
  if (count == 0) return zero;
  const std::uint64_t n_blocks = (count + block_size - 1) / block_size;
  const int n_workers = std::min<std::uint64_t>(resolve_workers(workers), n_blocks);

  std::vector<Acc> partials(n_blocks, zero);
  std::atomic<std::uint64_t> next{0};
  auto run = [&]() {
    for (;;) {
      const std::uint64_t b = next.fetch_add(1);
      if (b >= n_blocks) return;
      Acc& acc = partials[b];
      const std::uint64_t lo = b * block_size;
      const std::uint64_t hi = std::min(count, lo + block_size);
      for (std::uint64_t i = lo; i < hi; ++i) work(acc, i);
    }
  };

  if (n_workers <= 1) {
    run();
  } else {
    std::vector<std::thread> pool;
    pool.reserve(n_workers);
    for (int t = 0; t < n_workers; ++t) pool.emplace_back(run);
    for (auto& th : pool) th.join();
  }

  Acc total = zero;
  for (std::uint64_t b = 0; b < n_blocks; ++b) combine(total, partials[b]);
  return total;
}

// Common accumulator: running sums for a handful of scalar statistics.
template <int N>
struct SumAcc {
  std::array<double, N> s{};
  std::uint64_t n = 0;

  void add(int k, double v) { s[k] += v; }
  static void fold(SumAcc& into, const SumAcc& from) {
    for (int k = 0; k < N; ++k) into.s[k] += from.s[k];
    into.n += from.n;
  }
};

// Mean and standard error from (sum, sum of squares, count).
struct MeanSE {
  double mean = 0.0;
  double se = 0.0;
};

inline MeanSE mean_se(double sum, double sum_sq, std::uint64_t n) {
  MeanSE out;
  if (n == 0) return out;
  out.mean = sum / static_cast<double>(n);
  if (n > 1) {
    const double var =
        std::max(0.0, (sum_sq - sum * out.mean) / static_cast<double>(n - 1));
    out.se = std::sqrt(var / static_cast<double>(n));
  }
  return out;
}

}  // namespace subcrit
