#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <string>
#include <vector>

#include "lcaunet/attention.hpp"
#include "lcaunet/lcaf.hpp"

namespace lcaunet {

struct BenchRow {
  std::int64_t grid = 0;  // square token grid, h = w
  std::int64_t tokens = 0, channels = 0, window = 0;
  std::uint64_t analytic_local = 0, analytic_global = 0;
  std::uint64_t measured_local = 0, measured_global = 0;
  double ms_local = 0, ms_global = 0;
};

namespace detail {

// q/k/v/out projections + windowed attention + the partition round trip —
// the same dataflow as one fusion stage, minus residuals and FFN (which the
// cost model excludes). Returns GEMM MACs tallied during the pass.
template <typename T>
std::uint64_t attention_pass(const ag::Var<T>& tokens, const ag::Var<T>& wq,
                             const ag::Var<T>& wk, const ag::Var<T>& wv,
                             const ag::Var<T>& wo,
                             const std::shared_ptr<std::vector<std::int64_t>>& part,
                             const std::shared_ptr<std::vector<std::int64_t>>& inv,
                             std::int64_t l, std::int64_t heads) {
  ag::MacCounter mc;
  ag::MacScope scope(&mc);
  const std::int64_t n = tokens.dim(0), c = tokens.dim(1);
  auto win = ag::gather_rows(tokens, part, Shape{n, c}, c);
  auto att = ag::attend_windows(ag::linear(win, wq), ag::linear(win, wk),
                                ag::linear(win, wv), l, heads);
  auto out = ag::gather_rows(ag::linear(att, wo), inv, Shape{n, c}, c);
  (void)out;
  return mc.macs;
}

// Repeat the workload until it runs long enough to time reliably, then take
// the best of `reps` averaged measurements.
inline double time_ms(const std::function<void()>& fn, int reps,
                      double min_ms = 25.0) {
  using clock = std::chrono::steady_clock;
  auto once = [&](int iters) {
    const auto t0 = clock::now();
    for (int i = 0; i < iters; ++i) fn();
    const auto t1 = clock::now();
    return std::chrono::duration<double, std::milli>(t1 - t0).count();
  };
  int iters = 1;
  double probe = once(1);
  while (probe < min_ms && iters < (1 << 14)) {
    iters *= 2;
    probe = once(iters);
  }
  double best = probe / iters;
  for (int r = 1; r < reps; ++r) best = std::min(best, once(iters) / iters);
  return best;
}

}  // namespace detail

// Local vs global attention over square token grids at fixed width/window:
// analytic cost, measured GEMM MACs (identical by construction), and measured
// wall-clock per pass.
inline std::vector<BenchRow> bench_attention(const std::vector<std::int64_t>& grids,
                                             std::int64_t c, std::int64_t window,
                                             int reps, std::int64_t heads = 4) {
  LCAUNET_CHECK_CONFIG(c % heads == 0, "bench: channels ", c,
                       " not divisible by heads ", heads);
  ag::NoGradGuard freeze;
  std::vector<BenchRow> rows;
  for (std::int64_t g : grids) {
    LCAUNET_CHECK_CONFIG(g % window == 0, "bench: grid ", g,
                         " not divisible by window ", window);
    BenchRow row;
    row.grid = g;
    row.tokens = g * g;
    row.channels = c;
    row.window = window;
    const auto uc = static_cast<std::uint64_t>(c);
    const auto ug = static_cast<std::uint64_t>(g);
    const auto uw = static_cast<std::uint64_t>(window);
    row.analytic_local = attention_cost(ug, ug, uc, uw, uw, AttnMode::local);
    row.analytic_global = attention_cost(ug, ug, uc, uw, uw, AttnMode::global);

    Rng rng(mix_seed(0xbe7c, static_cast<std::uint64_t>(g)));
    std::normal_distribution<float> nd(0.f, 0.5f);
    auto rand_var = [&](Shape shape) {
      Array<float> a(std::move(shape));
      for (auto& v : a.data) v = nd(rng);
      return ag::Var<float>::constant(std::move(a));
    };
    auto tokens = rand_var({g * g, c});
    auto wq = rand_var({c, c}), wk = rand_var({c, c}), wv = rand_var({c, c}),
         wo = rand_var({c, c});

    auto part_l = ag::window_partition_indices(1, g, g, window, window);
    auto inv_l = ag::invert_row_permutation(*part_l);
    auto part_g = ag::window_partition_indices(1, g, g, g, g);
    auto inv_g = ag::invert_row_permutation(*part_g);

    row.measured_local = detail::attention_pass(tokens, wq, wk, wv, wo, part_l,
                                                inv_l, window * window, heads);
    row.measured_global =
        detail::attention_pass(tokens, wq, wk, wv, wo, part_g, inv_g, g * g, heads);
    row.ms_local = detail::time_ms(
        [&] {
          detail::attention_pass(tokens, wq, wk, wv, wo, part_l, inv_l,
                                 window * window, heads);
        },
        reps);
    row.ms_global = detail::time_ms(
        [&] {
          detail::attention_pass(tokens, wq, wk, wv, wo, part_g, inv_g, g * g,
                                 heads);
        },
        reps);
    rows.push_back(row);
  }
  return rows;
}

// Least-squares slope of ln(y) against ln(x): the empirical growth exponent.
inline double fit_loglog_slope(const std::vector<double>& x,
                               const std::vector<double>& y) {
  LCAUNET_CHECK_CONFIG(x.size() == y.size() && x.size() >= 2,
                       "slope fit needs >= 2 matched points");
  const auto n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    LCAUNET_CHECK_DOMAIN(x[i] > 0 && y[i] > 0, "slope fit needs positive data");
    const double lx = std::log(x[i]), ly = std::log(y[i]);
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

inline void write_bench_csv(const std::string& path,
                            const std::vector<BenchRow>& rows) {
  std::ofstream f(path);
  LCAUNET_CHECK_CONFIG(f.good(), "cannot open ", path, " for writing");
  f << "grid,tokens,channels,window,analytic_local,analytic_global,"
       "measured_local,measured_global,ms_local,ms_global\n";
  f.precision(6);
  for (const auto& r : rows)
    f << r.grid << ',' << r.tokens << ',' << r.channels << ',' << r.window << ','
      << r.analytic_local << ',' << r.analytic_global << ',' << r.measured_local
      << ',' << r.measured_global << ',' << std::fixed << r.ms_local << ','
      << r.ms_global << '\n';
}

}  // namespace lcaunet
