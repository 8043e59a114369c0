#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "difformer/diffusivity.hpp"
#include "json.hpp"

namespace difformer {

struct BenchOptions {
    std::vector<std::size_t> n{1000, 2000, 4000, 8000, 16000, 32000};
    std::size_t d = 64;
    std::vector<KernelKind> kernels{KernelKind::simple_linear, KernelKind::advanced_sigmoid};
    std::size_t warmup = 3;
    std::size_t repetitions = 5;
    std::uint64_t seed = 0;
    /// Fast calls are batched so that one sample lasts at least this long.
    double min_sample_seconds = 0.02;
};

struct BenchRow {
    std::size_t n = 0;
    KernelKind kernel = KernelKind::simple_linear;
    double seconds = 0.0;          // median of the measured repetitions, per call
    std::vector<double> samples;   // per-call seconds of each repetition
    std::size_t calls_per_sample = 1;
    std::size_t bytes = 0;         // peak heap growth during one call; 0 without accounting
};

/// Least-squares fit of log(y) = slope * log(x) + intercept.
struct SlopeFit {
    double slope = 0.0;
    double intercept = 0.0;
    double r2 = 0.0;
};
SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y);

double median(std::vector<double> v);

struct BenchResult {
    std::vector<BenchRow> rows;
    std::vector<std::pair<KernelKind, SlopeFit>> fits;
    nlohmann::json fits_json() const;
};

/// Times one propagation call per kernel and N (inputs prepared outside the
/// timed region; simple gets row-normalized Q and K).
BenchResult run_bench(const BenchOptions& opts,
                      const std::function<void(const BenchRow&)>& on_row = nullptr);

}  // namespace difformer
