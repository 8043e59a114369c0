#include "difformer/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>

#include "difformer/error.hpp"
#include "difformer/memtrack.hpp"
#include "difformer/propagation.hpp"
#include "difformer/seed.hpp"

namespace difformer {

SlopeFit fit_loglog(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size() || x.size() < 2) throw ParameterError("fit_loglog: need at least two points");
    const auto n = static_cast<double>(x.size());
    double sx = 0, sy = 0, sxx = 0, sxy = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        if (!(x[i] > 0.0) || !(y[i] > 0.0)) throw ParameterError("fit_loglog: values must be positive");
        const double lx = std::log(x[i]), ly = std::log(y[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
        syy += ly * ly;
    }
    const double vx = sxx - sx * sx / n;
    const double vy = syy - sy * sy / n;
    const double cxy = sxy - sx * sy / n;
    if (!(vx > 0.0)) throw ParameterError("fit_loglog: x values must not all coincide");
    SlopeFit f;
    f.slope = cxy / vx;
    f.intercept = (sy - f.slope * sx) / n;
    f.r2 = vy > 0.0 ? cxy * cxy / (vx * vy) : 1.0;
    return f;
}

double median(std::vector<double> v) {
    if (v.empty()) throw ParameterError("median: empty sample");
    std::sort(v.begin(), v.end());
    const std::size_t m = v.size() / 2;
    return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

nlohmann::json BenchResult::fits_json() const {
    nlohmann::json j = nlohmann::json::object();
    for (const auto& [kind, f] : fits) {
        j[kernel_name(kind)] = {{"slope", f.slope}, {"intercept", f.intercept}, {"r2", f.r2}};
    }
    return j;
}

BenchResult run_bench(const BenchOptions& opts, const std::function<void(const BenchRow&)>& on_row) {
    if (opts.n.size() < 2) throw ParameterError("bench: need at least two problem sizes");
    if (opts.repetitions == 0) throw ParameterError("bench: repetitions must be positive");
    for (KernelKind k : opts.kernels) {
        if (k != KernelKind::simple_linear && k != KernelKind::advanced_sigmoid) {
            throw ParameterError("bench: only the simple and advanced kernels are timed");
        }
    }
    using clock = std::chrono::steady_clock;
    BenchResult res;
    for (KernelKind kind : opts.kernels) {
        std::vector<double> xs, ys;
        for (std::size_t n : opts.n) {
            Matrix q = Matrix::random_normal(n, opts.d, derive_seed(opts.seed, {n, 1}));
            Matrix k = Matrix::random_normal(n, opts.d, derive_seed(opts.seed, {n, 2}));
            const Matrix v = Matrix::random_normal(n, opts.d, derive_seed(opts.seed, {n, 3}));
            if (kind == KernelKind::simple_linear) {
                q = rowwise_l2_normalize(q);
                k = rowwise_l2_normalize(k);
            } else {
                // Keep logits O(1) so the sigmoid is not saturated.
                const double s = 1.0 / std::sqrt(static_cast<double>(opts.d));
                q = scale(q, s);
            }
            auto call = [&] {
                return kind == KernelKind::simple_linear ? propagate_simple_linear(q, k, v)
                                                          : propagate_advanced(q, k, v);
            };
            double estimate = 0.0;
            for (std::size_t w = 0; w < opts.warmup; ++w) {
                const auto t0 = clock::now();
                call();
                estimate = std::chrono::duration<double>(clock::now() - t0).count();
            }

            BenchRow row;
            row.n = n;
            row.kernel = kind;
            if (estimate > 0.0 && estimate < opts.min_sample_seconds) {
                row.calls_per_sample = static_cast<std::size_t>(std::ceil(opts.min_sample_seconds / estimate));
            }
            for (std::size_t r = 0; r < opts.repetitions; ++r) {
                const std::size_t base = memtrack::current_bytes();
                memtrack::reset_peak();
                const auto t0 = clock::now();
                for (std::size_t c = 0; c < row.calls_per_sample; ++c) call();
                const auto t1 = clock::now();
                row.samples.push_back(std::chrono::duration<double>(t1 - t0).count() /
                                      static_cast<double>(row.calls_per_sample));
                if (memtrack::installed()) row.bytes = std::max(row.bytes, memtrack::peak_bytes() - base);
            }
            row.seconds = median(row.samples);
            xs.push_back(static_cast<double>(n));
            ys.push_back(row.seconds);
            if (on_row) on_row(row);
            res.rows.push_back(std::move(row));
        }
        res.fits.emplace_back(kind, fit_loglog(xs, ys));
    }
    return res;
}

}  // namespace difformer
