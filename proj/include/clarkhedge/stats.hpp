#pragma once

#include <cmath>
#include <cstddef>

namespace clarkhedge {

/// Sum and sum of squares; merged in a fixed order for reproducible reductions.
struct SampleStats {
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t count = 0;

    void add(double x)
    {
        sum += x;
        sum_sq += x * x;
        ++count;
    }

    void merge(const SampleStats& other)
    {
        sum += other.sum;
        sum_sq += other.sum_sq;
        count += other.count;
    }

    double mean() const { return count == 0 ? 0.0 : sum / static_cast<double>(count); }

    double variance() const
    {
        if (count < 2) return 0.0;
        const double n = static_cast<double>(count);
        const double m = sum / n;
        const double v = (sum_sq - n * m * m) / (n - 1.0);
        return v > 0.0 ? v : 0.0;
    }

    double stddev() const { return std::sqrt(variance()); }
    double standard_error() const
    {
        return count == 0 ? 0.0 : std::sqrt(variance() / static_cast<double>(count));
    }
};

} // namespace clarkhedge
