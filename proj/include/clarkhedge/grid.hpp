#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>

namespace clarkhedge {

/// Uniform time grid t_i = i*T/N on [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps);

    double horizon() const { return horizon_; }
    std::size_t steps() const { return steps_; }
    std::size_t nodes() const { return steps_ + 1; }
    double dt() const { return dt_; }
    double time(std::size_t node) const;

    /// Index of the node at time t; throws std::domain_error when t is not a grid node.
    std::size_t node_at(double t) const;

    bool operator==(const TimeGrid& other) const
    {
        return horizon_ == other.horizon_ && steps_ == other.steps_;
    }

private:
    double horizon_;
    std::size_t steps_;
    double dt_;
};

/**
 * Counter-based normal variates. A variate is a pure function of
 * (key, counter, component), so any path or branch can be regenerated
 * independently of scheduling.
 */
namespace rng {

std::uint64_t mix(std::uint64_t x);
std::uint64_t derive(std::uint64_t key, std::uint64_t a);
std::uint64_t derive(std::uint64_t key, std::uint64_t a, std::uint64_t b);
double uniform(std::uint64_t key, std::uint64_t counter);
double normal(std::uint64_t key, std::uint64_t counter, std::uint64_t component);

} // namespace rng

/// Number of worker threads to use; 0 resolves to hardware concurrency.
std::size_t resolve_workers(std::size_t requested);

/**
 * Fixed partition of [0, count) into contiguous blocks. The partition depends
 * only on count, never on the worker count, so block-wise reductions merged
 * in block order are reproducible bit for bit.
 */
struct BlockPartition {
    explicit BlockPartition(std::size_t count);

    std::size_t count;
    std::size_t block_size;
    std::size_t blocks;

    std::size_t begin(std::size_t block) const;
    std::size_t end(std::size_t block) const;
};

/// Runs fn(i) for i in [0, count) on up to `workers` threads.
void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn);

} // namespace clarkhedge
