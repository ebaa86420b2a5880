#include "clarkhedge/grid.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <numbers>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace clarkhedge {

TimeGrid::TimeGrid(double horizon, std::size_t steps)
    : horizon_(horizon), steps_(steps), dt_(0.0)
{
    if (!(horizon > 0.0) || !std::isfinite(horizon)) {
        throw std::invalid_argument("grid horizon must be positive and finite, got " +
                                    std::to_string(horizon));
    }
    if (steps == 0) {
        throw std::invalid_argument("grid needs at least one step");
    }
    dt_ = horizon_ / static_cast<double>(steps_);
}

double TimeGrid::time(std::size_t node) const
{
    if (node > steps_) {
        throw std::domain_error("node " + std::to_string(node) + " outside grid of " +
                                std::to_string(steps_) + " steps");
    }
    if (node == steps_) return horizon_;
    return static_cast<double>(node) * dt_;
}

std::size_t TimeGrid::node_at(double t) const
{
    if (!(t >= 0.0) || t > horizon_ * (1.0 + 1e-12)) {
        throw std::domain_error("time " + std::to_string(t) + " outside grid span");
    }
    const double x = t / dt_;
    const double r = std::round(x);
    if (std::abs(x - r) > 1e-9 * std::max(1.0, x)) {
        throw std::domain_error("time " + std::to_string(t) + " is not a grid node");
    }
    return std::min(static_cast<std::size_t>(r), steps_);
}

namespace rng {

std::uint64_t mix(std::uint64_t x)
{
    // splitmix64 finalizer
    x += 0x9E3779B97F4A7C15ULL;
    x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
    x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
    return x ^ (x >> 31);
}

std::uint64_t derive(std::uint64_t key, std::uint64_t a)
{
    return mix(key ^ mix(a + 0x632BE59BD9B4E019ULL));
}

std::uint64_t derive(std::uint64_t key, std::uint64_t a, std::uint64_t b)
{
    return derive(derive(key, a), b);
}

double uniform(std::uint64_t key, std::uint64_t counter)
{
    const std::uint64_t bits = derive(key, counter);
    // open interval (0, 1)
    return (static_cast<double>(bits >> 11) + 0.5) * 0x1.0p-53;
}

double normal(std::uint64_t key, std::uint64_t counter, std::uint64_t component)
{
    const std::uint64_t slot = derive(key, counter, component);
    const double u1 = uniform(slot, 0);
    const double u2 = uniform(slot, 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

} // namespace rng

std::size_t resolve_workers(std::size_t requested)
{
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : hw;
}

BlockPartition::BlockPartition(std::size_t count_)
    : count(count_), block_size(0), blocks(0)
{
    constexpr std::size_t max_blocks = 64;
    constexpr std::size_t min_block = 64;
    block_size = std::max(min_block, (count + max_blocks - 1) / max_blocks);
    // keep antithetic pairs inside one block
    if (block_size % 2 != 0) ++block_size;
    blocks = count == 0 ? 0 : (count + block_size - 1) / block_size;
}

std::size_t BlockPartition::begin(std::size_t block) const
{
    return std::min(count, block * block_size);
}

std::size_t BlockPartition::end(std::size_t block) const
{
    return std::min(count, (block + 1) * block_size);
}

void parallel_for(std::size_t count, std::size_t workers,
                  const std::function<void(std::size_t)>& fn)
{
    workers = std::min(resolve_workers(workers), count);
    if (workers <= 1) {
        for (std::size_t i = 0; i < count; ++i) fn(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr failure;
    std::mutex failure_mutex;
    std::vector<std::thread> pool;
    pool.reserve(workers);
    for (std::size_t w = 0; w < workers; ++w) {
        pool.emplace_back([&] {
            for (;;) {
                const std::size_t i = next.fetch_add(1);
                if (i >= count) return;
                try {
                    fn(i);
                } catch (...) {
                    std::lock_guard<std::mutex> lock(failure_mutex);
                    if (!failure) failure = std::current_exception();
                    next.store(count);
                    return;
                }
            }
        });
    }
    for (auto& t : pool) t.join();
    if (failure) std::rethrow_exception(failure);
}

} // namespace clarkhedge
