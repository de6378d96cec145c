#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <string>
#include <vector>

namespace dbn {

/// Error type used across the library. `kind()` gives a stable category
/// string (e.g. "shape-mismatch", "bad-magic") that tests can match on.
class Error : public std::runtime_error {
public:
    Error(std::string kind, const std::string& message)
        : std::runtime_error(kind + ": " + message), kind_(std::move(kind)) {}

    const std::string& kind() const { return kind_; }

private:
    std::string kind_;
};

[[noreturn]] inline void raise(const std::string& kind, const std::string& message) {
    throw Error(kind, message);
}

/// Deterministic RNG. Wraps mt19937 but maps to floats/normals with explicit
/// arithmetic so sequences are identical across standard libraries.
class Rng {
public:
    explicit Rng(std::uint64_t seed = 0) { this->seed(seed); }

    void seed(std::uint64_t s);

    std::uint32_t next_u32();

    /// Uniform in [0, 1).
    double uniform();
    /// Uniform in [lo, hi).
    double uniform(double lo, double hi);
    /// Uniform integer in [0, n).
    std::uint32_t uniform_int(std::uint32_t n);
    /// Standard normal via Box-Muller.
    double normal();

    /// Serialize the full generator state (round-trips exactly).
    std::vector<std::uint8_t> save_state() const;
    void load_state(const std::vector<std::uint8_t>& blob);

private:
    // mt19937 state kept explicit so serialization is trivial and portable.
    std::uint32_t mt_[624];
    int index_ = 624;
    bool have_spare_ = false;
    double spare_ = 0.0;

    void twist();
};

/// Worker-thread budget: DBN_THREADS env var, 0 or unset = hardware default.
int worker_threads();
/// Override the budget (0 = reset to env/hardware default).
void set_worker_threads(int n);

/// Runs fn(i) for i in [begin, end). Work is split across the worker pool;
/// results must not depend on the assignment of indices to threads.
void parallel_for(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn);

std::string format_shape(const std::vector<int>& shape);

}  // namespace dbn
