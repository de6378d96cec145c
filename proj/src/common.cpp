#include "dbn/common.hpp"

#include <atomic>
#include <cmath>
#include <condition_variable>
#include <cstdlib>
#include <cstring>
#include <mutex>
#include <sstream>
#include <thread>

namespace dbn {

// ---------------------------------------------------------------------------
// Rng (MT19937, explicit state)

void Rng::seed(std::uint64_t s) {
    mt_[0] = static_cast<std::uint32_t>(s ^ (s >> 32));
    for (std::uint32_t i = 1; i < 624; ++i) {
        mt_[i] = 1812433253u * (mt_[i - 1] ^ (mt_[i - 1] >> 30)) + i;
    }
    index_ = 624;
    have_spare_ = false;
    spare_ = 0.0;
}

void Rng::twist() {
    for (std::uint32_t i = 0; i < 624; ++i) {
        const std::uint32_t y = (mt_[i] & 0x80000000u) | (mt_[(i + 1) % 624] & 0x7fffffffu);
        mt_[i] = mt_[(i + 397) % 624] ^ (y >> 1);
        if (y & 1u) mt_[i] ^= 2567483615u;
    }
    index_ = 0;
}

std::uint32_t Rng::next_u32() {
    if (index_ >= 624) twist();
    std::uint32_t y = mt_[index_++];
    y ^= y >> 11;
    y ^= (y << 7) & 2636928640u;
    y ^= (y << 15) & 4022730752u;
    y ^= y >> 18;
    return y;
}

double Rng::uniform() {
    // 53-bit mantissa from two draws.
    const std::uint64_t a = next_u32() >> 5;   // 27 bits
    const std::uint64_t b = next_u32() >> 6;   // 26 bits
    return (static_cast<double>(a) * 67108864.0 + static_cast<double>(b)) * (1.0 / 9007199254740992.0);
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

std::uint32_t Rng::uniform_int(std::uint32_t n) {
    if (n == 0) raise("bad-argument", "uniform_int(0)");
    // Rejection sampling to avoid modulo bias.
    const std::uint32_t limit = 0xffffffffu - (0xffffffffu % n + 1u) % n;
    std::uint32_t x;
    do {
        x = next_u32();
    } while (x > limit);
    return x % n;
}

double Rng::normal() {
    if (have_spare_) {
        have_spare_ = false;
        return spare_;
    }
    double u, v, s;
    do {
        u = 2.0 * uniform() - 1.0;
        v = 2.0 * uniform() - 1.0;
        s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double m = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * m;
    have_spare_ = true;
    return u * m;
}

std::vector<std::uint8_t> Rng::save_state() const {
    std::vector<std::uint8_t> blob(624 * 4 + 4 + 1 + 8);
    std::uint8_t* p = blob.data();
    std::memcpy(p, mt_, 624 * 4);
    p += 624 * 4;
    const std::int32_t idx = index_;
    std::memcpy(p, &idx, 4);
    p += 4;
    *p++ = have_spare_ ? 1 : 0;
    std::memcpy(p, &spare_, 8);
    return blob;
}

void Rng::load_state(const std::vector<std::uint8_t>& blob) {
    if (blob.size() != 624 * 4 + 4 + 1 + 8) raise("bad-rng-state", "unexpected RNG blob size");
    const std::uint8_t* p = blob.data();
    std::memcpy(mt_, p, 624 * 4);
    p += 624 * 4;
    std::int32_t idx;
    std::memcpy(&idx, p, 4);
    p += 4;
    index_ = idx;
    have_spare_ = (*p++ != 0);
    std::memcpy(&spare_, p, 8);
}

// ---------------------------------------------------------------------------
// Thread pool

namespace {

int env_threads() {
    const char* s = std::getenv("DBN_THREADS");
    if (s != nullptr) {
        const long v = std::strtol(s, nullptr, 10);
        if (v > 0) return static_cast<int>(v);
    }
    const unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

std::atomic<int> g_thread_override{0};

class Pool {
public:
    static Pool& instance() {
        static Pool pool;
        return pool;
    }

    void run(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn, int want) {
        const std::int64_t n = end - begin;
        if (n <= 0) return;
        // Nested calls run inline; the pool is not reentrant.
        if (want <= 1 || n == 1 || in_worker_) {
            for (std::int64_t i = begin; i < end; ++i) fn(i);
            return;
        }
        std::lock_guard<std::mutex> driver(run_m_);  // one driver at a time
        ensure_workers(want - 1);
        std::unique_lock<std::mutex> lk(m_);
        fn_ = &fn;
        next_ = begin;
        end_ = end;
        pending_ = static_cast<int>(workers_.size()) + 1;
        generation_++;
        lk.unlock();
        cv_.notify_all();
        work();  // caller participates
        lk.lock();
        done_cv_.wait(lk, [&] { return pending_ == 0; });
        fn_ = nullptr;
    }

private:
    Pool() = default;

    void ensure_workers(int n) {
        while (static_cast<int>(workers_.size()) < n) {
            workers_.emplace_back([this] { worker_loop(); });
        }
    }

    void worker_loop() {
        in_worker_ = true;
        std::uint64_t seen = 0;
        for (;;) {
            std::unique_lock<std::mutex> lk(m_);
            cv_.wait(lk, [&] { return generation_ != seen; });
            seen = generation_;
            if (fn_ == nullptr) continue;
            lk.unlock();
            work();
        }
    }

    void work() {
        const std::function<void(std::int64_t)>* fn;
        {
            std::lock_guard<std::mutex> lk(m_);
            fn = fn_;
        }
        if (fn == nullptr) return;
        for (;;) {
            const std::int64_t i = next_.fetch_add(1);
            if (i >= end_) break;
            (*fn)(i);
        }
        std::lock_guard<std::mutex> lk(m_);
        if (--pending_ == 0) done_cv_.notify_all();
    }

    std::mutex m_;
    std::mutex run_m_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> workers_;
    const std::function<void(std::int64_t)>* fn_ = nullptr;
    std::atomic<std::int64_t> next_{0};
    std::int64_t end_ = 0;
    int pending_ = 0;
    std::uint64_t generation_ = 0;
    static thread_local bool in_worker_;
};

thread_local bool Pool::in_worker_ = false;

}  // namespace

int worker_threads() {
    const int o = g_thread_override.load();
    return o > 0 ? o : env_threads();
}

void set_worker_threads(int n) { g_thread_override.store(n); }

void parallel_for(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn) {
    Pool::instance().run(begin, end, fn, worker_threads());
}

std::string format_shape(const std::vector<int>& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

}  // namespace dbn
