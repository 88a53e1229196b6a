#pragma once

#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <queue>
#include <random>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace pfdet {

// FNV-1a 64-bit. Used for config hashing and for deriving per-name RNG streams.
inline uint64_t fnv1a64(const void* data, size_t n, uint64_t h = 0xcbf29ce484222325ull) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (size_t i = 0; i < n; ++i) {
        h ^= p[i];
        h *= 0x100000001b3ull;
    }
    return h;
}

inline uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

// splitmix64: decorrelates seeds derived from related inputs.
inline uint64_t splitmix64(uint64_t x) {
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

// RNG stream keyed by (seed, name). Same seed + same name -> same stream,
// independent of whatever else was drawn before.
inline std::mt19937_64 rng_for(uint64_t seed, const std::string& name) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(fnv1a64(name))));
}

inline std::mt19937_64 rng_for(uint64_t seed, uint64_t index) {
    return std::mt19937_64(splitmix64(seed ^ splitmix64(index + 0x51ed2701ull)));
}

inline std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

struct DimensionError : std::runtime_error {
    explicit DimensionError(const std::string& what) : std::runtime_error(what) {}
};

// Fixed-size worker pool. Jobs must be independent; used for ablation rows and
// validation-set inference on frozen models.
class ThreadPool {
public:
    explicit ThreadPool(unsigned n = std::thread::hardware_concurrency()) {
        if (n == 0) n = 1;
        for (unsigned i = 0; i < n; ++i) {
            workers_.emplace_back([this] { work(); });
        }
    }

    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mu_);
            done_ = true;
        }
        cv_.notify_all();
        for (auto& t : workers_) t.join();
    }

    void submit(std::function<void()> job) {
        {
            std::lock_guard<std::mutex> lk(mu_);
            jobs_.push(std::move(job));
            ++pending_;
        }
        cv_.notify_one();
    }

    // Blocks until every submitted job has finished.
    void wait() {
        std::unique_lock<std::mutex> lk(mu_);
        idle_cv_.wait(lk, [this] { return pending_ == 0; });
    }

    unsigned size() const { return static_cast<unsigned>(workers_.size()); }

private:
    void work() {
        for (;;) {
            std::function<void()> job;
            {
                std::unique_lock<std::mutex> lk(mu_);
                cv_.wait(lk, [this] { return done_ || !jobs_.empty(); });
                if (done_ && jobs_.empty()) return;
                job = std::move(jobs_.front());
                jobs_.pop();
            }
            job();
            {
                std::lock_guard<std::mutex> lk(mu_);
                if (--pending_ == 0) idle_cv_.notify_all();
            }
        }
    }

    std::vector<std::thread> workers_;
    std::queue<std::function<void()>> jobs_;
    std::mutex mu_;
    std::condition_variable cv_;
    std::condition_variable idle_cv_;
    size_t pending_ = 0;
    bool done_ = false;
};

}  // namespace pfdet
