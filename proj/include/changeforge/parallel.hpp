#pragma once

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace changeforge {

// Worker parallelism is capped by the CHANGEFORGE_THREADS environment
// variable (default: hardware concurrency). Work is always split into the
// same fixed chunks regardless of thread count, so results are bitwise
// identical whether a loop runs on one thread or many.

inline int default_thread_count() {
    if (const char* env = std::getenv("CHANGEFORGE_THREADS")) {
        int n = std::atoi(env);
        if (n >= 1) return n;
    }
    unsigned hw = std::thread::hardware_concurrency();
    return hw == 0 ? 1 : static_cast<int>(hw);
}

namespace detail {
inline int& thread_count_ref() {
    static int count = default_thread_count();
    return count;
}
} // namespace detail

inline int thread_count() { return detail::thread_count_ref(); }

/// Override the worker count (tests and benchmarks; the CLI relies on the env var).
inline void set_thread_count(int n) { detail::thread_count_ref() = n < 1 ? 1 : n; }

namespace detail {

// Persistent helper threads plus the calling thread execute chunks claimed
// from a shared counter. Each chunk's computation is self-contained, so the
// claim order never affects results.
class ThreadPool {
public:
    static ThreadPool& instance() {
        static ThreadPool pool;
        return pool;
    }

    void run(std::size_t n_chunks, int workers, const std::function<void(std::size_t)>& fn) {
        std::unique_lock<std::mutex> run_lock(run_mutex_);
        ensure_helpers(workers - 1);
        std::size_t helpers;
        {
            std::lock_guard<std::mutex> lk(mutex_);
            job_ = &fn;
            next_chunk_.store(0, std::memory_order_relaxed);
            total_chunks_ = n_chunks;
            allowed_helpers_ = static_cast<std::size_t>(workers - 1);
            helpers = threads_.size();
            acks_pending_ = helpers;
            ++generation_;
        }
        cv_.notify_all();
        claim_chunks(fn);
        if (helpers > 0) {
            std::unique_lock<std::mutex> lk(mutex_);
            done_cv_.wait(lk, [this] { return acks_pending_ == 0; });
        }
        job_ = nullptr;
    }

    /// Tasks executed by each helper thread since pool creation (for tests).
    std::vector<std::size_t> helper_task_counts() {
        std::lock_guard<std::mutex> lk(mutex_);
        return task_counts_;
    }

private:
    ThreadPool() = default;
    ~ThreadPool() {
        {
            std::lock_guard<std::mutex> lk(mutex_);
            stop_ = true;
        }
        cv_.notify_all();
        for (auto& t : threads_) t.join();
    }

    void ensure_helpers(int helpers) {
        std::lock_guard<std::mutex> lk(mutex_);
        while (static_cast<int>(threads_.size()) < helpers) {
            std::size_t index = threads_.size();
            task_counts_.push_back(0);
            threads_.emplace_back([this, index] { helper_loop(index); });
        }
    }

    // Every helper acknowledges every job generation; helpers beyond the
    // allowed count for a job acknowledge without claiming chunks.
    void helper_loop(std::size_t index) {
        std::uint64_t seen = 0;
        for (;;) {
            const std::function<void(std::size_t)>* job = nullptr;
            bool participate = false;
            {
                std::unique_lock<std::mutex> lk(mutex_);
                cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
                if (stop_) return;
                seen = generation_;
                participate = index < allowed_helpers_;
                job = job_;
            }
            std::size_t done = 0;
            if (participate && job) done = claim_chunks(*job);
            {
                std::lock_guard<std::mutex> lk(mutex_);
                task_counts_[index] += done;
                if (--acks_pending_ == 0) done_cv_.notify_all();
            }
        }
    }

    std::size_t claim_chunks(const std::function<void(std::size_t)>& fn) {
        std::size_t done = 0;
        for (;;) {
            std::size_t c = next_chunk_.fetch_add(1, std::memory_order_relaxed);
            if (c >= total_chunks_) break;
            fn(c);
            ++done;
        }
        return done;
    }

    std::mutex run_mutex_;
    std::mutex mutex_;
    std::condition_variable cv_, done_cv_;
    std::vector<std::thread> threads_;
    std::vector<std::size_t> task_counts_;
    const std::function<void(std::size_t)>* job_ = nullptr;
    std::atomic<std::size_t> next_chunk_{0};
    std::size_t total_chunks_ = 0;
    std::size_t acks_pending_ = 0;
    std::size_t allowed_helpers_ = 0;
    std::uint64_t generation_ = 0;
    bool stop_ = false;
};

} // namespace detail

/// Execute fn(chunk) for every chunk in [0, n_chunks). The chunking is chosen
/// by the caller and must not depend on the thread count.
inline void parallel_for_chunks(std::size_t n_chunks, const std::function<void(std::size_t)>& fn) {
    if (n_chunks == 0) return;
    int workers = thread_count();
    if (workers <= 1 || n_chunks == 1) {
        for (std::size_t c = 0; c < n_chunks; ++c) fn(c);
        return;
    }
    detail::ThreadPool::instance().run(n_chunks, workers, fn);
}

/// Helper task counters, exposed so tests can observe that work actually
/// lands on pool threads.
inline std::vector<std::size_t> pool_helper_task_counts() {
    return detail::ThreadPool::instance().helper_task_counts();
}

} // namespace changeforge
