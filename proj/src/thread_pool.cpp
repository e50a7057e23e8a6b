#include "svae/thread_pool.hpp"

#include <cstdlib>
#include <string>

namespace svae {

ThreadPool::ThreadPool(int workers) : workers_(std::max(1, workers)) {
    for (int i = 1; i < workers_; ++i) threads_.emplace_back([this] { worker_loop(); });
}

ThreadPool::~ThreadPool() {
    {
        std::lock_guard<std::mutex> lk(mu_);
        stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
}

void ThreadPool::worker_loop() {
    long seen = 0;
    for (;;) {
        std::unique_lock<std::mutex> lk(mu_);
        cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        ++active_;
        while (next_ < n_) {
            const int i = next_++;
            lk.unlock();
            try {
                (*job_)(i);
            } catch (...) {
                lk.lock();
                if (!error_) error_ = std::current_exception();
                lk.unlock();
            }
            lk.lock();
        }
        if (--active_ == 0) done_cv_.notify_all();
    }
}

void ThreadPool::parallel_for(int n, const std::function<void(int)>& fn) {
    if (n <= 0) return;
    if (workers_ == 1 || n == 1) {
        for (int i = 0; i < n; ++i) fn(i);
        return;
    }
    std::unique_lock<std::mutex> lk(mu_);
    job_ = &fn;
    n_ = n;
    next_ = 0;
    error_ = nullptr;
    ++generation_;
    ++active_;  // the caller participates
    cv_.notify_all();
    while (next_ < n_) {
        const int i = next_++;
        lk.unlock();
        try {
            fn(i);
        } catch (...) {
            lk.lock();
            if (!error_) error_ = std::current_exception();
            lk.unlock();
        }
        lk.lock();
    }
    --active_;
    done_cv_.wait(lk, [&] { return active_ == 0; });
    job_ = nullptr;
    n_ = 0;
    if (error_) std::rethrow_exception(error_);
}

int threads_from_env(int fallback) {
    if (const char* s = std::getenv("SVAE_THREADS")) {
        try {
            const int v = std::stoi(s);
            if (v >= 1) return v;
        } catch (...) {
        }
    }
    return fallback;
}

}  // namespace svae
