#pragma once

#include <condition_variable>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

namespace svae {

// Fixed set of workers running index-range jobs. parallel_for blocks until done;
// with one worker everything runs on the calling thread.
class ThreadPool {
public:
    explicit ThreadPool(int workers = 1);
    ~ThreadPool();
    ThreadPool(const ThreadPool&) = delete;
    ThreadPool& operator=(const ThreadPool&) = delete;

    int workers() const { return workers_; }
    // fn(i) for i in [0, n). Exceptions are rethrown on the caller (first one wins).
    void parallel_for(int n, const std::function<void(int)>& fn);

private:
    void worker_loop();

    int workers_;
    std::vector<std::thread> threads_;
    std::mutex mu_;
    std::condition_variable cv_, done_cv_;
    const std::function<void(int)>* job_ = nullptr;
    int n_ = 0, next_ = 0, active_ = 0;
    long generation_ = 0;
    bool stop_ = false;
    std::exception_ptr error_;
};

// Worker count from SVAE_THREADS when set, otherwise the fallback.
int threads_from_env(int fallback);

}  // namespace svae
