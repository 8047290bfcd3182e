#include "rtsmono/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

namespace rtsmono {
namespace {

int default_threads() {
  if (const char* env = std::getenv("RTS_THREADS")) {
    try {
      const int n = std::stoi(env);
      if (n >= 1) return n;
    } catch (const std::exception&) {
    }
  }
  return std::max(1u, std::thread::hardware_concurrency());
}

// Fixed-size pool; a job splits the index range into one contiguous chunk per worker.
class Pool {
 public:
  explicit Pool(int workers) {
    for (int w = 1; w < workers; ++w) {
      threads_.emplace_back([this, w] { loop(w); });
    }
    size_ = workers;
  }
  ~Pool() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  int size() const { return size_; }

  void run(std::int64_t begin, std::int64_t end, const std::function<void(std::int64_t)>& fn) {
    {
      std::lock_guard lock(mu_);
      begin_ = begin;
      end_ = end;
      fn_ = &fn;
      pending_ = size_ - 1;
      error_ = nullptr;
      ++generation_;
    }
    cv_.notify_all();
    chunk(0);
    std::unique_lock lock(mu_);
    done_cv_.wait(lock, [this] { return pending_ == 0; });
    fn_ = nullptr;
    if (error_) std::rethrow_exception(error_);
  }

 private:
  void chunk(int w) {
    const std::int64_t n = end_ - begin_;
    const std::int64_t lo = begin_ + n * w / size_;
    const std::int64_t hi = begin_ + n * (w + 1) / size_;
    try {
      for (std::int64_t i = lo; i < hi; ++i) (*fn_)(i);
    } catch (...) {
      std::lock_guard lock(mu_);
      if (!error_) error_ = std::current_exception();
    }
  }

  void loop(int w) {
    std::uint64_t seen = 0;
    for (;;) {
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
      }
      chunk(w);
      {
        std::lock_guard lock(mu_);
        --pending_;
      }
      done_cv_.notify_one();
    }
  }

  std::vector<std::thread> threads_;
  int size_ = 1;
  std::mutex mu_;
  std::condition_variable cv_;
  std::condition_variable done_cv_;
  bool stop_ = false;
  std::uint64_t generation_ = 0;
  int pending_ = 0;
  std::int64_t begin_ = 0;
  std::int64_t end_ = 0;
  const std::function<void(std::int64_t)>* fn_ = nullptr;
  std::exception_ptr error_;
};

std::mutex g_pool_mu;
std::unique_ptr<Pool> g_pool;
std::atomic<int> g_threads{0};
thread_local bool t_inside = false;

}  // namespace

int thread_count() {
  int n = g_threads.load();
  if (n == 0) {
    n = default_threads();
    g_threads.store(n);
  }
  return n;
}

void set_thread_count(int n) {
  std::lock_guard lock(g_pool_mu);
  g_threads.store(std::max(1, n));
  g_pool.reset();
}

void parallel_for(std::int64_t begin, std::int64_t end,
                  const std::function<void(std::int64_t)>& fn) {
  if (end <= begin) return;
  const int workers = thread_count();
  if (workers == 1 || end - begin == 1 || t_inside) {
    for (std::int64_t i = begin; i < end; ++i) fn(i);
    return;
  }
  std::lock_guard lock(g_pool_mu);
  if (!g_pool || g_pool->size() != workers) g_pool = std::make_unique<Pool>(workers);
  t_inside = true;
  try {
    g_pool->run(begin, end, [&](std::int64_t i) {
      t_inside = true;
      fn(i);
    });
  } catch (...) {
    t_inside = false;
    throw;
  }
  t_inside = false;
}

}  // namespace rtsmono
