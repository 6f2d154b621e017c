#pragma once

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace sstbench {

// Error taxonomy. Everything user-facing derives from Error so the CLI can
// map categories to exit codes.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

// Invalid shapes, bad layer parameters, config mistakes.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class ShapeError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Unreadable / malformed files (IDX, checkpoints, configs).
class FormatError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

// Optimizer blew up (NaN loss) or an iterative solver hit its cap.
class DivergenceError : public Error {
 public:
  using Error::Error;
};

class ConvergenceError : public Error {
 public:
  ConvergenceError(const std::string& what, double residual)
      : Error(what), residual_(residual) {}
  double residual() const { return residual_; }

 private:
  double residual_ = 0.0;
};

// Wire-protocol failures, always typed, never silent.
class ProtocolError : public Error {
 public:
  ProtocolError(const std::string& code, const std::string& what)
      : Error(code + ": " + what), code_(code) {}
  const std::string& code() const { return code_; }

 private:
  std::string code_;
};

// Persistent worker pool behind parallel_for. One parallel region runs at a
// time; each participant owns a fixed chunk index per job, and workers copy
// the job description under the mutex, so no cross-epoch races are possible.
// Nested parallel regions execute inline on the calling thread.
class ThreadPool {
 public:
  static ThreadPool& instance() {
    static ThreadPool pool;
    return pool;
  }

  // Number of participants: caller thread + workers.
  int width() const { return static_cast<int>(threads_.size()) + 1; }

  void run(int nchunks, const std::function<void(int)>& fn) {
    if (nchunks <= 0) return;
    if (in_region_ || threads_.empty() || nchunks == 1) {
      bool prev = in_region_;
      in_region_ = true;
      for (int c = 0; c < nchunks; ++c) fn(c);
      in_region_ = prev;
      return;
    }
    std::unique_lock<std::mutex> region(region_mutex_);
    int shared = std::min(nchunks, width());  // chunks handed to pool participants
    {
      std::lock_guard<std::mutex> lk(mutex_);
      fn_ = &fn;
      nchunks_ = shared;
      remaining_ = shared;
      ++generation_;
    }
    wake_cv_.notify_all();
    in_region_ = true;
    try {
      fn(0);  // caller is participant 0
      for (int c = shared; c < nchunks; ++c) fn(c);
      in_region_ = false;
    } catch (...) {
      in_region_ = false;
      std::unique_lock<std::mutex> lk(mutex_);
      --remaining_;
      done_cv_.wait(lk, [&] { return remaining_ == 0; });
      fn_ = nullptr;
      throw;
    }
    {
      std::unique_lock<std::mutex> lk(mutex_);
      --remaining_;
      if (remaining_ == 0)
        done_cv_.notify_all();
      else
        done_cv_.wait(lk, [&] { return remaining_ == 0; });
      fn_ = nullptr;
    }
  }

  ~ThreadPool() {
    {
      std::lock_guard<std::mutex> lk(mutex_);
      stop_ = true;
    }
    wake_cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

 private:
  ThreadPool() {
    unsigned hw = std::thread::hardware_concurrency();
    int extra = hw > 1 ? static_cast<int>(hw) - 1 : 0;
    threads_.reserve(static_cast<size_t>(extra));
    for (int i = 0; i < extra; ++i) threads_.emplace_back([this, i] { worker(i + 1); });
  }

  void worker(int id) {
    uint64_t seen = 0;
    for (;;) {
      const std::function<void(int)>* fn = nullptr;
      int nchunks = 0;
      {
        std::unique_lock<std::mutex> lk(mutex_);
        wake_cv_.wait(lk, [&] { return stop_ || generation_ != seen; });
        if (stop_) return;
        seen = generation_;
        fn = fn_;
        nchunks = nchunks_;
      }
      if (id < nchunks) {
        in_region_ = true;
        (*fn)(id);
        in_region_ = false;
      }
      {
        std::lock_guard<std::mutex> lk(mutex_);
        if (id < nchunks) --remaining_;
        if (remaining_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::vector<std::thread> threads_;
  std::mutex region_mutex_;
  std::mutex mutex_;
  std::condition_variable wake_cv_;
  std::condition_variable done_cv_;
  const std::function<void(int)>* fn_ = nullptr;
  int nchunks_ = 0;
  int remaining_ = 0;
  uint64_t generation_ = 0;
  bool stop_ = false;
  static thread_local bool in_region_;
};

inline thread_local bool ThreadPool::in_region_ = false;

// Static-partition parallel loop over [0, n). Chunks are contiguous and each
// element's computation order is independent of the thread count, keeping
// results bit-reproducible.
template <typename Fn>
void parallel_for(int64_t n, Fn&& fn, int64_t grain = 1024) {
  if (n <= 0) return;
  auto& pool = ThreadPool::instance();
  int64_t want = (n + grain - 1) / grain;
  int nthreads = static_cast<int>(std::min<int64_t>(pool.width(), want));
  if (nthreads <= 1) {
    fn(0, n);
    return;
  }
  int64_t chunk = (n + nthreads - 1) / nthreads;
  std::function<void(int)> job = [&](int c) {
    int64_t lo = c * chunk;
    int64_t hi = std::min(n, lo + chunk);
    if (lo < hi) fn(lo, hi);
  };
  pool.run(nthreads, job);
}

// FNV-1a, used for config hashes and seed derivation from stream names.
inline uint64_t fnv1a64(const void* data, size_t len, uint64_t seed = 0xcbf29ce484222325ull) {
  const unsigned char* p = static_cast<const unsigned char*>(data);
  uint64_t h = seed;
  for (size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001b3ull;
  }
  return h;
}

inline uint64_t fnv1a64(const std::string& s, uint64_t seed = 0xcbf29ce484222325ull) {
  return fnv1a64(s.data(), s.size(), seed);
}

}  // namespace sstbench
