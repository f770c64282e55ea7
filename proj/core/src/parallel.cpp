#include "seqdet/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <condition_variable>
#include <mutex>
#include <thread>
#include <vector>

namespace seqdet {

namespace {

std::atomic<int> g_num_threads{0};
thread_local bool t_in_worker = false;

// Persistent workers; one generation per parallel_for call. Chunks are fixed
// by (n, worker count) alone, so the index->worker mapping never depends on
// scheduling.
class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  void run(std::int64_t n, int workers,
           const std::function<void(std::int64_t, std::int64_t)>& fn) {
    ensure(workers - 1);
    const std::int64_t chunk = (n + workers - 1) / workers;
    {
      std::unique_lock<std::mutex> lock(m_);
      job_ = &fn;
      job_n_ = n;
      job_chunk_ = chunk;
      pending_ = workers - 1;
      ++generation_;
    }
    cv_.notify_all();
    fn(0, std::min(chunk, n));
    std::unique_lock<std::mutex> lock(m_);
    done_cv_.wait(lock, [&] { return pending_ == 0; });
    job_ = nullptr;
  }

 private:
  Pool() = default;
  ~Pool() {
    {
      std::unique_lock<std::mutex> lock(m_);
      stop_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void ensure(int count) {
    std::unique_lock<std::mutex> lock(m_);
    while (static_cast<int>(threads_.size()) < count) {
      const int id = static_cast<int>(threads_.size()) + 1;  // chunk index
      threads_.emplace_back([this, id] { worker(id); });
    }
  }

  void worker(int id) {
    t_in_worker = true;
    std::uint64_t seen = 0;
    for (;;) {
      const std::function<void(std::int64_t, std::int64_t)>* job = nullptr;
      std::int64_t n = 0, chunk = 0;
      {
        std::unique_lock<std::mutex> lock(m_);
        cv_.wait(lock, [&] { return generation_ != seen; });
        seen = generation_;
        if (stop_) return;
        job = job_;
        n = job_n_;
        chunk = job_chunk_;
      }
      if (job) {
        const std::int64_t b = std::min<std::int64_t>(static_cast<std::int64_t>(id) * chunk, n);
        const std::int64_t e = std::min<std::int64_t>(b + chunk, n);
        if (b < e) (*job)(b, e);
      }
      {
        std::unique_lock<std::mutex> lock(m_);
        if (--pending_ == 0) done_cv_.notify_all();
      }
    }
  }

  std::mutex m_;
  std::condition_variable cv_, done_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(std::int64_t, std::int64_t)>* job_ = nullptr;
  std::int64_t job_n_ = 0, job_chunk_ = 0;
  int pending_ = 0;
  std::uint64_t generation_ = 0;
  bool stop_ = false;
};

}  // namespace

void set_num_threads(int n) { g_num_threads.store(n < 0 ? 0 : n); }

int num_threads() {
  int n = g_num_threads.load();
  if (n == 0) {
    n = static_cast<int>(std::thread::hardware_concurrency());
    if (n <= 0) n = 1;
  }
  return n;
}

void parallel_for(std::int64_t n, const std::function<void(std::int64_t, std::int64_t)>& fn) {
  if (n <= 0) return;
  const int workers = static_cast<int>(std::min<std::int64_t>(num_threads(), n));
  // nested parallel regions run inline on the calling worker
  if (workers <= 1 || t_in_worker) {
    fn(0, n);
    return;
  }
  Pool::instance().run(n, workers, fn);
}

bool in_parallel_worker() { return t_in_worker; }

}  // namespace seqdet
