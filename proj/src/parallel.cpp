#include "srma/parallel.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <exception>
#include <memory>
#include <mutex>
#include <thread>
#include <vector>

namespace srma {
namespace {

thread_local bool tl_in_worker = false;

// Static-partition pool. Every parallel_for publishes a fresh heap-allocated
// job; workers claim chunk indices from the job's own atomic counter. A
// worker that wakes late only ever sees an exhausted old job, so jobs cannot
// interfere with each other. Chunk boundaries depend only on (begin, end,
// grain), so results are identical for every thread count.
class Pool {
 public:
  static Pool& instance() {
    static Pool p;
    return p;
  }

  int size() {
    std::lock_guard<std::mutex> lk(config_mu_);
    return nthreads_;
  }

  void resize(int n) {
    if (n < 1) n = 1;
    std::lock_guard<std::mutex> lk(config_mu_);
    stop_workers();
    nthreads_ = n;
    start_workers();
  }

  void run(int64_t begin, int64_t end, int64_t grain,
           const std::function<void(int64_t, int64_t)>& body) {
    if (end <= begin) return;
    if (grain < 1) grain = 1;
    const int64_t nchunks = (end - begin + grain - 1) / grain;
    if (tl_in_worker || nthreads_ == 1 || nchunks == 1) {
      for (int64_t c = 0; c < nchunks; ++c) {
        int64_t lo = begin + c * grain;
        body(lo, std::min(end, lo + grain));
      }
      return;
    }
    std::lock_guard<std::mutex> lk(config_mu_);
    auto job = std::make_shared<Job>();
    job->begin = begin;
    job->end = end;
    job->grain = grain;
    job->nchunks = nchunks;
    job->body = &body;
    {
      std::lock_guard<std::mutex> jk(mu_);
      job->serial = ++serial_;
      job_ = job;
    }
    cv_.notify_all();
    run_job(*job);  // caller participates
    {
      std::unique_lock<std::mutex> jk(mu_);
      cv_done_.wait(jk, [&] { return job->done.load() >= job->nchunks; });
      if (job_ == job) job_.reset();
    }
    if (job->error) std::rethrow_exception(job->error);
  }

 private:
  struct Job {
    int64_t begin = 0, end = 0, grain = 1, nchunks = 0;
    const std::function<void(int64_t, int64_t)>* body = nullptr;
    uint64_t serial = 0;
    std::atomic<int64_t> next{0};
    std::atomic<int64_t> done{0};
    std::exception_ptr error;
    std::mutex error_mu;
  };

  Pool() {
    nthreads_ = 2;
    if (const char* env = std::getenv("SRMA_THREADS")) {
      int v = std::atoi(env);
      if (v >= 1) nthreads_ = v;
    } else {
      unsigned hw = std::thread::hardware_concurrency();
      if (hw >= 1) nthreads_ = static_cast<int>(hw > 8 ? 8 : hw);
    }
    start_workers();
  }

  ~Pool() { stop_workers(); }

  void start_workers() {
    stop_ = false;
    for (int i = 1; i < nthreads_; ++i) {
      workers_.emplace_back([this] {
        tl_in_worker = true;
        uint64_t seen = 0;
        for (;;) {
          std::shared_ptr<Job> job;
          {
            std::unique_lock<std::mutex> lk(mu_);
            cv_.wait(lk, [&] { return stop_ || (job_ && job_->serial != seen); });
            if (stop_) return;
            job = job_;
            seen = job->serial;
          }
          run_job(*job);
        }
      });
    }
  }

  void stop_workers() {
    {
      std::lock_guard<std::mutex> lk(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    for (auto& t : workers_) t.join();
    workers_.clear();
    stop_ = false;
  }

  void run_job(Job& job) {
    for (;;) {
      const int64_t c = job.next.fetch_add(1);
      if (c >= job.nchunks) return;
      const int64_t lo = job.begin + c * job.grain;
      const int64_t hi = std::min(job.end, lo + job.grain);
      try {
        (*job.body)(lo, hi);
      } catch (...) {
        std::lock_guard<std::mutex> lk(job.error_mu);
        if (!job.error) job.error = std::current_exception();
      }
      if (job.done.fetch_add(1) + 1 >= job.nchunks) {
        std::lock_guard<std::mutex> lk(mu_);
        cv_done_.notify_all();
      }
    }
  }

  std::mutex config_mu_;  // serializes run()/resize()
  std::mutex mu_;
  std::condition_variable cv_, cv_done_;
  std::vector<std::thread> workers_;
  int nthreads_ = 1;
  bool stop_ = false;
  uint64_t serial_ = 0;
  std::shared_ptr<Job> job_;
};

}  // namespace

int num_threads() { return Pool::instance().size(); }

void set_num_threads(int n) { Pool::instance().resize(n); }

void parallel_for(int64_t begin, int64_t end, int64_t grain,
                  const std::function<void(int64_t, int64_t)>& body) {
  Pool::instance().run(begin, end, grain, body);
}

}  // namespace srma
