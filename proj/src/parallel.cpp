#include "lrfr/parallel.hpp"

#include <cstdlib>
#include <exception>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "lrfr/common.hpp"

namespace lrfr {

int thread_budget() {
  const char* env = std::getenv("LRFR_THREADS");
  if (!env || !*env) return 1;
  int n = 0;
  try {
    size_t pos = 0;
    n = std::stoi(env, &pos);
    check(pos == std::string(env).size(), "trailing characters");
  } catch (const std::exception&) {
    fail("LRFR_THREADS must be a positive integer, got '", env, "'");
  }
  check(n >= 1, "LRFR_THREADS must be >= 1, got ", n);
  return n;
}

void parallel_for(int64_t n, const std::function<void(int64_t)>& fn) {
  const int budget = thread_budget();
  if (budget <= 1 || n <= 1) {
    for (int64_t i = 0; i < n; ++i) fn(i);
    return;
  }
  const int workers = int(std::min<int64_t>(budget, n));
  std::exception_ptr first_error;
  std::mutex error_mu;
  std::vector<std::thread> pool;
  pool.reserve(size_t(workers));
  for (int w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (int64_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace lrfr
