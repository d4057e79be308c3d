#include "bvmdesign/parallel.hpp"

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace bvmdesign {

namespace {

std::atomic<unsigned> g_threads{0};
thread_local bool t_inside_parallel = false;

}  // namespace

void set_thread_count(unsigned n) { g_threads.store(n); }

unsigned thread_count() {
    unsigned n = g_threads.load();
    if (n == 0) n = std::max(1u, std::thread::hardware_concurrency());
    return n;
}

void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body) {
    if (n == 0) return;
    const unsigned workers =
        static_cast<unsigned>(std::min<std::size_t>(thread_count(), n));
    if (workers <= 1 || t_inside_parallel) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }

    std::atomic<std::size_t> next{0};
    std::exception_ptr error;
    std::mutex error_mutex;
    std::atomic<bool> failed{false};

    auto work = [&] {
        t_inside_parallel = true;
        for (;;) {
            if (failed.load(std::memory_order_relaxed)) break;
            const std::size_t i = next.fetch_add(1);
            if (i >= n) break;
            try {
                body(i);
            } catch (...) {
                std::lock_guard lock(error_mutex);
                if (!error) error = std::current_exception();
                failed = true;
            }
        }
        t_inside_parallel = false;
    };

    std::vector<std::jthread> pool;
    pool.reserve(workers - 1);
    for (unsigned w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    pool.clear();
    if (error) std::rethrow_exception(error);
}

}  // namespace bvmdesign
