#include "tffa/parallel.hpp"

#include <atomic>
#include <algorithm>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace tffa {

namespace {
std::atomic<int> g_budget{1};
thread_local bool t_inside_worker = false;
}  // namespace

void set_thread_budget(int n) { g_budget.store(std::max(1, n)); }

int thread_budget() { return g_budget.load(); }

void parallel_for_blocks(std::int64_t n_blocks,
                         const std::function<void(std::int64_t)>& fn) {
    if (n_blocks <= 0) return;
    const int budget = g_budget.load();
    if (budget <= 1 || n_blocks == 1 || t_inside_worker) {
        for (std::int64_t b = 0; b < n_blocks; ++b) fn(b);
        return;
    }

    std::atomic<std::int64_t> next{0};
    std::exception_ptr first_error;
    std::mutex error_mutex;

    auto worker = [&]() {
        t_inside_worker = true;
        for (;;) {
            const std::int64_t b = next.fetch_add(1);
            if (b >= n_blocks) break;
            try {
                fn(b);
            } catch (...) {
                std::lock_guard<std::mutex> lock(error_mutex);
                if (!first_error) first_error = std::current_exception();
            }
        }
        t_inside_worker = false;
    };

    const int helpers =
        static_cast<int>(std::min<std::int64_t>(budget - 1, n_blocks - 1));
    std::vector<std::thread> threads;
    threads.reserve(helpers);
    for (int i = 0; i < helpers; ++i) threads.emplace_back(worker);
    worker();
    for (auto& t : threads) t.join();

    if (first_error) std::rethrow_exception(first_error);
}

}  // namespace tffa
