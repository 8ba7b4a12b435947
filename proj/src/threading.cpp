#include "hvx/threading.hpp"

#include <atomic>
#include <cstdlib>
#include <thread>

namespace hvx {

int thread_cap() {
    const char* env = std::getenv("HVX_THREADS");
    int cap = 0;
    if (env && *env) cap = std::atoi(env);
    if (cap <= 0) cap = static_cast<int>(std::thread::hardware_concurrency());
    if (cap <= 0) cap = 1;
    return cap;
}

void parallel_blocks(std::size_t n, std::size_t block_size,
                     const std::function<void(std::size_t, std::size_t, std::size_t)>& fn) {
    if (n == 0) return;
    if (block_size == 0) block_size = 1;
    const std::size_t nblocks = (n + block_size - 1) / block_size;
    const std::size_t nthreads =
        std::min<std::size_t>(static_cast<std::size_t>(thread_cap()), nblocks);

    if (nthreads <= 1) {
        for (std::size_t b = 0; b < nblocks; ++b) {
            const std::size_t lo = b * block_size;
            fn(b, lo, std::min(lo + block_size, n));
        }
        return;
    }

    std::atomic<std::size_t> next{0};
    auto worker = [&] {
        for (;;) {
            const std::size_t b = next.fetch_add(1);
            if (b >= nblocks) break;
            const std::size_t lo = b * block_size;
            fn(b, lo, std::min(lo + block_size, n));
        }
    };
    std::vector<std::thread> pool;
    pool.reserve(nthreads);
    for (std::size_t i = 0; i < nthreads; ++i) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
}

double block_sum(std::size_t n, std::size_t block_size,
                 const std::function<double(std::size_t, std::size_t)>& partial) {
    if (n == 0) return 0.0;
    if (block_size == 0) block_size = 1;
    const std::size_t nblocks = (n + block_size - 1) / block_size;
    std::vector<double> slots(nblocks, 0.0);
    parallel_blocks(n, block_size, [&](std::size_t b, std::size_t lo, std::size_t hi) {
        slots[b] = partial(lo, hi);
    });
    double total = 0.0;
    for (double s : slots) total += s;
    return total;
}

}  // namespace hvx
