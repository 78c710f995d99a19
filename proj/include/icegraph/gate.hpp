#pragma once

#include <condition_variable>
#include <mutex>

namespace icegraph {

// Caps the number of HTTP requests in flight across all threads.
class InflightGate {
public:
    explicit InflightGate(int limit) : limit_(limit) {}

    void acquire() {
        std::unique_lock lock(mutex_);
        cv_.wait(lock, [&] { return active_ < limit_; });
        ++active_;
    }
    void release() {
        {
            std::lock_guard lock(mutex_);
            --active_;
        }
        cv_.notify_one();
    }

private:
    std::mutex mutex_;
    std::condition_variable cv_;
    int limit_;
    int active_ = 0;
};

// RAII wrapper around one acquired slot.
class InflightSlot {
public:
    explicit InflightSlot(InflightGate& gate) : gate_(gate) { gate_.acquire(); }
    ~InflightSlot() { gate_.release(); }
    InflightSlot(const InflightSlot&) = delete;
    InflightSlot& operator=(const InflightSlot&) = delete;

private:
    InflightGate& gate_;
};

}  // namespace icegraph
