#pragma once

#include <chrono>
#include <condition_variable>
#include <deque>
#include <mutex>
#include <utility>

namespace siemmap {

/// Caps concurrent in-flight requests and requests started per rolling
/// minute. Zero disables the respective limit.
class RateLimiter {
 public:
  RateLimiter(unsigned max_in_flight, unsigned requests_per_minute)
      : max_in_flight_(max_in_flight), rpm_(requests_per_minute) {}

  class Permit {
   public:
    explicit Permit(RateLimiter* owner) : owner_(owner) {}
    Permit(Permit&& other) noexcept : owner_(std::exchange(other.owner_, nullptr)) {}
    Permit(const Permit&) = delete;
    Permit& operator=(const Permit&) = delete;
    Permit& operator=(Permit&&) = delete;
    ~Permit() {
      if (owner_) owner_->release();
    }

   private:
    RateLimiter* owner_;
  };

  /// Blocks until a slot is free, then holds it until the permit dies.
  [[nodiscard]] Permit acquire() {
    std::unique_lock lock(mu_);
    for (;;) {
      const auto now = std::chrono::steady_clock::now();
      while (!starts_.empty() && now - starts_.front() >= std::chrono::minutes{1}) {
        starts_.pop_front();
      }
      const bool slot = max_in_flight_ == 0 || in_flight_ < max_in_flight_;
      const bool rate = rpm_ == 0 || starts_.size() < rpm_;
      if (slot && rate) break;
      if (!rate) {
        cv_.wait_until(lock, starts_.front() + std::chrono::minutes{1});
      } else {
        cv_.wait(lock);
      }
    }
    ++in_flight_;
    if (rpm_ != 0) starts_.push_back(std::chrono::steady_clock::now());
    return Permit(this);
  }

  unsigned in_flight() const {
    std::lock_guard lock(mu_);
    return in_flight_;
  }

 private:
  void release() {
    {
      std::lock_guard lock(mu_);
      --in_flight_;
    }
    cv_.notify_all();
  }

  unsigned max_in_flight_;
  unsigned rpm_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  unsigned in_flight_ = 0;
  std::deque<std::chrono::steady_clock::time_point> starts_;
};

}  // namespace siemmap
