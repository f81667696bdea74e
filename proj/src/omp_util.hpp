#pragma once

#include <exception>

namespace dynmole::detail {

// Exceptions must not escape an OpenMP region; the first one is kept and
// rethrown on the calling thread.
class ExceptionSlot {
 public:
  template <typename F>
  void run(F&& body) noexcept {
    try {
      body();
    } catch (...) {
#pragma omp critical(dynmole_exception_slot)
      if (!error_) error_ = std::current_exception();
    }
  }
  void rethrow() const {
    if (error_) std::rethrow_exception(error_);
  }

 private:
  std::exception_ptr error_;
};

}  // namespace dynmole::detail
