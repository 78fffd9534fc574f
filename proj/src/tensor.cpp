#include "vtn/tensor.hpp"

#include <atomic>

namespace vtn {

namespace {
std::atomic<unsigned> g_threads{1};
thread_local MacCounter* t_counter = nullptr;
}  // namespace

void set_num_threads(unsigned threads) { g_threads.store(threads == 0 ? 1 : threads); }

unsigned num_threads() { return g_threads.load(); }

MacCounter::MacCounter() : previous_(t_counter) { t_counter = this; }

MacCounter::~MacCounter() { t_counter = previous_; }

void record_macs(std::uint64_t macs) {
  if (t_counter != nullptr) t_counter->count_ += macs;
}

const char* to_string(LoadErrorKind kind) {
  switch (kind) {
    case LoadErrorKind::kIo:
      return "io error";
    case LoadErrorKind::kBadMagic:
      return "bad magic";
    case LoadErrorKind::kBadVersion:
      return "unsupported version";
    case LoadErrorKind::kTruncated:
      return "truncated file";
    case LoadErrorKind::kCrcMismatch:
      return "crc mismatch";
    case LoadErrorKind::kIntegrity:
      return "integrity error";
  }
  return "load error";
}

}  // namespace vtn
