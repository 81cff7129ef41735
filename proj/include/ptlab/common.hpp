#pragma once

#include <cstdint>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <vector>

namespace ptlab {

// Base of every error this library throws. Subtypes exist so callers can
// react to specific failure classes (file corruption vs. shape bugs vs.
// contract violations) without string matching.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

class ShapeError : public Error {
 public:
  explicit ShapeError(const std::string& msg) : Error(msg) {}
};

class NonFiniteError : public Error {
 public:
  explicit NonFiniteError(const std::string& msg) : Error(msg) {}
};

class VocabError : public Error {
 public:
  explicit VocabError(const std::string& msg) : Error(msg) {}
};

class ConfigError : public Error {
 public:
  explicit ConfigError(const std::string& msg) : Error(msg) {}
};

// Misuse of a stateful object: tuning an unfrozen model, registering a
// frozen parameter with an optimizer, duplicate warehouse keys, ...
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg) : Error(msg) {}
};

// Degenerate numeric input where the requested statistic is undefined
// (all-zero activation state, constant rank vector, zero-norm cosine).
class DegenerateInputError : public Error {
 public:
  explicit DegenerateInputError(const std::string& msg) : Error(msg) {}
};

class IoError : public Error {
 public:
  explicit IoError(const std::string& msg) : Error(msg) {}
};

// File carries foreign magic bytes: not one of ours.
class FormatError : public IoError {
 public:
  explicit FormatError(const std::string& msg) : IoError(msg) {}
};

// Recognized file, unsupported format version.
class VersionError : public IoError {
 public:
  explicit VersionError(const std::string& msg) : IoError(msg) {}
};

// Truncation or digest mismatch.
class CorruptionError : public IoError {
 public:
  explicit CorruptionError(const std::string& msg) : IoError(msg) {}
};

inline int default_jobs() {
  unsigned n = std::thread::hardware_concurrency();
  return n == 0 ? 1 : static_cast<int>(n);
}

// Static-chunked parallel loop. Work item i is processed exactly once;
// callers own determinism by writing results into per-index slots and
// reducing in index order afterwards.
inline void parallel_for(int n, int jobs, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  if (jobs <= 0) jobs = default_jobs();
  if (jobs > n) jobs = n;
  if (jobs == 1) {
    for (int i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> workers;
  workers.reserve(static_cast<std::size_t>(jobs));
  std::exception_ptr first_error;
  std::mutex err_mu;
  for (int t = 0; t < jobs; ++t) {
    workers.emplace_back([&, t] {
      const int lo = static_cast<int>(static_cast<long>(n) * t / jobs);
      const int hi = static_cast<int>(static_cast<long>(n) * (t + 1) / jobs);
      try {
        for (int i = lo; i < hi; ++i) fn(i);
      } catch (...) {
        std::lock_guard<std::mutex> lock(err_mu);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& w : workers) w.join();
  if (first_error) std::rethrow_exception(first_error);
}

}  // namespace ptlab
