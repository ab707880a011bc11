#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace xrecap {

// Machine-parseable error classes; the CLI prints these verbatim.
enum class ErrorClass {
  io,
  parse,
  validation,
  config,
  not_found,
  format,
  numeric,
  transport,
  http_status,
  empty_response,
  aborted,
};

std::string_view to_string(ErrorClass cls);

class Error : public std::runtime_error {
 public:
  Error(ErrorClass cls, const std::string& message)
      : std::runtime_error(message), class_(cls) {}

  ErrorClass error_class() const noexcept { return class_; }

 private:
  ErrorClass class_;
};

// Raised by endpoint clients; carries how many attempts were made.
class RequestError : public Error {
 public:
  RequestError(ErrorClass cls, const std::string& message, int attempts)
      : Error(cls, message), attempts_(attempts) {}

  int attempts() const noexcept { return attempts_; }

 private:
  int attempts_;
};

// Config validation collects every problem before failing.
class ConfigError : public Error {
 public:
  explicit ConfigError(std::vector<std::string> problems);

  const std::vector<std::string>& problems() const noexcept {
    return problems_;
  }

 private:
  std::vector<std::string> problems_;
};

std::uint64_t fnv1a64(std::string_view bytes,
                      std::uint64_t basis = 0xcbf29ce484222325ULL);

std::uint64_t splitmix64(std::uint64_t x);

// Derives an independent stream seed from a base seed and a string key.
std::uint64_t derive_seed(std::uint64_t seed, std::string_view key);

// Seeded generator with distributions written out explicitly, so the same
// seed yields the same stream on every standard library.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next() { return engine_(); }

  // Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Unbiased integer in [0, n).
  std::size_t index(std::size_t n);

  double normal();

  template <class T>
  void shuffle(std::vector<T>& items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      std::swap(items[i - 1], items[index(i)]);
    }
  }

 private:
  std::mt19937_64 engine_;
  std::optional<double> spare_;
};

std::string trim(std::string_view s);

}  // namespace xrecap
