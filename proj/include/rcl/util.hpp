#pragma once

#include <chrono>
#include <string>

namespace rcl {

// Shortest text that parses back to the same double.
std::string fmt_double(double v);

// Peak resident set size of this process in kilobytes.
long peak_rss_kb();

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

}  // namespace rcl
