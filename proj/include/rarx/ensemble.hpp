#pragma once

#include <cstddef>
#include <exception>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

namespace rarx {

/// Result of one independent job: either a value or the error message that
/// ended it. Exceptions cannot cross an OpenMP region, so they are captured.
template <class T>
struct Outcome {
  std::optional<T> value;
  std::string error;

  bool ok() const { return value.has_value(); }
};

int ensemble_threads();

namespace detail {
template <class F>
auto run_job(F& f, std::size_t i) -> Outcome<std::invoke_result_t<F&, std::size_t>> {
  Outcome<std::invoke_result_t<F&, std::size_t>> out;
  try {
    out.value.emplace(f(i));
  } catch (const std::exception& e) {
    out.error = e.what();
  } catch (...) {
    out.error = "unknown error";
  }
  return out;
}
}  // namespace detail

/// Serial reference: runs jobs 0..n-1 in order.
template <class F>
auto map_serial(std::size_t n, F&& f) {
  std::vector<Outcome<std::invoke_result_t<F&, std::size_t>>> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = detail::run_job(f, i);
  return out;
}

/// Runs independent jobs on an OpenMP thread team. Results are stored by
/// index, so the output is identical to map_serial for pure jobs.
template <class F>
auto map_parallel(std::size_t n, F&& f) {
  std::vector<Outcome<std::invoke_result_t<F&, std::size_t>>> out(n);
  const auto count = static_cast<long>(n);
#pragma omp parallel for schedule(dynamic, 1)
  for (long i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = detail::run_job(f, static_cast<std::size_t>(i));
  return out;
}

}  // namespace rarx
