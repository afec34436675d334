#pragma once

#include <cstddef>
#include <limits>
#include <stdexcept>
#include <vector>

namespace flexcast::envelope {

// Matrix of sustainable request durations: rows follow the relative power
// grid, columns the start-time grid (absolute step indices into the weather
// horizon). Durations are step counts in [0, cap_steps].
struct FlexibilityEnvelope {
  std::vector<double> power_grid;
  std::vector<std::size_t> time_grid;
  std::vector<int> durations;  // row-major, power_grid.size() x time_grid.size()
  int cap_steps = 0;
  // Risk level the prediction used; NaN for ground-truth envelopes.
  double alpha = std::numeric_limits<double>::quiet_NaN();

  int& at(std::size_t p_idx, std::size_t t_idx) {
    return durations[p_idx * time_grid.size() + t_idx];
  }
  int at(std::size_t p_idx, std::size_t t_idx) const {
    return durations[p_idx * time_grid.size() + t_idx];
  }

  void check_consistent() const {
    if (durations.size() != power_grid.size() * time_grid.size())
      throw std::invalid_argument("envelope: durations size does not match grids");
  }
};

inline bool same_grids(const FlexibilityEnvelope& a, const FlexibilityEnvelope& b) {
  return a.power_grid == b.power_grid && a.time_grid == b.time_grid &&
         a.cap_steps == b.cap_steps;
}

}  // namespace flexcast::envelope
