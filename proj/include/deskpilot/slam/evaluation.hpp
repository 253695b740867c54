#pragma once
//
// Ground-truth rasterization of a segment world and cell-wise comparison
// against an estimated grid.

#include <cstddef>
#include <vector>

#include "deskpilot/sim/world.hpp"
#include "deskpilot/slam/occupancy_grid.hpp"

namespace deskpilot::slam {

/// Occupied (true) where a wall passes within half a cell of the cell centre.
inline std::vector<bool> rasterize_world(const sim::WorldModel& world, const OccupancyGrid& layout) {
  std::vector<bool> occ(layout.size(), false);
  const double half = 0.5 * layout.resolution() + 1e-9;
  for (int y = 0; y < layout.height(); ++y)
    for (int x = 0; x < layout.width(); ++x)
      occ[layout.index({x, y})] = sim::distance_to_world(world, layout.cell_center({x, y})) <= half;
  return occ;
}

struct MapAgreement {
  std::size_t compared = 0;
  std::size_t agreed = 0;
  std::size_t occupied_compared = 0;
  std::size_t occupied_agreed = 0;
  double ratio() const noexcept { return compared ? static_cast<double>(agreed) / compared : 0.0; }
};

/// Known cells at or above `occupied_at` count as occupied, known cells at or
/// below `free_at` as free; anything in between is left out.
inline MapAgreement compare_to_truth(const OccupancyGrid& est, const std::vector<bool>& truth,
                                     double occupied_at = 0.65, double free_at = 0.5) {
  MapAgreement a;
  for (int y = 0; y < est.height(); ++y)
    for (int x = 0; x < est.width(); ++x) {
      const CellIndex c{x, y};
      if (!est.known(c)) continue;
      const double p = est.probability(c);
      bool occupied;
      if (p >= occupied_at) occupied = true;
      else if (p <= free_at) occupied = false;
      else continue;
      const bool t = truth[est.index(c)];
      ++a.compared;
      a.agreed += occupied == t ? 1 : 0;
      if (t) {
        ++a.occupied_compared;
        a.occupied_agreed += occupied ? 1 : 0;
      }
    }
  return a;
}

}  // namespace deskpilot::slam
