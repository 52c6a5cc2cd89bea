#pragma once

#include <array>
#include <vector>

#include "events.hpp"
#include "model.hpp"

namespace stpp {

struct GridSizes {
    int ut = 50;          // temporal table nodes
    int us_target = 1500; // spatial integration nodes covering B(0, a_max)
    int bar_t = 50;       // barrier nodes over [0, T]
    int bar_s_axis = 15;  // barrier nodes per spatial axis

    void validate() const {
        if (ut < 2) throw ConfigError("|U_t| must be at least 2");
        if (us_target < 1) throw ConfigError("|U_s| must be positive");
        if (bar_t < 1 || bar_s_axis < 1) throw ConfigError("barrier grid sizes must be positive");
    }
};

/// Concrete computation grids for one (model, window) pair: the temporal
/// table grid U_t, the spatial integration grid U_s (cell centers inside
/// B(0, a_max)), and the barrier grid over [0, T] x S.
struct GridSpec {
    GridSizes sizes;

    std::vector<double> ut_nodes;  // uniform on [0, table_domain]
    double dt = 0.0;
    double table_domain = 0.0;
    bool zero_beyond_domain = true;  // displacement tables vanish past tau_max

    std::vector<std::array<double, 2>> us_nodes;
    double cell_area = 0.0;

    std::vector<double> bar_t_nodes;
    std::vector<std::array<double, 2>> bar_s_nodes;  // one dummy node when spatial_dim == 0

    std::size_t us_size() const { return us_nodes.size(); }
    std::size_t barrier_size() const { return bar_t_nodes.size() * bar_s_nodes.size(); }

    static GridSpec build(const ModelSpec& spec, const Window& window, const GridSizes& sizes);
};

}  // namespace stpp
