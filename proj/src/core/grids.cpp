#include "grids.hpp"

#include <cmath>

namespace stpp {

GridSpec GridSpec::build(const ModelSpec& spec, const Window& window, const GridSizes& sizes) {
    sizes.validate();
    spec.validate();
    if (spec.spatial_dim != window.spatial_dim)
        throw ConfigError("model and window spatial dimensions differ");

    GridSpec g;
    g.sizes = sizes;

    g.table_domain =
        spec.temporal_param == TemporalParam::displacement ? spec.tau_max : spec.t_ref;
    g.zero_beyond_domain = spec.temporal_param == TemporalParam::displacement;
    g.dt = g.table_domain / (sizes.ut - 1);
    g.ut_nodes.resize(sizes.ut);
    for (int m = 0; m < sizes.ut; ++m) g.ut_nodes[m] = m * g.dt;
    g.ut_nodes.back() = g.table_domain;

    if (spec.spatial_dim == 1) {
        const double a = spec.a_max;
        const int m = sizes.us_target;
        const double h = 2.0 * a / m;
        g.cell_area = h;
        g.us_nodes.reserve(m);
        for (int i = 0; i < m; ++i) g.us_nodes.push_back({-a + (i + 0.5) * h, 0.0});
    } else if (spec.spatial_dim == 2) {
        const double a = spec.a_max;
        // per-axis count so that the cell centers inside the ball number
        // about us_target: pi/4 of the bounding square
        const int m = std::max(2, (int)std::lround(std::sqrt(sizes.us_target * 4.0 / M_PI)));
        const double h = 2.0 * a / m;
        g.cell_area = h * h;
        for (int i = 0; i < m; ++i) {
            for (int j = 0; j < m; ++j) {
                const double x = -a + (i + 0.5) * h;
                const double y = -a + (j + 0.5) * h;
                if (x * x + y * y <= a * a) g.us_nodes.push_back({x, y});
            }
        }
    }

    g.bar_t_nodes.resize(sizes.bar_t);
    if (sizes.bar_t == 1) {
        g.bar_t_nodes[0] = window.t_end / 2.0;
    } else {
        const double step = window.t_end / (sizes.bar_t - 1);
        for (int c = 0; c < sizes.bar_t; ++c) g.bar_t_nodes[c] = c * step;
        g.bar_t_nodes.back() = window.t_end;
    }

    if (spec.spatial_dim == 0) {
        g.bar_s_nodes.push_back({0.0, 0.0});
    } else if (spec.spatial_dim == 1) {
        const auto [lo, hi] = std::pair{window.s_bounds[0][0], window.s_bounds[0][1]};
        const double h = (hi - lo) / sizes.bar_s_axis;
        for (int c = 0; c < sizes.bar_s_axis; ++c) g.bar_s_nodes.push_back({lo + (c + 0.5) * h, 0.0});
    } else {
        const double hx = (window.s_bounds[0][1] - window.s_bounds[0][0]) / sizes.bar_s_axis;
        const double hy = (window.s_bounds[1][1] - window.s_bounds[1][0]) / sizes.bar_s_axis;
        for (int cx = 0; cx < sizes.bar_s_axis; ++cx)
            for (int cy = 0; cy < sizes.bar_s_axis; ++cy)
                g.bar_s_nodes.push_back({window.s_bounds[0][0] + (cx + 0.5) * hx,
                                         window.s_bounds[1][0] + (cy + 0.5) * hy});
    }

    return g;
}

}  // namespace stpp
