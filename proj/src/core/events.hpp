#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "errors.hpp"

namespace stpp {

/// One event: time, location (first `spatial_dim` coordinates meaningful),
/// and an optional categorical mark (-1 = unmarked).
struct Event {
    double t = 0.0;
    std::array<double, 2> s{0.0, 0.0};
    int mark = -1;
};

/// Observation window [0, T] x S (x mark set). spatial_dim 0 means a purely
/// temporal process; |S| is then 1 by convention.
struct Window {
    double t_end = 1.0;
    int spatial_dim = 0;
    std::array<std::array<double, 2>, 2> s_bounds{{{0.0, 1.0}, {0.0, 1.0}}};
    int num_marks = 0;

    double area() const {
        double a = 1.0;
        for (int d = 0; d < spatial_dim; ++d) a *= s_bounds[d][1] - s_bounds[d][0];
        return a;
    }

    bool contains(double t, const std::array<double, 2>& s) const {
        if (t < 0.0 || t > t_end) return false;
        for (int d = 0; d < spatial_dim; ++d)
            if (s[d] < s_bounds[d][0] || s[d] > s_bounds[d][1]) return false;
        return true;
    }
};

struct EventSequence {
    std::vector<Event> events;

    std::size_t size() const { return events.size(); }
};

struct Dataset {
    Window window;
    std::vector<EventSequence> sequences;
    // provenance recorded in the file header
    std::string kernel_id;
    double mu = 0.0;
    std::uint64_t seed = 0;

    std::size_t num_events() const {
        std::size_t n = 0;
        for (const auto& s : sequences) n += s.size();
        return n;
    }
};

inline void validate_sequence(const Window& w, const EventSequence& seq) {
    double prev = -1.0;
    for (std::size_t i = 0; i < seq.events.size(); ++i) {
        const Event& e = seq.events[i];
        if (!(e.t > prev))
            throw DomainError("event times must be strictly increasing (index " +
                              std::to_string(i) + ")");
        if (!w.contains(e.t, e.s))
            throw DomainError("event outside observation window (index " + std::to_string(i) +
                              ")");
        if (w.num_marks > 0 && (e.mark < 0 || e.mark >= w.num_marks))
            throw DomainError("event mark out of range (index " + std::to_string(i) + ")");
        if (!std::isfinite(e.t)) throw DomainError("non-finite event time");
        prev = e.t;
    }
}

inline void validate_dataset(const Dataset& ds) {
    for (const auto& seq : ds.sequences) validate_sequence(ds.window, seq);
}

}  // namespace stpp
