#pragma once

#include <stdexcept>
#include <vector>

namespace afc {

/// a[t][i]: accuracy (%) on task i's test classes after training stage t.
/// seen[t]: accuracy (%) over all classes seen after stage t.
struct AccuracyMatrix {
    std::vector<std::vector<double>> a;
    std::vector<double> seen;
};

inline double avg_incremental_accuracy(const std::vector<double>& seen) {
    if (seen.empty()) throw std::invalid_argument("avg_incremental_accuracy: no stages");
    double s = 0.0;
    for (double v : seen) s += v;
    return s / static_cast<double>(seen.size());
}

/// GEM-style backward transfer: mean over old tasks of (final accuracy -
/// accuracy right after the task was learned).
inline double backward_transfer(const AccuracyMatrix& m) {
    const std::size_t T = m.a.size();
    if (T < 2) throw std::invalid_argument("backward_transfer needs >= 2 stages");
    double s = 0.0;
    for (std::size_t i = 0; i + 1 < T; ++i) s += m.a[T - 1][i] - m.a[i][i];
    return s / static_cast<double>(T - 1);
}

inline double average_accuracy(const AccuracyMatrix& m) {
    if (m.a.empty()) throw std::invalid_argument("average_accuracy: no stages");
    const auto& last = m.a.back();
    double s = 0.0;
    for (double v : last) s += v;
    return s / static_cast<double>(last.size());
}

}  // namespace afc
