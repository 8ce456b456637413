#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace ivrl {

// One observed transition. u_diag carries the hidden confounder for
// diagnostics; it is absent in blinded datasets and never read by any
// estimator.
struct TrajectoryStep {
    double s = 0.0;
    int z = 0;
    int a = 0;
    double r = 0.0;
    double s_next = 0.0;
    std::optional<double> u_diag;
};

struct Dataset {
    std::vector<std::vector<TrajectoryStep>> trajectories;
    std::uint64_t seed = 0;

    int n() const { return static_cast<int>(trajectories.size()); }
    int t_len() const { return trajectories.empty() ? 0 : static_cast<int>(trajectories.front().size()); }

    bool blinded() const {
        return trajectories.empty() || trajectories.front().empty() ||
               !trajectories.front().front().u_diag.has_value();
    }

    // equal length, chained s_next == next s, category ranges
    void validate(int k) const;
};

// header: traj,t,s,z,a,r,s_next[,u]; rows traj-major then t; doubles with 17
// significant digits
void write_csv(const Dataset& data, const std::string& path);
Dataset read_csv(const std::string& path);
std::string to_csv(const Dataset& data);

}  // namespace ivrl
