#include "ivrl/dataset.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace ivrl {

void Dataset::validate(int k) const {
    const std::size_t t_expect = trajectories.empty() ? 0 : trajectories.front().size();
    if (t_expect == 0) throw std::invalid_argument("Dataset: empty trajectories");
    for (const auto& traj : trajectories) {
        if (traj.size() != t_expect) throw std::invalid_argument("Dataset: ragged trajectory lengths");
        for (std::size_t t = 0; t < traj.size(); ++t) {
            const auto& st = traj[t];
            if (st.z < 0 || st.z >= k || st.a < 0 || st.a >= k)
                throw std::invalid_argument("Dataset: category index out of range");
            if (t + 1 < traj.size() && st.s_next != traj[t + 1].s)
                throw std::invalid_argument("Dataset: broken s_next chaining");
        }
    }
}

namespace {

std::string fmt17(double x) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", x);
    return buf;
}

}  // namespace

std::string to_csv(const Dataset& data) {
    const bool with_u = !data.blinded();
    std::ostringstream out;
    out << "traj,t,s,z,a,r,s_next";
    if (with_u) out << ",u";
    out << "\n";
    for (std::size_t i = 0; i < data.trajectories.size(); ++i) {
        const auto& traj = data.trajectories[i];
        for (std::size_t t = 0; t < traj.size(); ++t) {
            const auto& st = traj[t];
            out << i << ',' << t << ',' << fmt17(st.s) << ',' << st.z << ',' << st.a << ','
                << fmt17(st.r) << ',' << fmt17(st.s_next);
            if (with_u) out << ',' << fmt17(st.u_diag.value());
            out << "\n";
        }
    }
    return out.str();
}

void write_csv(const Dataset& data, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("write_csv: cannot open " + path);
    f << to_csv(data);
}

Dataset read_csv(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("read_csv: cannot open " + path);
    std::string line;
    if (!std::getline(f, line)) throw std::runtime_error("read_csv: empty file");
    const bool with_u = line.find(",u") != std::string::npos;

    Dataset data;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        std::istringstream row(line);
        std::string cell;
        auto next = [&]() {
            if (!std::getline(row, cell, ',')) throw std::runtime_error("read_csv: short row");
            return cell;
        };
        const auto traj = static_cast<std::size_t>(std::stoull(next()));
        next();  // t, implied by position
        TrajectoryStep st;
        st.s = std::stod(next());
        st.z = std::stoi(next());
        st.a = std::stoi(next());
        st.r = std::stod(next());
        st.s_next = std::stod(next());
        if (with_u) st.u_diag = std::stod(next());
        if (traj >= data.trajectories.size()) data.trajectories.resize(traj + 1);
        data.trajectories[traj].push_back(st);
    }
    return data;
}

}  // namespace ivrl
