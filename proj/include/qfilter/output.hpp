// Deterministic run outputs: CSV records, manifest, worker scheduling.
//
// All numeric output is formatted with %.17g so values round-trip exactly;
// files are written with LF line endings regardless of platform. Trajectory
// work is distributed by an atomic index into per-trajectory result slots,
// so file contents are independent of the worker count.
#pragma once

#include <atomic>
#include <cstdio>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include "qfilter/common.hpp"

namespace qfilter {

inline std::string format_g17(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

struct CsvTable {
    std::vector<std::string> columns; // excludes the leading trajectory column
    // one entry per trajectory, each a list of rows
    std::vector<std::vector<std::vector<double>>> rows;
};

inline void write_csv(const std::string& path, const CsvTable& table) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw config_error("cannot write '" + path + "'");
    out << "trajectory";
    for (const auto& c : table.columns) out << "," << c;
    out << "\n";
    for (size_t traj = 0; traj < table.rows.size(); ++traj)
        for (const auto& row : table.rows[traj]) {
            out << traj;
            for (double v : row) out << "," << format_g17(v);
            out << "\n";
        }
    if (!out) throw config_error("failed writing '" + path + "'");
}

// Runs fn(i) for i in [0, n) on the requested number of workers. Results
// must be written to index-addressed slots by the caller; the schedule never
// affects output content.
template <class Fn>
void parallel_for_indexed(int n, int workers, Fn fn) {
    if (n <= 0) return;
    std::atomic<int> next{0};
    auto drain = [&] {
        for (;;) {
            int i = next.fetch_add(1);
            if (i >= n) break;
            fn(i);
        }
    };
    if (workers <= 1 || n == 1) {
        drain();
        return;
    }
    std::vector<std::thread> pool;
    int count = std::min(workers, n);
    pool.reserve(count);
    for (int w = 0; w < count; ++w) pool.emplace_back(drain);
    for (auto& t : pool) t.join();
}

} // namespace qfilter
