#pragma once

#include <fstream>
#include <ostream>
#include <vector>

#include "tango/common.hpp"

namespace tango {

struct TrajectoryRow {
    std::size_t step;
    double t;
    Vector theta;
    double v_norm;
    double loss;  // running mean of the last 100 sampled losses
};

struct TrajectoryRecord {
    std::vector<TrajectoryRow> rows;

    bool operator==(const TrajectoryRecord& other) const {
        if (rows.size() != other.rows.size()) return false;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            const TrajectoryRow& a = rows[i];
            const TrajectoryRow& b = other.rows[i];
            if (a.step != b.step || a.t != b.t || a.v_norm != b.v_norm || a.loss != b.loss)
                return false;
            if (a.theta.size() != b.theta.size()) return false;
            for (int j = 0; j < a.theta.size(); ++j) {
                if (a.theta(j) != b.theta(j)) return false;
            }
        }
        return true;
    }

    // Same parameter path, step for step, ignoring the velocity column.
    bool same_theta_path(const TrajectoryRecord& other) const {
        if (rows.size() != other.rows.size()) return false;
        for (std::size_t i = 0; i < rows.size(); ++i) {
            if (rows[i].step != other.rows[i].step) return false;
            if (rows[i].theta.size() != other.rows[i].theta.size()) return false;
            for (int j = 0; j < rows[i].theta.size(); ++j) {
                if (rows[i].theta(j) != other.rows[i].theta(j)) return false;
            }
        }
        return true;
    }

    // Header step,t,theta_0,...,theta_{d-1},v_norm,loss; 17 significant digits.
    void write_csv(std::ostream& out) const {
        const int d = rows.empty() ? 0 : static_cast<int>(rows.front().theta.size());
        out << "step,t";
        for (int j = 0; j < d; ++j) out << ",theta_" << j;
        out << ",v_norm,loss\n";
        for (const TrajectoryRow& row : rows) {
            out << row.step << ',' << format_real(row.t);
            for (int j = 0; j < d; ++j) out << ',' << format_real(row.theta(j));
            out << ',' << format_real(row.v_norm) << ',' << format_real(row.loss) << '\n';
        }
    }

    void write_csv(const std::string& path) const {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw error("cannot open '" + path + "' for writing");
        write_csv(out);
    }
};

}  // namespace tango
