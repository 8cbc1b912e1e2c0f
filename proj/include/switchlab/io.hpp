#pragma once

#include <cstdio>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "switchlab/errors.hpp"
#include "switchlab/panel.hpp"

namespace switchlab {

// Shortest text that round-trips a double.
inline std::string fmt(double x) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.17g", x);
    return buf;
}

// Six significant digits, for human-readable summaries.
inline std::string fmt_short(double x) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6g", x);
    return buf;
}

inline std::string trim(const std::string& s) {
    const char* ws = " \t\r\n";
    std::size_t a = s.find_first_not_of(ws);
    if (a == std::string::npos) return "";
    std::size_t b = s.find_last_not_of(ws);
    return s.substr(a, b - a + 1);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    std::istringstream in(line);
    while (std::getline(in, cur, ',')) out.push_back(trim(cur));
    if (!line.empty() && line.back() == ',') out.push_back("");
    return out;
}

struct CsvTable {
    std::string path;
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
    std::vector<int> line_numbers;  // 1-based source line per row

    int column(const std::string& name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return static_cast<int>(k);
        return -1;
    }

    int require(const std::string& name) const {
        int k = column(name);
        if (k < 0) throw InputError(path + ": missing column '" + name + "'");
        return k;
    }

    [[noreturn]] void fail(std::size_t row, const std::string& msg) const {
        throw InputError(path + ": line " + std::to_string(line_numbers[row]) + ": " + msg);
    }

    double number(std::size_t row, int col) const {
        const std::string& s = rows[row][col];
        try {
            std::size_t used = 0;
            double v = std::stod(s, &used);
            if (used != s.size()) throw std::invalid_argument("trailing text");
            if (!std::isfinite(v)) fail(row, "non-finite value in column '" + header[col] + "'");
            return v;
        } catch (const std::logic_error&) {
            fail(row, "cannot parse '" + s + "' in column '" + header[col] + "' as a number");
        }
    }
};

inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open " + path);
    CsvTable t;
    t.path = path;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (trim(line).empty()) continue;
        auto cells = split_csv_line(line);
        if (t.header.empty()) {
            t.header = cells;
            continue;
        }
        if (cells.size() != t.header.size())
            throw InputError(path + ": line " + std::to_string(lineno) + ": expected " +
                             std::to_string(t.header.size()) + " fields, found " + std::to_string(cells.size()));
        for (std::size_t k = 0; k < cells.size(); ++k)
            if (cells[k].empty())
                throw InputError(path + ": line " + std::to_string(lineno) + ": missing value in column '" +
                                 t.header[k] + "'");
        t.rows.push_back(std::move(cells));
        t.line_numbers.push_back(lineno);
    }
    if (t.header.empty()) throw InputError(path + ": empty file");
    if (t.rows.empty()) throw InputError(path + ": no data rows");
    return t;
}

namespace detail {

// Rows of one region grouped into days and intervals in order of first
// appearance; every day must list the same interval labels in the same order.
struct Grid {
    std::vector<std::string> days, times;
    std::vector<std::vector<std::size_t>> cell;  // [day][interval] -> row
};

inline Grid build_grid(const CsvTable& t, const std::vector<std::size_t>& rows, int c_date, int c_time) {
    Grid g;
    std::map<std::string, std::size_t> day_index;
    std::vector<std::vector<std::pair<std::string, std::size_t>>> per_day;
    for (std::size_t r : rows) {
        const std::string& day = t.rows[r][c_date];
        auto it = day_index.find(day);
        if (it == day_index.end()) {
            it = day_index.emplace(day, g.days.size()).first;
            g.days.push_back(day);
            per_day.emplace_back();
        }
        per_day[it->second].push_back({t.rows[r][c_time], r});
    }
    for (const auto& [label, r] : per_day[0]) g.times.push_back(label);
    for (std::size_t i = 0; i < per_day.size(); ++i) {
        const auto& entries = per_day[i];
        if (entries.size() != g.times.size())
            t.fail(entries.back().second, "day '" + g.days[i] + "' has " + std::to_string(entries.size()) +
                                              " intervals, expected " + std::to_string(g.times.size()));
        std::vector<std::size_t> cells;
        for (std::size_t k = 0; k < entries.size(); ++k) {
            if (entries[k].first != g.times[k])
                t.fail(entries[k].second, "day '" + g.days[i] + "' interval '" + entries[k].first +
                                              "' out of order or duplicated (expected '" + g.times[k] + "')");
            cells.push_back(entries[k].second);
        }
        g.cell.push_back(std::move(cells));
    }
    return g;
}

inline PanelDataset fill_panel(const CsvTable& t, const Grid& g, const std::vector<int>& c_states, int c_action,
                               int c_outcome) {
    const int n = static_cast<int>(g.days.size()), m = static_cast<int>(g.times.size());
    const int d = static_cast<int>(c_states.size());
    PanelDataset ds = PanelDataset::zeros(n, m, d);
    ds.day_labels = g.days;
    for (int k = 0; k < d; ++k) ds.state_names[k] = t.header[c_states[k]];
    for (int i = 0; i < n; ++i)
        for (int tt = 0; tt < m; ++tt) {
            std::size_t r = g.cell[i][tt];
            const std::string& a = t.rows[r][c_action];
            if (a != "0" && a != "1") t.fail(r, "non-binary action '" + a + "' (actions must be 0 or 1)");
            ds.actions(i, tt) = a == "1";
            ds.outcomes(i, tt) = t.number(r, c_outcome);
            for (int k = 0; k < d; ++k) ds.states[i](tt, k) = t.number(r, c_states[k]);
        }
    return ds;
}

inline std::vector<int> state_columns(const CsvTable& t, std::initializer_list<const char*> reserved) {
    std::vector<int> cols;
    for (std::size_t k = 0; k < t.header.size(); ++k) {
        bool skip = false;
        for (const char* r : reserved) skip = skip || t.header[k] == r;
        if (!skip) cols.push_back(static_cast<int>(k));
    }
    return cols;
}

}  // namespace detail

// Columns: date,time,<states...>,action,outcome.
inline PanelDataset read_panel_csv(const std::string& path) {
    CsvTable t = read_csv(path);
    const int c_date = t.require("date"), c_time = t.require("time"), c_action = t.require("action"),
              c_outcome = t.require("outcome");
    if (t.column("region_id") >= 0) throw InputError(path + ": region_id column present; use the stvcdp model");
    std::vector<std::size_t> rows(t.rows.size());
    for (std::size_t r = 0; r < rows.size(); ++r) rows[r] = r;
    detail::Grid g = detail::build_grid(t, rows, c_date, c_time);
    return detail::fill_panel(t, g, detail::state_columns(t, {"date", "time", "action", "outcome"}), c_action,
                              c_outcome);
}

inline std::map<std::string, int> region_lookup(const std::vector<std::string>& labels) {
    std::map<std::string, int> idx;
    for (std::size_t g = 0; g < labels.size(); ++g) idx[labels[g]] = static_cast<int>(g);
    return idx;
}

// Edge list region_a,region_b (undirected).
inline MatrixXi read_adjacency_csv(const std::string& path, const std::vector<std::string>& labels) {
    CsvTable t = read_csv(path);
    const int ca = t.require("region_a"), cb = t.require("region_b");
    auto idx = region_lookup(labels);
    const int r = static_cast<int>(labels.size());
    MatrixXi A = MatrixXi::Zero(r, r);
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        auto a = idx.find(t.rows[k][ca]), b = idx.find(t.rows[k][cb]);
        if (a == idx.end()) t.fail(k, "unknown region '" + t.rows[k][ca] + "'");
        if (b == idx.end()) t.fail(k, "unknown region '" + t.rows[k][cb] + "'");
        if (a->second == b->second) t.fail(k, "self-loop on region '" + t.rows[k][ca] + "'");
        A(a->second, b->second) = 1;
        A(b->second, a->second) = 1;
    }
    return A;
}

// region_id,u,v with u, v in [0,1].
inline MatrixXd read_coords_csv(const std::string& path, const std::vector<std::string>& labels) {
    CsvTable t = read_csv(path);
    const int cid = t.require("region_id"), cu = t.require("u"), cv = t.require("v");
    auto idx = region_lookup(labels);
    MatrixXd C = MatrixXd::Constant(static_cast<Eigen::Index>(labels.size()), 2, -1.0);
    for (std::size_t k = 0; k < t.rows.size(); ++k) {
        auto g = idx.find(t.rows[k][cid]);
        if (g == idx.end()) t.fail(k, "unknown region '" + t.rows[k][cid] + "'");
        const double u = t.number(k, cu), v = t.number(k, cv);
        if (u < 0.0 || u > 1.0 || v < 0.0 || v > 1.0) t.fail(k, "coordinates must lie in [0,1]");
        C(g->second, 0) = u;
        C(g->second, 1) = v;
    }
    for (std::size_t g = 0; g < labels.size(); ++g)
        if (C(static_cast<Eigen::Index>(g), 0) < 0.0) throw InputError(path + ": no coordinates for region '" + labels[g] + "'");
    return C;
}

// Columns: region_id,date,time,<states...>,action,outcome. Coordinates fall
// back to a regular grid when no file is given.
inline SpatioPanelDataset read_spatio_csv(const std::string& path, const std::string& adjacency_path,
                                          const std::string& coords_path) {
    if (adjacency_path.empty()) throw InputError("adjacency required for stvcdp");
    CsvTable t = read_csv(path);
    const int c_region = t.require("region_id"), c_date = t.require("date"), c_time = t.require("time"),
              c_action = t.require("action"), c_outcome = t.require("outcome");
    std::vector<std::string> labels;
    std::map<std::string, std::vector<std::size_t>> rows_of;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const std::string& g = t.rows[r][c_region];
        if (!rows_of.count(g)) labels.push_back(g);
        rows_of[g].push_back(r);
    }
    auto c_states = detail::state_columns(t, {"region_id", "date", "time", "action", "outcome"});
    SpatioPanelDataset ds;
    ds.r = static_cast<int>(labels.size());
    ds.region_labels = labels;
    for (const auto& g : labels) {
        detail::Grid grid = detail::build_grid(t, rows_of[g], c_date, c_time);
        ds.regions.push_back(detail::fill_panel(t, grid, c_states, c_action, c_outcome));
        const PanelDataset& first = ds.regions.front();
        const PanelDataset& cur = ds.regions.back();
        if (cur.n != first.n || cur.m != first.m || cur.day_labels != first.day_labels)
            throw InputError(path + ": region '" + g + "' does not cover the same days and intervals as region '" +
                             labels.front() + "'");
    }
    ds.adjacency = read_adjacency_csv(adjacency_path, labels);
    ds.coords = coords_path.empty() ? grid_coords(ds.r) : read_coords_csv(coords_path, labels);
    ds.neighbor_avg = neighbor_average(ds);
    return ds;
}

inline void ensure_valid(const std::vector<std::string>& violations, const std::string& what) {
    if (violations.empty()) return;
    std::string msg = what + ": " + violations.front();
    if (violations.size() > 1) msg += " (and " + std::to_string(violations.size() - 1) + " more)";
    throw InputError(msg);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InputError("cannot write " + path);
    out << text;
}

inline std::string panel_csv(const PanelDataset& ds) {
    std::string s = "date,time";
    for (const auto& name : ds.state_names) s += "," + name;
    s += ",action,outcome\n";
    for (int i = 0; i < ds.n; ++i)
        for (int t = 0; t < ds.m; ++t) {
            s += ds.day_labels[i] + "," + std::to_string(t + 1);
            for (int k = 0; k < ds.d; ++k) s += "," + fmt(ds.states[i](t, k));
            s += "," + std::to_string(ds.actions(i, t)) + "," + fmt(ds.outcomes(i, t)) + "\n";
        }
    return s;
}

inline std::string spatio_csv(const SpatioPanelDataset& ds) {
    std::string s = "region_id,date,time";
    for (const auto& name : ds.regions[0].state_names) s += "," + name;
    s += ",action,outcome\n";
    for (int g = 0; g < ds.r; ++g) {
        const PanelDataset& b = ds.regions[g];
        for (int i = 0; i < b.n; ++i)
            for (int t = 0; t < b.m; ++t) {
                s += ds.region_labels[g] + "," + b.day_labels[i] + "," + std::to_string(t + 1);
                for (int k = 0; k < b.d; ++k) s += "," + fmt(b.states[i](t, k));
                s += "," + std::to_string(b.actions(i, t)) + "," + fmt(b.outcomes(i, t)) + "\n";
            }
    }
    return s;
}

inline std::string adjacency_csv(const SpatioPanelDataset& ds) {
    std::string s = "region_a,region_b\n";
    for (int a = 0; a < ds.r; ++a)
        for (int b = a + 1; b < ds.r; ++b)
            if (ds.adjacency(a, b)) s += ds.region_labels[a] + "," + ds.region_labels[b] + "\n";
    return s;
}

inline std::string coords_csv(const SpatioPanelDataset& ds) {
    std::string s = "region_id,u,v\n";
    for (int g = 0; g < ds.r; ++g) s += ds.region_labels[g] + "," + fmt(ds.coords(g, 0)) + "," + fmt(ds.coords(g, 1)) + "\n";
    return s;
}

inline std::string matrix_csv(const MatrixXd& M, const std::string& row_name = "row") {
    std::string s = row_name;
    for (Eigen::Index c = 0; c < M.cols(); ++c) s += ",c" + std::to_string(c + 1);
    s += "\n";
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        s += std::to_string(r + 1);
        for (Eigen::Index c = 0; c < M.cols(); ++c) s += "," + fmt(M(r, c));
        s += "\n";
    }
    return s;
}

inline nlohmann::json matrix_json(const MatrixXd& M) {
    nlohmann::json j = nlohmann::json::array();
    for (Eigen::Index r = 0; r < M.rows(); ++r) {
        std::vector<double> row(M.cols());
        for (Eigen::Index c = 0; c < M.cols(); ++c) row[c] = M(r, c);
        j.push_back(row);
    }
    return j;
}

inline std::string dump_json(const nlohmann::json& j) { return j.dump(2) + "\n"; }

}  // namespace switchlab
