#pragma once

// Voxel IOU, the session IOU matrix, i-IOU and backward transfer.

#include <cstdint>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "contrec/autodiff.hpp"
#include "contrec/util.hpp"

namespace contrec {

inline constexpr double kIouThreshold = 0.2;

// |{p > t} & gt| / |{p > t} | gt|; empty union counts as perfect agreement.
inline double voxel_iou(const std::vector<double>& pred, const std::vector<std::uint8_t>& gt, double t = kIouThreshold) {
    if (pred.size() != gt.size()) {
        throw ad::ContractError("voxel_iou: resolution mismatch (" + std::to_string(pred.size()) + " vs " + std::to_string(gt.size()) + " voxels)");
    }
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        const bool p = pred[i] > t, g = gt[i] != 0;
        inter += p && g;
        uni += p || g;
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

// Per-class means per (trained session i, evaluated session j <= i).
class IouMatrix {
public:
    using ClassIous = std::map<std::string, double>;

    IouMatrix() = default;
    explicit IouMatrix(std::size_t sessions) : rows_(sessions) {}

    std::size_t sessions() const { return rows_.size(); }

    bool has_row(std::size_t i) const { return i < rows_.size() && !rows_[i].empty(); }

    std::optional<double> cell(std::size_t i, std::size_t j) const {
        if (i >= rows_.size() || j > i || j >= rows_[i].size()) return std::nullopt;
        return session_mean(rows_[i][j]);
    }

    const ClassIous& classes(std::size_t i, std::size_t j) const {
        if (!cell(i, j)) throw ad::ContractError("IouMatrix: cell (" + std::to_string(i) + ", " + std::to_string(j) + ") is undefined");
        return rows_[i][j];
    }

    // per_session[j] holds the class IOUs on session j's test data.
    void update(std::size_t i, const std::vector<ClassIous>& per_session) {
        if (i >= rows_.size()) throw ad::ContractError("IouMatrix: session " + std::to_string(i) + " out of range");
        if (has_row(i)) throw ad::ContractError("IouMatrix: row " + std::to_string(i) + " already populated");
        if (per_session.size() != i + 1) {
            throw ad::ContractError("IouMatrix: row " + std::to_string(i) + " needs " + std::to_string(i + 1) + " sessions, got " +
                                    std::to_string(per_session.size()));
        }
        for (const auto& s : per_session) {
            if (s.empty()) throw ad::ContractError("IouMatrix: session without classes");
            for (const auto& [cls, v] : s)
                if (!(v >= 0.0 && v <= 1.0)) throw ad::ContractError("IouMatrix: IOU for '" + cls + "' outside [0, 1]");
        }
        rows_[i] = per_session;
    }

    static double session_mean(const ClassIous& s) {
        double sum = 0.0;
        for (const auto& [cls, v] : s) sum += v;
        return sum / static_cast<double>(s.size());
    }

    friend bool operator==(const IouMatrix&, const IouMatrix&) = default;

private:
    std::vector<std::vector<ClassIous>> rows_;
};

inline IouMatrix& update_matrix(IouMatrix& m, std::size_t i, const std::vector<IouMatrix::ClassIous>& per_session) {
    m.update(i, per_session);
    return m;
}

inline double incremental_iou(const IouMatrix& m) {
    const std::size_t t = m.sessions();
    if (t == 0 || !m.has_row(t - 1)) throw ad::ContractError("incremental_iou: final row is not populated");
    double sum = 0.0;
    for (std::size_t j = 0; j < t; ++j) sum += *m.cell(t - 1, j);
    return sum / static_cast<double>(t);
}

inline double backward_transfer(const IouMatrix& m) {
    const std::size_t t = m.sessions();
    if (t < 2) throw ad::ContractError("backward_transfer: needs at least two sessions");
    double sum = 0.0;
    for (std::size_t i = 0; i + 1 < t; ++i) {
        const auto last = m.cell(t - 1, i), diag = m.cell(i, i);
        if (!last || !diag) throw ad::ContractError("backward_transfer: diagonal or final row incomplete");
        sum += *last - *diag;
    }
    return sum / static_cast<double>(t - 1);
}

// CSV: trained_session,eval_session,mean_iou with one line per defined cell.
inline std::string encode_matrix_csv(const IouMatrix& m) {
    std::string out = "trained_session,eval_session,mean_iou\n";
    for (std::size_t i = 0; i < m.sessions(); ++i)
        for (std::size_t j = 0; j <= i; ++j)
            if (auto v = m.cell(i, j)) out += std::to_string(i) + "," + std::to_string(j) + "," + fmt_double(*v) + "\n";
    return out;
}

// Per-class detail alongside the CSV, so the matrix can be rebuilt exactly.
inline std::string encode_matrix_json(const IouMatrix& m) {
    nlohmann::ordered_json js;
    js["sessions"] = m.sessions();
    js["rows"] = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < m.sessions(); ++i) {
        auto row = nlohmann::ordered_json::array();
        for (std::size_t j = 0; m.cell(i, j); ++j) {
            nlohmann::ordered_json cls = nlohmann::ordered_json::object();
            for (const auto& [name, v] : m.classes(i, j)) cls[name] = v;
            row.push_back(std::move(cls));
        }
        js["rows"].push_back(std::move(row));
    }
    return js.dump(2) + "\n";
}

inline IouMatrix decode_matrix_json(const std::string& text) {
    const auto js = nlohmann::json::parse(text);
    IouMatrix m(js.at("sessions").get<std::size_t>());
    const auto& rows = js.at("rows");
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (rows[i].empty()) continue;
        std::vector<IouMatrix::ClassIous> per;
        for (const auto& cell : rows[i]) per.push_back(cell.get<IouMatrix::ClassIous>());
        m.update(i, per);
    }
    return m;
}

struct MetricsSummary {
    std::optional<double> i_iou;
    std::optional<double> bwt;
};

inline MetricsSummary summarize(const IouMatrix& m) {
    MetricsSummary s;
    if (m.sessions() && m.has_row(m.sessions() - 1)) s.i_iou = incremental_iou(m);
    if (m.sessions() >= 2 && m.has_row(m.sessions() - 1)) s.bwt = backward_transfer(m);
    return s;
}

// {i_iou, bwt, per_session}; undefined metrics are null.
inline std::string encode_summary_json(const IouMatrix& m) {
    const auto s = summarize(m);
    std::ostringstream os;
    os << "{\n  \"i_iou\": " << (s.i_iou ? fmt_double(*s.i_iou) : "null") << ",\n  \"bwt\": " << (s.bwt ? fmt_double(*s.bwt) : "null")
       << ",\n  \"per_session\": {";
    bool first = true;
    for (std::size_t i = 0; i < m.sessions(); ++i) {
        if (!m.has_row(i)) continue;
        os << (first ? "\n" : ",\n") << "    \"" << i << "\": {\"diagonal\": " << fmt_double(*m.cell(i, i));
        if (m.has_row(m.sessions() - 1)) os << ", \"final\": " << fmt_double(*m.cell(m.sessions() - 1, i));
        os << "}";
        first = false;
    }
    os << (first ? "}\n}\n" : "\n  }\n}\n");
    return os.str();
}

}  // namespace contrec
