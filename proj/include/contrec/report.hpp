#pragma once

// Metric files and the plain-text per-class table.

#include <cstdio>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "contrec/metrics.hpp"
#include "contrec/priors.hpp"
#include "contrec/saliency.hpp"
#include "contrec/util.hpp"

namespace contrec {

inline std::string encode_buffer_report(const BufferReport& r) {
    nlohmann::ordered_json js;
    js["n_b"] = r.n_b;
    js["objects"] = r.objects;
    js["total_units"] = r.total_units;
    js["per_class_units"] = nlohmann::ordered_json::object();
    for (const auto& [cls, u] : r.per_class_units) js["per_class_units"][cls] = u;
    return js.dump(2) + "\n";
}

inline BufferReport decode_buffer_report(const std::string& text) {
    const auto js = nlohmann::json::parse(text);
    BufferReport r;
    r.n_b = js.at("n_b").get<std::size_t>();
    r.objects = js.at("objects").get<std::size_t>();
    r.total_units = js.at("total_units").get<std::size_t>();
    r.per_class_units = js.at("per_class_units").get<std::map<std::string, std::size_t>>();
    return r;
}

namespace detail {

inline std::string cell3(double v) {
    char buf[16];
    std::snprintf(buf, sizeof buf, "%.3f", v);
    return buf;
}

inline std::string pad(std::string s, std::size_t w) {
    if (s.size() < w) s.append(w - s.size(), ' ');
    return s;
}

}  // namespace detail

// Rows are classes grouped by the session that introduced them; column i is
// the class IOU after training through session i. Each group closes with the
// per-session mean, and the footer carries i-IOU, BWT, bank and buffer sizes.
inline std::string format_table(const IouMatrix& m, std::size_t bank_size, const BufferReport& buf) {
    using detail::cell3;
    using detail::pad;
    const std::size_t t = m.sessions();
    std::string out = pad("Object", 14);
    for (std::size_t i = 0; i < t; ++i) out += pad("S" + std::to_string(i), 8);
    out += "mean\n";
    out += std::string(14 + 8 * t + 5, '-') + "\n";
    for (std::size_t j = 0; j < t; ++j) {
        if (!m.has_row(j)) continue;
        for (const auto& [cls, diag] : m.classes(j, j)) {
            out += pad(cls, 14);
            double sum = 0.0;
            std::size_t n = 0;
            for (std::size_t i = 0; i < t; ++i) {
                if (i < j || !m.has_row(i)) {
                    out += pad("", 8);
                    continue;
                }
                const double v = m.classes(i, j).at(cls);
                out += pad(cell3(v), 8);
                sum += v;
                ++n;
            }
            out += cell3(sum / static_cast<double>(n)) + "\n";
        }
        out += pad("  session " + std::to_string(j), 14);
        for (std::size_t i = 0; i < t; ++i) out += pad(i < j || !m.has_row(i) ? "" : cell3(*m.cell(i, j)), 8);
        out += "\n";
    }
    const auto s = summarize(m);
    out += "\ni-IOU: " + (s.i_iou ? cell3(*s.i_iou) : std::string("undefined")) + "\n";
    out += "BWT: " + (s.bwt ? cell3(*s.bwt) : std::string("undefined")) + "\n";
    out += "prior bank entries: " + std::to_string(bank_size) + "\n";
    out += "replay buffer: " + std::to_string(buf.objects) + " objects x n_B " + std::to_string(buf.n_b) + " = " +
           std::to_string(buf.total_units) + " units\n";
    return out;
}

// iou_matrix.csv, metrics.json and report.txt under `dir`.
inline void write_report(const IouMatrix& m, std::size_t bank_size, const BufferReport& buf, const std::string& dir) {
    if (m.sessions() == 0 || !m.has_row(0)) throw ad::ContractError("write_report: IOU matrix is empty");
    std::filesystem::create_directories(dir);
    write_file(dir + "/iou_matrix.csv", encode_matrix_csv(m));
    write_file(dir + "/metrics.json", encode_summary_json(m));
    write_file(dir + "/report.txt", format_table(m, bank_size, buf));
}

inline void write_report(const IouMatrix& m, const PriorBank& bank, const ReplayBuffer& buf, const std::string& dir) {
    write_report(m, bank.size(), buf.report(), dir);
}

}  // namespace contrec
