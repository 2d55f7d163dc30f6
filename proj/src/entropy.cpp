#include "tcap/entropy.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

#include "tcap/attention_store.hpp"
#include "tcap/error.hpp"
#include "tcap/head_profiler.hpp"

namespace tcap::entropy {

using nlohmann::json;

double VisualAttentionRow::mass() const noexcept {
    double s = 0.0;
    for (double a : weights) s += a;
    return s;
}

void validate_row(const VisualAttentionRow& row) {
    for (double a : row.weights) {
        if (!std::isfinite(a) || a < 0.0) throw ValidationError("visual row for " + row.sample_id + " has an invalid weight");
    }
    if (row.mass() > 1.0 + 1e-9) throw ValidationError("visual row for " + row.sample_id + " has mass above 1");
    if (row.trigger_mask && row.trigger_mask->size() != row.weights.size()) {
        throw ValidationError("visual row for " + row.sample_id + " has a trigger mask of the wrong length");
    }
}

double attention_entropy(std::span<const double> weights) noexcept {
    double h = 0.0;
    for (double a : weights) {
        if (a > 0.0) h -= a * std::log(a);
    }
    return h;
}

double patch_entropy_bound(double alpha_vis, int s_trig) {
    if (!(alpha_vis > 0.0 && alpha_vis <= 1.0) || s_trig < 1) {
        throw std::invalid_argument("patch_entropy_bound: need alpha in (0, 1] and s_trig >= 1");
    }
    return alpha_vis * std::log(static_cast<double>(s_trig) / alpha_vis);
}

double global_entropy_bound(double alpha_vis, int t) {
    if (!(alpha_vis > 0.0 && alpha_vis <= 1.0) || t < 1) {
        throw std::invalid_argument("global_entropy_bound: need alpha in (0, 1] and t >= 1");
    }
    return alpha_vis * std::log(static_cast<double>(t) / alpha_vis);
}

double to_base(double nats, double base) {
    return nats / std::log(base);
}

std::vector<VisualAttentionRow> read_visual_rows(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open visual row file " + path.string());
    std::vector<VisualAttentionRow> rows;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        VisualAttentionRow row;
        try {
            const json j = json::parse(line);
            row.sample_id = j.at("sample_id").get<std::string>();
            row.layer = j.at("layer").get<int>();
            row.head = j.at("head").get<int>();
            row.weights = j.at("visual_row").get<std::vector<double>>();
            if (j.contains("trigger_mask")) row.trigger_mask = j["trigger_mask"].get<std::vector<bool>>();
        } catch (const json::exception& e) {
            throw MalformedRecord(path.string(), lineno, e.what());
        }
        try {
            validate_row(row);
        } catch (const ValidationError& e) {
            throw MalformedRecord(path.string(), lineno, e.what());
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

std::string format_visual_row(const VisualAttentionRow& row) {
    std::string out = "{\"sample_id\":" + json(row.sample_id).dump() + ",\"layer\":" + std::to_string(row.layer) +
                      ",\"head\":" + std::to_string(row.head) + ",\"visual_row\":[";
    for (std::size_t i = 0; i < row.weights.size(); ++i) {
        if (i) out += ',';
        out += store::format_double(row.weights[i]);
    }
    out += ']';
    if (row.trigger_mask) {
        out += ",\"trigger_mask\":[";
        for (std::size_t i = 0; i < row.trigger_mask->size(); ++i) {
            if (i) out += ',';
            out += (*row.trigger_mask)[i] ? "true" : "false";
        }
        out += ']';
    }
    out += '}';
    return out;
}

BaselineVerdict entropy_baseline(std::span<const VisualAttentionRow> rows, std::uint64_t seed,
                                 const gmm::EmConfig& em, double minority_weight_threshold) {
    std::map<std::string, std::pair<double, int>> per_sample;
    for (const auto& r : rows) {
        auto& [sum, n] = per_sample[r.sample_id];
        sum += attention_entropy(r.weights);
        ++n;
    }
    BaselineVerdict v;
    for (const auto& [id, acc] : per_sample) {
        v.sample_ids.push_back(id);
        v.entropy.push_back(acc.first / acc.second);
    }
    v.flagged.assign(v.sample_ids.size(), 0);
    if (v.sample_ids.size() < static_cast<std::size_t>(gmm::kMaxComponents)) {
        throw ValidationError("entropy baseline needs at least 5 samples");
    }

    const auto norm = gmm::normalize_minmax(v.entropy);
    v.model = gmm::select_model_order(norm.values, seed, em);
    if (norm.degenerate || v.model.k() < 2) return v;

    const auto part = profiler::partition_components(v.model, minority_weight_threshold);
    auto group_mean = [&](const std::vector<int>& g) {
        double w = 0.0;
        double s = 0.0;
        for (int k : g) {
            w += v.model.components[k].weight;
            s += v.model.components[k].weight * v.model.components[k].mean;
        }
        return s / w;
    };
    if (group_mean(part.target) >= group_mean(part.background)) return v;
    v.low_group = part.target;

    const auto resp = gmm::posterior(v.model, norm.values);
    for (std::size_t i = 0; i < v.sample_ids.size(); ++i) {
        double mass = 0.0;
        for (int k : v.low_group) mass += resp(i, static_cast<std::size_t>(k));
        v.flagged[i] = mass > 0.5 ? 1 : 0;
    }
    return v;
}

}  // namespace tcap::entropy
