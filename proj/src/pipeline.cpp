#include "tcap/pipeline.hpp"

#include <fstream>

#include "tcap/error.hpp"
#include "tcap/parallel.hpp"
#include "tcap/rng.hpp"

namespace tcap {

using nlohmann::json;
using nlohmann::ordered_json;

std::vector<std::uint8_t> VerdictReport::flags() const {
    std::vector<std::uint8_t> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.flagged ? 1 : 0);
    return out;
}

std::vector<std::string> VerdictReport::sample_ids() const {
    std::vector<std::string> out;
    out.reserve(samples.size());
    for (const auto& s : samples) out.push_back(s.sample_id);
    return out;
}

std::vector<std::string> VerdictReport::clean_ids() const {
    std::vector<std::string> out;
    for (const auto& s : samples) {
        if (!s.flagged) out.push_back(s.sample_id);
    }
    return out;
}

std::uint64_t head_seed(std::uint64_t seed, int layer, int head) noexcept {
    return derive_seed(seed, {static_cast<std::uint64_t>(layer), static_cast<std::uint64_t>(head)});
}

std::vector<profiler::HeadProfile> profile_heads(const store::AttentionStore& store, int first_layer,
                                                 const RunConfig& config) {
    std::vector<std::pair<int, int>> cells;
    for (int l = std::max(0, first_layer); l < store.num_layers(); ++l) {
        for (int h = 0; h < store.num_heads(); ++h) cells.emplace_back(l, h);
    }
    std::vector<profiler::HeadProfile> profiles(cells.size());
    parallel_for(cells.size(), [&](std::size_t i) {
        const auto [l, h] = cells[i];
        profiles[i] = profiler::profile_head(l, h, store.series(l, h).values, head_seed(config.seed, l, h), config.em,
                                             config.profiler);
    });
    return profiles;
}

DetectionResult detect_from_profiles(const store::AttentionStore& store, std::vector<profiler::HeadProfile> profiles,
                                     const RunConfig& config) {
    config.validate();
    DetectionResult result;
    VerdictReport& report = result.report;
    report.config = config;
    report.source = store.manifest().source;
    VerdictSummary& summary = report.summary;
    summary.num_samples = store.num_samples();

    const int first = profiler::first_sensitive_layer(store.num_layers(), config.profiler.l_sens);
    std::erase_if(profiles, [&](const profiler::HeadProfile& p) { return p.layer < first; });
    summary.num_profiled_heads = profiles.size();
    for (const auto& p : profiles) summary.num_degenerate_heads += p.degenerate ? 1 : 0;

    std::vector<double> posteriors(store.num_samples(), 0.0);
    try {
        report.heads = profiler::rank_heads(profiles, store.num_layers(), config.profiler.l_sens, config.profiler.h_sens);
    } catch (const EmptyCandidateSet& e) {
        summary.empty_candidate_set = true;
        summary.warnings.push_back(std::string(e.what()) + "; every sample reported clean");
    }

    if (!summary.empty_candidate_set) {
        if (report.heads.size() < static_cast<std::size_t>(config.profiler.h_sens)) {
            summary.warnings.push_back("only " + std::to_string(report.heads.size()) +
                                       " non-degenerate heads available (h_sens = " +
                                       std::to_string(config.profiler.h_sens) + ")");
        }
        std::vector<gmm::Responsibilities> resp(report.heads.size());
        std::vector<vote::HeadEvidence> evidence;
        for (std::size_t j = 0; j < report.heads.size(); ++j) {
            const auto& ref = report.heads[j];
            const auto it = std::find_if(profiles.begin(), profiles.end(), [&](const profiler::HeadProfile& p) {
                return p.layer == ref.layer && p.head == ref.head;
            });
            const auto norm = gmm::normalize_minmax(store.series(ref.layer, ref.head).values);
            resp[j] = gmm::posterior(it->model, norm.values);
            evidence.push_back({ref, &resp[j], it->target_group});
        }
        result.votes = vote::cast_votes(evidence, config.tau_vote);
        result.aggregation = vote::dawid_skene_aggregate(result.votes, config.ds);
        posteriors = result.aggregation->posterior;
        summary.ds_iterations = result.aggregation->iterations;
        summary.ds_converged = result.aggregation->converged;
        summary.prior_poisoned = result.aggregation->prior_poisoned;
        if (!summary.ds_converged) summary.warnings.push_back("Dawid-Skene EM hit the iteration cap");
    }

    const auto& ids = store.sample_ids();
    report.samples.reserve(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
        report.samples.push_back({ids[i], posteriors[i], posteriors[i] > vote::kFlagThreshold});
    }
    const auto filtered = vote::filter_dataset(posteriors, ids);
    summary.num_kept = filtered.kept.size();
    summary.num_flagged = ids.size() - filtered.kept.size();
    if (filtered.all_flagged) summary.warnings.push_back("AllFlagged: every sample was flagged as poisoned");

    result.profiles = std::move(profiles);
    return result;
}

DetectionResult detect(const store::AttentionStore& store, const RunConfig& config) {
    config.validate();
    const int first = profiler::first_sensitive_layer(store.num_layers(), config.profiler.l_sens);
    return detect_from_profiles(store, profile_heads(store, first, config), config);
}

// ---------------------------------------------------------------------------
// Serialization

ordered_json to_json(const VerdictReport& r) {
    ordered_json j;
    j["config"] = to_json(r.config);
    j["source"] = r.source;
    ordered_json heads = ordered_json::array();
    for (const auto& h : r.heads) heads.push_back({{"layer", h.layer}, {"head", h.head}, {"score", h.score}});
    j["heads"] = std::move(heads);
    ordered_json samples = ordered_json::array();
    for (const auto& s : r.samples) {
        samples.push_back({{"sample_id", s.sample_id}, {"posterior", s.posterior}, {"flagged", s.flagged}});
    }
    j["samples"] = std::move(samples);
    const auto& s = r.summary;
    j["summary"] = {
        {"num_samples", s.num_samples},
        {"num_flagged", s.num_flagged},
        {"num_kept", s.num_kept},
        {"num_profiled_heads", s.num_profiled_heads},
        {"num_degenerate_heads", s.num_degenerate_heads},
        {"ds_iterations", s.ds_iterations},
        {"ds_converged", s.ds_converged},
        {"prior_poisoned", s.prior_poisoned},
        {"empty_candidate_set", s.empty_candidate_set},
        {"warnings", s.warnings},
    };
    return j;
}

std::string serialize_report(const VerdictReport& report) {
    return to_json(report).dump(2) + "\n";
}

VerdictReport parse_report(const json& j) {
    VerdictReport r;
    try {
        r.config = config_from_json(j.at("config"));
        r.source = j.value("source", std::string{});
        for (const auto& h : j.at("heads")) {
            r.heads.push_back({h.at("layer").get<int>(), h.at("head").get<int>(), h.at("score").get<double>()});
        }
        for (const auto& s : j.at("samples")) {
            r.samples.push_back({s.at("sample_id").get<std::string>(), s.at("posterior").get<double>(),
                                 s.at("flagged").get<bool>()});
        }
        const json& s = j.at("summary");
        auto& out = r.summary;
        out.num_samples = s.at("num_samples").get<std::size_t>();
        out.num_flagged = s.at("num_flagged").get<std::size_t>();
        out.num_kept = s.at("num_kept").get<std::size_t>();
        out.num_profiled_heads = s.value("num_profiled_heads", std::size_t{0});
        out.num_degenerate_heads = s.value("num_degenerate_heads", std::size_t{0});
        out.ds_iterations = s.value("ds_iterations", 0);
        out.ds_converged = s.value("ds_converged", false);
        out.prior_poisoned = s.value("prior_poisoned", 0.0);
        out.empty_candidate_set = s.value("empty_candidate_set", false);
        out.warnings = s.value("warnings", std::vector<std::string>{});
    } catch (const json::exception& e) {
        throw ValidationError(std::string("malformed verdict report: ") + e.what());
    }
    for (const auto& s : r.samples) {
        if (s.flagged != (s.posterior > vote::kFlagThreshold)) {
            throw ValidationError("malformed verdict report: flag of " + s.sample_id + " disagrees with its posterior");
        }
    }
    return r;
}

VerdictReport read_report(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open report " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ValidationError(path.string() + ": " + e.what());
    }
    return parse_report(j);
}

void write_report(const VerdictReport& report, const std::filesystem::path& report_path,
                  const std::filesystem::path& clean_ids_path) {
    {
        std::ofstream out(report_path, std::ios::binary);
        if (!out) throw IoError("cannot write report " + report_path.string());
        out << serialize_report(report);
    }
    std::ofstream ids(clean_ids_path, std::ios::binary);
    if (!ids) throw IoError("cannot write id list " + clean_ids_path.string());
    for (const auto& s : report.samples) {
        if (!s.flagged) ids << s.sample_id << '\n';
    }
}

ordered_json to_json(const vote::DetectionMetrics& m) {
    return {
        {"precision", m.precision},
        {"recall", m.recall},
        {"f1", m.f1},
        {"tp", m.tp},
        {"fp", m.fp},
        {"fn", m.fn},
        {"tn", m.tn},
        {"warnings", m.warnings},
    };
}

vote::DetectionMetrics evaluate_report(const VerdictReport& report, const store::LabelMap& labels) {
    const auto ids = report.sample_ids();
    const auto flags = report.flags();
    return vote::evaluate_detection(ids, flags, labels);
}

}  // namespace tcap
