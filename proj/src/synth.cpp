#include "tcap/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <set>

#include "tcap/error.hpp"
#include "tcap/parallel.hpp"
#include "tcap/rng.hpp"

namespace tcap::synth {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

// Stream identifiers for derive_seed.
enum : std::uint64_t { kPermStream = 1, kHeadStream = 2, kSampleStream = 3, kChoiceStream = 4, kVisualStream = 5 };

std::string sample_id(std::int64_t index, std::int64_t total) {
    const int width = std::max<int>(4, static_cast<int>(std::to_string(std::max<std::int64_t>(total - 1, 0)).size()));
    std::string digits = std::to_string(index);
    return "s" + std::string(static_cast<std::size_t>(std::max<int>(0, width - static_cast<int>(digits.size()))), '0') +
           digits;
}

std::vector<double> dirichlet(std::mt19937_64& rng, std::size_t n, double alpha) {
    std::gamma_distribution<double> g(alpha, 1.0);
    std::vector<double> w(n);
    double s = 0.0;
    for (auto& x : w) {
        x = g(rng);
        s += x;
    }
    for (auto& x : w) x /= s;
    return w;
}

}  // namespace

std::string to_string(AnomalyKind kind) {
    return kind == AnomalyKind::suppressed ? "suppressed" : "amplified";
}

AnomalyKind parse_anomaly_kind(const std::string& name) {
    if (name == "suppressed") return AnomalyKind::suppressed;
    if (name == "amplified") return AnomalyKind::amplified;
    throw SpecInvalid("unknown anomaly kind '" + name + "'");
}

void SynthSpec::validate() const {
    auto fail = [](const std::string& what) { throw SpecInvalid("invalid synthetic spec: " + what); };
    if (num_samples < 1 || num_layers < 1 || num_heads < 1) fail("grid dimensions must be positive");
    if (!(poison_rate > 0.0 && poison_rate < 1.0)) fail("poison_rate must be in (0, 1)");
    if (std::floor(poison_rate * static_cast<double>(num_samples)) < 1.0) fail("poison_rate * num_samples must be >= 1");
    if (!(clean_mean_min >= 0.0 && clean_mean_min <= clean_mean_max && clean_mean_max <= 1.0)) {
        fail("clean mean range must satisfy 0 <= min <= max <= 1");
    }
    if (!(clean_std >= 0.0) || !(noise_heads_std >= 0.0)) fail("standard deviations must be >= 0");
    if (!(shift >= 0.0 && shift <= 1.0)) fail("shift must be in [0, 1]");
    if (!(excluded_mass_max >= 0.0 && excluded_mass_max < 1.0)) fail("excluded_mass_max must be in [0, 1)");
    if (responsive_heads.empty()) {
        if (responsive_window < 1 || responsive_window > num_layers) fail("responsive_window must be in [1, num_layers]");
        if (num_responsive < 0 || num_responsive > responsive_window * num_heads) {
            fail("num_responsive does not fit inside the responsive window");
        }
    } else {
        std::set<std::pair<int, int>> seen;
        for (const auto& r : responsive_heads) {
            if (r.layer < 0 || r.layer >= num_layers || r.head < 0 || r.head >= num_heads) {
                fail("responsive head (" + std::to_string(r.layer) + ", " + std::to_string(r.head) + ") outside the grid");
            }
            if (!seen.emplace(r.layer, r.head).second) fail("duplicate responsive head");
        }
    }
    if (visual.enabled) {
        if (visual.tokens < 1) fail("visual.tokens must be >= 1");
        if (visual.trigger_tokens < 1 || visual.trigger_tokens > visual.tokens) fail("visual.trigger_tokens must be in [1, tokens]");
        if (!(visual.concentration >= 0.0 && visual.concentration <= 1.0)) fail("visual.concentration must be in [0, 1]");
        if (visual.layer >= num_layers || visual.head >= num_heads) fail("visual head outside the grid");
    }
}

ordered_json to_json(const SynthSpec& s) {
    ordered_json j;
    j["num_samples"] = s.num_samples;
    j["num_layers"] = s.num_layers;
    j["num_heads"] = s.num_heads;
    j["poison_rate"] = s.poison_rate;
    ordered_json heads = ordered_json::array();
    for (const auto& r : s.responsive_heads) heads.push_back({{"layer", r.layer}, {"head", r.head}, {"kind", to_string(r.kind)}});
    j["responsive_heads"] = std::move(heads);
    j["num_responsive"] = s.num_responsive;
    j["responsive_window"] = s.responsive_window;
    j["clean_mean_min"] = s.clean_mean_min;
    j["clean_mean_max"] = s.clean_mean_max;
    j["clean_std"] = s.clean_std;
    j["shift"] = s.shift;
    j["noise_heads_std"] = s.noise_heads_std;
    j["excluded_mass_max"] = s.excluded_mass_max;
    j["seed"] = s.seed;
    j["source"] = s.source;
    j["visual"] = {
        {"enabled", s.visual.enabled},
        {"tokens", s.visual.tokens},
        {"trigger_tokens", s.visual.trigger_tokens},
        {"shape", s.visual.shape == TriggerShape::patch ? "patch" : "global"},
        {"concentration", s.visual.concentration},
        {"layer", s.visual.layer},
        {"head", s.visual.head},
    };
    return j;
}

SynthSpec spec_from_json(const json& j, SynthSpec s) {
    if (!j.is_object()) throw SpecInvalid("synthetic spec must be a JSON object");
    try {
        for (const auto& [key, v] : j.items()) {
            if (key == "num_samples") s.num_samples = v.get<std::int64_t>();
            else if (key == "num_layers") s.num_layers = v.get<int>();
            else if (key == "num_heads") s.num_heads = v.get<int>();
            else if (key == "poison_rate") s.poison_rate = v.get<double>();
            else if (key == "responsive_heads") {
                s.responsive_heads.clear();
                for (const auto& r : v) {
                    s.responsive_heads.push_back({r.at("layer").get<int>(), r.at("head").get<int>(),
                                                  parse_anomaly_kind(r.value("kind", std::string("suppressed")))});
                }
            } else if (key == "num_responsive") s.num_responsive = v.get<int>();
            else if (key == "responsive_window") s.responsive_window = v.get<int>();
            else if (key == "clean_mean_min") s.clean_mean_min = v.get<double>();
            else if (key == "clean_mean_max") s.clean_mean_max = v.get<double>();
            else if (key == "clean_std") s.clean_std = v.get<double>();
            else if (key == "shift") s.shift = v.get<double>();
            else if (key == "noise_heads_std") s.noise_heads_std = v.get<double>();
            else if (key == "excluded_mass_max") s.excluded_mass_max = v.get<double>();
            else if (key == "seed") s.seed = v.get<std::uint64_t>();
            else if (key == "source") s.source = v.get<std::string>();
            else if (key == "visual") {
                s.visual.enabled = v.value("enabled", s.visual.enabled);
                s.visual.tokens = v.value("tokens", s.visual.tokens);
                s.visual.trigger_tokens = v.value("trigger_tokens", s.visual.trigger_tokens);
                const std::string shape = v.value("shape", std::string(s.visual.shape == TriggerShape::patch ? "patch" : "global"));
                if (shape != "patch" && shape != "global") throw SpecInvalid("visual.shape must be patch or global");
                s.visual.shape = shape == "patch" ? TriggerShape::patch : TriggerShape::global;
                s.visual.concentration = v.value("concentration", s.visual.concentration);
                s.visual.layer = v.value("layer", s.visual.layer);
                s.visual.head = v.value("head", s.visual.head);
            } else {
                throw SpecInvalid("unknown synthetic spec key '" + key + "'");
            }
        }
    } catch (const json::exception& e) {
        throw SpecInvalid(std::string("bad synthetic spec value: ") + e.what());
    }
    return s;
}

SynthSpec load_spec(const std::filesystem::path& path, SynthSpec base) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open spec " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw SpecInvalid(path.string() + ": " + e.what());
    }
    return spec_from_json(j, base);
}

std::vector<ResponsiveHead> resolve_responsive_heads(const SynthSpec& spec) {
    if (!spec.responsive_heads.empty()) return spec.responsive_heads;
    const int first = spec.num_layers - spec.responsive_window;
    std::vector<std::pair<int, int>> cells;
    for (int l = first; l < spec.num_layers; ++l) {
        for (int h = 0; h < spec.num_heads; ++h) cells.emplace_back(l, h);
    }
    std::mt19937_64 rng(derive_seed(spec.seed, {kChoiceStream}));
    std::shuffle(cells.begin(), cells.end(), rng);
    cells.resize(static_cast<std::size_t>(spec.num_responsive));
    std::sort(cells.begin(), cells.end());
    // Kinds alternate over the sorted cells so both span the window.
    std::vector<ResponsiveHead> out;
    for (std::size_t i = 0; i < cells.size(); ++i) {
        const auto kind = i % 2 == 0 ? AnomalyKind::suppressed : AnomalyKind::amplified;
        out.push_back({cells[i].first, cells[i].second, kind});
    }
    return out;
}

SynthDataset generate_synthetic_dataset(const SynthSpec& spec) {
    spec.validate();
    SynthDataset ds;
    ds.responsive = resolve_responsive_heads(spec);

    const auto m = static_cast<std::size_t>(spec.num_samples);
    const std::size_t cells = static_cast<std::size_t>(spec.num_layers) * spec.num_heads;

    // Poisoned set: prefix of a seeded permutation.
    std::vector<std::size_t> perm(m);
    std::iota(perm.begin(), perm.end(), std::size_t{0});
    {
        std::mt19937_64 rng(derive_seed(spec.seed, {kPermStream}));
        std::shuffle(perm.begin(), perm.end(), rng);
    }
    const auto n_poison = static_cast<std::size_t>(std::floor(spec.poison_rate * static_cast<double>(m)));
    std::vector<std::uint8_t> poisoned(m, 0);
    for (std::size_t i = 0; i < n_poison; ++i) poisoned[perm[i]] = 1;

    // Per-head clean parameters and planted shift.
    std::vector<double> head_mean(cells);
    std::vector<double> head_std(cells, spec.noise_heads_std);
    std::vector<double> head_shift(cells, 0.0);
    for (std::size_t c = 0; c < cells; ++c) {
        std::mt19937_64 rng(derive_seed(spec.seed, {kHeadStream, c}));
        head_mean[c] = std::uniform_real_distribution<double>(spec.clean_mean_min, spec.clean_mean_max)(rng);
    }
    for (const auto& r : ds.responsive) {
        const std::size_t c = static_cast<std::size_t>(r.layer) * spec.num_heads + r.head;
        head_std[c] = spec.clean_std;
        head_shift[c] = r.kind == AnomalyKind::suppressed ? -spec.shift : spec.shift;
    }

    // values[(sample * cells + c) * 3 + channel]
    std::vector<double> values(m * cells * 3);
    parallel_for(m, [&](std::size_t s) {
        std::mt19937_64 rng(derive_seed(spec.seed, {kSampleStream, s}));
        std::normal_distribution<double> z(0.0, 1.0);
        std::uniform_real_distribution<double> u01(0.0, 1.0);
        std::gamma_distribution<double> g(4.0, 1.0);
        for (std::size_t c = 0; c < cells; ++c) {
            const double base = std::clamp(head_mean[c] + head_std[c] * z(rng), 0.0, 1.0);
            const double shift = poisoned[s] ? head_shift[c] : 0.0;
            const double sys = std::clamp(base + shift, 0.0, 1.0);
            const double attended = (1.0 - base) * (1.0 - spec.excluded_mass_max * u01(rng));
            const double g1 = g(rng);
            const double g2 = g(rng);
            const double share = g1 / (g1 + g2);
            // Vision absorbs the opposite of the system shift.
            double vis = std::clamp(share * attended - (sys - base), 0.0, 1.0 - sys);
            double txt = std::clamp((1.0 - share) * attended, 0.0, std::max(0.0, 1.0 - sys - vis));
            double* out = &values[(s * cells + c) * 3];
            out[0] = sys;
            out[1] = vis;
            out[2] = txt;
        }
    });

    store::DumpManifest manifest;
    manifest.num_samples = spec.num_samples;
    manifest.num_layers = spec.num_layers;
    manifest.num_heads = spec.num_heads;
    manifest.source = spec.source;
    manifest.labels_path = "labels.jsonl";
    store::StoreBuilder builder(manifest, store::kDefaultMassTolerance);
    store::AllocationRecord rec;
    for (std::size_t s = 0; s < m; ++s) {
        rec.sample_id = sample_id(static_cast<std::int64_t>(s), spec.num_samples);
        ds.labels.emplace(rec.sample_id, poisoned[s] != 0);
        for (int l = 0; l < spec.num_layers; ++l) {
            for (int h = 0; h < spec.num_heads; ++h) {
                const double* v = &values[(s * cells + static_cast<std::size_t>(l) * spec.num_heads + h) * 3];
                rec.layer = l;
                rec.head = h;
                rec.alpha_sys = v[0];
                rec.alpha_vis = v[1];
                rec.alpha_txt = v[2];
                builder.add(rec);
            }
        }
    }
    ds.store = std::move(builder).finish();

    if (spec.visual.enabled) {
        int vl = spec.visual.layer;
        int vh = spec.visual.head;
        if (vl < 0 || vh < 0) {
            if (ds.responsive.empty()) {
                vl = spec.num_layers - 1;
                vh = 0;
            } else {
                vl = ds.responsive.front().layer;
                vh = ds.responsive.front().head;
            }
        }
        const auto t = static_cast<std::size_t>(spec.visual.tokens);
        // Trigger location is fixed across the dataset, like a stamped patch.
        std::vector<std::size_t> token_order(t);
        std::iota(token_order.begin(), token_order.end(), std::size_t{0});
        std::mt19937_64 mask_rng(derive_seed(spec.seed, {kVisualStream}));
        std::shuffle(token_order.begin(), token_order.end(), mask_rng);
        std::vector<bool> mask(t, false);
        for (int i = 0; i < spec.visual.trigger_tokens; ++i) mask[token_order[static_cast<std::size_t>(i)]] = true;

        const auto vis = ds.store.channel(store::Channel::vis, vl, vh);
        for (std::size_t s = 0; s < m; ++s) {
            std::mt19937_64 rng(derive_seed(spec.seed, {kVisualStream, s}));
            entropy::VisualAttentionRow row;
            row.sample_id = ds.store.sample_ids()[s];
            row.layer = vl;
            row.head = vh;
            const double alpha = vis[s];
            const bool is_poisoned = ds.labels.at(row.sample_id);
            std::vector<double> w = dirichlet(rng, t, 1.0);
            if (is_poisoned && spec.visual.shape == TriggerShape::patch) {
                const auto on_mask = dirichlet(rng, static_cast<std::size_t>(spec.visual.trigger_tokens), 5.0);
                std::size_t k = 0;
                for (std::size_t i = 0; i < t; ++i) {
                    w[i] *= 1.0 - spec.visual.concentration;
                    if (mask[i]) w[i] += spec.visual.concentration * on_mask[k++];
                }
            }
            row.weights.resize(t);
            for (std::size_t i = 0; i < t; ++i) row.weights[i] = alpha * w[i];
            if (is_poisoned) row.trigger_mask = mask;
            ds.visual_rows.push_back(std::move(row));
        }
    }
    return ds;
}

DatasetPaths write_synthetic_dataset(const SynthDataset& ds, const std::filesystem::path& out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw IoError("cannot create " + out_dir.string() + ": " + ec.message());
    DatasetPaths p{out_dir / "dump.jsonl", out_dir / "manifest.json", out_dir / "labels.jsonl", {}};
    store::write_dump(ds.store, p.dump);
    store::write_manifest(ds.store.manifest(), p.manifest);
    store::write_labels(ds.labels, p.labels);
    if (!ds.visual_rows.empty()) {
        p.visual = out_dir / "visual.jsonl";
        std::ofstream out(p.visual, std::ios::binary);
        if (!out) throw IoError("cannot write " + p.visual.string());
        for (const auto& r : ds.visual_rows) out << entropy::format_visual_row(r) << '\n';
    }
    return p;
}

}  // namespace tcap::synth
