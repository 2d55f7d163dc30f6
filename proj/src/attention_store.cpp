#include "tcap/attention_store.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

#include <json.hpp>

#include "tcap/error.hpp"

namespace tcap::store {

using nlohmann::json;

double component_mass(const AllocationRecord& record) noexcept {
    return record.alpha_sys + record.alpha_vis + record.alpha_txt;
}

std::optional<std::string> check_record(const AllocationRecord& record, double mass_tolerance) {
    const std::array<std::pair<const char*, double>, 3> parts{{
        {"alpha_sys", record.alpha_sys},
        {"alpha_vis", record.alpha_vis},
        {"alpha_txt", record.alpha_txt},
    }};
    for (const auto& [name, v] : parts) {
        if (!std::isfinite(v)) return std::string(name) + " is not finite";
        if (v < 0.0 || v > 1.0) return std::string(name) + " = " + format_double(v) + " outside [0, 1]";
    }
    const double mass = component_mass(record);
    if (mass > 1.0 + mass_tolerance) {
        return "component mass " + format_double(mass) + " exceeds 1 + " + format_double(mass_tolerance);
    }
    if (record.sample_id.empty()) return "empty sample_id";
    if (record.layer < 0) return "negative layer";
    if (record.head < 0) return "negative head";
    return std::nullopt;
}

std::string format_double(double value) {
    std::array<char, 64> buf{};
    auto [end, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), value);
    if (ec != std::errc{}) throw Error("cannot format number");
    return std::string(buf.data(), end);
}

// ---------------------------------------------------------------------------
// AttentionStore

std::size_t AttentionStore::offset(int layer, int head) const {
    if (!contains(layer, head)) {
        throw std::out_of_range("head (" + std::to_string(layer) + ", " + std::to_string(head) +
                                ") outside the " + std::to_string(manifest_.num_layers) + "x" +
                                std::to_string(manifest_.num_heads) + " grid");
    }
    return (static_cast<std::size_t>(layer) * manifest_.num_heads + head) * ids_.size();
}

HeadSeries AttentionStore::series(int layer, int head) const {
    return {layer, head, channel(Channel::sys, layer, head)};
}

std::span<const double> AttentionStore::channel(Channel c, int layer, int head) const {
    const std::size_t off = offset(layer, head);
    const std::vector<double>& src = c == Channel::sys ? sys_ : c == Channel::vis ? vis_ : txt_;
    return std::span<const double>(src).subspan(off, ids_.size());
}

std::vector<AllocationRecord> AttentionStore::records() const {
    std::vector<AllocationRecord> out;
    out.reserve(manifest_.expected_records());
    const std::size_t m = ids_.size();
    for (std::size_t s = 0; s < m; ++s) {
        for (int l = 0; l < manifest_.num_layers; ++l) {
            for (int h = 0; h < manifest_.num_heads; ++h) {
                const std::size_t i = offset(l, h) + s;
                out.push_back({ids_[s], l, h, sys_[i], vis_[i], txt_[i]});
            }
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// StoreBuilder

StoreBuilder::StoreBuilder(DumpManifest manifest, double mass_tolerance)
    : manifest_(std::move(manifest)), mass_tolerance_(mass_tolerance) {
    if (manifest_.num_samples <= 0 || manifest_.num_layers <= 0 || manifest_.num_heads <= 0) {
        throw ManifestMismatch("manifest grid dimensions must be positive");
    }
    const std::size_t cells = manifest_.expected_records();
    values_.assign(cells * 3, 0.0);
    present_.assign(cells, 0);
    index_.reserve(static_cast<std::size_t>(manifest_.num_samples));
}

void StoreBuilder::add(const AllocationRecord& r, const std::string& where, std::size_t line) {
    if (auto problem = check_record(r, mass_tolerance_)) throw MalformedRecord(where, line, *problem);
    if (r.layer >= manifest_.num_layers || r.head >= manifest_.num_heads) {
        throw ManifestMismatch(where + ":" + std::to_string(line) + ": record (layer " +
                               std::to_string(r.layer) + ", head " + std::to_string(r.head) +
                               ") outside the manifest grid " + std::to_string(manifest_.num_layers) +
                               "x" + std::to_string(manifest_.num_heads));
    }
    auto [it, inserted] = index_.try_emplace(r.sample_id, arrival_ids_.size());
    if (inserted) {
        if (arrival_ids_.size() >= static_cast<std::size_t>(manifest_.num_samples)) {
            throw ManifestMismatch(where + ":" + std::to_string(line) + ": more than " +
                                   std::to_string(manifest_.num_samples) +
                                   " distinct sample ids (manifest num_samples)");
        }
        arrival_ids_.push_back(r.sample_id);
    }
    const std::size_t per_sample = static_cast<std::size_t>(manifest_.num_layers) * manifest_.num_heads;
    const std::size_t cell = it->second * per_sample + static_cast<std::size_t>(r.layer) * manifest_.num_heads + r.head;
    if (present_[cell]) {
        throw DuplicateRecord(where, line,
                              "(" + r.sample_id + ", " + std::to_string(r.layer) + ", " + std::to_string(r.head) + ")");
    }
    present_[cell] = 1;
    values_[cell * 3 + 0] = r.alpha_sys;
    values_[cell * 3 + 1] = r.alpha_vis;
    values_[cell * 3 + 2] = r.alpha_txt;
    ++count_;
}

AttentionStore StoreBuilder::finish() && {
    const std::size_t expected = manifest_.expected_records();
    if (count_ != expected) throw IncompleteDump(expected - count_);

    const std::size_t m = arrival_ids_.size();
    std::vector<std::size_t> order(m);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return arrival_ids_[a] < arrival_ids_[b]; });

    AttentionStore store;
    store.manifest_ = std::move(manifest_);
    store.ids_.reserve(m);
    for (std::size_t s : order) store.ids_.push_back(std::move(arrival_ids_[s]));

    const std::size_t cells = static_cast<std::size_t>(store.manifest_.num_layers) * store.manifest_.num_heads;
    store.sys_.resize(cells * m);
    store.vis_.resize(cells * m);
    store.txt_.resize(cells * m);
    for (std::size_t rank = 0; rank < m; ++rank) {
        const std::size_t src = order[rank];
        for (std::size_t c = 0; c < cells; ++c) {
            const std::size_t from = (src * cells + c) * 3;
            const std::size_t to = c * m + rank;
            store.sys_[to] = values_[from + 0];
            store.vis_[to] = values_[from + 1];
            store.txt_[to] = values_[from + 2];
        }
    }
    return store;
}

// ---------------------------------------------------------------------------
// Manifest

DumpManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open manifest " + path.string());
    json j;
    try {
        j = json::parse(in);
    } catch (const json::exception& e) {
        throw ManifestMismatch(path.string() + ": manifest is not valid JSON: " + e.what());
    }
    DumpManifest m;
    try {
        m.num_samples = j.at("num_samples").get<std::int64_t>();
        m.num_layers = j.at("num_layers").get<int>();
        m.num_heads = j.at("num_heads").get<int>();
        m.format_version = j.at("format_version").get<int>();
        m.source = j.value("source", std::string{});
        if (j.contains("labels_path") && !j["labels_path"].is_null()) {
            m.labels_path = j["labels_path"].get<std::string>();
        }
    } catch (const json::exception& e) {
        throw ManifestMismatch(path.string() + ": " + e.what());
    }
    if (m.format_version != kFormatVersion) {
        throw ManifestMismatch(path.string() + ": unsupported format_version " + std::to_string(m.format_version));
    }
    if (m.num_samples <= 0 || m.num_layers <= 0 || m.num_heads <= 0) {
        throw ManifestMismatch(path.string() + ": grid dimensions must be positive");
    }
    return m;
}

void write_manifest(const DumpManifest& m, const std::filesystem::path& path) {
    nlohmann::ordered_json j;
    j["num_samples"] = m.num_samples;
    j["num_layers"] = m.num_layers;
    j["num_heads"] = m.num_heads;
    j["format_version"] = m.format_version;
    j["source"] = m.source;
    if (m.labels_path) j["labels_path"] = *m.labels_path;
    std::ofstream out(path);
    if (!out) throw IoError("cannot write manifest " + path.string());
    out << j.dump(2) << '\n';
}

// ---------------------------------------------------------------------------
// Records

AllocationRecord parse_record(const std::string& line, const std::string& where, std::size_t lineno) {
    json j;
    try {
        j = json::parse(line);
    } catch (const json::exception& e) {
        throw MalformedRecord(where, lineno, std::string("invalid JSON: ") + e.what());
    }
    if (!j.is_object()) throw MalformedRecord(where, lineno, "record is not a JSON object");
    if (j.size() != 6) throw MalformedRecord(where, lineno, "expected exactly 6 fields");

    AllocationRecord r;
    auto need = [&](const char* key) -> const json& {
        auto it = j.find(key);
        if (it == j.end()) throw MalformedRecord(where, lineno, std::string("missing field ") + key);
        return *it;
    };
    const json& id = need("sample_id");
    if (!id.is_string()) throw MalformedRecord(where, lineno, "sample_id must be a string");
    r.sample_id = id.get<std::string>();
    for (auto [key, dst] : {std::pair{"layer", &r.layer}, std::pair{"head", &r.head}}) {
        const json& v = need(key);
        if (!v.is_number_integer()) throw MalformedRecord(where, lineno, std::string(key) + " must be an integer");
        const auto wide = v.get<std::int64_t>();
        if (wide < 0 || wide > std::numeric_limits<int>::max()) {
            throw MalformedRecord(where, lineno, std::string(key) + " out of range");
        }
        *dst = static_cast<int>(wide);
    }
    for (auto [key, dst] : {std::pair{"alpha_sys", &r.alpha_sys}, std::pair{"alpha_vis", &r.alpha_vis},
                            std::pair{"alpha_txt", &r.alpha_txt}}) {
        const json& v = need(key);
        if (!v.is_number()) throw MalformedRecord(where, lineno, std::string(key) + " must be a number");
        *dst = v.get<double>();
    }
    return r;
}

std::string format_record(const AllocationRecord& r) {
    std::string out;
    out.reserve(160);
    out += "{\"sample_id\":";
    out += json(r.sample_id).dump();
    out += ",\"layer\":";
    out += std::to_string(r.layer);
    out += ",\"head\":";
    out += std::to_string(r.head);
    out += ",\"alpha_sys\":";
    out += format_double(r.alpha_sys);
    out += ",\"alpha_vis\":";
    out += format_double(r.alpha_vis);
    out += ",\"alpha_txt\":";
    out += format_double(r.alpha_txt);
    out += '}';
    return out;
}

AttentionStore ingest_dump(std::istream& in, const DumpManifest& manifest, double mass_tolerance,
                           const std::string& where) {
    StoreBuilder builder(manifest, mass_tolerance);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.find_first_not_of(" \t") == std::string::npos) continue;
        builder.add(parse_record(line, where, lineno), where, lineno);
    }
    return std::move(builder).finish();
}

AttentionStore ingest_dump(const std::filesystem::path& dump_path, const std::filesystem::path& manifest_path,
                           double mass_tolerance) {
    const DumpManifest manifest = read_manifest(manifest_path);
    std::ifstream in(dump_path);
    if (!in) throw IoError("cannot open dump " + dump_path.string());
    return ingest_dump(in, manifest, mass_tolerance, dump_path.string());
}

void write_dump(const AttentionStore& store, std::ostream& out) {
    const std::size_t m = store.num_samples();
    for (std::size_t s = 0; s < m; ++s) {
        for (int l = 0; l < store.num_layers(); ++l) {
            for (int h = 0; h < store.num_heads(); ++h) {
                AllocationRecord r{store.sample_ids()[s], l, h,
                                   store.channel(Channel::sys, l, h)[s],
                                   store.channel(Channel::vis, l, h)[s],
                                   store.channel(Channel::txt, l, h)[s]};
                out << format_record(r) << '\n';
            }
        }
    }
}

void write_dump(const AttentionStore& store, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write dump " + path.string());
    write_dump(store, out);
    if (!out) throw IoError("write failed for " + path.string());
}

// ---------------------------------------------------------------------------
// Labels

LabelMap read_labels(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open label file " + path.string());
    LabelMap labels;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        try {
            const json j = json::parse(line);
            auto id = j.at("sample_id").get<std::string>();
            const bool poisoned = j.at("poisoned").get<bool>();
            if (!labels.emplace(std::move(id), poisoned).second) {
                throw LabelMismatch(path.string() + ":" + std::to_string(lineno) + ": duplicate label");
            }
        } catch (const json::exception& e) {
            throw LabelMismatch(path.string() + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
    return labels;
}

void write_labels(const LabelMap& labels, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot write labels " + path.string());
    for (const auto& [id, poisoned] : labels) {
        out << "{\"sample_id\":" << json(id).dump() << ",\"poisoned\":" << (poisoned ? "true" : "false") << "}\n";
    }
}

}  // namespace tcap::store
