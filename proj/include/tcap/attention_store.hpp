#pragma once
// Attention dump data model: JSONL allocation records, the JSON manifest and
// an immutable in-memory store indexed by (layer, head).

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace tcap::store {

inline constexpr int kFormatVersion = 1;
inline constexpr double kDefaultMassTolerance = 1e-3;

// One (sample, layer, head) triple: the summed first-token attention on the
// system, vision and user-text spans.
struct AllocationRecord {
    std::string sample_id;
    int layer = 0;
    int head = 0;
    double alpha_sys = 0.0;
    double alpha_vis = 0.0;
    double alpha_txt = 0.0;

    bool operator==(const AllocationRecord&) const = default;
};

double component_mass(const AllocationRecord& record) noexcept;

// Returns a description of the first violated constraint, or nullopt when the
// record is valid (finite components in [0, 1], mass <= 1 + tolerance).
std::optional<std::string> check_record(const AllocationRecord& record, double mass_tolerance);

struct DumpManifest {
    std::int64_t num_samples = 0;
    int num_layers = 0;
    int num_heads = 0;
    int format_version = kFormatVersion;
    std::string source;
    std::optional<std::string> labels_path;

    std::size_t expected_records() const noexcept {
        return static_cast<std::size_t>(num_samples) * static_cast<std::size_t>(num_layers) *
               static_cast<std::size_t>(num_heads);
    }

    bool operator==(const DumpManifest&) const = default;
};

enum class Channel { sys, vis, txt };

// alpha_sys values of one head, aligned with AttentionStore::sample_ids().
struct HeadSeries {
    int layer = 0;
    int head = 0;
    std::span<const double> values;
};

class AttentionStore {
public:
    AttentionStore() = default;

    const DumpManifest& manifest() const noexcept { return manifest_; }
    int num_layers() const noexcept { return manifest_.num_layers; }
    int num_heads() const noexcept { return manifest_.num_heads; }
    std::size_t num_samples() const noexcept { return ids_.size(); }

    // Lexicographically sorted sample ids; every series is indexed this way.
    const std::vector<std::string>& sample_ids() const noexcept { return ids_; }

    bool contains(int layer, int head) const noexcept {
        return layer >= 0 && layer < manifest_.num_layers && head >= 0 && head < manifest_.num_heads;
    }

    HeadSeries series(int layer, int head) const;
    std::span<const double> channel(Channel c, int layer, int head) const;

    // Records in canonical order: sample-major, then layer, then head.
    std::vector<AllocationRecord> records() const;

    bool operator==(const AttentionStore&) const = default;

private:
    friend class StoreBuilder;

    std::size_t offset(int layer, int head) const;

    DumpManifest manifest_;
    std::vector<std::string> ids_;
    // Head-major: [(layer * H + head) * M + sample].
    std::vector<double> sys_;
    std::vector<double> vis_;
    std::vector<double> txt_;
};

// Accumulates records in any order and validates completeness on finish().
class StoreBuilder {
public:
    StoreBuilder(DumpManifest manifest, double mass_tolerance = kDefaultMassTolerance);

    // `where` and `line` only feed error messages.
    void add(const AllocationRecord& record, const std::string& where = "<memory>", std::size_t line = 0);

    AttentionStore finish() &&;

private:
    DumpManifest manifest_;
    double mass_tolerance_;
    std::unordered_map<std::string, std::size_t> index_;
    std::vector<std::string> arrival_ids_;
    std::vector<double> values_;          // [(sample * L*H + cell) * 3 + channel]
    std::vector<std::uint8_t> present_;   // [sample * L*H + cell]
    std::size_t count_ = 0;
};

DumpManifest read_manifest(const std::filesystem::path& path);
void write_manifest(const DumpManifest& manifest, const std::filesystem::path& path);

AllocationRecord parse_record(const std::string& line, const std::string& where, std::size_t lineno);
std::string format_record(const AllocationRecord& record);

AttentionStore ingest_dump(const std::filesystem::path& dump_path,
                           const std::filesystem::path& manifest_path,
                           double mass_tolerance = kDefaultMassTolerance);

AttentionStore ingest_dump(std::istream& dump, const DumpManifest& manifest,
                           double mass_tolerance = kDefaultMassTolerance,
                           const std::string& where = "<stream>");

void write_dump(const AttentionStore& store, std::ostream& out);
void write_dump(const AttentionStore& store, const std::filesystem::path& path);

// Ground-truth labels (evaluation only).
using LabelMap = std::map<std::string, bool>;

LabelMap read_labels(const std::filesystem::path& path);
void write_labels(const LabelMap& labels, const std::filesystem::path& path);

// Shortest decimal form that round-trips bit-exactly.
std::string format_double(double value);

}  // namespace tcap::store
