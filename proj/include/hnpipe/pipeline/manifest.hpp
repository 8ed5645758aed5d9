#pragma once
#include <filesystem>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "../csv.hpp"
#include "../error.hpp"

namespace hnpipe::pipeline {

struct PatientEntry {
    std::string id;
    std::string ct_path;
    std::string pet_path;
    std::vector<std::string> probmap_paths;
    std::optional<std::string> truth_path;
    std::string center;
};

/// One row per patient. Paths are stored resolved against the manifest's directory.
struct CohortManifest {
    std::vector<PatientEntry> patients;

    std::size_t size() const { return patients.size(); }
};

inline constexpr const char* kManifestHeader[] = {"patient_id", "ct_path", "pet_path", "probmap_paths",
                                                  "truth_mask_path", "center_id"};

namespace detail {

inline std::string resolve(const std::filesystem::path& base, const std::string& p)
{
    if (p.empty()) return p;
    const std::filesystem::path path(p);
    return (path.is_absolute() ? path : base / path).lexically_normal().string();
}

} // namespace detail

/// probmap_paths holds one or more paths separated by ';'. truth_mask_path may be empty.
inline CohortManifest load_manifest(const std::string& path)
{
    const auto t = csv::read_file(path);
    std::array<std::size_t, 6> col{};
    for (std::size_t i = 0; i < 6; ++i) col[i] = t.require_column(kManifestHeader[i], path);
    const auto base = std::filesystem::path(path).parent_path();
    CohortManifest m;
    std::set<std::string> seen;
    for (std::size_t r = 0; r < t.rows.size(); ++r) {
        const auto& row = t.rows[r];
        PatientEntry e;
        e.id = row[col[0]];
        if (e.id.empty()) throw IoError(path + ": row " + std::to_string(r + 1) + " has an empty patient_id");
        if (!seen.insert(e.id).second) throw IoError(path + ": duplicate patient id " + e.id);
        e.ct_path = detail::resolve(base, row[col[1]]);
        e.pet_path = detail::resolve(base, row[col[2]]);
        std::string cell = row[col[3]];
        for (std::size_t start = 0; start <= cell.size();) {
            const auto end = std::min(cell.find(';', start), cell.size());
            if (end > start) e.probmap_paths.push_back(detail::resolve(base, cell.substr(start, end - start)));
            start = end + 1;
        }
        if (!row[col[4]].empty()) e.truth_path = detail::resolve(base, row[col[4]]);
        e.center = row[col[5]];
        m.patients.push_back(std::move(e));
    }
    return m;
}

struct CenterSplit {
    std::string center;
    std::vector<std::string> train;
    std::vector<std::string> test;
};

/// One split per center; the test set is that center's patients.
inline std::vector<CenterSplit> leave_one_center_out_splits(const CohortManifest& m)
{
    std::map<std::string, std::vector<std::string>> by_center;
    for (const auto& p : m.patients) by_center[p.center].push_back(p.id);
    if (by_center.size() < 2)
        throw InvalidArgument("leave-one-center-out needs at least 2 centers, manifest has " +
                              std::to_string(by_center.size()));
    std::vector<CenterSplit> out;
    for (const auto& [center, ids] : by_center) {
        CenterSplit s;
        s.center = center;
        s.test = ids;
        for (const auto& p : m.patients)
            if (p.center != center) s.train.push_back(p.id);
        out.push_back(std::move(s));
    }
    return out;
}

} // namespace hnpipe::pipeline
