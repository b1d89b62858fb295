#pragma once

#include <compare>
#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "featimg/core_data.hpp"
#include "featimg/errors.hpp"

namespace featimg {

/// Mean over all samples and all three components of |pred - target|.
double mae(std::span<const Triple> predictions, std::span<const Triple> targets);

/// Arithmetic mean of exactly three fold MAEs.
double average_folds(std::span<const double> fold_maes);

/// Three decimals, half away from zero, decided on the shortest decimal
/// representation of `value` (so 13.0165 renders "13.017").
std::string format_3dp(double value);

struct FoldResult {
    int fold = 1;
    TaskKind task = TaskKind::Motility;
    InputStackSpec spec = InputStackSpec::I1;
    double mae = 0;
    int n_videos = 0;

    bool operator==(const FoldResult&) const = default;
};

struct Cell {
    InputStackSpec spec = InputStackSpec::I1;
    TaskKind task = TaskKind::Motility;

    auto operator<=>(const Cell&) const = default;
};

struct CellGap {
    InputStackSpec spec;
    TaskKind task;
    int fold;

    bool operator==(const CellGap&) const = default;
};

/// Every (spec, task) pair of the published table, I1..I4 × both tasks.
std::vector<Cell> full_grid();

class IncompleteReportError : public ValidationError {
public:
    explicit IncompleteReportError(std::vector<CellGap> missing);
    const std::vector<CellGap>& missing() const noexcept { return missing_; }

private:
    std::vector<CellGap> missing_;
};

struct MetricsReport {
    /// Cells the run was asked for; empty means the full grid.
    std::vector<Cell> cells;
    std::vector<FoldResult> results;
    /// Filled by `finalize` for every cell with all three folds present.
    std::map<Cell, double> averages;
    nlohmann::json config = nlohmann::json::object();
    nlohmann::json seeds = nlohmann::json::object();
    /// Omitted from exports when empty.
    std::string created_at;

    void add(const FoldResult& r);
    /// Appends the other report's cells, results and seeds, then finalizes.
    void merge(const MetricsReport& other);
    /// Sorts results by (spec, task, fold) and recomputes averages.
    void finalize();
    std::vector<CellGap> missing() const;
    const FoldResult* find(InputStackSpec spec, TaskKind task, int fold) const;

    bool operator==(const MetricsReport&) const = default;
};

/// Text table grouped by spec, one column pair (MAE, Average) per task.
/// Throws IncompleteReportError listing every missing (spec, task, fold).
std::string render_report(const MetricsReport& report);

/// spec,task,fold,mae,n_videos rows at full precision; averages carry
/// fold "average" and an empty n_videos.
std::string report_to_csv(const MetricsReport& report);

/// Key-value tree including a CRC-32 "checksum" over the rest of the tree.
nlohmann::json report_to_json(const MetricsReport& report);
/// Verifies the checksum (ChecksumError) and the format version (VersionError).
MetricsReport report_from_json(const nlohmann::json& j);

/// Pretty-printed JSON plus trailing newline; the bytes are a pure function
/// of the report.
std::string serialize_report(const MetricsReport& report);
void save_report(const std::filesystem::path& path, const MetricsReport& report);
/// Unparseable content is reported as ChecksumError.
MetricsReport load_report(const std::filesystem::path& path);

} // namespace featimg
