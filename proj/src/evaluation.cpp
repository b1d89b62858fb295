#include "featimg/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <iomanip>
#include <set>
#include <sstream>

#include "featimg/io_util.hpp"

namespace featimg {

namespace {

constexpr const char* kReportFormat = "featimg-metrics-report";
constexpr int kReportVersion = 1;

std::string gap_name(const CellGap& g) {
    return to_string(g.spec) + "/" + to_string(g.task) + "/fold " + std::to_string(g.fold);
}

std::string describe_gaps(const std::vector<CellGap>& gaps) {
    std::string msg = "report is incomplete; missing " + std::to_string(gaps.size()) + " cell(s):";
    for (const auto& g : gaps) msg += "\n  " + gap_name(g);
    return msg;
}

std::string task_title(TaskKind t) {
    return t == TaskKind::Motility ? "Motility" : "Morphology";
}

nlohmann::json strip_checksum(nlohmann::json j) {
    j.erase("checksum");
    return j;
}

std::string checksum_of(const nlohmann::json& body) {
    return io::hex32(io::crc32(body.dump()));
}

} // namespace

double mae(std::span<const Triple> predictions, std::span<const Triple> targets) {
    if (predictions.size() != targets.size()) {
        throw PreconditionError("mae: " + std::to_string(predictions.size()) + " predictions vs " +
                                std::to_string(targets.size()) + " targets");
    }
    if (predictions.empty()) {
        throw PreconditionError("mae: empty input");
    }
    double sum = 0;
    for (std::size_t i = 0; i < predictions.size(); ++i) {
        for (int k = 0; k < 3; ++k) {
            if (!std::isfinite(predictions[i][k]) || !std::isfinite(targets[i][k])) {
                throw PreconditionError("mae: non-finite value at sample " + std::to_string(i));
            }
            sum += std::abs(predictions[i][k] - targets[i][k]);
        }
    }
    return sum / static_cast<double>(3 * predictions.size());
}

double average_folds(std::span<const double> fold_maes) {
    if (fold_maes.size() != static_cast<std::size_t>(FoldSplit::kFolds)) {
        throw PreconditionError("average_folds needs exactly 3 values, got " + std::to_string(fold_maes.size()));
    }
    double sum = 0;
    for (double v : fold_maes) {
        if (!std::isfinite(v)) throw PreconditionError("average_folds: non-finite fold MAE");
        sum += v;
    }
    return sum / 3.0;
}

std::string format_3dp(double value) {
    if (!std::isfinite(value)) {
        throw PreconditionError("cannot format a non-finite value");
    }
    char buf[400];
    const auto res = std::to_chars(buf, buf + sizeof buf, std::abs(value), std::chars_format::fixed);
    std::string text(buf, res.ptr);
    const auto dot = text.find('.');
    std::string whole = dot == std::string::npos ? text : text.substr(0, dot);
    std::string frac = dot == std::string::npos ? "" : text.substr(dot + 1);
    const bool round_up = frac.size() > 3 && frac[3] >= '5';
    frac.resize(3, '0');

    std::string digits = whole + frac;
    if (round_up) {
        int i = static_cast<int>(digits.size()) - 1;
        while (i >= 0 && digits[i] == '9') digits[i--] = '0';
        if (i < 0) {
            digits.insert(digits.begin(), '1');
        } else {
            ++digits[i];
        }
    }
    std::string out = digits.substr(0, digits.size() - 3) + "." + digits.substr(digits.size() - 3);
    const bool zero = std::all_of(digits.begin(), digits.end(), [](char c) { return c == '0'; });
    return (value < 0 && !zero) ? "-" + out : out;
}

std::vector<Cell> full_grid() {
    std::vector<Cell> grid;
    for (auto spec : all_specs()) {
        for (auto task : {TaskKind::Motility, TaskKind::Morphology}) grid.push_back({spec, task});
    }
    return grid;
}

IncompleteReportError::IncompleteReportError(std::vector<CellGap> missing)
    : ValidationError(describe_gaps(missing)), missing_(std::move(missing)) {}

void MetricsReport::add(const FoldResult& r) {
    if (r.fold < 1 || r.fold > FoldSplit::kFolds) {
        throw ValidationError("fold result has fold " + std::to_string(r.fold) + ", expected 1..3");
    }
    if (!std::isfinite(r.mae) || r.mae < 0) {
        throw ValidationError("fold MAE must be finite and non-negative");
    }
    if (find(r.spec, r.task, r.fold)) {
        throw ConflictError("duplicate result for " + gap_name({r.spec, r.task, r.fold}));
    }
    const Cell cell{r.spec, r.task};
    if (std::find(cells.begin(), cells.end(), cell) == cells.end()) cells.push_back(cell);
    results.push_back(r);
}

void MetricsReport::merge(const MetricsReport& other) {
    for (const auto& c : other.cells) {
        if (std::find(cells.begin(), cells.end(), c) == cells.end()) cells.push_back(c);
    }
    for (const auto& r : other.results) add(r);
    for (const auto& [k, v] : other.seeds.items()) seeds[k] = v;
    finalize();
}

void MetricsReport::finalize() {
    std::sort(cells.begin(), cells.end());
    std::sort(results.begin(), results.end(), [](const FoldResult& a, const FoldResult& b) {
        return std::tie(a.spec, a.task, a.fold) < std::tie(b.spec, b.task, b.fold);
    });
    averages.clear();
    for (const auto& cell : cells) {
        std::vector<double> maes;
        for (int f = 1; f <= FoldSplit::kFolds; ++f) {
            if (const auto* r = find(cell.spec, cell.task, f)) maes.push_back(r->mae);
        }
        if (maes.size() == static_cast<std::size_t>(FoldSplit::kFolds)) averages[cell] = average_folds(maes);
    }
}

std::vector<CellGap> MetricsReport::missing() const {
    const auto expected = cells.empty() ? full_grid() : cells;
    std::vector<CellGap> gaps;
    for (const auto& cell : expected) {
        for (int f = 1; f <= FoldSplit::kFolds; ++f) {
            if (!find(cell.spec, cell.task, f)) gaps.push_back({cell.spec, cell.task, f});
        }
    }
    return gaps;
}

const FoldResult* MetricsReport::find(InputStackSpec spec, TaskKind task, int fold) const {
    for (const auto& r : results) {
        if (r.spec == spec && r.task == task && r.fold == fold) return &r;
    }
    return nullptr;
}

std::string render_report(const MetricsReport& input) {
    if (auto gaps = input.missing(); !gaps.empty()) {
        throw IncompleteReportError(std::move(gaps));
    }
    auto report = input;
    report.finalize();
    std::vector<InputStackSpec> specs;
    std::vector<TaskKind> tasks;
    for (const auto& c : report.cells) {
        if (std::find(specs.begin(), specs.end(), c.spec) == specs.end()) specs.push_back(c.spec);
        if (std::find(tasks.begin(), tasks.end(), c.task) == tasks.end()) tasks.push_back(c.task);
    }
    std::sort(specs.begin(), specs.end());
    std::sort(tasks.begin(), tasks.end());

    // Rows of cells; a column pair per task.
    std::vector<std::vector<std::string>> rows;
    std::vector<std::string> header{"Input", "Fold"};
    for (auto t : tasks) {
        header.push_back(task_title(t) + " MAE");
        header.push_back("Average");
    }
    rows.push_back(header);
    std::vector<std::size_t> group_starts;
    for (auto spec : specs) {
        group_starts.push_back(rows.size());
        for (int f = 1; f <= FoldSplit::kFolds; ++f) {
            std::vector<std::string> row{f == 1 ? to_string(spec) : "", "Fold " + std::to_string(f)};
            for (auto t : tasks) {
                const auto* r = report.find(spec, t, f);
                const auto avg = report.averages.find({spec, t});
                row.push_back(r ? format_3dp(r->mae) : "-");
                row.push_back(f == 1 && avg != report.averages.end() ? format_3dp(avg->second) : "");
            }
            rows.push_back(row);
        }
    }

    std::vector<std::size_t> width(header.size(), 0);
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
    }
    auto rule = [&] {
        std::string line;
        for (std::size_t c = 0; c < width.size(); ++c) line += (c ? "  " : "") + std::string(width[c], '-');
        return line + "\n";
    };

    std::ostringstream out;
    for (std::size_t i = 0; i < rows.size(); ++i) {
        if (i == 1 || (i > 1 && std::find(group_starts.begin(), group_starts.end(), i) != group_starts.end())) {
            out << rule();
        }
        std::string line;
        for (std::size_t c = 0; c < rows[i].size(); ++c) {
            std::ostringstream cell;
            // Labels left-aligned, numbers right-aligned.
            if (c < 2) {
                cell << std::left << std::setw(static_cast<int>(width[c])) << rows[i][c];
            } else {
                cell << std::right << std::setw(static_cast<int>(width[c])) << rows[i][c];
            }
            line += (c ? "  " : "") + cell.str();
        }
        while (!line.empty() && line.back() == ' ') line.pop_back();
        out << line << "\n";
    }
    return out.str();
}

std::string report_to_csv(const MetricsReport& report) {
    std::string out = "spec,task,fold,mae,n_videos\n";
    auto sorted = report;
    sorted.finalize();
    for (const auto& r : sorted.results) {
        out += to_string(r.spec) + "," + to_string(r.task) + "," + std::to_string(r.fold) + "," +
               io::format_double(r.mae) + "," + std::to_string(r.n_videos) + "\n";
    }
    for (const auto& [cell, avg] : sorted.averages) {
        out += to_string(cell.spec) + "," + to_string(cell.task) + ",average," + io::format_double(avg) + ",\n";
    }
    return out;
}

nlohmann::json report_to_json(const MetricsReport& report) {
    auto sorted = report;
    sorted.finalize();
    nlohmann::json j;
    j["format"] = kReportFormat;
    j["version"] = kReportVersion;
    j["config"] = sorted.config;
    j["config_hash"] = io::hex32(io::crc32(sorted.config.dump()));
    j["seeds"] = sorted.seeds;
    j["cells"] = nlohmann::json::array();
    for (const auto& c : sorted.cells) j["cells"].push_back({{"spec", to_string(c.spec)}, {"task", to_string(c.task)}});
    j["results"] = nlohmann::json::array();
    for (const auto& r : sorted.results) {
        j["results"].push_back({{"spec", to_string(r.spec)},
                                {"task", to_string(r.task)},
                                {"fold", r.fold},
                                {"mae", r.mae},
                                {"n_videos", r.n_videos}});
    }
    j["averages"] = nlohmann::json::array();
    for (const auto& [cell, avg] : sorted.averages) {
        j["averages"].push_back({{"spec", to_string(cell.spec)}, {"task", to_string(cell.task)}, {"mae", avg}});
    }
    if (!sorted.created_at.empty()) j["created_at"] = sorted.created_at;
    j["checksum"] = checksum_of(j);
    return j;
}

MetricsReport report_from_json(const nlohmann::json& j) {
    if (!j.is_object() || !j.contains("checksum")) {
        throw ChecksumError("report has no checksum");
    }
    if (j.at("checksum") != checksum_of(strip_checksum(j))) {
        throw ChecksumError("report checksum mismatch");
    }
    if (j.value("format", "") != kReportFormat) {
        throw SchemaError("not a metrics report");
    }
    if (j.value("version", 0) != kReportVersion) {
        throw VersionError("unsupported report version " + j.at("version").dump());
    }
    try {
        MetricsReport report;
        report.config = j.at("config");
        report.seeds = j.at("seeds");
        report.created_at = j.value("created_at", "");
        for (const auto& c : j.at("cells")) {
            report.cells.push_back({parse_spec(c.at("spec").get<std::string>()), parse_task(c.at("task").get<std::string>())});
        }
        for (const auto& r : j.at("results")) {
            report.add({r.at("fold").get<int>(), parse_task(r.at("task").get<std::string>()),
                        parse_spec(r.at("spec").get<std::string>()), r.at("mae").get<double>(),
                        r.at("n_videos").get<int>()});
        }
        report.finalize();
        std::set<Cell> stored;
        for (const auto& a : j.at("averages")) {
            const Cell cell{parse_spec(a.at("spec").get<std::string>()), parse_task(a.at("task").get<std::string>())};
            const auto it = report.averages.find(cell);
            if (it == report.averages.end() || std::abs(it->second - a.at("mae").get<double>()) > 5e-4) {
                throw ValidationError("stored average for " + to_string(cell.spec) + "/" + to_string(cell.task) +
                                      " disagrees with its fold results");
            }
            it->second = a.at("mae").get<double>();
            stored.insert(cell);
        }
        if (stored.size() != report.averages.size()) {
            throw ValidationError("report lacks averages for some complete cells");
        }
        return report;
    } catch (const nlohmann::json::exception& e) {
        throw SchemaError(std::string("malformed report: ") + e.what());
    } catch (const UsageError& e) {
        throw SchemaError(std::string("malformed report: ") + e.what());
    }
}

std::string serialize_report(const MetricsReport& report) {
    return report_to_json(report).dump(2) + "\n";
}

void save_report(const std::filesystem::path& path, const MetricsReport& report) {
    io::write_atomic(path, serialize_report(report));
}

MetricsReport load_report(const std::filesystem::path& path) {
    const auto text = io::read_text(path);
    nlohmann::json j;
    try {
        j = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
        throw ChecksumError(path.string() + ": report is corrupt (unparseable)");
    }
    return report_from_json(j);
}

} // namespace featimg
