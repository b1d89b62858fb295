#include "featimg/core_data.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "featimg/io_util.hpp"

namespace featimg {

namespace {

std::string lower(std::string_view text) {
    std::string out(text);
    std::transform(out.begin(), out.end(), out.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    return out;
}

// Splits text into non-blank lines; the first one is the header.
std::vector<std::string_view> lines_of(std::string_view text) {
    std::vector<std::string_view> out;
    for (auto line : io::split(text, '\n')) {
        if (!line.empty() && line.back() == '\r') {
            line.remove_suffix(1);
        }
        if (!io::trim(line).empty()) {
            out.push_back(line);
        }
    }
    return out;
}

void check_header(std::string_view got, std::string_view expected, std::string_view what) {
    const auto got_cols = io::split(got, ',');
    const auto want_cols = io::split(expected, ',');
    for (const auto col : want_cols) {
        const bool present = std::any_of(got_cols.begin(), got_cols.end(),
                                         [&](std::string_view c) { return io::trim(c) == col; });
        if (!present) {
            throw SchemaError(std::string(what) + " file is missing column '" + std::string(col) + "'");
        }
    }
    if (got_cols.size() != want_cols.size()) {
        throw SchemaError(std::string(what) + " header must be '" + std::string(expected) + "'");
    }
    for (std::size_t i = 0; i < want_cols.size(); ++i) {
        if (io::trim(got_cols[i]) != want_cols[i]) {
            throw SchemaError(std::string(what) + " header columns out of order; expected '" +
                              std::string(expected) + "'");
        }
    }
}

} // namespace

std::string to_string(InputStackSpec spec) {
    return "I" + std::to_string(static_cast<int>(spec));
}

InputStackSpec parse_spec(std::string_view name) {
    const auto n = lower(io::trim(name));
    if (n == "i1") return InputStackSpec::I1;
    if (n == "i2") return InputStackSpec::I2;
    if (n == "i3") return InputStackSpec::I3;
    if (n == "i4") return InputStackSpec::I4;
    throw UsageError("unknown input spec '" + std::string(name) + "'; valid specs: I1, I2, I3, I4");
}

std::string to_string(TaskKind task) {
    return task == TaskKind::Motility ? "motility" : "morphology";
}

TaskKind parse_task(std::string_view name) {
    const auto n = lower(io::trim(name));
    if (n == "motility") return TaskKind::Motility;
    if (n == "morphology") return TaskKind::Morphology;
    throw UsageError("unknown task '" + std::string(name) +
                     "'; valid tasks: motility, morphology (one task per model)");
}

void validate_labels(const SemenLabels& l, std::string_view video_id) {
    const std::pair<const char*, double> fields[] = {
        {"progressive", l.progressive},   {"non_progressive", l.non_progressive},
        {"immotile", l.immotile},         {"head_defects", l.head_defects},
        {"midpiece_defects", l.midpiece_defects}, {"tail_defects", l.tail_defects},
    };
    for (const auto& [name, value] : fields) {
        if (!(value >= 0.0 && value <= 100.0)) {
            throw ValidationError("video " + std::string(video_id) + ": " + name + "=" +
                                  io::format_double(value) + " outside [0,100]");
        }
    }
    const double sum = l.progressive + l.non_progressive + l.immotile;
    if (std::abs(sum - 100.0) > kMotilitySumTolerance) {
        throw ValidationError("video " + std::string(video_id) + ": motility percentages sum to " +
                              io::format_double(sum) + ", expected 100");
    }
}

Triple select_target(const SemenLabels& l, TaskKind task) noexcept {
    if (task == TaskKind::Motility) {
        return {l.progressive, l.non_progressive, l.immotile};
    }
    return {l.head_defects, l.midpiece_defects, l.tail_defects};
}

LabelMap parse_labels(std::string_view text) {
    const auto lines = lines_of(text);
    if (lines.empty()) {
        throw SchemaError("label file is empty (header required)");
    }
    check_header(lines.front(), kLabelHeader, "label");
    LabelMap out;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cols = io::split(lines[i], ',');
        if (cols.size() != 7) {
            throw SchemaError("label row " + std::to_string(i) + " has " + std::to_string(cols.size()) +
                              " columns, expected 7");
        }
        const std::string id(io::trim(cols[0]));
        if (id.empty()) {
            throw SchemaError("label row " + std::to_string(i) + " has an empty video_id");
        }
        SemenLabels l;
        l.progressive = io::parse_double(cols[1]);
        l.non_progressive = io::parse_double(cols[2]);
        l.immotile = io::parse_double(cols[3]);
        l.head_defects = io::parse_double(cols[4]);
        l.midpiece_defects = io::parse_double(cols[5]);
        l.tail_defects = io::parse_double(cols[6]);
        validate_labels(l, id);
        if (!out.emplace(id, l).second) {
            throw ConflictError("duplicate video_id '" + id + "' in label file");
        }
    }
    return out;
}

LabelMap load_labels(const std::filesystem::path& path) {
    return parse_labels(io::read_text(path));
}

std::string format_labels(const LabelMap& labels) {
    std::string out(kLabelHeader);
    out += '\n';
    for (const auto& [id, l] : labels) {
        out += id;
        for (double v : {l.progressive, l.non_progressive, l.immotile, l.head_defects, l.midpiece_defects,
                         l.tail_defects}) {
            out += ',';
            out += io::format_double(v);
        }
        out += '\n';
    }
    return out;
}

void save_labels(const LabelMap& labels, const std::filesystem::path& path) {
    io::write_atomic(path, format_labels(labels));
}

FoldSplit::FoldSplit(std::map<std::string, int> assignment) : assignment_(std::move(assignment)) {
    std::array<int, kFolds> counts{};
    for (const auto& [id, fold] : assignment_) {
        if (fold < 1 || fold > kFolds) {
            throw ValidationError("video " + id + ": fold index " + std::to_string(fold) +
                                  " outside {1,2,3}");
        }
        ++counts[fold - 1];
    }
    for (int f = 0; f < kFolds; ++f) {
        if (counts[f] == 0) {
            throw ValidationError("fold " + std::to_string(f + 1) + " empty");
        }
    }
}

int FoldSplit::fold_of(const std::string& video_id) const {
    const auto it = assignment_.find(video_id);
    if (it == assignment_.end()) {
        throw ValidationError("video " + video_id + " is not in the fold split");
    }
    return it->second;
}

std::vector<std::string> FoldSplit::videos_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignment_) {
        if (f == fold) out.push_back(id);
    }
    return out;
}

std::vector<std::string> FoldSplit::videos_not_in(int fold) const {
    std::vector<std::string> out;
    for (const auto& [id, f] : assignment_) {
        if (f != fold) out.push_back(id);
    }
    return out;
}

std::vector<std::string> FoldSplit::all_videos() const {
    std::vector<std::string> out;
    out.reserve(assignment_.size());
    for (const auto& entry : assignment_) out.push_back(entry.first);
    return out;
}

FoldSplit parse_folds(std::string_view text) {
    const auto lines = lines_of(text);
    if (lines.empty()) {
        throw SchemaError("fold file is empty (header required)");
    }
    check_header(lines.front(), kFoldHeader, "fold");
    std::map<std::string, int> assignment;
    for (std::size_t i = 1; i < lines.size(); ++i) {
        const auto cols = io::split(lines[i], ',');
        if (cols.size() != 2) {
            throw SchemaError("fold row " + std::to_string(i) + " must have 2 columns");
        }
        const std::string id(io::trim(cols[0]));
        const auto fold = io::parse_int(cols[1]);
        if (fold < 1 || fold > FoldSplit::kFolds) {
            throw ValidationError("video " + id + ": fold index " + std::to_string(fold) + " outside {1,2,3}");
        }
        if (!assignment.emplace(id, static_cast<int>(fold)).second) {
            throw ConflictError("duplicate video_id '" + id + "' in fold file");
        }
    }
    return FoldSplit(std::move(assignment));
}

FoldSplit load_folds(const std::filesystem::path& path) {
    return parse_folds(io::read_text(path));
}

std::string format_folds(const FoldSplit& folds) {
    std::string out(kFoldHeader);
    out += '\n';
    for (const auto& [id, f] : folds.assignment()) {
        out += id + "," + std::to_string(f) + "\n";
    }
    return out;
}

void save_folds(const FoldSplit& folds, const std::filesystem::path& path) {
    io::write_atomic(path, format_folds(folds));
}

} // namespace featimg
