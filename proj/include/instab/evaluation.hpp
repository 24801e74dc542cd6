#pragma once

#include "instab/tensor.hpp"

#include <nlohmann/json_fwd.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace instab {

/// Sufficient statistics for a correlation, so that samples can be pooled.
struct PearsonMoments {
    double n = 0.0;
    double sa = 0.0;
    double sb = 0.0;
    double saa = 0.0;
    double sbb = 0.0;
    double sab = 0.0;

    static PearsonMoments of(const Tensor& a, const Tensor& b);
    PearsonMoments& operator+=(const PearsonMoments& o);
    /// Throws DegenerateSampleError when either side has zero variance.
    double correlation() const;
};

/// Pearson correlation over all entries. Throws DegenerateSampleError when
/// either argument is constant.
double pearson(const Tensor& a, const Tensor& b);

/// pearson(|u_clean - u_adv|, |rec_clean - rec_adv|)
double advdetect_score(const Tensor& u_clean, const Tensor& u_adv, const Tensor& rec_clean, const Tensor& rec_adv);

/// pearson(|u_clean - u_ood|, mask)
double artdetect_score(const Tensor& u_clean, const Tensor& u_ood, const Tensor& mask);

struct ScoreRecord {
    std::string method;
    std::string task;
    std::string experiment;
    std::size_t run = 0;
    std::size_t sample_id = 0;
    /// Empty for degenerate samples.
    std::optional<double> r;
    /// Moments of the two correlated fields for the pooled column.
    PearsonMoments moments;
};

/// Scores one sample, recording a degenerate sample instead of throwing.
ScoreRecord make_record(std::string method, std::string task, std::string experiment, std::size_t run,
                        std::size_t sample_id, const Tensor& a, const Tensor& b);

struct AggregateRow {
    std::string method;
    std::string task;
    std::string experiment;
    double mean = 0.0;
    double std = 0.0;
    std::vector<double> run_means;
    std::size_t samples = 0;
    std::size_t degenerate = 0;
    /// Correlation over all pixels of a run pooled together, mean and std across runs.
    double pooled_mean = 0.0;
    double pooled_std = 0.0;
};

/// Per (method, task, experiment): mean r within each run, then mean and
/// population std across runs. Rows are sorted by key. A group with no
/// non-degenerate sample gets NaN statistics.
std::vector<AggregateRow> aggregate(const std::vector<ScoreRecord>& records);

void write_records_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records);
std::vector<ScoreRecord> read_records_csv(const std::filesystem::path& path);

/// Nested experiment -> task -> method table plus reporting conventions.
nlohmann::json summary_json(const std::vector<AggregateRow>& rows);

/// 8-bit binary PGM; values clipped to [lo, hi] then mapped linearly to 0..255.
void render_heatmap(const Tensor& image, double lo, double hi, const std::filesystem::path& path);

struct Panel {
    Tensor image;
    double lo = 0.0;
    double hi = 1.0;
};

/// Panels side by side separated by a white gap, each with its own window.
void render_panels(const std::vector<Panel>& panels, const std::filesystem::path& path, std::size_t gap = 2);

} // namespace instab
