#include "instab/evaluation.hpp"

#include "instab/errors.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>
#include <tuple>

namespace instab {

PearsonMoments PearsonMoments::of(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "pearson");
    PearsonMoments m;
    m.n = static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        m.sa += a[i];
        m.sb += b[i];
        m.saa += a[i] * a[i];
        m.sbb += b[i] * b[i];
        m.sab += a[i] * b[i];
    }
    return m;
}

PearsonMoments& PearsonMoments::operator+=(const PearsonMoments& o)
{
    n += o.n;
    sa += o.sa;
    sb += o.sb;
    saa += o.saa;
    sbb += o.sbb;
    sab += o.sab;
    return *this;
}

double PearsonMoments::correlation() const
{
    const double va = saa - sa * sa / n;
    const double vb = sbb - sb * sb / n;
    if (!(va > 1e-12 * saa) || !(vb > 1e-12 * sbb)) {
        throw DegenerateSampleError("pearson: zero variance");
    }
    return std::clamp((sab - sa * sb / n) / std::sqrt(va * vb), -1.0, 1.0);
}

namespace {

/// Sum of squared deviations indistinguishable from rounding error of a constant field.
bool negligible(double ss, double n, double scale)
{
    const double floor = 1e-12 * scale;
    return !(ss > n * floor * floor);
}

double max_abs(const Tensor& t)
{
    double m = 0.0;
    for (double v : t.data()) {
        m = std::max(m, std::abs(v));
    }
    return m;
}

} // namespace

double pearson(const Tensor& a, const Tensor& b)
{
    require_same_shape(a, b, "pearson");
    // Two-pass form for accuracy.
    const double ma = mean(a);
    const double mb = mean(b);
    double saa = 0.0;
    double sbb = 0.0;
    double sab = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double da = a[i] - ma;
        const double db = b[i] - mb;
        saa += da * da;
        sbb += db * db;
        sab += da * db;
    }
    const double n = static_cast<double>(a.size());
    if (negligible(saa, n, max_abs(a)) || negligible(sbb, n, max_abs(b))) {
        throw DegenerateSampleError("pearson: zero variance");
    }
    return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

double advdetect_score(const Tensor& u_clean, const Tensor& u_adv, const Tensor& rec_clean, const Tensor& rec_adv)
{
    require_same_shape(u_clean, u_adv, "advdetect_score");
    require_same_shape(rec_clean, rec_adv, "advdetect_score");
    return pearson(abs(u_clean - u_adv), abs(rec_clean - rec_adv));
}

double artdetect_score(const Tensor& u_clean, const Tensor& u_ood, const Tensor& mask)
{
    require_same_shape(u_clean, u_ood, "artdetect_score");
    for (double v : mask.data()) {
        if (v != 0.0 && v != 1.0) {
            throw ContractError("artdetect_score: mask must be binary");
        }
    }
    return pearson(abs(u_clean - u_ood), mask);
}

ScoreRecord make_record(std::string method, std::string task, std::string experiment, std::size_t run,
                        std::size_t sample_id, const Tensor& a, const Tensor& b)
{
    ScoreRecord rec{std::move(method), std::move(task), std::move(experiment), run, sample_id, std::nullopt,
                    PearsonMoments::of(a, b)};
    try {
        rec.r = pearson(a, b);
    } catch (const DegenerateSampleError&) {
        rec.r = std::nullopt;
    }
    return rec;
}

namespace {

std::pair<double, double> mean_pop_std(const std::vector<double>& v)
{
    double m = 0.0;
    for (double x : v) {
        m += x;
    }
    m /= static_cast<double>(v.size());
    double s = 0.0;
    for (double x : v) {
        s += (x - m) * (x - m);
    }
    return {m, std::sqrt(s / static_cast<double>(v.size()))};
}

} // namespace

std::vector<AggregateRow> aggregate(const std::vector<ScoreRecord>& records)
{
    if (records.empty()) {
        throw ContractError("aggregate: no records");
    }
    using Key = std::tuple<std::string, std::string, std::string>;
    std::map<Key, std::vector<const ScoreRecord*>> groups;
    for (const auto& r : records) {
        groups[{r.method, r.task, r.experiment}].push_back(&r);
    }
    std::vector<AggregateRow> rows;
    for (auto& [key, recs] : groups) {
        std::sort(recs.begin(), recs.end(), [](const ScoreRecord* a, const ScoreRecord* b) {
            return std::tie(a->run, a->sample_id) < std::tie(b->run, b->sample_id);
        });
        AggregateRow row;
        std::tie(row.method, row.task, row.experiment) = key;
        std::map<std::size_t, std::pair<double, std::size_t>> per_run;
        std::map<std::size_t, PearsonMoments> pooled;
        for (const auto* r : recs) {
            pooled[r->run] += r->moments;
            if (!r->r) {
                ++row.degenerate;
                continue;
            }
            auto& [s, n] = per_run[r->run];
            s += *r->r;
            ++n;
            ++row.samples;
        }
        if (per_run.empty()) {
            row.mean = row.std = row.pooled_mean = row.pooled_std = std::numeric_limits<double>::quiet_NaN();
            rows.push_back(std::move(row));
            continue;
        }
        for (const auto& [run, sn] : per_run) {
            row.run_means.push_back(sn.first / static_cast<double>(sn.second));
        }
        std::tie(row.mean, row.std) = mean_pop_std(row.run_means);
        std::vector<double> pooled_r;
        for (const auto& [run, m] : pooled) {
            try {
                pooled_r.push_back(m.correlation());
            } catch (const DegenerateSampleError&) {
            }
        }
        if (pooled_r.empty()) {
            row.pooled_mean = row.pooled_std = std::numeric_limits<double>::quiet_NaN();
        } else {
            std::tie(row.pooled_mean, row.pooled_std) = mean_pop_std(pooled_r);
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

namespace {

std::string fmt(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void write_records_csv(const std::filesystem::path& path, const std::vector<ScoreRecord>& records)
{
    std::ofstream out(path);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "method,task,experiment,run,sample_id,r,n,sum_a,sum_b,sum_aa,sum_bb,sum_ab\n";
    for (const auto& r : records) {
        const auto& m = r.moments;
        out << r.method << ',' << r.task << ',' << r.experiment << ',' << r.run << ',' << r.sample_id << ','
            << (r.r ? fmt(*r.r) : std::string("degenerate")) << ',' << fmt(m.n) << ',' << fmt(m.sa) << ','
            << fmt(m.sb) << ',' << fmt(m.saa) << ',' << fmt(m.sbb) << ',' << fmt(m.sab) << '\n';
    }
}

std::vector<ScoreRecord> read_records_csv(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot read " + path.string());
    }
    std::string line;
    std::getline(in, line);
    std::vector<ScoreRecord> out;
    while (std::getline(in, line)) {
        if (line.empty()) {
            continue;
        }
        std::vector<std::string> f;
        std::stringstream ss(line);
        std::string cell;
        while (std::getline(ss, cell, ',')) {
            f.push_back(cell);
        }
        if (f.size() != 12) {
            throw IoError("malformed record in " + path.string() + ": " + line);
        }
        ScoreRecord r;
        r.method = f[0];
        r.task = f[1];
        r.experiment = f[2];
        r.run = std::stoul(f[3]);
        r.sample_id = std::stoul(f[4]);
        if (f[5] != "degenerate") {
            r.r = std::stod(f[5]);
        }
        r.moments = {std::stod(f[6]), std::stod(f[7]), std::stod(f[8]),
                     std::stod(f[9]), std::stod(f[10]), std::stod(f[11])};
        out.push_back(std::move(r));
    }
    return out;
}

nlohmann::json summary_json(const std::vector<AggregateRow>& rows)
{
    const auto num = [](double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); };
    nlohmann::json table = nlohmann::json::object();
    for (const auto& r : rows) {
        table[r.experiment][r.task][r.method] = {
            {"mean", num(r.mean)},      {"std", num(r.std)},
            {"run_means", r.run_means}, {"samples", r.samples},
            {"degenerate", r.degenerate}, {"pooled_mean", num(r.pooled_mean)},
            {"pooled_std", num(r.pooled_std)}};
    }
    return {{"table", table},
            {"conventions",
             {{"correlation", "per-sample Pearson r, averaged within a run"},
              {"std", "population standard deviation across runs"},
              {"degenerate", "zero-variance samples excluded and counted; null when no sample is left"},
              {"pooled", "Pearson r over all pixels of a run, mean and population std across runs"}}}};
}

namespace {

std::pair<std::size_t, std::size_t> image_hw(const Tensor& t)
{
    const auto& s = t.shape();
    if (s.size() == 2) {
        return {s[0], s[1]};
    }
    if (s.size() == 3 && s[0] == 1) {
        return {s[1], s[2]};
    }
    throw ShapeError("render: expected a single-channel image, got " + shape_str(s));
}

unsigned char to_byte(double v, double lo, double hi)
{
    const double t = (std::clamp(v, lo, hi) - lo) / (hi - lo);
    return static_cast<unsigned char>(std::lround(t * 255.0));
}

void write_pgm(const std::filesystem::path& path, std::size_t w, std::size_t h, const std::vector<unsigned char>& px)
{
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw IoError("cannot write " + path.string());
    }
    out << "P5\n" << w << ' ' << h << "\n255\n";
    out.write(reinterpret_cast<const char*>(px.data()), static_cast<std::streamsize>(px.size()));
    if (!out) {
        throw IoError("write failed for " + path.string());
    }
}

} // namespace

void render_heatmap(const Tensor& image, double lo, double hi, const std::filesystem::path& path)
{
    render_panels({{image, lo, hi}}, path, 0);
}

void render_panels(const std::vector<Panel>& panels, const std::filesystem::path& path, std::size_t gap)
{
    if (panels.empty()) {
        throw ContractError("render: no panels");
    }
    std::size_t height = 0;
    std::size_t width = 0;
    for (const auto& p : panels) {
        if (!(p.lo < p.hi)) {
            throw ContractError("render: window requires lo < hi");
        }
        const auto [h, w] = image_hw(p.image);
        height = std::max(height, h);
        width += w;
    }
    width += gap * (panels.size() - 1);
    std::vector<unsigned char> px(width * height, 255);
    std::size_t x0 = 0;
    for (const auto& p : panels) {
        const auto [h, w] = image_hw(p.image);
        for (std::size_t r = 0; r < h; ++r) {
            for (std::size_t c = 0; c < w; ++c) {
                px[r * width + x0 + c] = to_byte(p.image[r * w + c], p.lo, p.hi);
            }
        }
        x0 += w + gap;
    }
    write_pgm(path, width, height, px);
}

} // namespace instab
