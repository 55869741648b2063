#include "decomp/evaluation.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

#include <boost/math/distributions/students_t.hpp>
#include <json.hpp>

#include "decomp/csv.hpp"
#include "decomp/error.hpp"
#include "decomp/random.hpp"

namespace decomp {

std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ValidationError("roc_auc: scores and labels differ in length");
    const std::size_t n = scores.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    // Mann-Whitney U from midranks.
    double rank_sum = 0.0;
    std::size_t pos = 0, neg = 0;
    for (std::size_t i = 0; i < n;) {
        std::size_t j = i;
        while (j < n && scores[order[j]] == scores[order[i]]) ++j;
        const double midrank = 0.5 * static_cast<double>(i + 1 + j);
        for (std::size_t t = i; t < j; ++t)
            if (labels[order[t]]) rank_sum += midrank;
        i = j;
    }
    for (auto l : labels) (l ? pos : neg)++;
    if (pos == 0 || neg == 0) return std::nullopt;
    const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
    return (rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels) {
    if (scores.size() != labels.size()) throw ValidationError("roc_curve: scores and labels differ in length");
    std::size_t pos = 0, neg = 0;
    for (auto l : labels) (l ? pos : neg)++;
    RocCurve c;
    if (pos == 0 || neg == 0) return c;
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
    c.fpr.push_back(0.0);
    c.tpr.push_back(0.0);
    std::size_t tp = 0, fp = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) {
            (labels[order[j]] ? tp : fp)++;
            ++j;
        }
        c.fpr.push_back(static_cast<double>(fp) / static_cast<double>(neg));
        c.tpr.push_back(static_cast<double>(tp) / static_cast<double>(pos));
        i = j;
    }
    return c;
}

double interpolate_tpr(const RocCurve& curve, double x) {
    if (curve.fpr.empty()) throw ValidationError("interpolate_tpr: empty curve");
    // Collapse vertical runs to their top.
    std::vector<double> fx, fy;
    for (std::size_t i = 0; i < curve.fpr.size(); ++i) {
        if (!fx.empty() && curve.fpr[i] == fx.back())
            fy.back() = std::max(fy.back(), curve.tpr[i]);
        else {
            fx.push_back(curve.fpr[i]);
            fy.push_back(curve.tpr[i]);
        }
    }
    if (x <= fx.front()) return fy.front();
    if (x >= fx.back()) return fy.back();
    auto it = std::upper_bound(fx.begin(), fx.end(), x);
    const std::size_t hi = static_cast<std::size_t>(it - fx.begin());
    const std::size_t lo = hi - 1;
    const double w = (x - fx[lo]) / (fx[hi] - fx[lo]);
    return fy[lo] + w * (fy[hi] - fy[lo]);
}

double r_squared_log(std::span<const double> predicted_t, std::span<const double> true_t) {
    if (predicted_t.size() != true_t.size()) throw ValidationError("r_squared_log: length mismatch");
    if (true_t.size() < 2) throw ValidationError("r_squared_log: need at least two cases");
    double mean = 0.0;
    for (double t : true_t) {
        if (!(t >= 0.0)) throw ValidationError("r_squared_log: PMI must be nonnegative");
        mean += std::log1p(t);
    }
    mean /= static_cast<double>(true_t.size());
    double sse = 0.0, sst = 0.0;
    for (std::size_t i = 0; i < true_t.size(); ++i) {
        if (!(predicted_t[i] >= 0.0)) throw ValidationError("r_squared_log: PMI must be nonnegative");
        const double y = std::log1p(true_t[i]);
        const double r = y - std::log1p(predicted_t[i]);
        sse += r * r;
        sst += (y - mean) * (y - mean);
    }
    if (!(sst > 0.0)) throw ValidationError("r_squared_log: true PMI has zero variance");
    return 1.0 - sse / sst;
}

MeanInterval mean_ci(std::span<const double> values) {
    MeanInterval out;
    out.n = values.size();
    if (values.empty()) return out;
    for (double v : values) out.mean += v;
    out.mean /= static_cast<double>(values.size());
    out.lo = out.hi = out.mean;
    if (values.size() < 2) return out;
    double ss = 0.0;
    for (double v : values) ss += (v - out.mean) * (v - out.mean);
    const double n = static_cast<double>(values.size());
    const double sd = std::sqrt(ss / (n - 1.0));
    boost::math::students_t dist(n - 1.0);
    const double half = boost::math::quantile(dist, 0.975) * sd / std::sqrt(n);
    out.lo = out.mean - half;
    out.hi = out.mean + half;
    return out;
}

std::vector<std::size_t> FoldPlan::sizes() const {
    std::vector<std::size_t> s(static_cast<std::size_t>(std::max(k, 0)), 0);
    for (const auto& [_, f] : fold_of) ++s.at(static_cast<std::size_t>(f));
    return s;
}

FoldPlan make_folds(std::span<const std::string> case_ids, int k, std::uint64_t seed) {
    if (k < 2) throw ValidationError("k must be at least 2");
    if (case_ids.size() < static_cast<std::size_t>(k)) throw ValidationError("fewer cases than folds");
    std::vector<std::string> ids(case_ids.begin(), case_ids.end());
    std::sort(ids.begin(), ids.end());
    if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) throw ValidationError("duplicate case id");
    Rng rng = make_rng(seed, 0, 0x666f6c64ULL);
    std::shuffle(ids.begin(), ids.end(), rng);
    FoldPlan plan;
    plan.k = k;
    plan.seed = seed;
    for (std::size_t i = 0; i < ids.size(); ++i) plan.fold_of[ids[i]] = static_cast<int>(i % static_cast<std::size_t>(k));
    return plan;
}

MeanRocCurve mean_roc_curve(const std::vector<std::vector<RocCurve>>& curves, std::size_t grid_points) {
    if (grid_points < 2) throw ValidationError("ROC grid needs at least two points");
    std::size_t folds = 0;
    for (const auto& c : curves) folds = std::max(folds, c.size());
    if (folds < 2) throw ValidationError("mean_roc_curve needs at least two folds");

    MeanRocCurve out;
    out.fpr.resize(grid_points);
    for (std::size_t g = 0; g < grid_points; ++g)
        out.fpr[g] = static_cast<double>(g) / static_cast<double>(grid_points - 1);
    out.tpr.assign(grid_points, 0.0);

    std::vector<std::vector<double>> fold_sum(folds, std::vector<double>(grid_points, 0.0));
    std::vector<std::size_t> fold_count(folds, 0);
    std::size_t used = 0;
    for (const auto& per_char : curves) {
        std::vector<double> avg(grid_points, 0.0);
        std::size_t present = 0;
        for (std::size_t f = 0; f < per_char.size(); ++f) {
            if (per_char[f].fpr.empty()) continue;
            ++present;
            ++fold_count[f];
            for (std::size_t g = 0; g < grid_points; ++g) {
                const double y = interpolate_tpr(per_char[f], out.fpr[g]);
                avg[g] += y;
                fold_sum[f][g] += y;
            }
        }
        if (present == 0) continue;
        ++used;
        for (std::size_t g = 0; g < grid_points; ++g) out.tpr[g] += avg[g] / static_cast<double>(present);
    }
    if (used == 0) throw ValidationError("mean_roc_curve: no curves");
    for (double& y : out.tpr) y /= static_cast<double>(used);

    out.lo = out.tpr;
    out.hi = out.tpr;
    std::vector<double> col;
    for (std::size_t g = 0; g < grid_points; ++g) {
        col.clear();
        for (std::size_t f = 0; f < folds; ++f)
            if (fold_count[f] > 0) col.push_back(fold_sum[f][g] / static_cast<double>(fold_count[f]));
        if (col.size() < 2) continue;
        const MeanInterval ci = mean_ci(col);
        const double half = ci.hi - ci.mean;
        out.lo[g] = std::clamp(out.tpr[g] - half, 0.0, 1.0);
        out.hi[g] = std::clamp(out.tpr[g] + half, 0.0, 1.0);
    }
    return out;
}

EvalReport run_cv(const std::vector<CaseRecord>& cases, const Schema& schema, const InteractionMask& mask,
                  const SamplerConfig& config, const FoldPlan& plan, const CvOptions& options) {
    config.validate();
    if (plan.k < 2) throw ValidationError("k must be at least 2");
    const ParameterLayout layout(schema, mask);
    const std::size_t D = schema.characteristics.size();

    std::vector<const CaseRecord*> sorted;
    for (const CaseRecord& c : cases) {
        if (!c.pmi_days) throw ValidationError("case '" + c.case_id + "' has no PMI");
        if (!plan.fold_of.count(c.case_id)) throw ValidationError("case '" + c.case_id + "' is not in the fold plan");
        sorted.push_back(&c);
    }
    std::sort(sorted.begin(), sorted.end(), [](auto* a, auto* b) { return a->case_id < b->case_id; });
    for (std::size_t i = 1; i < sorted.size(); ++i)
        if (sorted[i]->case_id == sorted[i - 1]->case_id) throw ValidationError("duplicate case id");

    std::vector<CaseDesign> designs;
    for (const CaseRecord* c : sorted) designs.push_back(encode_case(*c, schema));

    EvalReport report;
    report.variant = std::string(to_string(mask.variant()));
    report.k = plan.k;
    report.seed = plan.seed;
    report.num_cases = sorted.size();
    report.characteristics = schema.characteristics.names();

    std::vector<std::vector<RocCurve>> curves(D, std::vector<RocCurve>(static_cast<std::size_t>(plan.k)));
    std::vector<std::size_t> hits(options.calibration_levels.size(), 0);
    std::size_t calibration_n = 0;
    std::vector<double> fold_auc, fold_r2;

    for (int f = 0; f < plan.k; ++f) {
        Dataset train(schema.covariates.size(), D);
        std::vector<std::size_t> test;
        for (std::size_t i = 0; i < sorted.size(); ++i) {
            if (plan.fold_of.at(sorted[i]->case_id) == f)
                test.push_back(i);
            else
                train.add(designs[i]);
        }
        FoldReport fr;
        fr.fold = f;
        fr.train_size = train.size();
        fr.test_size = test.size();
        if (test.empty() || train.empty()) throw ValidationError("empty fold");

        SamplerConfig cfg = config;
        cfg.seed = derive_seed(config.seed, static_cast<std::uint64_t>(f), 0x6376ULL);
        PosteriorSamples post = sample_posterior(train, layout, cfg);
        fr.max_rhat = post.diagnostics.max_rhat;
        fr.min_ess = post.diagnostics.min_ess;
        fr.diagnostics_passed = post.diagnostics.passes;
        if (options.require_diagnostics) require_passing(post);

        // Draw subset shared by scoring and PMI inference.
        const std::size_t L = post.num_draws();
        const std::size_t keep = options.grid.max_draws == 0 ? L : std::min(L, options.grid.max_draws);
        DrawMatrix draws(static_cast<Eigen::Index>(keep), post.draws.cols());
        for (std::size_t i = 0; i < keep; ++i)
            draws.row(static_cast<Eigen::Index>(i)) = post.draws.row(static_cast<Eigen::Index>(i * L / keep));
        PmiGridConfig grid = options.grid;
        grid.max_draws = 0;

        std::vector<std::vector<double>> scores(D);
        std::vector<std::vector<std::uint8_t>> labels(D);
        std::vector<double> pred_t, true_t;
        for (std::size_t i : test) {
            const CaseDesign& cd = designs[i];
            const PmiPosterior pp = pmi_posterior(cd, layout, draws, options.prior, grid);
            const PmiSummary s = summarize(pp, 0.9);
            const double truth = *sorted[i]->pmi_days;
            CasePrediction cp;
            cp.case_id = sorted[i]->case_id;
            cp.fold = f;
            cp.true_days = truth;
            cp.mean_days = s.mean_days;
            cp.mean_tau = s.mean_tau;
            cp.median_days = s.median_days;
            cp.lo90_days = s.interval.lo_days;
            cp.hi90_days = s.interval.hi_days;
            report.predictions.push_back(cp);
            pred_t.push_back(std::expm1(s.mean_tau));
            true_t.push_back(truth);

            ++calibration_n;
            for (std::size_t q = 0; q < options.calibration_levels.size(); ++q) {
                const PmiInterval iv = credible_interval(pp, options.calibration_levels[q]);
                if (cd.log1p_pmi >= iv.lo_tau && cd.log1p_pmi <= iv.hi_tau) ++hits[q];
            }

            const double tau = options.auc_at == AucConditioning::true_pmi ? cd.log1p_pmi : s.mean_tau;
            for (std::size_t d = 0; d < D; ++d) {
                if (!cd.observed[d]) continue;
                double p = 0.0;
                for (Eigen::Index l = 0; l < draws.rows(); ++l) {
                    std::span<const double> row(draws.data() + l * draws.cols(), static_cast<std::size_t>(draws.cols()));
                    p += sigmoid(char_log_odds(layout, row, cd.levels, tau, d));
                }
                scores[d].push_back(p / static_cast<double>(draws.rows()));
                labels[d].push_back(cd.values[d] >= 0.5 ? 1 : 0);
            }
        }

        fr.auc.resize(D);
        std::vector<double> present;
        for (std::size_t d = 0; d < D; ++d) {
            fr.auc[d] = roc_auc(scores[d], labels[d]);
            if (fr.auc[d]) {
                present.push_back(*fr.auc[d]);
                curves[d][static_cast<std::size_t>(f)] = roc_curve(scores[d], labels[d]);
            }
        }
        if (!present.empty()) {
            fr.macro_auc = std::accumulate(present.begin(), present.end(), 0.0) / static_cast<double>(present.size());
            fold_auc.push_back(*fr.macro_auc);
        }
        fr.r_squared = r_squared_log(pred_t, true_t);
        fold_r2.push_back(fr.r_squared);
        report.folds.push_back(std::move(fr));
    }

    report.macro_auc = mean_ci(fold_auc);
    report.r_squared = mean_ci(fold_r2);
    report.characteristic_auc.resize(D);
    for (std::size_t d = 0; d < D; ++d) {
        double s = 0.0;
        std::size_t n = 0;
        for (const FoldReport& fr : report.folds)
            if (fr.auc[d]) {
                s += *fr.auc[d];
                ++n;
            }
        if (n > 0) report.characteristic_auc[d] = s / static_cast<double>(n);
    }
    for (std::size_t q = 0; q < options.calibration_levels.size(); ++q)
        report.calibration.push_back({options.calibration_levels[q],
                                      calibration_n ? static_cast<double>(hits[q]) / static_cast<double>(calibration_n) : 0.0,
                                      calibration_n});
    report.roc = mean_roc_curve(curves, options.roc_grid_points);
    return report;
}

namespace {

nlohmann::json opt_json(const std::optional<double>& v) { return v ? nlohmann::json(*v) : nlohmann::json(nullptr); }

nlohmann::json ci_json(const MeanInterval& ci) {
    return {{"mean", ci.mean}, {"ci_low", ci.lo}, {"ci_high", ci.hi}, {"n", ci.n}};
}

}  // namespace

std::string report_to_json(const EvalReport& r) {
    using nlohmann::json;
    json doc;
    doc["variant"] = r.variant;
    doc["k"] = r.k;
    doc["seed"] = r.seed;
    doc["num_cases"] = r.num_cases;
    doc["macro_auc"] = ci_json(r.macro_auc);
    doc["r_squared_log"] = ci_json(r.r_squared);
    json chars = json::array();
    for (std::size_t d = 0; d < r.characteristics.size(); ++d)
        chars.push_back({{"name", r.characteristics[d]}, {"auc", opt_json(r.characteristic_auc[d])}});
    doc["characteristics"] = chars;
    json folds = json::array();
    for (const FoldReport& f : r.folds) {
        json a = json::array();
        for (const auto& v : f.auc) a.push_back(opt_json(v));
        folds.push_back({{"fold", f.fold},
                         {"train_size", f.train_size},
                         {"test_size", f.test_size},
                         {"macro_auc", opt_json(f.macro_auc)},
                         {"r_squared_log", f.r_squared},
                         {"auc", a},
                         {"max_rhat", f.max_rhat},
                         {"min_ess", f.min_ess},
                         {"diagnostics_passed", f.diagnostics_passed}});
    }
    doc["folds"] = folds;
    json cal = json::array();
    for (const CalibrationPoint& p : r.calibration) cal.push_back({{"nominal", p.nominal}, {"coverage", p.coverage}, {"n", p.n}});
    doc["calibration"] = cal;
    doc["roc"] = {{"fpr", r.roc.fpr}, {"tpr", r.roc.tpr}, {"lo", r.roc.lo}, {"hi", r.roc.hi}};
    return doc.dump(2);
}

std::string roc_to_csv(const MeanRocCurve& roc) {
    std::ostringstream out;
    csv::write_row(out, {"fpr", "tpr", "tpr_lo", "tpr_hi"});
    for (std::size_t i = 0; i < roc.fpr.size(); ++i)
        csv::write_row(out, {csv::format_double(roc.fpr[i]), csv::format_double(roc.tpr[i]),
                             csv::format_double(roc.lo[i]), csv::format_double(roc.hi[i])});
    return out.str();
}

std::string calibration_to_csv(const std::vector<CalibrationPoint>& points) {
    std::ostringstream out;
    csv::write_row(out, {"nominal", "coverage", "n"});
    for (const CalibrationPoint& p : points)
        csv::write_row(out, {csv::format_double(p.nominal), csv::format_double(p.coverage), std::to_string(p.n)});
    return out.str();
}

std::string predictions_to_csv(const std::vector<CasePrediction>& predictions) {
    std::ostringstream out;
    csv::write_row(out, {"case_id", "fold", "true_days", "mean_days", "mean_tau", "median_days", "lo90_days", "hi90_days"});
    for (const CasePrediction& p : predictions)
        csv::write_row(out, {p.case_id, std::to_string(p.fold), csv::format_double(p.true_days),
                             csv::format_double(p.mean_days), csv::format_double(p.mean_tau),
                             csv::format_double(p.median_days), csv::format_double(p.lo90_days),
                             csv::format_double(p.hi90_days)});
    return out.str();
}

}  // namespace decomp
