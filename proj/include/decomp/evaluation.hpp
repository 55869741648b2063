#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "decomp/pmi.hpp"
#include "decomp/sampler.hpp"
#include "decomp/schema.hpp"

namespace decomp {

// Probability that a random positive outscores a random negative, ties
// counted half. Empty when only one class is present.
std::optional<double> roc_auc(std::span<const double> scores, std::span<const std::uint8_t> labels);

struct RocCurve {
    std::vector<double> fpr;  // ascending, from 0 to 1
    std::vector<double> tpr;
};

RocCurve roc_curve(std::span<const double> scores, std::span<const std::uint8_t> labels);

// tpr of a curve at a false-positive rate: linear between the distinct fpr
// values, taking the highest tpr reached at each of them.
double interpolate_tpr(const RocCurve& curve, double fpr);

// 1 - SSE/SST on log(1 + t). Throws when the truth has zero variance.
double r_squared_log(std::span<const double> predicted_t, std::span<const double> true_t);

struct MeanInterval {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
    std::size_t n = 0;
};

// mean +- t(0.975, n-1) * sd / sqrt(n).
MeanInterval mean_ci(std::span<const double> values);

struct FoldPlan {
    int k = 5;
    std::uint64_t seed = 1;
    std::map<std::string, int> fold_of;

    std::vector<std::size_t> sizes() const;
};

// Assignment depends only on the set of ids, not their order.
FoldPlan make_folds(std::span<const std::string> case_ids, int k, std::uint64_t seed);

struct MeanRocCurve {
    std::vector<double> fpr;
    std::vector<double> tpr;  // per-characteristic fold average, then averaged over characteristics
    std::vector<double> lo;   // 95% band from the per-fold macro curves
    std::vector<double> hi;
};

// curves[characteristic][fold]; a missing curve (single-class fold) is an
// empty RocCurve and is skipped.
MeanRocCurve mean_roc_curve(const std::vector<std::vector<RocCurve>>& curves, std::size_t grid_points = 101);

struct CalibrationPoint {
    double nominal = 0.0;   // interval mass
    double coverage = 0.0;  // fraction of true PMIs inside
    std::size_t n = 0;
};

enum class AucConditioning { true_pmi, predicted_pmi };

struct CvOptions {
    AucConditioning auc_at = AucConditioning::true_pmi;
    PmiPrior prior;
    PmiGridConfig grid{.max_draws = 200};
    std::vector<double> calibration_levels{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    std::size_t roc_grid_points = 101;
    bool require_diagnostics = true;
};

struct CasePrediction {
    std::string case_id;
    int fold = 0;
    double true_days = 0.0;
    double mean_days = 0.0;
    double mean_tau = 0.0;
    double median_days = 0.0;
    double lo90_days = 0.0;
    double hi90_days = 0.0;
};

struct FoldReport {
    int fold = 0;
    std::size_t train_size = 0;
    std::size_t test_size = 0;
    std::vector<std::optional<double>> auc;  // per characteristic
    std::optional<double> macro_auc;
    double r_squared = 0.0;
    double max_rhat = 0.0;
    double min_ess = 0.0;
    bool diagnostics_passed = false;
};

struct EvalReport {
    std::string variant;
    int k = 0;
    std::uint64_t seed = 0;
    std::size_t num_cases = 0;
    std::vector<std::string> characteristics;
    std::vector<FoldReport> folds;
    MeanInterval macro_auc;
    MeanInterval r_squared;
    std::vector<std::optional<double>> characteristic_auc;  // mean over folds
    std::vector<CalibrationPoint> calibration;
    MeanRocCurve roc;
    std::vector<CasePrediction> predictions;
};

// Fits on k-1 folds and scores the held-out fold, for every fold. Cases
// must all carry a PMI. Training sets are ordered by case id.
EvalReport run_cv(const std::vector<CaseRecord>& cases, const Schema& schema, const InteractionMask& mask,
                  const SamplerConfig& config, const FoldPlan& plan, const CvOptions& options = {});

std::string report_to_json(const EvalReport& report);
std::string roc_to_csv(const MeanRocCurve& roc);
std::string calibration_to_csv(const std::vector<CalibrationPoint>& points);
std::string predictions_to_csv(const std::vector<CasePrediction>& predictions);

}  // namespace decomp
