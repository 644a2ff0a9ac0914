#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "faultdiff/autograd.hpp"
#include "faultdiff/data.hpp"

namespace faultdiff::metrics {

/// Pins the evaluation networks, encoder seed and feature definitions.
inline constexpr const char* kMetricVersion = "fd-metrics-1";

/// Small fully connected network (ReLU hidden layers) trained full-batch
/// with Adam. Inputs are standardized with training-set statistics.
class Mlp {
public:
    struct Options {
        std::vector<std::size_t> hidden{32, 32};
        std::size_t epochs = 300;
        double learning_rate = 1e-2;
    };

    Mlp(std::size_t inputs, std::size_t outputs, const Options& options, std::uint64_t seed);

    /// Softmax cross-entropy on integer labels in [0, outputs).
    void fit_classifier(const TensorD& x, const std::vector<int>& labels);
    /// Mean squared error regression.
    void fit_regressor(const TensorD& x, const TensorD& y);

    TensorD predict(const TensorD& x) const;
    std::vector<int> classify(const TensorD& x) const;

private:
    template <typename LossFn> void fit(const TensorD& x, LossFn&& loss);
    TensorF standardize(const TensorD& x) const;

    Options options_;
    ParameterSet<float> params_;
    std::vector<std::pair<Parameter<float>*, Parameter<float>*>> layers_;
    std::vector<double> mean_, scale_;
};

/// Flattens every sample to one row of seq_len * channels values.
TensorD flatten(const data::Dataset& ds);

/// |held-out accuracy - 0.5| of a real-vs-synthetic classifier.
double discriminative_score(const data::Dataset& real, const data::Dataset& synth, std::uint64_t seed);

/// Train on synth, mean absolute error of the last-step forecast on real.
double predictive_score(const data::Dataset& real, const data::Dataset& synth, std::uint64_t seed);

/// Train-on-real reference: fit on a seeded half of `real`, test on the
/// other half.
double predictive_baseline(const data::Dataset& real, std::uint64_t seed);

/// Fixed random 1-D convolutional encoder, 16-dim embedding per sample.
TensorD context_embed(const data::Dataset& ds, std::uint64_t encoder_seed);

/// Frechet distance between Gaussian fits of two embedding clouds
/// ([n x k] each), covariances regularized by +1e-6 I.
double frechet_distance(const TensorD& a, const TensorD& b);

inline constexpr std::uint64_t kEncoderSeed = 0x5EEDC0DE;

double context_fid(const data::Dataset& real, const data::Dataset& synth, std::uint64_t encoder_seed = kEncoderSeed);

/// Per-sample Pearson matrices over channels, averaged per corpus; returns
/// the entrywise L1 distance. A constant channel's correlations count as 0
/// and set *constant_channel.
double correlational_score(const data::Dataset& real, const data::Dataset& synth, bool* constant_channel = nullptr);

/// Mean channel-wise correlation matrix of a corpus ([d x d]).
TensorD mean_correlation(const data::Dataset& ds, bool* constant_channel = nullptr);

/// Autocorrelation at lags 1..max_lag per channel, concatenated.
TensorD acf_features(const data::Dataset& ds, std::size_t max_lag);

/// Mean pairwise ACF-feature distance of synth divided by that of real.
double diversity_score(const data::Dataset& real, const data::Dataset& synth, std::size_t max_lag = 8);

struct ClassScores {
    double accuracy = 0;
    double precision = 0;  // macro averages
    double recall = 0;
    double f1 = 0;
};

/// Multi-class classifier on real (+ synthetic) training sets; each
/// Dataset's label names its class. Scores on the real test sets.
ClassScores downstream_eval(const std::vector<data::Dataset>& train_real, const std::vector<data::Dataset>& synth,
                            const std::vector<data::Dataset>& test, std::uint64_t seed);

/// Accuracy and macro precision / recall / F1 from label vectors.
ClassScores score_predictions(const std::vector<int>& truth, const std::vector<int>& predicted, std::size_t classes);

enum class EmbedMethod { pca, tsne };

struct EmbedOptions {
    EmbedMethod method = EmbedMethod::pca;
    double perplexity = 30.0;
    std::size_t iterations = 1000;
    std::uint64_t seed = 0;
    std::size_t kde_grid = 64;
};

struct EmbedPoint {
    std::string label;
    double x = 0;
    double y = 0;
};

struct KdeRow {
    std::string label;
    char axis = 'x';
    double grid = 0;
    double density = 0;
};

struct Embedding {
    std::vector<EmbedPoint> points;
    std::vector<KdeRow> kde;
};

/// Exact PCA via covariance eigendecomposition ([n x 2] of centered scores).
TensorD pca_2d(const TensorD& x);

/// Exact O(n^2) t-SNE. Perplexity is capped at (n - 1) / 3; throws
/// ContractError if the cap falls below 1.
TensorD tsne_2d(const TensorD& x, double perplexity, std::size_t iterations, std::uint64_t seed);

/// Gaussian KDE on an even grid; Silverman bandwidth.
std::vector<std::pair<double, double>> kde_1d(const std::vector<double>& values, double lo, double hi,
                                              std::size_t grid);

/// Projects labeled corpora to 2-D and adds per-label, per-axis KDEs.
Embedding embed_2d(const std::vector<std::pair<std::string, data::Dataset>>& sets, const EmbedOptions& options);

void write_embedding(const Embedding& e, const std::filesystem::path& points_csv, const std::filesystem::path& kde_csv);

// ---------------------------------------------------------------------------

inline const std::vector<std::string>& all_metric_names() {
    static const std::vector<std::string> names{"context_fid", "correlational", "discriminative", "predictive",
                                                "diversity"};
    return names;
}

struct MetricRow {
    std::string metric;
    double value = 0;
    std::uint64_t seed = 0;
};

struct MetricReport {
    std::vector<MetricRow> rows;  // one per metric and seed
    std::optional<ClassScores> downstream;
    std::string corpus_real;
    std::string corpus_synth;
    std::string config_hash;
    std::string metric_version = kMetricVersion;
    std::vector<std::string> warnings;

    std::vector<std::string> metrics() const;
    std::vector<std::uint64_t> seeds() const;
    /// Median over seeds; nullopt if the metric was not evaluated.
    std::optional<double> median(const std::string& metric) const;
};

struct EvaluateOptions {
    std::vector<std::string> metrics = all_metric_names();
    std::vector<std::uint64_t> seeds{1};
    std::size_t max_lag = 8;
    std::string config_hash;
};

/// Throws ContractError on a shape mismatch or unknown metric name.
MetricReport evaluate(const data::Dataset& real, const data::Dataset& synth, const EvaluateOptions& options);

std::string report_json(const MetricReport& report);
std::string report_csv(const MetricReport& report);
void write_report(const MetricReport& report, const std::filesystem::path& json_path,
                  const std::filesystem::path& csv_path);

} // namespace faultdiff::metrics
