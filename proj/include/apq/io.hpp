#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "apq/gqmle.hpp"
#include "apq/hybrid.hpp"
#include "apq/inference.hpp"
#include "apq/risk.hpp"
#include "apq/simlab.hpp"

namespace apq {

inline constexpr const char* kLibraryVersion = "0.1.0";

using json = nlohmann::ordered_json;

// ---------------------------------------------------------------- CSV input

enum class ColumnKind { returns, prices };
enum class NaPolicy { error, drop };

struct CsvOptions {
    std::string column;       ///< empty: first column other than time_column
    std::string time_column;  ///< optional label column copied into SeriesData::timestamps
    ColumnKind kind = ColumnKind::returns;
    NaPolicy na = NaPolicy::error;
};

struct Ingested {
    SeriesData series;
    std::vector<std::string> warnings;
    Eigen::Index rows = 0;  ///< data rows read
};

/// Reads a headed, comma-separated file. Lines starting with '#' are skipped.
/// Prices mode returns log(P_t / P_{t-1}).
Ingested ingest_csv(std::istream& in, const CsvOptions& options, const std::string& source = "<stream>");
Ingested ingest_csv(const std::string& path, const CsvOptions& options);

// ------------------------------------------------------------ number format

/// "%.17g"; non-finite values become "nan", "inf", "-inf".
std::string format_double(double x);

// ------------------------------------------------------------ JSON reports

void to_json(json& j, const Params& p);
void to_json(json& j, const InnovationDist& d);
json fit_report(const GqmleFit& fit);
json quantile_report(const QuantileFit& qfit, double forecast);
void to_json(json& j, const TestReport& r);
void to_json(json& j, const BacktestReport& r);
json forecast_report(const ForecastRun& run);

void to_json(json& j, const ExperimentConfig& c);
/// Reads an experiment config; `design` presets are applied first, explicit fields override them.
ExperimentConfig experiment_config_from_json(const json& j);
json estimation_report(const EstimationSummary& s);
json test_study_report(const TestSummary& s);
json nonstat_report(const NonstatApproxRecord& r);

// ------------------------------------------------------------- CSV reports

/// tau,component,truth,bias,esd,asd (optionally multiplied by 10).
std::string estimation_csv(const EstimationSummary& s, bool times10 = false);
/// alpha_plus,gamma0,test,rejection_rate,replications
std::string power_csv(const TestSummary& s);
/// target,realized,var,exceed
std::string forecast_csv(const ForecastRun& run);
/// t,return,h
std::string path_csv(const SimulatedPath& path);

// ------------------------------------------------------------- manifests

struct RunManifest {
    std::string subcommand;
    json config;
    std::string input_digest;
    std::string version = kLibraryVersion;
    std::uint64_t seed = 0;
    std::optional<double> seconds;  ///< recorded only on request; excluded from the digest

    /// FNV-1a digest of the manifest without timing.
    std::string digest() const;
    json to_json() const;
};

std::string series_digest(const SeriesData& series);

/// {"manifest": ..., "result": ...} dumped with two-space indentation and a trailing newline.
std::string render_artifact(const RunManifest& manifest, const json& result);
/// Prefixes CSV text with a "# manifest <digest>" line.
std::string render_csv_artifact(const RunManifest& manifest, const std::string& csv);

void write_text_file(const std::string& path, const std::string& text);

}  // namespace apq
