#pragma once

#include "dotfoundry/cavity_design.hpp"
#include "dotfoundry/fit_engine.hpp"
#include "dotfoundry/localization.hpp"
#include "dotfoundry/photon_stats.hpp"

#include <json.hpp>

#include <filesystem>
#include <initializer_list>
#include <string>
#include <vector>

namespace dotfoundry::io {

using Json = nlohmann::ordered_json;

/// Value rounded to `digits` significant decimal digits (round-trips through "%.*g").
double round_sig(double value, int digits = 9);

/// Copy of `j` with every floating-point number rounded to 9 significant digits.
Json rounded(const Json& j);

/// Stable report text: rounded numbers, insertion-ordered keys, 2-space indent, trailing newline.
std::string dump_report(const Json& j);
void write_report(const std::filesystem::path& path, const Json& j);

/// Rejects keys outside `allowed` with ArgumentError naming the context and key.
void require_known_keys(const nlohmann::json& j, std::initializer_list<const char*> allowed, const std::string& context);

Json to_json(const FitResult& r);
Json to_json(const Measured& m);
Json to_json(const PeakLocation& p);
Json to_json(const Calibration& c);
Json to_json(const LocalizationReport& r);
Json to_json(const UncertaintySummary& s);
Json to_json(const PillarDesign& d);
Json to_json(const YieldEstimate& y);
Json to_json(const EfficiencyBudget& b);
Json to_json(const LifetimeResult& r);
Json to_json(const QFactorResult& r);
Json to_json(const SaturationResult& r);
Json to_json(const G2Result& r);

/// Numeric CSV with a one-line header. Throws ParseError(line) on malformed input.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<double>> rows;

    std::vector<double> column(std::size_t index) const;
};

CsvTable read_csv(const std::filesystem::path& path);
/// Numbers are written with "%.9g".
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& rows);

/// time_ps,counts
DecayTrace read_trace(const std::filesystem::path& path);
void write_trace(const std::filesystem::path& path, const DecayTrace& trace);

/// delay_ns,counts plus a JSON sidecar {rep_period_ns, bin_width_ns}.
CoincidenceHistogram read_histogram(const std::filesystem::path& path);
void write_histogram(const std::filesystem::path& path, const CoincidenceHistogram& hist);

/// wavelength_nm,counts or energy_ev,counts
Spectrum read_spectrum(const std::filesystem::path& path);
void write_spectrum(const std::filesystem::path& path, const Spectrum& spectrum);

struct SaturationSeries {
    std::vector<double> power;
    std::vector<double> counts_per_s;
};
/// power,counts_per_s
SaturationSeries read_saturation(const std::filesystem::path& path);

/// {"elements": [{"name", "transmission", "rel_err"}, ...]}; rel_err is fractional.
std::vector<BudgetElement> budget_elements_from_json(const nlohmann::json& j);
std::vector<BudgetElement> read_budget(const std::filesystem::path& path);

MarkLayout layout_from_json(const nlohmann::json& j);
Json to_json(const MarkLayout& layout);
MarkLayout read_layout(const std::filesystem::path& path);

/// Parses a JSON file; syntax errors become ParseError with the byte offset.
nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace dotfoundry::io
