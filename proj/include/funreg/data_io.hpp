#pragma once

#include "funreg/fpca.hpp"
#include "funreg/sample.hpp"

#include "json.hpp"

#include <filesystem>
#include <iosfwd>
#include <map>
#include <span>
#include <string>
#include <vector>

namespace funreg {

struct DailyRecord {
    std::string subject_id;
    int day_index = 0;  // 1-based, relative to the subject's own start
    double steps = 0.0;
};

enum class Period { intervention, follow_up };
enum class Aggregation { weekly, daily };

const char* to_string(Period p);
Period period_from_string(const std::string& name);
const char* to_string(Aggregation a);
Aggregation aggregation_from_string(const std::string& name);

/// Week range of a period: intervention 1-24, follow-up 25-36.
std::pair<int, int> period_weeks(Period p);

struct PreprocessConfig {
    double min_valid_steps = 1000.0;
    int min_days_per_week = 3;
    bool log_transform = true;
    Aggregation aggregate = Aggregation::weekly;
    bool impute_before_average = false;
    Period period = Period::intervention;
    FpcaConfig impute_fpca;

    void validate() const;
};

struct PreprocessReport {
    std::size_t records = 0;
    std::size_t invalid_steps = 0;          // below min_valid_steps
    std::size_t beyond_last_week = 0;       // after week 36
    std::size_t outside_period = 0;         // valid records in the other period
    std::size_t weeks_below_min_days = 0;
    std::size_t weeks_kept = 0;
    std::size_t imputed_days = 0;
    std::vector<std::string> subjects_without_data;
    std::size_t subjects = 0;
};

nlohmann::json to_json(const PreprocessReport& report);

std::vector<FunctionalSample> preprocess(std::span<const DailyRecord> records, const PreprocessConfig& config,
                                         PreprocessReport* report = nullptr);

/// Daily CSV with header subject_id,day_index,steps.
std::vector<DailyRecord> read_daily_csv(std::istream& in);
std::vector<DailyRecord> load_daily_csv(const std::filesystem::path& path);
void write_daily_csv(std::ostream& out, std::span<const DailyRecord> records);

/// Declares which covariate columns are categorical. `arm` is stored on the
/// sample and reference-coded; label columns (stratum, cohort) are stored on the
/// sample only.
struct CovariateSchema {
    std::vector<std::string> categorical{"arm"};
    std::vector<std::string> labels{"stratum", "cohort"};
    std::map<std::string, std::string> reference{{"arm", "control"}};

    bool is_text(const std::string& column) const;
};

struct CovariateTable {
    std::vector<std::string> subject_ids;
    std::vector<std::string> columns;  // file order, subject_id excluded
    std::map<std::string, std::vector<double>> numeric;
    std::map<std::string, std::vector<std::string>> text;
    std::map<std::string, std::vector<std::string>> levels;  // categorical levels, reference first

    std::size_t size() const { return subject_ids.size(); }
    /// Numeric columns plus one indicator "<column>_<level>" per non-reference level.
    std::map<std::string, double> encoded(std::size_t row) const;
    std::vector<std::string> encoded_names() const;
    bool operator==(const CovariateTable& other) const = default;
};

CovariateTable read_covariates(std::istream& in, const CovariateSchema& schema = {});
CovariateTable load_covariates(const std::filesystem::path& path, const CovariateSchema& schema = {});
void write_covariates(std::ostream& out, const CovariateTable& table);

/// Attaches covariates, arm, stratum and cohort. Throws JoinError listing every
/// sample without a covariate row.
void join_covariates(std::vector<FunctionalSample>& samples, const CovariateTable& table);

/// Canonical long CSV: subject_id,week,value (or day for daily data).
void write_long_csv(std::ostream& out, std::span<const FunctionalSample> samples, const std::string& time_column = "week");
std::vector<FunctionalSample> read_long_csv(std::istream& in);
std::vector<FunctionalSample> load_long_csv(const std::filesystem::path& path);

/// Splits a CSV line; double quotes may enclose commas.
std::vector<std::string> split_csv_line(const std::string& line);

}  // namespace funreg
