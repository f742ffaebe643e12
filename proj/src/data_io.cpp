#include "funreg/data_io.hpp"

#include "funreg/errors.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>

namespace funreg {

namespace {

constexpr int kLastWeek = 36;

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

bool parse_double(const std::string& text, double& out) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

bool parse_int(const std::string& text, int& out) {
    const std::string t = trim(text);
    if (t.empty()) return false;
    const auto res = std::from_chars(t.data(), t.data() + t.size(), out);
    return res.ec == std::errc() && res.ptr == t.data() + t.size();
}

std::ifstream open_input(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    return in;
}

std::string quote(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char c : s) {
        if (c == '"') out += '"';
        out += c;
    }
    return out + '"';
}

std::vector<std::string> read_header(std::istream& in, const std::string& what) {
    std::string line;
    while (std::getline(in, line)) {
        if (!trim(line).empty()) break;
    }
    if (trim(line).empty()) throw InputError(what + " is empty");
    auto header = split_csv_line(line);
    for (auto& h : header) h = trim(h);
    return header;
}

std::size_t column_index(const std::vector<std::string>& header, const std::string& name, const std::string& what) {
    auto it = std::find(header.begin(), header.end(), name);
    if (it == header.end()) throw ParseError(what + ": missing column '" + name + "'");
    return static_cast<std::size_t>(it - header.begin());
}

}  // namespace

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    bool quoted = false;
    for (std::size_t i = 0; i < line.size(); ++i) {
        const char c = line[i];
        if (quoted) {
            if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
                cur += '"';
                ++i;
            } else if (c == '"') {
                quoted = false;
            } else {
                cur += c;
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

const char* to_string(Period p) { return p == Period::follow_up ? "follow_up" : "intervention"; }

Period period_from_string(const std::string& name) {
    if (name == "intervention") return Period::intervention;
    if (name == "follow_up" || name == "follow-up" || name == "followup") return Period::follow_up;
    throw InvalidArgument("unknown period '" + name + "' (expected intervention or follow_up)");
}

const char* to_string(Aggregation a) { return a == Aggregation::daily ? "daily" : "weekly"; }

Aggregation aggregation_from_string(const std::string& name) {
    if (name == "weekly") return Aggregation::weekly;
    if (name == "daily") return Aggregation::daily;
    throw InvalidArgument("unknown aggregation '" + name + "' (expected weekly or daily)");
}

std::pair<int, int> period_weeks(Period p) { return p == Period::follow_up ? std::pair{25, 36} : std::pair{1, 24}; }

void PreprocessConfig::validate() const {
    if (min_days_per_week < 0 || min_days_per_week > 7) throw InvalidArgument("min_days_per_week must lie in [0, 7]");
    if (!(min_valid_steps >= 0)) throw InvalidArgument("min_valid_steps must be non-negative");
    if (impute_before_average && aggregate == Aggregation::daily) {
        throw InvalidArgument("impute_before_average requires weekly aggregation");
    }
}

nlohmann::json to_json(const PreprocessReport& r) {
    return {{"records", r.records},
            {"dropped_invalid_steps", r.invalid_steps},
            {"dropped_beyond_week_36", r.beyond_last_week},
            {"outside_period", r.outside_period},
            {"weeks_below_min_days", r.weeks_below_min_days},
            {"weeks_kept", r.weeks_kept},
            {"imputed_days", r.imputed_days},
            {"subjects", r.subjects},
            {"subjects_without_data", r.subjects_without_data}};
}

std::vector<FunctionalSample> preprocess(std::span<const DailyRecord> records, const PreprocessConfig& config,
                                         PreprocessReport* report_out) {
    config.validate();
    PreprocessReport report;
    report.records = records.size();
    const auto [first_week, last_week] = period_weeks(config.period);

    std::map<std::string, std::map<int, double>> valid;  // subject -> day -> steps
    std::set<std::string> seen_subjects;
    std::set<std::pair<std::string, int>> seen_days;
    for (const auto& r : records) {
        if (r.day_index < 1) {
            throw InputError("subject '" + r.subject_id + "': day_index " + std::to_string(r.day_index) + " is not positive");
        }
        if (!std::isfinite(r.steps) || r.steps < 0) {
            throw InputError("subject '" + r.subject_id + "' day " + std::to_string(r.day_index) +
                             ": negative or non-finite step count");
        }
        if (!seen_days.emplace(r.subject_id, r.day_index).second) {
            throw InputError("duplicate record for subject '" + r.subject_id + "' day " + std::to_string(r.day_index));
        }
        seen_subjects.insert(r.subject_id);
        const int week = (r.day_index - 1) / 7 + 1;
        if (week > kLastWeek) {
            ++report.beyond_last_week;
            continue;
        }
        if (r.steps < config.min_valid_steps) {
            ++report.invalid_steps;
            continue;
        }
        if (week < first_week || week > last_week) {
            ++report.outside_period;
            continue;
        }
        valid[r.subject_id][r.day_index] = r.steps;
    }
    auto transform = [&](double v) { return config.log_transform ? std::log(v) : v; };

    std::vector<FunctionalSample> out;
    if (config.impute_before_average) {
        const int day_lo = (first_week - 1) * 7 + 1, day_hi = last_week * 7;
        std::vector<FunctionalSample> daily;
        for (const auto& [id, days] : valid) {
            FunctionalSample s;
            s.subject_id = id;
            for (const auto& [d, v] : days) {
                s.times.push_back(d);
                s.values.push_back(v);
            }
            daily.push_back(std::move(s));
        }
        if (daily.size() >= 2) {
            const VectorXd grid = linspace(day_lo, day_hi, day_hi - day_lo + 1);
            const FpcaResult fit = fit_fpca(daily, grid, config.impute_fpca);
            const MatrixXd full = impute_curves(fit, daily, grid);
            for (std::size_t i = 0; i < daily.size(); ++i) {
                report.imputed_days += static_cast<std::size_t>(grid.size()) - daily[i].num_observed();
                FunctionalSample s;
                s.subject_id = daily[i].subject_id;
                for (int w = first_week; w <= last_week; ++w) {
                    const double mean = full.row(static_cast<Index>(i)).segment((w - first_week) * 7, 7).mean();
                    if (mean <= 0 && config.log_transform) continue;  // log undefined
                    s.times.push_back(w);
                    s.values.push_back(transform(mean));
                }
                report.weeks_kept += s.times.size();
                out.push_back(std::move(s));
            }
        } else if (!daily.empty()) {
            throw InputError("impute_before_average needs at least 2 subjects with valid days");
        }
    } else {
        for (const auto& [id, days] : valid) {
            FunctionalSample s;
            s.subject_id = id;
            if (config.aggregate == Aggregation::daily) {
                for (const auto& [d, v] : days) {
                    s.times.push_back(d);
                    s.values.push_back(transform(v));
                }
            } else {
                std::map<int, std::pair<double, int>> weeks;
                for (const auto& [d, v] : days) {
                    auto& acc = weeks[(d - 1) / 7 + 1];
                    acc.first += v;
                    acc.second += 1;
                }
                for (const auto& [w, acc] : weeks) {
                    if (acc.second < std::max(config.min_days_per_week, 1)) {
                        ++report.weeks_below_min_days;
                        continue;
                    }
                    s.times.push_back(w);
                    s.values.push_back(transform(acc.first / acc.second));
                }
                report.weeks_kept += s.times.size();
            }
            if (!s.times.empty()) out.push_back(std::move(s));
        }
    }
    std::set<std::string> kept;
    for (const auto& s : out) kept.insert(s.subject_id);
    for (const auto& id : seen_subjects) {
        if (!kept.count(id)) report.subjects_without_data.push_back(id);
    }
    report.subjects = out.size();
    if (report_out) *report_out = report;
    return out;
}

std::vector<DailyRecord> read_daily_csv(std::istream& in) {
    const auto header = read_header(in, "daily file");
    const auto ci = column_index(header, "subject_id", "daily file");
    const auto cd = column_index(header, "day_index", "daily file");
    const auto cs = column_index(header, "steps", "daily file");
    std::vector<DailyRecord> out;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) {
            throw ParseError("daily file row " + std::to_string(row) + ": expected " + std::to_string(header.size()) +
                             " fields, found " + std::to_string(f.size()));
        }
        DailyRecord r;
        r.subject_id = trim(f[ci]);
        if (!parse_int(f[cd], r.day_index)) throw ParseError("daily file row " + std::to_string(row) + ": bad day_index '" + f[cd] + "'");
        if (!parse_double(f[cs], r.steps)) throw ParseError("daily file row " + std::to_string(row) + ": bad steps '" + f[cs] + "'");
        out.push_back(std::move(r));
    }
    return out;
}

std::vector<DailyRecord> load_daily_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_daily_csv(in);
}

void write_daily_csv(std::ostream& out, std::span<const DailyRecord> records) {
    out << "subject_id,day_index,steps\n";
    out.precision(17);
    for (const auto& r : records) out << quote(r.subject_id) << ',' << r.day_index << ',' << r.steps << '\n';
}

bool CovariateSchema::is_text(const std::string& column) const {
    return std::find(categorical.begin(), categorical.end(), column) != categorical.end() ||
           std::find(labels.begin(), labels.end(), column) != labels.end();
}

std::map<std::string, double> CovariateTable::encoded(std::size_t row) const {
    std::map<std::string, double> out;
    for (const auto& [name, values] : numeric) out[name] = values[row];
    for (const auto& [name, lv] : levels) {
        const std::string& value = text.at(name)[row];
        for (std::size_t l = 1; l < lv.size(); ++l) out[name + "_" + lv[l]] = value == lv[l] ? 1.0 : 0.0;
    }
    return out;
}

std::vector<std::string> CovariateTable::encoded_names() const {
    std::vector<std::string> out;
    for (const auto& c : columns) {
        if (numeric.count(c)) out.push_back(c);
        if (levels.count(c)) {
            const auto& lv = levels.at(c);
            for (std::size_t l = 1; l < lv.size(); ++l) out.push_back(c + "_" + lv[l]);
        }
    }
    return out;
}

CovariateTable read_covariates(std::istream& in, const CovariateSchema& schema) {
    const auto header = read_header(in, "covariate file");
    const auto key = column_index(header, "subject_id", "covariate file");
    CovariateTable t;
    for (std::size_t c = 0; c < header.size(); ++c) {
        if (c == key) continue;
        if (header[c].empty()) throw ParseError("covariate file: empty column name");
        t.columns.push_back(header[c]);
        if (schema.is_text(header[c])) {
            t.text[header[c]];
        } else {
            t.numeric[header[c]];
        }
    }
    std::set<std::string> ids;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) {
            throw ParseError("covariate file row " + std::to_string(row) + ": expected " +
                             std::to_string(header.size()) + " fields, found " + std::to_string(f.size()));
        }
        const std::string id = trim(f[key]);
        if (!ids.insert(id).second) throw ParseError("covariate file row " + std::to_string(row) + ": duplicate subject '" + id + "'");
        t.subject_ids.push_back(id);
        for (std::size_t c = 0; c < header.size(); ++c) {
            if (c == key) continue;
            if (t.text.count(header[c])) {
                t.text[header[c]].push_back(trim(f[c]));
            } else {
                double v = 0;
                if (!parse_double(f[c], v)) {
                    throw ParseError("covariate file row " + std::to_string(row) + ": non-numeric value '" + f[c] +
                                     "' in column '" + header[c] + "'");
                }
                t.numeric[header[c]].push_back(v);
            }
        }
    }
    if (t.subject_ids.empty()) throw InputError("covariate file has no data rows");
    for (const auto& name : schema.categorical) {
        if (!t.text.count(name)) continue;
        std::set<std::string> lv(t.text[name].begin(), t.text[name].end());
        std::vector<std::string> ordered;
        auto ref = schema.reference.find(name);
        if (ref != schema.reference.end() && lv.count(ref->second)) {
            ordered.push_back(ref->second);
            lv.erase(ref->second);
        }
        ordered.insert(ordered.end(), lv.begin(), lv.end());
        t.levels[name] = ordered;
    }
    return t;
}

CovariateTable load_covariates(const std::filesystem::path& path, const CovariateSchema& schema) {
    auto in = open_input(path);
    return read_covariates(in, schema);
}

void write_covariates(std::ostream& out, const CovariateTable& table) {
    out << "subject_id";
    for (const auto& c : table.columns) out << ',' << quote(c);
    out << '\n';
    out.precision(17);
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << quote(table.subject_ids[i]);
        for (const auto& c : table.columns) {
            out << ',';
            if (table.numeric.count(c)) {
                out << table.numeric.at(c)[i];
            } else {
                out << quote(table.text.at(c)[i]);
            }
        }
        out << '\n';
    }
}

void join_covariates(std::vector<FunctionalSample>& samples, const CovariateTable& table) {
    std::map<std::string, std::size_t> index;
    for (std::size_t i = 0; i < table.size(); ++i) index[table.subject_ids[i]] = i;
    std::vector<std::string> missing;
    for (const auto& s : samples) {
        if (!index.count(s.subject_id)) missing.push_back(s.subject_id);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& id : missing) list += (list.empty() ? "" : ", ") + id;
        throw JoinError("no covariates for " + std::to_string(missing.size()) + " subject(s): " + list);
    }
    for (auto& s : samples) {
        const std::size_t row = index.at(s.subject_id);
        for (const auto& [k, v] : table.encoded(row)) s.covariates[k] = v;
        if (table.text.count("arm")) s.arm = table.text.at("arm")[row];
        if (table.text.count("stratum")) s.stratum = table.text.at("stratum")[row];
        if (table.text.count("cohort")) {
            const std::string& c = table.text.at("cohort")[row];
            if (!c.empty()) s.cohort = c;
        }
    }
}

void write_long_csv(std::ostream& out, std::span<const FunctionalSample> samples, const std::string& time_column) {
    out << "subject_id," << time_column << ",value\n";
    out.precision(17);
    for (const auto& s : samples) {
        for (std::size_t j = 0; j < s.times.size(); ++j) out << quote(s.subject_id) << ',' << s.times[j] << ',' << s.values[j] << '\n';
    }
}

std::vector<FunctionalSample> read_long_csv(std::istream& in) {
    const auto header = read_header(in, "long file");
    const auto ci = column_index(header, "subject_id", "long file");
    std::size_t ct = 0;
    if (std::find(header.begin(), header.end(), "week") != header.end()) {
        ct = column_index(header, "week", "long file");
    } else if (std::find(header.begin(), header.end(), "day") != header.end()) {
        ct = column_index(header, "day", "long file");
    } else {
        ct = column_index(header, "t", "long file");
    }
    const auto cv = column_index(header, "value", "long file");
    std::vector<FunctionalSample> out;
    std::map<std::string, std::size_t> index;
    std::map<std::string, std::map<double, double>> values;
    std::string line;
    std::size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (trim(line).empty()) continue;
        const auto f = split_csv_line(line);
        if (f.size() != header.size()) throw ParseError("long file row " + std::to_string(row) + ": wrong field count");
        double t = 0, v = 0;
        if (!parse_double(f[ct], t) || !parse_double(f[cv], v)) {
            throw ParseError("long file row " + std::to_string(row) + ": non-numeric time or value");
        }
        const std::string id = trim(f[ci]);
        if (!index.count(id)) {
            index[id] = out.size();
            out.emplace_back().subject_id = id;
        }
        if (!values[id].emplace(t, v).second) {
            throw InputError("long file row " + std::to_string(row) + ": repeated time for subject '" + id + "'");
        }
    }
    for (auto& s : out) {
        for (const auto& [t, v] : values[s.subject_id]) {
            s.times.push_back(t);
            s.values.push_back(v);
        }
    }
    return out;
}

std::vector<FunctionalSample> load_long_csv(const std::filesystem::path& path) {
    auto in = open_input(path);
    return read_long_csv(in);
}

}  // namespace funreg
