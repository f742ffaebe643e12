#include "doctest.h"
#include "fixtures.hpp"

#include "funreg/data_io.hpp"
#include "funreg/errors.hpp"

#include <cmath>
#include <sstream>

using namespace funreg;

namespace {

std::vector<DailyRecord> week_of(const std::string& id, int week, std::vector<double> steps) {
    std::vector<DailyRecord> out;
    for (std::size_t d = 0; d < steps.size(); ++d) out.push_back({id, (week - 1) * 7 + 1 + static_cast<int>(d), steps[d]});
    return out;
}

std::vector<DailyRecord> random_daily(int subjects, std::uint64_t seed) {
    Rng rng = make_rng(seed);
    std::uniform_real_distribution<double> u(0, 1);
    std::lognormal_distribution<double> steps(8.5, 0.5);
    std::vector<DailyRecord> out;
    for (int i = 0; i < subjects; ++i) {
        for (int day = 1; day <= 36 * 7 + 5; ++day) {
            if (u(rng) < 0.1 + 0.5 * day / 252.0) continue;
            out.push_back({"u" + std::to_string(i), day, std::floor(steps(rng))});
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("data_io") {

TEST_CASE("weekly aggregation examples") {
    std::vector<DailyRecord> recs = week_of("a", 1, {1200, 900, 1500});
    for (auto r : week_of("a", 2, {2000, 3000, 4000})) recs.push_back(r);
    PreprocessReport rep;
    const auto out = preprocess(recs, PreprocessConfig{}, &rep);
    REQUIRE(out.size() == 1);
    CHECK(out[0].times == std::vector<double>{2.0});
    CHECK(out[0].values[0] == std::log(3000.0));
    CHECK(rep.invalid_steps == 1);
    CHECK(rep.weeks_below_min_days == 1);
    CHECK(rep.weeks_kept == 1);
    CHECK(rep.records == 6);

    PreprocessConfig lenient;
    lenient.min_days_per_week = 1;
    const auto out1 = preprocess(recs, lenient);
    CHECK(out1[0].times == std::vector<double>{1.0, 2.0});
    CHECK(out1[0].values[0] == doctest::Approx(std::log(1350.0)).epsilon(1e-15));
}

TEST_CASE("period filter and late records") {
    std::vector<DailyRecord> recs = week_of("a", 24, {2000, 2000, 2000});
    for (auto r : week_of("a", 25, {3000, 3000, 3000})) recs.push_back(r);
    for (auto r : week_of("a", 37, {3000, 3000, 3000})) recs.push_back(r);
    PreprocessConfig cfg;
    cfg.log_transform = false;
    PreprocessReport rep;
    auto out = preprocess(recs, cfg, &rep);
    CHECK(out[0].times == std::vector<double>{24.0});
    CHECK(rep.beyond_last_week == 3);
    CHECK(rep.outside_period == 3);
    cfg.period = Period::follow_up;
    out = preprocess(recs, cfg);
    CHECK(out[0].times == std::vector<double>{25.0});
    CHECK(out[0].values[0] == 3000.0);
    CHECK(period_weeks(Period::follow_up) == std::pair<int, int>{25, 36});
}

TEST_CASE("daily aggregation keeps day indices") {
    PreprocessConfig cfg;
    cfg.aggregate = Aggregation::daily;
    cfg.log_transform = false;
    const auto out = preprocess(week_of("a", 2, {2000, 500, 4000}), cfg);
    CHECK(out[0].times == std::vector<double>{8.0, 10.0});
    CHECK(out[0].values == std::vector<double>{2000.0, 4000.0});
}

TEST_CASE("invalid records") {
    auto dup = week_of("a", 1, {2000, 2000});
    dup.push_back({"a", 1, 3000});
    CHECK_THROWS_AS(preprocess(dup, PreprocessConfig{}), InputError);
    CHECK_THROWS_AS(preprocess(week_of("a", 1, {2000, -5}), PreprocessConfig{}), InputError);
    std::vector<DailyRecord> zero{{"a", 0, 2000}};
    CHECK_THROWS_AS(preprocess(zero, PreprocessConfig{}), InputError);
    PreprocessConfig bad;
    bad.min_days_per_week = 8;
    CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("log transform is invertible") {
    const auto recs = random_daily(20, 91);
    PreprocessConfig logged, raw;
    raw.log_transform = false;
    const auto a = preprocess(recs, logged), b = preprocess(recs, raw);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].times == b[i].times);
        for (std::size_t j = 0; j < a[i].values.size(); ++j) {
            CHECK(std::abs(std::exp(a[i].values[j]) - b[i].values[j]) <= 1e-12 * b[i].values[j]);
        }
    }
}

TEST_CASE("lowering the day threshold never removes weeks") {
    const auto recs = random_daily(30, 92);
    std::vector<std::vector<FunctionalSample>> by_threshold;
    for (int m = 0; m <= 7; ++m) {
        PreprocessConfig cfg;
        cfg.min_days_per_week = m;
        by_threshold.push_back(preprocess(recs, cfg));
    }
    for (int m = 1; m <= 7; ++m) {
        const auto& lo = by_threshold[static_cast<std::size_t>(m - 1)];
        for (const auto& s : by_threshold[static_cast<std::size_t>(m)]) {
            const auto it = std::find_if(lo.begin(), lo.end(), [&](const auto& x) { return x.subject_id == s.subject_id; });
            REQUIRE(it != lo.end());
            for (double t : s.times) CHECK(it->value_at(t));
        }
    }
}

TEST_CASE("weekly data pass through unchanged") {
    PreprocessConfig cfg;
    cfg.log_transform = false;
    const auto weekly = preprocess(random_daily(10, 93), cfg);
    std::vector<DailyRecord> expanded;
    for (const auto& s : weekly) {
        for (std::size_t j = 0; j < s.times.size(); ++j) {
            const int week = static_cast<int>(s.times[j]);
            for (auto r : week_of(s.subject_id, week, std::vector<double>(7, s.values[j]))) expanded.push_back(r);
        }
    }
    PreprocessConfig identity = cfg;
    identity.min_valid_steps = 0.0;
    identity.min_days_per_week = 1;
    const auto again = preprocess(expanded, identity);
    REQUIRE(again.size() == weekly.size());
    for (std::size_t i = 0; i < weekly.size(); ++i) {
        CHECK(again[i].times == weekly[i].times);
        for (std::size_t j = 0; j < weekly[i].values.size(); ++j) {
            CHECK(again[i].values[j] == doctest::Approx(weekly[i].values[j]).epsilon(1e-14));
        }
    }
}

TEST_CASE("imputation before averaging fills missing days") {
    PreprocessConfig cfg;
    cfg.impute_before_average = true;
    cfg.impute_fpca.num_components = 2;
    PreprocessReport rep;
    const auto out = preprocess(random_daily(25, 94), cfg, &rep);
    CHECK(rep.imputed_days > 0);
    for (const auto& s : out) CHECK(s.times.size() == 24);
}

TEST_CASE("daily csv round trip") {
    const auto recs = random_daily(3, 95);
    std::stringstream io;
    write_daily_csv(io, recs);
    const auto back = read_daily_csv(io);
    REQUIRE(back.size() == recs.size());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        CHECK(back[i].subject_id == recs[i].subject_id);
        CHECK(back[i].day_index == recs[i].day_index);
        CHECK(back[i].steps == recs[i].steps);
    }
    std::istringstream missing("subject_id,steps\na,1\n");
    CHECK_THROWS_AS(read_daily_csv(missing), ParseError);
}

TEST_CASE("covariate reference coding") {
    std::istringstream in("subject_id,arm,age,stratum\n"
                          "a,control,30,low\nb,peer,41,high\nc,team,25,low\nd,solo,52,high\n");
    const auto table = read_covariates(in);
    CHECK(table.levels.at("arm") == std::vector<std::string>{"control", "peer", "solo", "team"});
    const auto names = table.encoded_names();
    CHECK(std::count_if(names.begin(), names.end(), [](const auto& n) { return n.rfind("arm_", 0) == 0; }) == 3);
    const auto control = table.encoded(0);
    CHECK(control.at("arm_peer") == 0.0);
    CHECK(control.at("arm_solo") == 0.0);
    CHECK(control.at("arm_team") == 0.0);
    CHECK(control.at("age") == 30.0);
    CHECK(table.encoded(1).at("arm_peer") == 1.0);
    CHECK(table.encoded(1).count("stratum") == 0);
}

TEST_CASE("covariate errors") {
    std::istringstream empty("");
    CHECK_THROWS_AS(read_covariates(empty), InputError);
    std::istringstream header_only("subject_id,arm,age\n");
    CHECK_THROWS_AS(read_covariates(header_only), InputError);
    std::istringstream bad("subject_id,arm,age\na,control,30\nb,peer,forty\n");
    try {
        (void)read_covariates(bad);
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()).find("row 3") != std::string::npos);
    }
    std::istringstream dup("subject_id,arm\na,control\na,peer\n");
    CHECK_THROWS_AS(read_covariates(dup), ParseError);
}

TEST_CASE("covariate round trip and join") {
    std::istringstream in("subject_id,arm,age,stratum,cohort\n"
                          "a,control,30.25,low,\nb,peer,41,high,c1\n\"c, jr\",peer,0.1,low,c1\n");
    const auto table = read_covariates(in);
    std::stringstream io;
    write_covariates(io, table);
    CHECK(read_covariates(io) == table);

    std::vector<FunctionalSample> s{fixture::make_sample("a", {1}, {1}), fixture::make_sample("c, jr", {1}, {1})};
    join_covariates(s, table);
    CHECK(s[1].arm == "peer");
    CHECK(s[1].stratum == "low");
    CHECK(s[1].cohort == std::optional<std::string>("c1"));
    CHECK(!s[0].cohort);
    CHECK(s[1].covariate("arm_peer") == 1.0);
    CHECK(s[0].covariate("age") == 30.25);

    std::vector<FunctionalSample> orphans{fixture::make_sample("x", {1}, {1}), fixture::make_sample("y", {1}, {1})};
    try {
        join_covariates(orphans, table);
        FAIL("expected JoinError");
    } catch (const JoinError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("x") != std::string::npos);
        CHECK(msg.find("y") != std::string::npos);
    }
}

TEST_CASE("long csv round trip") {
    const auto weekly = preprocess(random_daily(5, 96), PreprocessConfig{});
    std::stringstream io;
    write_long_csv(io, weekly);
    const auto back = read_long_csv(io);
    REQUIRE(back.size() == weekly.size());
    for (std::size_t i = 0; i < weekly.size(); ++i) {
        CHECK(back[i].subject_id == weekly[i].subject_id);
        CHECK(back[i].times == weekly[i].times);
        CHECK(back[i].values == weekly[i].values);
    }
    std::istringstream repeated("subject_id,week,value\na,1,2\na,1,3\n");
    CHECK_THROWS_AS(read_long_csv(repeated), InputError);
    CHECK(split_csv_line("a,\"b,c\",d") == std::vector<std::string>{"a", "b,c", "d"});
}

}
