#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "epf/dataset.hpp"
#include "epf/date.hpp"
#include "epf/error.hpp"
#include "epf/fetch.hpp"
#include "epf/hash.hpp"
#include "epf/keyvalue.hpp"
#include "support.hpp"

using namespace epf;
using epf::test::ymd;

namespace {

std::string hour_label(int h) {
    return (h < 10 ? "0" : "") + std::to_string(h) + ":00";
}

// 24 rows per day of constant values, starting at `start`.
std::string constant_csv(Date start, int days, double value) {
    std::ostringstream out;
    out << "timestamp,price,exog1,exog2\n";
    for (int d = 0; d < days; ++d) {
        const auto date = format_date(add_days(start, d));
        for (int h = 0; h < 24; ++h) {
            out << date << ' ' << hour_label(h) << ',' << value << ',' << value << ',' << value << '\n';
        }
    }
    return out.str();
}

}  // namespace

TEST_CASE("dates parse in both supported layouts") {
    CHECK(parse_date("2016-12-27") == ymd(2016, 12, 27));
    CHECK(parse_date("27.12.2016") == ymd(2016, 12, 27));
    CHECK(format_date(ymd(2018, 1, 2)) == "2018-01-02");
    CHECK_THROWS_AS(parse_date("2016/12/27"), ConfigError);
    CHECK_THROWS_AS(parse_date("2016-02-30"), ConfigError);
    CHECK(iso_weekday(ymd(2016, 12, 26)) == 1);
    CHECK(iso_weekday(ymd(2017, 1, 1)) == 7);
}

TEST_CASE("hashes match published digests") {
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    test::TempDir dir;
    std::ofstream(dir / "hello.txt") << "hello\n";
    CHECK(git_blob_hash_file(dir / "hello.txt") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("key=value files ignore comments and trim whitespace") {
    std::istringstream in("# comment\n\n a = 1 \nb=two words\n");
    const auto kv = parse_key_values(in);
    CHECK(kv.size() == 2);
    CHECK(kv.at("a") == "1");
    CHECK(kv.at("b") == "two words");
    std::ostringstream out;
    write_key_values(out, kv);
    std::istringstream back(out.str());
    CHECK(parse_key_values(back) == kv);
}

TEST_CASE("parse_dataset_csv") {
    SUBCASE("full benchmark-length file") {
        data::SyntheticMarket spec;
        spec.start = ymd(2013, 1, 1);
        const auto source = data::make_synthetic_dataset(spec);
        std::stringstream buf;
        data::write_dataset_csv(buf, source);
        const auto ds = data::parse_dataset_csv(buf, "NP");
        CHECK(ds.size() == 2184);
        CHECK(ds.market_id() == "NP");
        CHECK(ds.dates().back() == ymd(2018, 12, 24));
        CHECK(ds.prices() == source.prices());
        CHECK(ds.exog2() == source.exog2());
    }
    SUBCASE("constant file passes through unchanged") {
        std::istringstream in(constant_csv(ymd(2017, 3, 1), 3, 10.0));
        const auto ds = data::parse_dataset_csv(in, "X");
        REQUIRE(ds.size() == 3);
        for (auto s : {data::Series::price, data::Series::exog1, data::Series::exog2}) {
            CHECK((ds.series(s).array() == 10.0).all());
        }
    }
    SUBCASE("seconds in timestamps and a T separator are accepted") {
        std::ostringstream out;
        out << "Date,Price,Exogenous 1,Exogenous 2\n";
        for (int h = 0; h < 24; ++h) out << "2017-03-01T" << hour_label(h) << ":00,1,2,3\n";
        std::istringstream in(out.str());
        const auto ds = data::parse_dataset_csv(in, "X");
        CHECK(ds.size() == 1);
        CHECK(ds.day(data::Series::exog2, 0)[23] == 3.0);
    }
    SUBCASE("daylight-saving days of 23 and 25 hours") {
        std::ostringstream out;
        out << "timestamp,price,exog1,exog2\n";
        // Spring forward: 02:00 is missing.
        for (int h = 0; h < 24; ++h) {
            if (h == 2) continue;
            out << "2017-03-26 " << hour_label(h) << ',' << h * 2.0 << ",1,1\n";
        }
        // Fall back: 02:00 appears twice with 4 and 6.
        for (int h = 0; h < 24; ++h) {
            out << "2017-03-27 " << hour_label(h) << ',' << (h == 2 ? 4.0 : 1.0) << ",1,1\n";
            if (h == 2) out << "2017-03-27 02:00,6,1,1\n";
        }
        std::istringstream in(out.str());
        const auto ds = data::parse_dataset_csv(in, "X");
        REQUIRE(ds.size() == 2);
        CHECK(ds.day(data::Series::price, 0)[2] == doctest::Approx(4.0));
        CHECK(ds.day(data::Series::price, 0)[3] == 6.0);
        CHECK(ds.day(data::Series::price, 1)[2] == doctest::Approx(5.0));
        CHECK(ds.day(data::Series::price, 1)[3] == 1.0);
    }
    SUBCASE("malformed row reports its line number") {
        auto text = constant_csv(ymd(2017, 3, 1), 1, 1.0);
        text.replace(text.find("03:00,1"), 7, "03:00,x");
        std::istringstream in(text);
        try {
            data::parse_dataset_csv(in, "X");
            FAIL("expected a parse error");
        } catch (const ParseError& e) {
            CHECK(e.line() == 5);
        }
    }
    SUBCASE("missing value is rejected") {
        auto text = constant_csv(ymd(2017, 3, 1), 1, 1.0);
        text.replace(text.find("05:00,1,1"), 9, "05:00,1,");
        std::istringstream in(text);
        CHECK_THROWS_AS(data::parse_dataset_csv(in, "X"), ParseError);
    }
    SUBCASE("non-hourly cadence") {
        std::istringstream half_hour("timestamp,price,exog1,exog2\n2017-03-01 00:30,1,1,1\n");
        CHECK_THROWS_AS(data::parse_dataset_csv(half_hour, "X"), CadenceError);
        auto text = constant_csv(ymd(2017, 3, 1), 1, 1.0);
        text.erase(text.find("2017-03-01 05:00"), std::string("2017-03-01 05:00,1,1,1\n").size());
        text.erase(text.find("2017-03-01 06:00"), std::string("2017-03-01 06:00,1,1,1\n").size());
        std::istringstream gap(text);
        CHECK_THROWS_AS(data::parse_dataset_csv(gap, "X"), CadenceError);
        std::istringstream day_gap(constant_csv(ymd(2017, 3, 1), 1, 1.0) +
                                   constant_csv(ymd(2017, 3, 3), 1, 1.0).substr(28));
        CHECK_THROWS_AS(data::parse_dataset_csv(day_gap, "X"), CadenceError);
    }
    SUBCASE("missing series") {
        std::istringstream in("timestamp,price,exog1\n2017-03-01 00:00,1,1\n");
        CHECK_THROWS_AS(data::parse_dataset_csv(in, "X"), SchemaError);
        std::istringstream empty("");
        CHECK_THROWS_AS(data::parse_dataset_csv(empty, "X"), SchemaError);
    }
    SUBCASE("unreadable path") {
        CHECK_THROWS_AS(data::parse_dataset_csv(std::filesystem::path("/nonexistent/x.csv")), DataError);
    }
}

TEST_CASE("normalize_calendar") {
    std::vector<double> day24(24);
    for (int h = 0; h < 24; ++h) day24[static_cast<std::size_t>(h)] = h * 1.5;
    CHECK(data::normalize_calendar(day24) == day24);

    std::vector<double> day25 = day24;
    day25.insert(day25.begin() + 3, 0.0);
    day25[2] = 4.0;
    day25[3] = 6.0;
    const auto merged = data::normalize_calendar(day25);
    REQUIRE(merged.size() == 24);
    CHECK(merged[2] == 5.0);
    CHECK(merged[3] == day24[3]);

    std::vector<double> day23 = day24;
    day23.erase(day23.begin() + 2);
    day23[1] = 10.0;
    day23[2] = 14.0;
    const auto filled = data::normalize_calendar(day23);
    REQUIRE(filled.size() == 24);
    CHECK(filled[2] == 12.0);
    CHECK(filled[3] == 14.0);

    CHECK_THROWS_AS(data::normalize_calendar(std::vector<double>(22, 1.0)), CalendarError);
    CHECK_THROWS_AS(data::normalize_calendar(std::vector<double>(26, 1.0)), CalendarError);

    // Explicit hour labels: a repeated 1 a.m. on the fall-back day.
    std::vector<int> hours;
    for (int h = 0; h < 24; ++h) {
        hours.push_back(h);
        if (h == 1) hours.push_back(1);
    }
    std::vector<double> values(25, 0.0);
    values[1] = 7.0;
    values[2] = 9.0;
    CHECK(data::normalize_calendar(values, hours)[1] == 8.0);
    std::vector<int> bad = hours;
    bad[5] = 3;
    CHECK_THROWS_AS(data::normalize_calendar(values, bad), CalendarError);
}

TEST_CASE("MarketDataset rejects gaps and non-finite values") {
    data::DayMatrix m = data::DayMatrix::Zero(2, 24);
    CHECK_THROWS_AS(data::MarketDataset("X", {ymd(2017, 1, 1), ymd(2017, 1, 3)}, m, m, m), CadenceError);
    data::DayMatrix nan = m;
    nan(1, 5) = std::nan("");
    CHECK_THROWS_AS(data::MarketDataset("X", {ymd(2017, 1, 1), ymd(2017, 1, 2)}, nan, m, m), SchemaError);
    CHECK_THROWS_AS(data::MarketDataset("X", {ymd(2017, 1, 1)}, m, m, m), SchemaError);
}

TEST_CASE("test_split") {
    SUBCASE("NP test period") {
        data::SyntheticMarket spec;
        spec.start = ymd(2013, 1, 1);
        const auto ds = data::make_synthetic_dataset(spec);
        const auto [history, period] = data::test_split(ds, ymd(2016, 12, 27));
        CHECK(period.start == ymd(2016, 12, 27));
        CHECK(period.end == ymd(2018, 12, 24));
        CHECK(period.n_days == 728);
        CHECK(period.n_days == 104 * 7);
        CHECK(history.price_end() == period.first_index);
        CHECK(history.exog_end() == period.first_index);
        CHECK(period.first_index >= 1456);
        CHECK_THROWS_AS(history.day(data::Series::price, period.first_index), LookaheadError);
        CHECK_THROWS_AS(data::test_split(ds, ds.dates().front()), SplitError);
        CHECK_THROWS_AS(data::test_split(ds, ymd(2030, 1, 1)), SplitError);
    }
    SUBCASE("DE test period") {
        data::SyntheticMarket spec;
        spec.start = ymd(2012, 1, 9);
        const auto ds = data::make_synthetic_dataset(spec);
        const auto period = data::test_split(ds, ymd(2016, 1, 4)).second;
        CHECK(period.end == ymd(2017, 12, 31));
        CHECK(period.n_days == 728);
    }
}

TEST_CASE("calibration_window_slice") {
    data::SyntheticMarket spec;
    spec.start = ymd(2013, 1, 1);
    spec.n_days = 1600;
    const auto ds = data::make_synthetic_dataset(spec);

    const auto two_years = data::calibration_window_slice(ds, ymd(2017, 2, 15), 104 * 7);
    CHECK(two_years.first_date() == ymd(2015, 2, 18));
    CHECK(two_years.last_date() == ymd(2017, 2, 14));
    CHECK(two_years.view.price_end() == two_years.target_day);

    const auto short_slice = data::calibration_window_slice(ds, 100, 56);
    CHECK(short_slice.window_days == 56);
    CHECK(short_slice.usable_rows() == 49);
    CHECK(short_slice.last_day() == 99);
    CHECK(short_slice.first_day == 44);

    CHECK_THROWS_AS(data::calibration_window_slice(ds, 55, 56), SliceError);
    CHECK_NOTHROW(data::calibration_window_slice(ds, 56, 56));
    CHECK_THROWS_AS(data::calibration_window_slice(ds, ymd(2030, 1, 1), 56), SliceError);

    // Consecutive targets share all but one day.
    for (std::size_t target : {100u, 500u, 1200u}) {
        const auto a = data::calibration_window_slice(ds, target, 84);
        const auto b = data::calibration_window_slice(ds, target + 1, 84);
        const std::size_t overlap = a.last_day() + 1 - b.first_day;
        CHECK(overlap == 83);
    }
}

TEST_CASE("forecasting view hides the target day's prices") {
    const auto ds = test::coded_dataset(20);
    const auto view = data::forecasting_view(ds, 10);
    CHECK_NOTHROW(view.day(data::Series::price, 9));
    CHECK_THROWS_AS(view.day(data::Series::price, 10), LookaheadError);
    CHECK(view.day(data::Series::exog1, 10)[0] == test::cell_code(data::Series::exog1, 10, 0));
    CHECK_THROWS_AS(view.day(data::Series::exog1, 11), LookaheadError);
}

TEST_CASE("every normalized day holds 24 finite values per series") {
    const auto ds = data::make_synthetic_dataset({.n_days = 400, .spike_probability = 0.02});
    for (auto s : {data::Series::price, data::Series::exog1, data::Series::exog2}) {
        CHECK(ds.series(s).cols() == 24);
        CHECK(ds.series(s).allFinite());
    }
}

TEST_CASE("fetch_dataset") {
    test::TempDir cache;
    data::Manifest manifest;
    manifest["NP"] = {"https://example.invalid/NP.csv", ""};
    const std::string body = constant_csv(ymd(2017, 1, 1), 2, 3.0);
    int requests = 0;
    data::Transport fake = [&](const std::string&, const std::filesystem::path& dest) -> long {
        ++requests;
        std::ofstream(dest) << body;
        return 200;
    };

    SUBCASE("second call hits the cache") {
        const auto first = data::fetch_dataset("NP", cache.path(), manifest, fake);
        const auto second = data::fetch_dataset("NP", cache.path(), manifest, fake);
        CHECK(first == second);
        CHECK(requests == 1);
        CHECK(data::parse_dataset_csv(first).size() == 2);
    }
    SUBCASE("unknown market") {
        CHECK_THROWS_AS(data::fetch_dataset("XX", cache.path(), manifest, fake), ConfigError);
        CHECK(requests == 0);
    }
    SUBCASE("failed download without cache") {
        data::Transport failing = [](const std::string&, const std::filesystem::path&) -> long { return 404; };
        try {
            data::fetch_dataset("NP", cache.path(), manifest, failing);
            FAIL("expected a transport error");
        } catch (const TransportError& e) {
            CHECK(e.status() == 404);
            CHECK(e.url() == "https://example.invalid/NP.csv");
        }
        CHECK_FALSE(std::filesystem::exists(cache / "NP.csv"));
    }
    SUBCASE("checksum is enforced when the manifest has one") {
        manifest["NP"].sha256 = std::string(64, '0');
        CHECK_THROWS_AS(data::fetch_dataset("NP", cache.path(), manifest, fake), TransportError);
        manifest["NP"].sha256 = sha256_hex(body);
        CHECK_NOTHROW(data::fetch_dataset("NP", cache.path(), manifest, fake));
    }
    SUBCASE("manifest parsing") {
        const auto m = data::parse_manifest({{"DE.url", "u"}, {"DE.sha256", "abc"}});
        CHECK(m.at("DE").url == "u");
        CHECK(m.at("DE").sha256 == "abc");
        CHECK_THROWS_AS(data::parse_manifest({{"DE.colour", "red"}}), ConfigError);
        const auto shipped = data::load_manifest(data::default_manifest_path());
        for (const char* market : {"NP", "PJM", "BE", "FR", "DE"}) CHECK(shipped.count(market) == 1);
    }
    SUBCASE("cache directory from the environment") {
        ::setenv("EPF_CACHE_DIR", cache.path().c_str(), 1);
        CHECK(data::default_cache_dir() == cache.path());
        ::unsetenv("EPF_CACHE_DIR");
    }
}
