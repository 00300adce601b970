#include "doctest.h"
#include "star/common.hpp"

using namespace star;

TEST_CASE("date parses and round-trips ISO-8601") {
    const Date d = Date::parse("2025-04-11");
    CHECK(d.to_string() == "2025-04-11");
    CHECK(d == Date::from_ymd(2025, 4, 11));

    CHECK(Date::parse("1970-01-01").days == 0);
    CHECK(Date::parse("1970-01-02").days == 1);
    CHECK(Date::parse("1969-12-31").days == -1);
}

TEST_CASE("date rejects malformed input") {
    CHECK_THROWS_AS(Date::parse("2025/04/11"), ParseError);
    CHECK_THROWS_AS(Date::parse("2025-4-11"), ParseError);
    CHECK_THROWS_AS(Date::parse("2025-13-01"), ParseError);
    CHECK_THROWS_AS(Date::parse("2025-02-30"), ParseError);
    CHECK_THROWS_AS(Date::parse("not-a-date"), ParseError);
    CHECK_THROWS_AS(Date::parse(""), ParseError);
}

TEST_CASE("date ordering and arithmetic") {
    const Date a = Date::parse("2025-01-01");
    const Date b = Date::parse("2025-01-16");
    CHECK(a < b);
    CHECK(days_between(a, b) == 15);
    CHECK(days_between(b, a) == -15);
}

TEST_CASE("splitmix64 matches the reference sequence") {
    // First outputs of the published SplitMix64 generator seeded with 0.
    CHECK(splitmix64(0) == 0xE220A8397B1DCDAFULL);
    CHECK(splitmix64(0x9E3779B97F4A7C15ULL) == 0x6E789E6AA1B965F4ULL);
}

TEST_CASE("fnv1a64 matches known vectors") {
    CHECK(fnv1a64("") == 0xCBF29CE484222325ULL);
    CHECK(fnv1a64("a") == 0xAF63DC4C8601EC8CULL);
    CHECK(fnv1a64("foobar") == 0x85944171F73967E8ULL);
}

TEST_CASE("derive_seed separates streams and indices") {
    const std::uint64_t master = 42;
    CHECK(derive_seed(master, "mask") == derive_seed(master, "mask"));
    CHECK(derive_seed(master, "mask") != derive_seed(master, "init"));
    CHECK(derive_seed(master, "mask", 0) != derive_seed(master, "mask", 1));
    CHECK(derive_seed(master, "mask") != derive_seed(master + 1, "mask"));
}

TEST_CASE("clamp_score clips to [0,100]") {
    CHECK(clamp_score(-3.0) == 0.0);
    CHECK(clamp_score(104.2) == 100.0);
    CHECK(clamp_score(55.5) == 55.5);
}

TEST_CASE("format_number prints compact decimals") {
    CHECK(format_number(88.4) == "88.4");
    CHECK(format_number(7.25) == "7.25");
    CHECK(format_number(100.0) == "100");
    CHECK(format_number(0.5) == "0.5");
    CHECK(format_number(-7.0) == "-7");
    CHECK(format_number(67.1) == "67.1");
}

TEST_CASE("extract_numbers finds standalone numeric tokens") {
    const auto got = extract_numbers("scores 88.4 and 7.25 today");
    REQUIRE(got.size() == 2);
    CHECK(got[0] == doctest::Approx(88.4).epsilon(1e-12));
    CHECK(got[1] == doctest::Approx(7.25).epsilon(1e-12));

    CHECK(extract_numbers("no digits here").empty());
    CHECK(extract_numbers("gpt4o and l33t_code are names").empty());

    const auto negative = extract_numbers("dropped -7.5 points");
    REQUIRE(negative.size() == 1);
    CHECK(negative[0] == doctest::Approx(-7.5).epsilon(1e-12));

    const auto spaced = extract_numbers("a - 7 b");
    REQUIRE(spaced.size() == 1);
    CHECK(spaced[0] == doctest::Approx(7.0).epsilon(1e-12));

    const auto mixed = extract_numbers("score: 73.5 (was 70)");
    REQUIRE(mixed.size() == 2);
    CHECK(mixed[0] == doctest::Approx(73.5).epsilon(1e-12));
    CHECK(mixed[1] == doctest::Approx(70.0).epsilon(1e-12));
}

TEST_CASE("format_number output parses back via extract_numbers") {
    for (const double x : {88.4, 95.65, -7.25, 0.0, 100.0, 43.19}) {
        const auto parsed = extract_numbers("value " + format_number(x) + " end");
        REQUIRE(parsed.size() == 1);
        CHECK(parsed[0] == doctest::Approx(x).epsilon(1e-9));
    }
}
