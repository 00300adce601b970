#include "star/common.hpp"

#include <cctype>
#include <charconv>
#include <cstdio>

namespace star {

namespace {

namespace chr = std::chrono;

chr::year_month_day to_ymd(Date d) {
    return chr::year_month_day{chr::sys_days{chr::days{d.days}}};
}

}  // namespace

Date Date::from_ymd(int year, int month, int day) {
    chr::year_month_day ymd{chr::year{year}, chr::month{static_cast<unsigned>(month)},
                            chr::day{static_cast<unsigned>(day)}};
    if (!ymd.ok()) {
        throw ParseError("invalid calendar date: " + std::to_string(year) + "-" +
                         std::to_string(month) + "-" + std::to_string(day));
    }
    return Date{static_cast<std::int32_t>(chr::sys_days{ymd}.time_since_epoch().count())};
}

Date Date::parse(std::string_view iso) {
    // Strict YYYY-MM-DD.
    if (iso.size() != 10 || iso[4] != '-' || iso[7] != '-') {
        throw ParseError("date not in ISO-8601 YYYY-MM-DD form: '" + std::string(iso) + "'");
    }
    auto field = [&](std::size_t pos, std::size_t len) {
        int value = 0;
        auto* first = iso.data() + pos;
        auto [ptr, ec] = std::from_chars(first, first + len, value);
        if (ec != std::errc{} || ptr != first + len) {
            throw ParseError("date not in ISO-8601 YYYY-MM-DD form: '" + std::string(iso) + "'");
        }
        return value;
    };
    return from_ymd(field(0, 4), field(5, 2), field(8, 2));
}

std::string Date::to_string() const {
    auto ymd = to_ymd(*this);
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d-%02d-%02d", static_cast<int>(ymd.year()),
                  static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
    return buf;
}

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t fnv1a64(std::string_view bytes) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::uint64_t derive_seed(std::uint64_t master, std::string_view stream, std::uint64_t index) {
    return splitmix64(master ^ splitmix64(fnv1a64(stream) + index));
}

std::string format_number(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6g", x);
    return buf;
}

std::vector<double> extract_numbers(std::string_view text) {
    std::vector<double> out;
    std::size_t i = 0;
    while (i < text.size()) {
        const char c = text[i];
        const bool digit = c >= '0' && c <= '9';
        bool signed_start = false;
        if ((c == '-' || c == '+') && i + 1 < text.size() && text[i + 1] >= '0' &&
            text[i + 1] <= '9') {
            // attached sign counts only when not glued to a word or number
            signed_start = i == 0 || !(std::isalnum(static_cast<unsigned char>(text[i - 1])) ||
                                       text[i - 1] == '.');
        }
        if (!digit && !signed_start) {
            // skip over identifier-embedded digits ("gpt4o" cites no number)
            if (std::isalpha(static_cast<unsigned char>(c)) || c == '_') {
                while (i < text.size() &&
                       (std::isalnum(static_cast<unsigned char>(text[i])) || text[i] == '_' ||
                        text[i] == '-')) {
                    ++i;
                }
            } else {
                ++i;
            }
            continue;
        }
        std::size_t end = i + (signed_start ? 1 : 0);
        while (end < text.size() && text[end] >= '0' && text[end] <= '9') ++end;
        if (end + 1 < text.size() && text[end] == '.' && text[end + 1] >= '0' &&
            text[end + 1] <= '9') {
            ++end;
            while (end < text.size() && text[end] >= '0' && text[end] <= '9') ++end;
        }
        double value = 0;
        const auto [ptr, ec] = std::from_chars(text.data() + i, text.data() + end, value);
        if (ec == std::errc{} && ptr == text.data() + end) out.push_back(value);
        i = end;
    }
    return out;
}

}  // namespace star
