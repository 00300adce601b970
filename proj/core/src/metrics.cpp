#include "star/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <sstream>

#include "json.hpp"

namespace star::metrics {
namespace {

void require_aligned(std::span<const double> pred, std::span<const double> truth) {
    if (pred.size() != truth.size()) {
        throw ConfigError("prediction and truth vectors differ in length");
    }
    if (pred.empty()) throw ConfigError("no test cells to evaluate");
}

// pairs tied within a sorted range, summed per tie group: sum t*(t-1)/2
template <typename Equal>
long tied_pairs(std::span<const std::size_t> order, Equal&& equal) {
    long total = 0;
    std::size_t i = 0;
    while (i < order.size()) {
        std::size_t j = i;
        while (j + 1 < order.size() && equal(order[j + 1], order[i])) ++j;
        const long t = static_cast<long>(j - i + 1);
        total += t * (t - 1) / 2;
        i = j + 1;
    }
    return total;
}

// strict inversions in values[order], counted by merge sort
long count_inversions(std::vector<double>& values) {
    std::vector<double> buffer(values.size());
    long inversions = 0;
    for (std::size_t width = 1; width < values.size(); width *= 2) {
        for (std::size_t lo = 0; lo + width < values.size(); lo += 2 * width) {
            const std::size_t mid = lo + width;
            const std::size_t hi = std::min(lo + 2 * width, values.size());
            std::size_t a = lo, b = mid, out = lo;
            while (a < mid && b < hi) {
                if (values[b] < values[a]) {
                    inversions += static_cast<long>(mid - a);
                    buffer[out++] = values[b++];
                } else {
                    buffer[out++] = values[a++];
                }
            }
            while (a < mid) buffer[out++] = values[a++];
            while (b < hi) buffer[out++] = values[b++];
            std::copy(buffer.begin() + static_cast<long>(lo), buffer.begin() + static_cast<long>(hi),
                      values.begin() + static_cast<long>(lo));
        }
    }
    return inversions;
}

double pearson(std::span<const double> x, std::span<const double> y) {
    const double n = static_cast<double>(x.size());
    const double mx = std::accumulate(x.begin(), x.end(), 0.0) / n;
    const double my = std::accumulate(y.begin(), y.end(), 0.0) / n;
    double sxy = 0, sxx = 0, syy = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx) * (x[i] - mx);
        syy += (y[i] - my) * (y[i] - my);
    }
    if (sxx == 0 || syy == 0) return 0;  // constant vector: no ordering information
    return sxy / std::sqrt(sxx * syy);
}

}  // namespace

double mae(std::span<const double> pred, std::span<const double> truth) {
    require_aligned(pred, truth);
    double sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) sum += std::abs(pred[i] - truth[i]);
    return sum / static_cast<double>(pred.size());
}

double rmse(std::span<const double> pred, std::span<const double> truth) {
    require_aligned(pred, truth);
    double sum = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        sum += (pred[i] - truth[i]) * (pred[i] - truth[i]);
    }
    return std::sqrt(sum / static_cast<double>(pred.size()));
}

std::vector<double> average_ranks(std::span<const double> values) {
    const std::size_t n = values.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (values[a] != values[b]) return values[a] > values[b];
        return a < b;
    });

    std::vector<double> ranks(n);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
        const double avg = static_cast<double>(i + j + 2) / 2.0;  // 1-based positions i+1 .. j+1
        for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
        i = j + 1;
    }
    return ranks;
}

double spearman_rho(std::span<const double> pred, std::span<const double> truth) {
    require_aligned(pred, truth);
    const std::vector<double> rp = average_ranks(pred);
    const std::vector<double> rt = average_ranks(truth);
    return pearson(rp, rt);
}

double kendall_tau_b(std::span<const double> pred, std::span<const double> truth) {
    require_aligned(pred, truth);
    const std::size_t n = pred.size();

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (pred[a] != pred[b]) return pred[a] < pred[b];
        if (truth[a] != truth[b]) return truth[a] < truth[b];
        return a < b;
    });

    const long n0 = static_cast<long>(n) * (static_cast<long>(n) - 1) / 2;
    const long xtie = tied_pairs(order, [&](std::size_t a, std::size_t b) {
        return pred[a] == pred[b];
    });
    const long xytie = tied_pairs(order, [&](std::size_t a, std::size_t b) {
        return pred[a] == pred[b] && truth[a] == truth[b];
    });

    std::vector<double> y_sorted_by_x(n);
    for (std::size_t i = 0; i < n; ++i) y_sorted_by_x[i] = truth[order[i]];
    const long discordant = count_inversions(y_sorted_by_x);

    std::vector<std::size_t> y_order(n);
    std::iota(y_order.begin(), y_order.end(), 0);
    std::sort(y_order.begin(), y_order.end(), [&](std::size_t a, std::size_t b) {
        return truth[a] < truth[b];
    });
    const long ytie = tied_pairs(y_order, [&](std::size_t a, std::size_t b) {
        return truth[a] == truth[b];
    });

    const double denom = std::sqrt(static_cast<double>(n0 - xtie)) *
                         std::sqrt(static_cast<double>(n0 - ytie));
    if (denom == 0) return 0;  // one side fully tied
    const double con_minus_dis =
        static_cast<double>(n0 - xtie - ytie + xytie - 2 * discordant);
    return con_minus_dis / denom;
}

GroupRankMetrics group_rank_metrics(std::span<const double> pred, std::span<const double> truth,
                                    int k) {
    require_aligned(pred, truth);
    GroupRankMetrics g;
    g.n_models = static_cast<long>(pred.size());
    g.srcc = (1.0 + spearman_rho(pred, truth)) / 2.0 * 100.0;
    g.krcc = (1.0 + kendall_tau_b(pred, truth)) / 2.0 * 100.0;

    const std::vector<double> rp = average_ranks(pred);
    const std::vector<double> rt = average_ranks(truth);
    long within = 0;
    for (std::size_t i = 0; i < rp.size(); ++i) {
        if (std::abs(rp[i] - rt[i]) <= static_cast<double>(k)) ++within;
    }
    g.mae_at_k = 100.0 * static_cast<double>(within) / static_cast<double>(rp.size());
    return g;
}

MetricReport evaluate(const GroupedPairs& groups, int k) {
    std::vector<double> pooled_pred, pooled_truth;
    for (const auto& [id, pair] : groups) {
        if (pair.first.size() != pair.second.size()) {
            throw ConfigError("group '" + id + "' has misaligned vectors");
        }
        pooled_pred.insert(pooled_pred.end(), pair.first.begin(), pair.first.end());
        pooled_truth.insert(pooled_truth.end(), pair.second.begin(), pair.second.end());
    }

    MetricReport report;
    report.n_cells = static_cast<long>(pooled_pred.size());
    report.mae = mae(pooled_pred, pooled_truth);
    report.rmse = rmse(pooled_pred, pooled_truth);
    report.score_avg = score_average(report.mae, report.rmse);

    double weight_sum = 0, srcc_sum = 0, krcc_sum = 0, maek_sum = 0;
    for (const auto& [id, pair] : groups) {
        if (pair.first.size() < 3) {
            ++report.excluded_groups;
            continue;
        }
        const GroupRankMetrics g = group_rank_metrics(pair.first, pair.second, k);
        report.per_benchmark.emplace(id, g);
        const double w = static_cast<double>(g.n_models);
        weight_sum += w;
        srcc_sum += w * g.srcc;
        krcc_sum += w * g.krcc;
        maek_sum += w * g.mae_at_k;
    }
    if (weight_sum > 0) {
        report.srcc = srcc_sum / weight_sum;
        report.krcc = krcc_sum / weight_sum;
        report.mae_at_3 = maek_sum / weight_sum;
        report.rank_avg = rank_average(*report.srcc, *report.krcc, *report.mae_at_3);
        report.total = total_score(*report.rank_avg, report.score_avg);
    }
    return report;
}

std::string MetricReport::to_json() const {
    nlohmann::json doc;
    doc["mae"] = mae;
    doc["rmse"] = rmse;
    doc["score_avg"] = score_avg;
    auto put = [&](const char* key, const std::optional<double>& v) {
        if (v) {
            doc[key] = *v;
        } else {
            doc[key] = nullptr;
        }
    };
    put("srcc", srcc);
    put("krcc", krcc);
    put("mae_at_3", mae_at_3);
    put("rank_avg", rank_avg);
    put("total", total);
    doc["n_cells"] = n_cells;
    doc["excluded_groups"] = excluded_groups;
    doc["rank_grouping"] = "per_benchmark_weighted_by_cells";
    nlohmann::json per = nlohmann::json::object();
    for (const auto& [id, g] : per_benchmark) {
        per[id] = {{"srcc", g.srcc},
                   {"krcc", g.krcc},
                   {"mae_at_k", g.mae_at_k},
                   {"n_models", g.n_models}};
    }
    doc["per_benchmark"] = std::move(per);
    return doc.dump(2);
}

std::string MetricReport::csv_header() {
    return "method,split,run,n_cells,mae,rmse,score_avg,srcc,krcc,mae_at_3,rank_avg,total";
}

std::string MetricReport::csv_row(const std::string& method, const std::string& split,
                                  const std::string& run) const {
    std::ostringstream out;
    out << method << ',' << split << ',' << run << ',' << n_cells;
    auto put = [&](double v) { out << ',' << v; };
    auto put_opt = [&](const std::optional<double>& v) {
        out << ',';
        if (v) out << *v;
    };
    put(mae);
    put(rmse);
    put(score_avg);
    put_opt(srcc);
    put_opt(krcc);
    put_opt(mae_at_3);
    put_opt(rank_avg);
    put_opt(total);
    return out.str();
}

double top_k_recall(const std::vector<ScoreRef>& truth,
                    const std::vector<std::string>& recommended, int k) {
    if (k < 1) throw ConfigError("top_k_recall requires k >= 1");
    if (static_cast<std::size_t>(k) > truth.size()) {
        throw ConfigError("k exceeds the candidate count");
    }
    if (recommended.size() != static_cast<std::size_t>(k)) {
        throw ConfigError("recommended set must contain exactly k ids");
    }

    std::set<std::string> candidates;
    for (const ScoreRef& ref : truth) candidates.insert(ref.model_id);
    for (const std::string& id : recommended) {
        if (!candidates.count(id)) {
            throw ConfigError("recommended id '" + id + "' is not a candidate");
        }
    }

    std::vector<ScoreRef> ranked = truth;
    std::sort(ranked.begin(), ranked.end(), [](const ScoreRef& a, const ScoreRef& b) {
        if (a.score != b.score) return a.score > b.score;
        return a.model_id < b.model_id;
    });
    std::set<std::string> top;
    for (int i = 0; i < k; ++i) top.insert(ranked[static_cast<std::size_t>(i)].model_id);

    long hits = 0;
    for (const std::string& id : recommended) hits += top.count(id) ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(k);
}

}  // namespace star::metrics
