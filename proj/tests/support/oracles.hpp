#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <optional>
#include <utility>
#include <vector>

#include "longembed/eval.hpp"

// Brute-force reference implementations of the evaluation metrics, written
// from the textbook definitions and sharing no code with the library.
namespace longembed::testing {

// Per-query metric values written straight from the textbook definitions.
struct Oracle {
    static double dcg(const std::vector<bool>& rel, std::size_t k) {
        double s = 0;
        for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) s += rel[i] ? 1.0 / std::log2(i + 2.0) : 0.0;
        return s;
    }
    static double ndcg(const std::vector<bool>& rel, std::size_t n_rel, std::size_t k) {
        std::vector<bool> ideal(n_rel, true);
        return dcg(rel, k) / dcg(ideal, k);
    }
    static double mrr(const std::vector<bool>& rel, std::size_t k) {
        for (std::size_t i = 0; i < std::min(k, rel.size()); ++i)
            if (rel[i]) return 1.0 / (i + 1);
        return 0;
    }
    static double ap(const std::vector<bool>& rel, std::size_t n_rel, std::size_t k) {
        double s = 0;
        std::size_t hits = 0;
        for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) {
            if (rel[i]) s += double(++hits) / (i + 1);
        }
        return s / std::min(n_rel, k);
    }
    static double precision(const std::vector<bool>& rel, std::size_t k) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) hits += rel[i];
        return double(hits) / k;
    }
    static double recall(const std::vector<bool>& rel, std::size_t n_rel, std::size_t k) {
        std::size_t hits = 0;
        for (std::size_t i = 0; i < std::min(k, rel.size()); ++i) hits += rel[i];
        return double(hits) / n_rel;
    }
};

inline double label_entropy(const std::map<std::int64_t, double>& counts, double n) {
    double h = 0;
    for (const auto& [_, c] : counts) h -= c / n * std::log(c / n);
    return h;
}

inline VMeasure v_oracle(const std::vector<std::int64_t>& pred, const std::vector<std::int64_t>& truth) {
    const double n = pred.size();
    std::map<std::int64_t, double> cp, ct;
    std::map<std::pair<std::int64_t, std::int64_t>, double> joint;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        cp[pred[i]] += 1;
        ct[truth[i]] += 1;
        joint[{truth[i], pred[i]}] += 1;
    }
    double h_c_given_k = 0, h_k_given_c = 0;
    for (const auto& [key, c] : joint) {
        h_c_given_k -= c / n * std::log(c / cp[key.second]);
        h_k_given_c -= c / n * std::log(c / ct[key.first]);
    }
    const double hc = label_entropy(ct, n), hk = label_entropy(cp, n);
    VMeasure v;
    v.homogeneity = hc == 0 ? 1.0 : 1 - h_c_given_k / hc;
    v.completeness = hk == 0 ? 1.0 : 1 - h_k_given_c / hk;
    const double s = v.homogeneity + v.completeness;
    v.v_measure = s == 0 ? 0.0 : 2 * v.homogeneity * v.completeness / s;
    return v;
}

// Pearson correlation of tie-averaged ranks computed by counting; empty when
// either input is constant.
inline std::optional<double> spearman_oracle(const std::vector<double>& a, const std::vector<double>& b) {
    auto ranks = [](const std::vector<double>& v) {
        std::vector<double> r(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) {
            double less = 0, equal = 0;
            for (double w : v) {
                less += w < v[i];
                equal += w == v[i];
            }
            r[i] = less + (equal + 1) / 2;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        ma += ra[i] / n;
        mb += rb[i] / n;
    }
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    if (saa == 0 || sbb == 0) return std::nullopt;
    return sab / std::sqrt(saa * sbb);
}

}  // namespace longembed::testing
