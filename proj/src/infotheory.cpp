#include "phimesa/infotheory.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <unordered_map>

#include "phimesa/common.hpp"

namespace phimesa::infotheory {

namespace {

constexpr double kSumTol = 1e-9;
constexpr double kMiClampTol = 1e-9;

// Entropy of a probability multiset, summed smallest-first for a
// label-independent, deterministic rounding pattern.
double entropy_of_probs(std::vector<double> probs) {
    std::sort(probs.begin(), probs.end());
    double h = 0.0;
    for (double p : probs) {
        if (p > 0.0) h -= p * std::log(p);
    }
    return h;
}

}  // namespace

void validate(const Distribution& d) {
    if (d.p.empty()) throw ValidationError("distribution: empty support");
    double sum = 0.0;
    for (double v : d.p) {
        if (!(v >= 0.0)) throw ValidationError("distribution: negative or NaN probability");
        sum += v;
    }
    if (std::abs(sum - 1.0) > kSumTol)
        throw ValidationError("distribution: probabilities sum to " + format_double(sum) +
                              ", expected 1 within 1e-9");
}

double entropy(const Distribution& d) {
    validate(d);
    return entropy_of_probs(d.p);
}

void validate(const JointDistribution& j) {
    if (j.size_a == 0 || j.size_b == 0)
        throw ValidationError("joint: empty alphabet");
    if (j.size_a > (1u << 24) || j.size_b > (1u << 24))
        throw CapacityError("joint: dense side alphabet exceeds 2^24 cells");
    double sum = 0.0;
    uint64_t prev_key = 0;
    bool first = true;
    for (const auto& [key, p] : j.cells) {
        if (!first && key <= prev_key)
            throw ValidationError("joint: cells not sorted by key");
        first = false;
        prev_key = key;
        const uint32_t a = static_cast<uint32_t>(key >> 32);
        const uint32_t b = static_cast<uint32_t>(key & 0xffffffffu);
        if (a >= j.size_a || b >= j.size_b)
            throw ValidationError("joint: cell outside declared alphabets");
        if (!(p >= 0.0)) throw ValidationError("joint: negative or NaN probability");
        sum += p;
    }
    if (std::abs(sum - 1.0) > kSumTol)
        throw ValidationError("joint: probabilities sum to " + format_double(sum) +
                              ", expected 1 within 1e-9");
}

double mutual_information(const JointDistribution& j, bool miller_madow) {
    validate(j);
    std::unordered_map<uint32_t, double> ma;
    std::unordered_map<uint32_t, double> mb;
    std::vector<double> joint_probs;
    joint_probs.reserve(j.cells.size());
    for (const auto& [key, p] : j.cells) {
        if (p == 0.0) continue;
        ma[static_cast<uint32_t>(key >> 32)] += p;
        mb[static_cast<uint32_t>(key & 0xffffffffu)] += p;
        joint_probs.push_back(p);
    }
    std::vector<double> pa;
    pa.reserve(ma.size());
    for (const auto& [code, p] : ma) pa.push_back(p);
    std::vector<double> pb;
    pb.reserve(mb.size());
    for (const auto& [code, p] : mb) pb.push_back(p);

    const double ha = entropy_of_probs(std::move(pa));
    const double hb = entropy_of_probs(std::move(pb));
    const double hab = entropy_of_probs(joint_probs);
    double mi = ha + hb - hab;
    if (miller_madow && j.sample_count > 0) {
        const double n = static_cast<double>(j.sample_count);
        mi += (static_cast<double>(ma.size()) + static_cast<double>(mb.size()) -
               static_cast<double>(joint_probs.size()) - 1.0) /
              (2.0 * n);
    }
    if (mi < 0.0) {
        if (mi < -kMiClampTol)
            throw NumericError("mutual information " + format_double(mi) +
                               " below rounding tolerance");
        mi = 0.0;
    }
    return mi;
}

double model_conditional_entropy(const LogProbRecord& r) {
    if (r.logp.empty())
        throw InsufficientDataError("log-prob record: no positions");
    double sum = 0.0;
    for (double lp : r.logp) {
        if (std::isnan(lp)) throw NumericError("log-prob record: non-finite entry");
        if (lp > 0.0) throw ValidationError("log-prob record: entry above 0");
        sum += lp;
    }
    return -sum / static_cast<double>(r.logp.size());
}

double marginal_entropy_empirical(const std::vector<int32_t>& tokens, int32_t alphabet) {
    if (alphabet < 1) throw ValidationError("marginal entropy: alphabet must be positive");
    if (tokens.empty()) throw InsufficientDataError("marginal entropy: empty token stream");
    std::unordered_map<int32_t, int64_t> counts;
    for (int32_t t : tokens) {
        if (t < 0 || t >= alphabet)
            throw ValidationError("marginal entropy: token " + std::to_string(t) +
                                  " outside alphabet " + std::to_string(alphabet));
        ++counts[t];
    }
    std::vector<int64_t> c;
    c.reserve(counts.size());
    for (const auto& [tok, cnt] : counts) c.push_back(cnt);
    return entropy_from_counts(std::move(c), static_cast<int64_t>(tokens.size()));
}

double entropy_from_counts(std::vector<int64_t> counts, int64_t total) {
    if (total <= 0) throw InsufficientDataError("entropy: zero total count");
    std::sort(counts.begin(), counts.end());
    int64_t check = 0;
    double sum_clogc = 0.0;
    for (int64_t c : counts) {
        if (c < 0) throw ValidationError("entropy: negative count");
        check += c;
        if (c > 0) sum_clogc += static_cast<double>(c) * std::log(static_cast<double>(c));
    }
    if (check != total) throw ValidationError("entropy: counts do not sum to total");
    const double n = static_cast<double>(total);
    double h = std::log(n) - sum_clogc / n;
    if (h < 0.0) h = 0.0;  // single-outcome rounding residue
    return h;
}

}  // namespace phimesa::infotheory
