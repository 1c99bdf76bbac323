#pragma once

// Discrete entropy and mutual information in nats, plus the model-side
// log-probability bookkeeping the perplexity identities are built on.
// Convention everywhere: natural log, 0 * ln 0 == 0.

#include <cstdint>
#include <utility>
#include <vector>

namespace phimesa::infotheory {

// A validated probability vector.
struct Distribution {
    std::vector<double> p;
};

// Throws ValidationError unless all entries are >= 0 and sum to 1 within 1e-9.
void validate(const Distribution& d);

// Shannon entropy in nats.
double entropy(const Distribution& d);

// Sparse joint distribution over two coded alphabets. Cells hold
// ((a << 32) | b, probability) and are kept sorted by key. Dense alphabet
// sizes above 1 << 24 per side are rejected when the joint is built.
// sample_count is the number of observations behind an empirical joint
// (0 for analytic joints).
struct JointDistribution {
    uint32_t size_a = 0;
    uint32_t size_b = 0;
    std::vector<std::pair<uint64_t, double>> cells;
    int64_t sample_count = 0;
};

void validate(const JointDistribution& j);

// I(A;B) = H(A) + H(B) - H(A,B), >= 0 (tiny negative rounding residue is
// clamped; anything below -1e-9 raises NumericError). With miller_madow set
// and sample_count > 0, the small-sample correction
// (m_a + m_b - m_ab - 1) / (2N) is added, where m_* count occupied cells.
double mutual_information(const JointDistribution& j, bool miller_madow = false);

// Per-position log-probabilities assigned by a model to realised tokens.
struct LogProbRecord {
    std::vector<double> logp;  // each <= 0
};

// Mean negative log-probability (cross-entropy) in nats. Empty record is an
// InsufficientDataError.
double model_conditional_entropy(const LogProbRecord& r);

// Plug-in entropy of the empirical unigram distribution of `tokens`.
// Tokens must lie in [0, alphabet).
double marginal_entropy_empirical(const std::vector<int32_t>& tokens, int32_t alphabet);

// Plug-in entropy from an unnormalised count multiset:
//   H = ln(total) - sum c ln c / total.
// Counts are summed in sorted order so the result depends only on the count
// multiset, never on key labels or map iteration order.
double entropy_from_counts(std::vector<int64_t> counts, int64_t total);

}  // namespace phimesa::infotheory
