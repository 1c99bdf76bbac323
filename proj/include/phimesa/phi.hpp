#pragma once

// Practical integrated-information estimation over discrete multi-channel
// state trajectories:
//
//   phi[S; tau, B] = I(S_{t-tau}; S_t) - sum_k I(M^k_{t-tau}; M^k_t)
//
// with B = (M^1, M^2) a bipartition of the channels, all MI terms plug-in
// estimates (or analytic for a known Markov law), and the MIB the bipartition
// minimising the (optionally normalised) phi. phi itself is never clamped:
// negative integrated information is a result, not an error.

#include <cstdint>
#include <string>
#include <vector>

#include "phimesa/infotheory.hpp"

namespace phimesa::phi {

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

// Row-major [rows x channels] discrete states. alphabet_sizes[c] bounds
// channel c's values. row_valid, when non-empty, flags rows that participate
// in statistics; transitions touching an invalid row are dropped (used for
// EOS sentinel rows).
struct StateTrajectory {
    int64_t rows = 0;
    int32_t channels = 0;
    std::vector<int32_t> values;
    std::vector<int32_t> alphabet_sizes;
    std::vector<uint8_t> row_valid;

    int32_t at(int64_t row, int32_t ch) const { return values[row * channels + ch]; }
    bool valid(int64_t row) const { return row_valid.empty() || row_valid[row] != 0; }
};

void validate(const StateTrajectory& t);

// CSV form: optional "# alphabet: a0,a1,..." comment, header "t,c0,...,c{n-1}",
// one row per time step. Parse errors carry the 1-based line number.
StateTrajectory read_trajectory_csv(const std::string& path);
void write_trajectory_csv(const std::string& path, const StateTrajectory& t);

// ---------------------------------------------------------------------------
// Bipartitions
// ---------------------------------------------------------------------------

// Canonical form: the part containing channel 0 is part 1, so part2_mask has
// bit 0 clear, and both parts are non-empty.
struct Bipartition {
    int32_t channels = 0;
    uint32_t part2_mask = 0;

    uint32_t full_mask() const { return (channels >= 32) ? 0xffffffffu : ((1u << channels) - 1u); }
    uint32_t part1_mask() const { return full_mask() & ~part2_mask; }
    std::vector<int32_t> part1() const;
    std::vector<int32_t> part2() const;
};

// Canonicalises (complements a mask containing channel 0) and validates that
// both parts are non-empty.
Bipartition make_bipartition(int32_t channels, uint32_t part2_mask);

// All 2^(n-1) - 1 canonical bipartitions in ascending part2_mask order.
// Requires 2 <= n <= 20.
std::vector<Bipartition> enumerate_bipartitions(int32_t channels);

// ---------------------------------------------------------------------------
// Plug-in estimation
// ---------------------------------------------------------------------------

// Sparse (state_{t-tau}, state_t) pair counts pooled over one or more
// trajectories, plus single-state occupancy counts for normalisation factors.
// Build with count_transitions / accumulate_transitions; finalise before use.
struct TransitionTable {
    int32_t channels = 0;
    int32_t tau = 1;
    std::vector<int32_t> alphabet_sizes;
    std::vector<int64_t> strides;                              // mixed-radix decode
    std::vector<std::pair<uint64_t, int64_t>> pair_counts;     // ((prev<<32)|next, n)
    std::vector<std::pair<uint32_t, int64_t>> state_counts;    // (code, n) over valid rows
    int64_t pair_total = 0;
    int64_t state_total = 0;
};

TransitionTable count_transitions(const StateTrajectory& t, int32_t tau);
// Pools additional data into an existing table. Channel layout and tau must
// match. Transitions never cross trajectory boundaries.
void accumulate_transitions(TransitionTable& table, const StateTrajectory& t);

// Plug-in joint between the subset-A state at t-tau and the subset-B state at
// t. Masks are channel bitmasks; at least one channel each.
infotheory::JointDistribution plugin_joint(const TransitionTable& table,
                                           uint32_t mask_a, uint32_t mask_b);
infotheory::JointDistribution plugin_joint(const StateTrajectory& t, int32_t tau,
                                           uint32_t mask_a, uint32_t mask_b);

// One phi evaluation at a fixed cut.
struct PhiEstimate {
    double whole_mi = 0.0;
    double part_mi[2] = {0.0, 0.0};
    double phi = 0.0;  // whole_mi - part_mi[0] - part_mi[1], unclamped
    int32_t tau = 1;
    Bipartition cut;
};

PhiEstimate phi_hat(const TransitionTable& table, const Bipartition& cut);
PhiEstimate phi_hat(const StateTrajectory& t, int32_t tau, const Bipartition& cut);

// ---------------------------------------------------------------------------
// Exact-law estimation
// ---------------------------------------------------------------------------

// A known Markov law over the full product state space (row-stochastic
// transition matrix, both indexed by mixed-radix state codes).
struct MarkovSystem {
    std::vector<int32_t> alphabet_sizes;
    std::vector<double> transition;  // [S x S], rows sum to 1
    std::vector<double> initial;     // [S], the marginal at time t - tau
};

void validate(const MarkovSystem& m);
int64_t state_space_size(const MarkovSystem& m);

// Joint of (S_{t-tau}, S_t) computed analytically as diag(initial) * P^tau,
// then reduced exactly like the plug-in path.
PhiEstimate phi_hat_exact(const MarkovSystem& m, int32_t tau, const Bipartition& cut);

// Fixed-point marginal of the law (power iteration from uniform), for setting
// MarkovSystem::initial to the stationary distribution.
std::vector<double> stationary_distribution(const MarkovSystem& m);

// ---------------------------------------------------------------------------
// Minimum-information bipartition
// ---------------------------------------------------------------------------

enum class Normalization { none, min_part_entropy };
enum class SearchKind { exhaustive, stochastic };

// K(B): 1 for none; otherwise the smaller empirical state entropy of the two
// parts (over valid rows), floored at 1e-9 so constant parts do not divide
// by zero.
double normalization_factor(const TransitionTable& table, const Bipartition& cut,
                            Normalization norm);

struct MibResult {
    Bipartition cut;
    PhiEstimate estimate;   // raw phi decomposition at the winning cut
    double score = 0.0;     // phi / K(B) actually minimised
    int64_t evaluated_cuts = 0;
    SearchKind search = SearchKind::exhaustive;
};

// Evaluates every canonical bipartition (candidates may be scored in
// parallel; the argmin reduction runs in ascending mask order, ties keeping
// the earlier cut). Requires 2 <= channels <= 20.
MibResult mib_exhaustive(const TransitionTable& table,
                         Normalization norm = Normalization::none);
MibResult mib_exhaustive(const StateTrajectory& t, int32_t tau,
                         Normalization norm = Normalization::none);
// Exact-mode sweep over a known law (part entropies for K(B) come from the
// initial marginal).
MibResult mib_exhaustive(const MarkovSystem& m, int32_t tau,
                         Normalization norm = Normalization::none);

// Seeded random restarts plus single-channel-move hill climbing, spending at
// most `budget` fresh cut evaluations. Deterministic given (seed, budget).
// Within the exhaustive channel cap, a budget covering the whole cut space
// degenerates to the exhaustive sweep; beyond the cap the climb always runs.
MibResult mib_stochastic(const TransitionTable& table, uint64_t seed, int64_t budget,
                         Normalization norm = Normalization::none);
MibResult mib_stochastic(const StateTrajectory& t, int32_t tau, uint64_t seed,
                         int64_t budget, Normalization norm = Normalization::none);

}  // namespace phimesa::phi
