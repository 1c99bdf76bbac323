#include "phimesa/phi.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <random>
#include <sstream>
#include <unordered_map>

#include "phimesa/common.hpp"
#include "phimesa/kernels.hpp"

namespace phimesa::phi {

namespace {

constexpr int64_t kMaxSideCells = int64_t(1) << 24;
constexpr int64_t kMaxExactStates = 1024;
constexpr double kNormFloor = 1e-9;

uint64_t pack_pair(uint32_t prev, uint32_t next) {
    return (static_cast<uint64_t>(prev) << 32) | next;
}

uint32_t all_channels_mask(int32_t channels) {
    return (channels >= 32) ? 0xffffffffu : ((1u << channels) - 1u);
}

// Dense product-alphabet size of the channels selected by mask, with the
// per-side capacity bound applied.
int64_t masked_alphabet(const std::vector<int32_t>& alphabet_sizes, uint32_t mask) {
    int64_t cells = 1;
    for (size_t c = 0; c < alphabet_sizes.size(); ++c) {
        if (mask & (1u << c)) {
            cells *= alphabet_sizes[c];
            if (cells > kMaxSideCells)
                throw CapacityError("part alphabet exceeds 2^24 dense cells");
        }
    }
    return cells;
}

// Projects a full-state mixed-radix code onto the channels in mask.
struct Projector {
    std::vector<int64_t> strides;      // full-state decode strides
    std::vector<int32_t> alphabets;    // full-state alphabets
    std::vector<int32_t> selected;     // channels in mask, ascending
    std::vector<int64_t> sub_strides;  // mixed-radix encode strides for subset

    Projector(const std::vector<int32_t>& alphabet_sizes,
              const std::vector<int64_t>& full_strides, uint32_t mask)
        : strides(full_strides), alphabets(alphabet_sizes) {
        for (size_t c = 0; c < alphabet_sizes.size(); ++c)
            if (mask & (1u << c)) selected.push_back(static_cast<int32_t>(c));
        sub_strides.assign(selected.size(), 1);
        for (size_t i = selected.size(); i-- > 1;)
            sub_strides[i - 1] = sub_strides[i] * alphabets[selected[i]];
    }

    uint32_t operator()(uint64_t code) const {
        int64_t out = 0;
        for (size_t i = 0; i < selected.size(); ++i) {
            const int32_t c = selected[i];
            const int64_t v = (static_cast<int64_t>(code) / strides[c]) % alphabets[c];
            out += v * sub_strides[i];
        }
        return static_cast<uint32_t>(out);
    }
};

std::vector<int64_t> full_strides(const std::vector<int32_t>& alphabet_sizes) {
    std::vector<int64_t> s(alphabet_sizes.size(), 1);
    for (size_t i = alphabet_sizes.size(); i-- > 1;)
        s[i - 1] = s[i] * alphabet_sizes[i];
    return s;
}

void sort_and_store(std::unordered_map<uint64_t, int64_t>& m,
                    std::vector<std::pair<uint64_t, int64_t>>& out) {
    out.assign(m.begin(), m.end());
    std::sort(out.begin(), out.end());
}

infotheory::JointDistribution joint_from_counts(
    const std::unordered_map<uint64_t, int64_t>& cells, int64_t total,
    int64_t size_a, int64_t size_b) {
    if (total <= 0)
        throw InsufficientDataError("plug-in joint: no transitions (trajectory shorter than tau + 1?)");
    infotheory::JointDistribution j;
    j.size_a = static_cast<uint32_t>(size_a);
    j.size_b = static_cast<uint32_t>(size_b);
    j.sample_count = total;
    j.cells.reserve(cells.size());
    const double n = static_cast<double>(total);
    for (const auto& [key, cnt] : cells)
        j.cells.emplace_back(key, static_cast<double>(cnt) / n);
    std::sort(j.cells.begin(), j.cells.end());
    return j;
}

// MI of the (mask_a at t-tau, mask_b at t) plug-in joint, straight from
// counts: entropies of the count multisets, label-independent by sorting.
double masked_mi(const TransitionTable& table, uint32_t mask_a, uint32_t mask_b) {
    if (table.pair_total <= 0)
        throw InsufficientDataError("plug-in MI: no transitions (trajectory shorter than tau + 1?)");
    masked_alphabet(table.alphabet_sizes, mask_a);
    masked_alphabet(table.alphabet_sizes, mask_b);
    const Projector pa(table.alphabet_sizes, table.strides, mask_a);
    const Projector pb(table.alphabet_sizes, table.strides, mask_b);
    std::unordered_map<uint64_t, int64_t> joint;
    std::unordered_map<uint32_t, int64_t> ca;
    std::unordered_map<uint32_t, int64_t> cb;
    joint.reserve(table.pair_counts.size() * 2);
    for (const auto& [key, cnt] : table.pair_counts) {
        const uint32_t a = pa(key >> 32);
        const uint32_t b = pb(key & 0xffffffffu);
        joint[pack_pair(a, b)] += cnt;
        ca[a] += cnt;
        cb[b] += cnt;
    }
    auto count_values = [](const auto& m) {
        std::vector<int64_t> v;
        v.reserve(m.size());
        for (const auto& [key, cnt] : m) v.push_back(cnt);
        return v;
    };
    const double ha = infotheory::entropy_from_counts(count_values(ca), table.pair_total);
    const double hb = infotheory::entropy_from_counts(count_values(cb), table.pair_total);
    const double hab = infotheory::entropy_from_counts(count_values(joint), table.pair_total);
    double mi = ha + hb - hab;
    if (mi < 0.0) {
        if (mi < -1e-9)
            throw NumericError("plug-in MI " + format_double(mi) + " below rounding tolerance");
        mi = 0.0;
    }
    return mi;
}

struct CutScore {
    double score = 0.0;
    double part_mi[2] = {0.0, 0.0};
};

}  // namespace

// ---------------------------------------------------------------------------
// Trajectories
// ---------------------------------------------------------------------------

void validate(const StateTrajectory& t) {
    if (t.channels < 1) throw ValidationError("trajectory: needs at least 1 channel");
    if (t.channels > 31) throw CapacityError("trajectory: more than 31 channels unsupported");
    if (t.rows < 0) throw ValidationError("trajectory: negative row count");
    if (static_cast<int64_t>(t.values.size()) != t.rows * t.channels)
        throw ValidationError("trajectory: value buffer does not match rows x channels");
    if (!t.row_valid.empty() && static_cast<int64_t>(t.row_valid.size()) != t.rows)
        throw ValidationError("trajectory: row_valid length mismatch");
    if (static_cast<int32_t>(t.alphabet_sizes.size()) != t.channels)
        throw ValidationError("trajectory: alphabet_sizes length mismatch");
    for (int32_t a : t.alphabet_sizes)
        if (a < 1) throw ValidationError("trajectory: alphabet sizes must be positive");
    for (int64_t r = 0; r < t.rows; ++r) {
        if (!t.valid(r)) continue;
        for (int32_t c = 0; c < t.channels; ++c) {
            const int32_t v = t.at(r, c);
            if (v < 0 || v >= t.alphabet_sizes[c])
                throw ValidationError("trajectory: value " + std::to_string(v) + " at row " +
                                      std::to_string(r) + " outside channel " + std::to_string(c) +
                                      " alphabet");
        }
    }
}

StateTrajectory read_trajectory_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open trajectory file: " + path);
    StateTrajectory t;
    std::vector<int32_t> declared_alphabet;
    std::string line;
    int64_t line_no = 0;
    bool header_seen = false;
    auto fail = [&](const std::string& what) {
        throw ValidationError(path + ":" + std::to_string(line_no) + ": " + what);
    };
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        if (line[0] == '#') {
            const std::string tag = "# alphabet:";
            if (line.rfind(tag, 0) == 0) {
                std::stringstream ss(line.substr(tag.size()));
                std::string cell;
                while (std::getline(ss, cell, ',')) {
                    try {
                        declared_alphabet.push_back(std::stoi(cell));
                    } catch (const std::exception&) {
                        fail("malformed alphabet comment");
                    }
                }
            }
            continue;
        }
        std::stringstream ss(line);
        std::string cell;
        std::vector<std::string> cells;
        while (std::getline(ss, cell, ',')) cells.push_back(cell);
        if (!header_seen) {
            if (cells.empty() || cells[0] != "t") fail("expected header starting with 't'");
            for (size_t i = 1; i < cells.size(); ++i)
                if (cells[i] != "c" + std::to_string(i - 1))
                    fail("expected header column c" + std::to_string(i - 1));
            t.channels = static_cast<int32_t>(cells.size()) - 1;
            if (t.channels < 1) fail("header declares no channels");
            header_seen = true;
            continue;
        }
        if (static_cast<int32_t>(cells.size()) != t.channels + 1)
            fail("expected " + std::to_string(t.channels + 1) + " columns, got " +
                 std::to_string(cells.size()));
        for (size_t i = 0; i < cells.size(); ++i) {
            long v = 0;
            try {
                size_t pos = 0;
                v = std::stol(cells[i], &pos);
                if (pos != cells[i].size()) throw std::invalid_argument("trailing");
            } catch (const std::exception&) {
                fail("malformed integer '" + cells[i] + "'");
            }
            if (i == 0) {
                if (v != t.rows) fail("time index " + std::to_string(v) + ", expected " +
                                      std::to_string(t.rows));
            } else {
                t.values.push_back(static_cast<int32_t>(v));
            }
        }
        ++t.rows;
    }
    if (!header_seen) throw ValidationError(path + ": missing header");
    if (t.rows == 0) throw InsufficientDataError(path + ": no data rows");
    if (!declared_alphabet.empty()) {
        if (static_cast<int32_t>(declared_alphabet.size()) != t.channels)
            throw ValidationError(path + ": alphabet comment length does not match channels");
        t.alphabet_sizes = declared_alphabet;
    } else {
        t.alphabet_sizes.assign(t.channels, 1);
        for (int64_t r = 0; r < t.rows; ++r)
            for (int32_t c = 0; c < t.channels; ++c)
                t.alphabet_sizes[c] = std::max(t.alphabet_sizes[c], t.at(r, c) + 1);
    }
    validate(t);
    return t;
}

void write_trajectory_csv(const std::string& path, const StateTrajectory& t) {
    validate(t);
    std::ofstream out(path);
    if (!out) throw IoError("cannot write trajectory file: " + path);
    out << "# alphabet:";
    for (int32_t c = 0; c < t.channels; ++c)
        out << (c ? "," : " ") << t.alphabet_sizes[c];
    out << "\n";
    out << "t";
    for (int32_t c = 0; c < t.channels; ++c) out << ",c" << c;
    out << "\n";
    for (int64_t r = 0; r < t.rows; ++r) {
        out << r;
        for (int32_t c = 0; c < t.channels; ++c) out << "," << t.at(r, c);
        out << "\n";
    }
    if (!out) throw IoError("write failed: " + path);
}

// ---------------------------------------------------------------------------
// Bipartitions
// ---------------------------------------------------------------------------

std::vector<int32_t> Bipartition::part1() const {
    std::vector<int32_t> v;
    for (int32_t c = 0; c < channels; ++c)
        if (!(part2_mask & (1u << c))) v.push_back(c);
    return v;
}

std::vector<int32_t> Bipartition::part2() const {
    std::vector<int32_t> v;
    for (int32_t c = 0; c < channels; ++c)
        if (part2_mask & (1u << c)) v.push_back(c);
    return v;
}

Bipartition make_bipartition(int32_t channels, uint32_t part2_mask) {
    if (channels < 2) throw ValidationError("bipartition: needs at least 2 channels");
    if (channels > 31) throw CapacityError("bipartition: more than 31 channels unsupported");
    const uint32_t full = (1u << channels) - 1u;
    if ((part2_mask & ~full) != 0)
        throw ValidationError("bipartition: mask has bits outside the channel range");
    if (part2_mask & 1u) part2_mask = full & ~part2_mask;  // canonical: channel 0 in part 1
    if (part2_mask == 0u || part2_mask == full)
        throw ValidationError("bipartition: both parts must be non-empty");
    return Bipartition{channels, part2_mask};
}

std::vector<Bipartition> enumerate_bipartitions(int32_t channels) {
    if (channels < 2) throw ValidationError("bipartition enumeration: needs at least 2 channels");
    if (channels > 20)
        throw CapacityError("bipartition enumeration: more than 20 channels; use stochastic search");
    std::vector<Bipartition> cuts;
    const uint32_t count = 1u << (channels - 1);
    cuts.reserve(count - 1);
    for (uint32_t m = 1; m < count; ++m)
        cuts.push_back(Bipartition{channels, m << 1});
    return cuts;
}

// ---------------------------------------------------------------------------
// Plug-in estimation
// ---------------------------------------------------------------------------

TransitionTable count_transitions(const StateTrajectory& t, int32_t tau) {
    validate(t);
    if (tau < 1) throw ValidationError("transition counting: tau must be >= 1");
    TransitionTable table;
    table.channels = t.channels;
    table.tau = tau;
    table.alphabet_sizes = t.alphabet_sizes;
    masked_alphabet(table.alphabet_sizes, (t.channels >= 32) ? ~0u : ((1u << t.channels) - 1u));
    table.strides = full_strides(table.alphabet_sizes);
    accumulate_transitions(table, t);
    return table;
}

void accumulate_transitions(TransitionTable& table, const StateTrajectory& t) {
    validate(t);
    if (t.channels != table.channels || t.alphabet_sizes != table.alphabet_sizes)
        throw ValidationError("transition pooling: channel layout mismatch");
    auto encode = [&](int64_t row) {
        int64_t code = 0;
        for (int32_t c = 0; c < t.channels; ++c)
            code += static_cast<int64_t>(t.at(row, c)) * table.strides[c];
        return static_cast<uint64_t>(code);
    };
    std::unordered_map<uint64_t, int64_t> pairs(table.pair_counts.begin(),
                                                table.pair_counts.end());
    std::unordered_map<uint64_t, int64_t> states;
    for (const auto& [code, cnt] : table.state_counts) states[code] += cnt;
    for (int64_t r = 0; r < t.rows; ++r) {
        if (!t.valid(r)) continue;
        const uint64_t cur = encode(r);
        states[cur] += 1;
        ++table.state_total;
        const int64_t prev_row = r - table.tau;
        if (prev_row >= 0 && t.valid(prev_row)) {
            pairs[pack_pair(static_cast<uint32_t>(encode(prev_row)),
                            static_cast<uint32_t>(cur))] += 1;
            ++table.pair_total;
        }
    }
    sort_and_store(pairs, table.pair_counts);
    std::vector<std::pair<uint64_t, int64_t>> st(states.begin(), states.end());
    std::sort(st.begin(), st.end());
    table.state_counts.clear();
    table.state_counts.reserve(st.size());
    for (const auto& [code, cnt] : st)
        table.state_counts.emplace_back(static_cast<uint32_t>(code), cnt);
}

infotheory::JointDistribution plugin_joint(const TransitionTable& table,
                                           uint32_t mask_a, uint32_t mask_b) {
    if (mask_a == 0 || mask_b == 0)
        throw ValidationError("plug-in joint: empty channel subset");
    const int64_t size_a = masked_alphabet(table.alphabet_sizes, mask_a);
    const int64_t size_b = masked_alphabet(table.alphabet_sizes, mask_b);
    const Projector pa(table.alphabet_sizes, table.strides, mask_a);
    const Projector pb(table.alphabet_sizes, table.strides, mask_b);
    std::unordered_map<uint64_t, int64_t> cells;
    cells.reserve(table.pair_counts.size());
    for (const auto& [key, cnt] : table.pair_counts)
        cells[pack_pair(pa(key >> 32), pb(key & 0xffffffffu))] += cnt;
    return joint_from_counts(cells, table.pair_total, size_a, size_b);
}

infotheory::JointDistribution plugin_joint(const StateTrajectory& t, int32_t tau,
                                           uint32_t mask_a, uint32_t mask_b) {
    return plugin_joint(count_transitions(t, tau), mask_a, mask_b);
}

PhiEstimate phi_hat(const TransitionTable& table, const Bipartition& cut) {
    if (cut.channels != table.channels)
        throw ValidationError("phi: cut channel count does not match table");
    PhiEstimate e;
    e.tau = table.tau;
    e.cut = make_bipartition(cut.channels, cut.part2_mask);
    const uint32_t full = e.cut.full_mask();
    e.whole_mi = masked_mi(table, full, full);
    e.part_mi[0] = masked_mi(table, e.cut.part1_mask(), e.cut.part1_mask());
    e.part_mi[1] = masked_mi(table, e.cut.part2_mask, e.cut.part2_mask);
    e.phi = e.whole_mi - e.part_mi[0] - e.part_mi[1];
    return e;
}

PhiEstimate phi_hat(const StateTrajectory& t, int32_t tau, const Bipartition& cut) {
    return phi_hat(count_transitions(t, tau), cut);
}

// ---------------------------------------------------------------------------
// Exact-law estimation
// ---------------------------------------------------------------------------

int64_t state_space_size(const MarkovSystem& m) {
    int64_t s = 1;
    for (int32_t a : m.alphabet_sizes) {
        if (a < 1) throw ValidationError("markov system: alphabet sizes must be positive");
        s *= a;
        if (s > kMaxExactStates)
            throw CapacityError("markov system: exact mode supports at most " +
                                std::to_string(kMaxExactStates) + " product states");
    }
    return s;
}

void validate(const MarkovSystem& m) {
    if (m.alphabet_sizes.empty()) throw ValidationError("markov system: no channels");
    const int64_t s = state_space_size(m);
    if (static_cast<int64_t>(m.transition.size()) != s * s)
        throw ValidationError("markov system: transition matrix is not S x S");
    if (static_cast<int64_t>(m.initial.size()) != s)
        throw ValidationError("markov system: initial distribution is not length S");
    for (int64_t i = 0; i < s; ++i) {
        double row = 0.0;
        for (int64_t j = 0; j < s; ++j) {
            const double v = m.transition[i * s + j];
            if (!(v >= 0.0)) throw ValidationError("markov system: negative transition probability");
            row += v;
        }
        if (std::abs(row - 1.0) > 1e-9)
            throw ValidationError("markov system: transition row " + std::to_string(i) +
                                  " sums to " + format_double(row));
    }
    double init = 0.0;
    for (double v : m.initial) {
        if (!(v >= 0.0)) throw ValidationError("markov system: negative initial probability");
        init += v;
    }
    if (std::abs(init - 1.0) > 1e-9)
        throw ValidationError("markov system: initial distribution sums to " + format_double(init));
}

namespace {

std::vector<double> transition_power(const std::vector<double>& p, int64_t s, int32_t tau) {
    std::vector<double> acc(p);
    std::vector<double> next(static_cast<size_t>(s) * s);
    for (int32_t step = 1; step < tau; ++step) {
        kernels::matmul(acc.data(), p.data(), next.data(), s, s, s);
        acc.swap(next);
    }
    return acc;
}

// Exact joint of (S_{t-tau} projected by mask_a, S_t projected by mask_b).
infotheory::JointDistribution exact_joint(const MarkovSystem& m, int32_t tau,
                                          uint32_t mask_a, uint32_t mask_b) {
    const int64_t s = state_space_size(m);
    const int64_t size_a = masked_alphabet(m.alphabet_sizes, mask_a);
    const int64_t size_b = masked_alphabet(m.alphabet_sizes, mask_b);
    const auto strides = full_strides(m.alphabet_sizes);
    const Projector pa(m.alphabet_sizes, strides, mask_a);
    const Projector pb(m.alphabet_sizes, strides, mask_b);
    const auto ptau = transition_power(m.transition, s, tau);
    std::unordered_map<uint64_t, double> cells;
    for (int64_t i = 0; i < s; ++i) {
        if (m.initial[i] == 0.0) continue;
        const uint32_t a = pa(static_cast<uint64_t>(i));
        for (int64_t j = 0; j < s; ++j) {
            const double p = m.initial[i] * ptau[i * s + j];
            if (p == 0.0) continue;
            cells[pack_pair(a, pb(static_cast<uint64_t>(j)))] += p;
        }
    }
    infotheory::JointDistribution jd;
    jd.size_a = static_cast<uint32_t>(size_a);
    jd.size_b = static_cast<uint32_t>(size_b);
    jd.sample_count = 0;
    jd.cells.assign(cells.begin(), cells.end());
    std::sort(jd.cells.begin(), jd.cells.end());
    return jd;
}

double exact_part_entropy(const MarkovSystem& m, uint32_t mask) {
    const auto strides = full_strides(m.alphabet_sizes);
    const Projector pr(m.alphabet_sizes, strides, mask);
    std::unordered_map<uint32_t, double> marg;
    for (size_t i = 0; i < m.initial.size(); ++i)
        if (m.initial[i] > 0.0) marg[pr(i)] += m.initial[i];
    std::vector<double> probs;
    probs.reserve(marg.size());
    for (const auto& [code, p] : marg) probs.push_back(p);
    std::sort(probs.begin(), probs.end());
    double h = 0.0;
    for (double p : probs) h -= p * std::log(p);
    return h < 0.0 ? 0.0 : h;
}

}  // namespace

PhiEstimate phi_hat_exact(const MarkovSystem& m, int32_t tau, const Bipartition& cut) {
    validate(m);
    if (tau < 1) throw ValidationError("phi exact: tau must be >= 1");
    if (cut.channels != static_cast<int32_t>(m.alphabet_sizes.size()))
        throw ValidationError("phi exact: cut channel count does not match system");
    PhiEstimate e;
    e.tau = tau;
    e.cut = make_bipartition(cut.channels, cut.part2_mask);
    const uint32_t full = e.cut.full_mask();
    e.whole_mi = infotheory::mutual_information(exact_joint(m, tau, full, full));
    e.part_mi[0] = infotheory::mutual_information(
        exact_joint(m, tau, e.cut.part1_mask(), e.cut.part1_mask()));
    e.part_mi[1] = infotheory::mutual_information(
        exact_joint(m, tau, e.cut.part2_mask, e.cut.part2_mask));
    e.phi = e.whole_mi - e.part_mi[0] - e.part_mi[1];
    return e;
}

std::vector<double> stationary_distribution(const MarkovSystem& m) {
    validate(m);
    const int64_t s = state_space_size(m);
    std::vector<double> pi(s, 1.0 / static_cast<double>(s));
    std::vector<double> next(s);
    // Lazy-chain iteration (averaging with the identity) so periodic laws
    // still settle on their invariant distribution.
    for (int iter = 0; iter < 100000; ++iter) {
        for (int64_t j = 0; j < s; ++j) {
            double acc = 0.0;
            for (int64_t i = 0; i < s; ++i) acc += pi[i] * m.transition[i * s + j];
            next[j] = 0.5 * pi[j] + 0.5 * acc;
        }
        double delta = 0.0;
        for (int64_t j = 0; j < s; ++j) delta += std::abs(next[j] - pi[j]);
        pi.swap(next);
        if (delta < 1e-14) break;
    }
    return pi;
}

// ---------------------------------------------------------------------------
// Minimum-information bipartition
// ---------------------------------------------------------------------------

double normalization_factor(const TransitionTable& table, const Bipartition& cut,
                            Normalization norm) {
    if (norm == Normalization::none) return 1.0;
    if (table.state_total <= 0)
        throw InsufficientDataError("normalization: no states recorded");
    const auto part_entropy = [&](uint32_t mask) {
        const Projector pr(table.alphabet_sizes, table.strides, mask);
        std::unordered_map<uint32_t, int64_t> marg;
        for (const auto& [code, cnt] : table.state_counts) marg[pr(code)] += cnt;
        std::vector<int64_t> counts;
        counts.reserve(marg.size());
        for (const auto& [c, cnt] : marg) counts.push_back(cnt);
        return infotheory::entropy_from_counts(std::move(counts), table.state_total);
    };
    const Bipartition canon = make_bipartition(cut.channels, cut.part2_mask);
    const double k = std::min(part_entropy(canon.part1_mask()), part_entropy(canon.part2_mask));
    return std::max(k, kNormFloor);
}

namespace {

// Shared scoring core: phi at each candidate divided by K(B). whole_mi is
// cut-independent, so it is computed once by the callers.
CutScore score_cut(const TransitionTable& table, double whole_mi, const Bipartition& cut,
                   Normalization norm) {
    CutScore cs;
    cs.part_mi[0] = masked_mi(table, cut.part1_mask(), cut.part1_mask());
    cs.part_mi[1] = masked_mi(table, cut.part2_mask, cut.part2_mask);
    const double phi = whole_mi - cs.part_mi[0] - cs.part_mi[1];
    cs.score = phi / normalization_factor(table, cut, norm);
    return cs;
}

MibResult assemble(const TransitionTable& table, double whole_mi, const Bipartition& cut,
                   const CutScore& cs, int64_t evaluated, SearchKind kind) {
    MibResult r;
    r.cut = cut;
    r.estimate.whole_mi = whole_mi;
    r.estimate.part_mi[0] = cs.part_mi[0];
    r.estimate.part_mi[1] = cs.part_mi[1];
    r.estimate.phi = whole_mi - cs.part_mi[0] - cs.part_mi[1];
    r.estimate.tau = table.tau;
    r.estimate.cut = cut;
    r.score = cs.score;
    r.evaluated_cuts = evaluated;
    r.search = kind;
    return r;
}

MibResult exhaustive_sweep(const TransitionTable& table, Normalization norm, SearchKind tag) {
    const auto cuts = enumerate_bipartitions(table.channels);
    const uint32_t full = all_channels_mask(table.channels);
    const double whole_mi = masked_mi(table, full, full);
    std::vector<CutScore> scores(cuts.size());
    std::exception_ptr error;
    kernels::parallel_for(static_cast<long long>(cuts.size()), [&](long long i) {
        try {
            scores[i] = score_cut(table, whole_mi, cuts[i], norm);
        } catch (...) {
            error = std::current_exception();  // benign race: any one error suffices
        }
    });
    if (error) std::rethrow_exception(error);
    size_t best = 0;  // ascending-mask order; ties keep the earlier cut
    for (size_t i = 1; i < cuts.size(); ++i)
        if (scores[i].score < scores[best].score) best = i;
    return assemble(table, whole_mi, cuts[best], scores[best],
                    static_cast<int64_t>(cuts.size()), tag);
}

}  // namespace

MibResult mib_exhaustive(const TransitionTable& table, Normalization norm) {
    return exhaustive_sweep(table, norm, SearchKind::exhaustive);
}

MibResult mib_exhaustive(const StateTrajectory& t, int32_t tau, Normalization norm) {
    return mib_exhaustive(count_transitions(t, tau), norm);
}

MibResult mib_exhaustive(const MarkovSystem& m, int32_t tau, Normalization norm) {
    validate(m);
    const int32_t n = static_cast<int32_t>(m.alphabet_sizes.size());
    const auto cuts = enumerate_bipartitions(n);
    std::vector<double> scores(cuts.size());
    std::vector<PhiEstimate> ests(cuts.size());
    for (size_t i = 0; i < cuts.size(); ++i) {
        ests[i] = phi_hat_exact(m, tau, cuts[i]);
        double k = 1.0;
        if (norm == Normalization::min_part_entropy)
            k = std::max(std::min(exact_part_entropy(m, cuts[i].part1_mask()),
                                  exact_part_entropy(m, cuts[i].part2_mask)),
                         kNormFloor);
        scores[i] = ests[i].phi / k;
    }
    size_t best = 0;
    for (size_t i = 1; i < cuts.size(); ++i)
        if (scores[i] < scores[best]) best = i;
    MibResult r;
    r.cut = cuts[best];
    r.estimate = ests[best];
    r.score = scores[best];
    r.evaluated_cuts = static_cast<int64_t>(cuts.size());
    r.search = SearchKind::exhaustive;
    return r;
}

MibResult mib_stochastic(const TransitionTable& table, uint64_t seed, int64_t budget,
                         Normalization norm) {
    if (budget < 1) throw ValidationError("stochastic MIB: budget must be >= 1");
    const int32_t n = table.channels;
    if (n < 2) throw ValidationError("stochastic MIB: needs at least 2 channels");
    const int64_t total_cuts = (int64_t(1) << (n - 1)) - 1;
    if (budget >= total_cuts && n <= 20)
        return exhaustive_sweep(table, norm, SearchKind::stochastic);

    const uint32_t full = all_channels_mask(n);
    const double whole_mi = masked_mi(table, full, full);
    std::mt19937_64 rng(seed);
    std::unordered_map<uint32_t, CutScore> memo;
    int64_t fresh = 0;
    auto evaluate = [&](uint32_t mask) -> const CutScore& {
        auto it = memo.find(mask);
        if (it == memo.end()) {
            ++fresh;
            it = memo.emplace(mask, score_cut(table, whole_mi,
                                              Bipartition{n, mask}, norm)).first;
        }
        return it->second;
    };

    uint32_t best_mask = 0;
    CutScore best_score;
    bool have_best = false;
    auto offer = [&](uint32_t mask, const CutScore& cs) {
        if (!have_best || cs.score < best_score.score ||
            (cs.score == best_score.score && mask < best_mask)) {
            best_mask = mask;
            best_score = cs;
            have_best = true;
        }
    };

    auto climb_from = [&](uint32_t cur) {
        CutScore cur_score = evaluate(cur);
        offer(cur, cur_score);
        bool moved = true;
        while (moved && fresh < budget) {
            moved = false;
            // Single-channel moves in ascending channel order; channel 0 is
            // pinned to part 1 by canonicalisation.
            for (int32_t c = 1; c < n && fresh < budget; ++c) {
                const uint32_t cand = cur ^ (1u << c);
                if (cand == 0u) continue;  // would empty part 2
                const CutScore& cs = evaluate(cand);
                offer(cand, cs);
                if (cs.score < cur_score.score) {
                    cur = cand;
                    cur_score = cs;
                    moved = true;
                    break;
                }
            }
        }
    };

    while (fresh < budget && static_cast<int64_t>(memo.size()) < total_cuts) {
        const int64_t fresh_before = fresh;
        // Restart at a uniformly random canonical cut.
        climb_from((static_cast<uint32_t>(rng() % static_cast<uint64_t>(total_cuts)) + 1u) << 1);
        if (fresh == fresh_before) {
            // The draw landed in fully-memoized territory; seed from the first
            // unevaluated cut instead so the budget always makes progress.
            for (int64_t m = 1; m < total_cuts + 1; ++m) {
                const uint32_t mask = static_cast<uint32_t>(m) << 1;
                if (memo.find(mask) == memo.end()) {
                    climb_from(mask);
                    break;
                }
            }
        }
    }
    return assemble(table, whole_mi, Bipartition{n, best_mask}, best_score, fresh,
                    SearchKind::stochastic);
}

MibResult mib_stochastic(const StateTrajectory& t, int32_t tau, uint64_t seed,
                         int64_t budget, Normalization norm) {
    return mib_stochastic(count_transitions(t, tau), seed, budget, norm);
}

}  // namespace phimesa::phi
