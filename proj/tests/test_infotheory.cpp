#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <random>
#include <vector>

#include "phimesa/common.hpp"
#include "phimesa/infotheory.hpp"

using namespace phimesa;
using namespace phimesa::infotheory;

namespace {

constexpr double kLn2 = 0.6931471805599453;
constexpr double kLn256 = 5.545177444479562;

JointDistribution dense_joint(const std::vector<std::vector<double>>& table,
                              int64_t sample_count = 0) {
    JointDistribution j;
    j.size_a = static_cast<uint32_t>(table.size());
    j.size_b = static_cast<uint32_t>(table[0].size());
    j.sample_count = sample_count;
    for (uint32_t a = 0; a < j.size_a; ++a) {
        for (uint32_t b = 0; b < j.size_b; ++b) {
            if (table[a][b] != 0.0)
                j.cells.emplace_back((static_cast<uint64_t>(a) << 32) | b, table[a][b]);
        }
    }
    return j;
}

JointDistribution transposed(const JointDistribution& j) {
    JointDistribution t;
    t.size_a = j.size_b;
    t.size_b = j.size_a;
    t.sample_count = j.sample_count;
    for (const auto& [key, p] : j.cells) {
        const uint64_t a = key >> 32;
        const uint64_t b = key & 0xffffffffu;
        t.cells.emplace_back((b << 32) | a, p);
    }
    std::sort(t.cells.begin(), t.cells.end());
    return t;
}

Distribution random_distribution(std::mt19937_64& rng, int n) {
    Distribution d;
    d.p.resize(static_cast<size_t>(n));
    double sum = 0.0;
    for (auto& x : d.p) {
        x = static_cast<double>(rng() >> 11) * 0x1.0p-53 + 1e-6;
        sum += x;
    }
    for (auto& x : d.p) x /= sum;
    return d;
}

double dist_entropy_oracle(const std::vector<double>& p) {
    double h = 0.0;
    for (double x : p) {
        if (x > 0.0) h -= x * std::log(x);
    }
    return h;
}

}  // namespace

TEST_CASE("entropy of simple distributions") {
    CHECK(entropy({{0.5, 0.5}}) == doctest::Approx(kLn2).epsilon(1e-14));
    CHECK(entropy({{1.0}}) == 0.0);
    CHECK(entropy({{0.0, 1.0}}) == 0.0);
    // frozen oracle: -(0.25 ln 0.25 + 0.75 ln 0.75)
    CHECK(entropy({{0.25, 0.75}}) == doctest::Approx(0.5623351446188083).epsilon(1e-14));
}

TEST_CASE("entropy rejects invalid distributions") {
    CHECK_THROWS_AS(entropy({{0.5, -0.5, 1.0}}), ValidationError);
    CHECK_THROWS_AS(entropy({{0.5, 0.6}}), ValidationError);
    CHECK_THROWS_AS(entropy({{}}), ValidationError);
}

TEST_CASE("entropy is maximized by the uniform distribution") {
    std::mt19937_64 rng(11);
    for (int n = 2; n <= 40; ++n) {
        const Distribution d = random_distribution(rng, n);
        const double h = entropy(d);
        CHECK(h <= std::log(static_cast<double>(n)) + 1e-12);
        CHECK(h == doctest::Approx(dist_entropy_oracle(d.p)).epsilon(1e-12));
        Distribution uniform;
        uniform.p.assign(static_cast<size_t>(n), 1.0 / n);
        CHECK(entropy(uniform) ==
              doctest::Approx(std::log(static_cast<double>(n))).epsilon(1e-12));
    }
}

TEST_CASE("mutual information of canonical joints") {
    // independence: exact zero or a clamped / sub-1e-12 rounding residue
    CHECK(mutual_information(dense_joint({{0.25, 0.25}, {0.25, 0.25}})) < 1e-12);
    CHECK(mutual_information(dense_joint({{0.06, 0.14}, {0.24, 0.56}})) < 1e-12);
    // perfect correlation
    CHECK(mutual_information(dense_joint({{0.5, 0.0}, {0.0, 0.5}})) ==
          doctest::Approx(kLn2).epsilon(1e-14));
    // frozen oracle: 2 ln 2 - H({.4,.1,.1,.4})
    CHECK(mutual_information(dense_joint({{0.4, 0.1}, {0.1, 0.4}})) ==
          doctest::Approx(0.19274475702175753).epsilon(1e-14));
}

TEST_CASE("mutual information symmetry and bounds") {
    std::mt19937_64 rng(17);
    for (int trial = 0; trial < 25; ++trial) {
        const int na = 2 + static_cast<int>(rng() % 5);
        const int nb = 2 + static_cast<int>(rng() % 5);
        std::vector<std::vector<double>> table(static_cast<size_t>(na),
                                               std::vector<double>(static_cast<size_t>(nb)));
        double sum = 0.0;
        for (auto& row : table) {
            for (auto& x : row) {
                x = static_cast<double>(rng() >> 11) * 0x1.0p-53 + 1e-9;
                sum += x;
            }
        }
        for (auto& row : table) {
            for (auto& x : row) x /= sum;
        }
        const JointDistribution j = dense_joint(table);
        const double mi = mutual_information(j);
        CHECK(mi == mutual_information(transposed(j)));  // exact symmetry

        std::vector<double> pa(static_cast<size_t>(na), 0.0);
        std::vector<double> pb(static_cast<size_t>(nb), 0.0);
        for (int a = 0; a < na; ++a) {
            for (int b = 0; b < nb; ++b) {
                pa[static_cast<size_t>(a)] += table[static_cast<size_t>(a)][static_cast<size_t>(b)];
                pb[static_cast<size_t>(b)] += table[static_cast<size_t>(a)][static_cast<size_t>(b)];
            }
        }
        const double bound = std::min(dist_entropy_oracle(pa), dist_entropy_oracle(pb));
        CHECK(mi <= bound + 1e-12);
        CHECK(mi >= 0.0);
    }
}

TEST_CASE("mutual information rejects invalid joints") {
    JointDistribution j = dense_joint({{0.5, 0.2}, {0.1, 0.1}});  // sums to 0.9
    CHECK_THROWS_AS(mutual_information(j), ValidationError);
    JointDistribution unsorted = dense_joint({{0.25, 0.25}, {0.25, 0.25}});
    std::swap(unsorted.cells[0], unsorted.cells[1]);
    CHECK_THROWS_AS(mutual_information(unsorted), ValidationError);
}

TEST_CASE("miller-madow correction adds the occupied-cell term") {
    // counts {(0,0): 3, (1,1): 1}: plain MI = H(3/4,1/4); correction
    // (m_a + m_b - m_ab - 1) / (2N) = (2 + 2 - 2 - 1) / 8
    const JointDistribution j = dense_joint({{0.75, 0.0}, {0.0, 0.25}}, 4);
    const double plain = mutual_information(j);
    CHECK(plain == doctest::Approx(0.5623351446188083).epsilon(1e-14));
    CHECK(mutual_information(j, true) == doctest::Approx(plain + 0.125).epsilon(1e-14));
    // analytic joints (sample_count 0) are left uncorrected
    const JointDistribution analytic = dense_joint({{0.75, 0.0}, {0.0, 0.25}});
    CHECK(mutual_information(analytic, true) == plain);
}

TEST_CASE("model conditional entropy") {
    CHECK(model_conditional_entropy({{0.0, 0.0, 0.0}}) == 0.0);
    LogProbRecord uniform;
    uniform.logp.assign(2, -kLn256);
    CHECK(model_conditional_entropy(uniform) == kLn256);  // exact at N = 2
    // Sequential mean of 1000 equal terms accumulates ~1e-14 of rounding.
    uniform.logp.assign(1000, -kLn256);
    CHECK(model_conditional_entropy(uniform) == doctest::Approx(kLn256).epsilon(1e-12));
    // frozen oracle: (ln 2 + ln 8) / 2
    LogProbRecord two;
    two.logp = {std::log(0.5), std::log(0.125)};
    CHECK(model_conditional_entropy(two) == doctest::Approx(1.3862943611198906).epsilon(1e-14));
}

TEST_CASE("model conditional entropy rejects bad records") {
    CHECK_THROWS_AS(model_conditional_entropy({{}}), InsufficientDataError);
    CHECK_THROWS_AS(model_conditional_entropy({{-0.5, 0.25}}), ValidationError);
}

TEST_CASE("empirical marginal entropy") {
    CHECK(marginal_entropy_empirical({3, 3, 3, 3}, 8) == 0.0);
    CHECK(marginal_entropy_empirical({0, 1, 0, 1, 1, 0}, 2) ==
          doctest::Approx(kLn2).epsilon(1e-14));
    // frozen oracle: H({2/3, 1/3}) = ln 3 - (2/3) ln 2
    CHECK(marginal_entropy_empirical({0, 0, 1}, 2) ==
          doctest::Approx(0.636514168294813).epsilon(1e-14));
    CHECK_THROWS_AS(marginal_entropy_empirical({}, 2), InsufficientDataError);
    CHECK_THROWS_AS(marginal_entropy_empirical({0, 2}, 2), ValidationError);
}

TEST_CASE("count-based entropy ignores labels and order") {
    const double a = entropy_from_counts({5, 3, 9, 1}, 18);
    const double b = entropy_from_counts({9, 1, 5, 3}, 18);
    CHECK(a == b);  // bit-identical: summation happens in sorted-count order
    CHECK_THROWS_AS(entropy_from_counts({5, 3}, 9), ValidationError);

    // matches the direct -sum p ln p oracle
    std::vector<double> p = {5.0 / 18, 3.0 / 18, 9.0 / 18, 1.0 / 18};
    CHECK(a == doctest::Approx(dist_entropy_oracle(p)).epsilon(1e-12));
}
