#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>
#include <string>
#include <vector>

#include "phimesa/common.hpp"
#include "phimesa/lm.hpp"

using namespace phimesa;
using namespace phimesa::lm;

namespace {

ModelConfig small_config() {
    ModelConfig c;
    c.vocab = 11;
    c.dim = 8;
    c.layers = 2;
    c.heads = 2;
    c.context_len = 16;
    return c;
}

// One-layer model whose logits depend only on the current token: zeroed layer
// weights pass embeddings straight through, and out_proj reads them back.
// next[t] names the token the model should emit after seeing t.
Weights<float> lookup_model(int32_t vocab, int32_t context_len,
                            const std::vector<std::pair<int32_t, int32_t>>& next) {
    ModelConfig c;
    c.vocab = vocab;
    c.dim = static_cast<int32_t>(next.size()) + 1;
    c.layers = 1;
    c.heads = 1;
    c.context_len = context_len;
    Weights<float> w = make_weights<float>(c);
    for (size_t i = 0; i < next.size(); ++i) {
        const auto [token, target] = next[i];
        w.tok_emb.v[static_cast<size_t>(token) * c.dim + i] = 1.0f;
        w.out_proj.v[i * static_cast<size_t>(vocab) + static_cast<size_t>(target)] = 1.0f;
    }
    return w;
}

template <typename T>
bool same_tensors(const Weights<T>& a, const Weights<T>& b) {
    bool same = true;
    std::vector<const Tensor<T>*> ta;
    a.for_each_tensor([&](const Tensor<T>& t) { ta.push_back(&t); });
    size_t i = 0;
    b.for_each_tensor([&](const Tensor<T>& t) {
        if (ta[i]->v != t.v || ta[i]->dims != t.dims) same = false;
        ++i;
    });
    return same;
}

std::string tmp_path(const std::string& name) {
    return (std::filesystem::temp_directory_path() / name).string();
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    std::string s((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return s;
}

void spit(const std::string& path, const std::string& body) {
    std::ofstream out(path, std::ios::binary);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
}

}  // namespace

TEST_CASE("config validation and eos id") {
    CHECK(eos_id(ModelConfig{}) == 256);
    ModelConfig c = small_config();
    c.vocab = 33;
    CHECK(eos_id(c) == 32);

    c = small_config();
    c.heads = 3;  // 8 % 3 != 0
    CHECK_THROWS_AS(make_weights<float>(c), ValidationError);
    c = small_config();
    c.context_len = 1;
    CHECK_THROWS_AS(make_weights<float>(c), ValidationError);
    c = small_config();
    c.vocab = 1;
    CHECK_THROWS_AS(make_weights<float>(c), ValidationError);
    c = small_config();
    c.layers = 0;
    CHECK_THROWS_AS(make_weights<float>(c), ValidationError);
}

TEST_CASE("zero weights give a uniform predictive distribution") {
    ModelConfig c;
    c.vocab = 257;
    c.dim = 16;
    c.layers = 2;
    c.heads = 1;
    c.context_len = 8;
    auto w = make_weights<float>(c);
    std::vector<int32_t> tokens = {10, 20, 30, 40};
    Activations<float> acts;
    forward(w, tokens, acts);
    for (const float l : acts.logits) CHECK(l == 0.0f);

    std::vector<int32_t> targets = {20, 30, 40, 50};
    infotheory::LogProbRecord rec;
    const double ce = nll_loss(w, acts, targets, &rec);
    CHECK(ce == doctest::Approx(std::log(257.0)).epsilon(1e-12));
    CHECK(ce == doctest::Approx(5.549076).epsilon(1e-6));
    CHECK(rec.logp.size() == 4);
}

TEST_CASE("perplexity identities") {
    infotheory::LogProbRecord half_eighth;
    half_eighth.logp = {std::log(0.5), std::log(0.125)};
    CHECK(perplexity(half_eighth) == doctest::Approx(4.0).epsilon(1e-12));

    infotheory::LogProbRecord certain;
    certain.logp = {0.0, 0.0, 0.0};
    CHECK(perplexity(certain) == 1.0);

    infotheory::LogProbRecord empty;
    CHECK_THROWS_AS(perplexity(empty), InsufficientDataError);

    // exp(ce) is the definition, so the identity is exact by construction.
    infotheory::LogProbRecord mixed;
    mixed.logp = {-0.3, -1.7, -2.2, -0.05};
    CHECK(perplexity(mixed) == std::exp(infotheory::model_conditional_entropy(mixed)));
}

TEST_CASE("attention weights on degenerate inputs") {
    ModelConfig c = small_config();
    c.heads = 1;
    auto w = init_weights<float>(c, 5);

    // A single position can only attend to itself.
    Activations<float> acts;
    forward(w, {3}, acts);
    for (const auto& lc : acts.layers) {
        REQUIRE(lc.attw.size() == 1);
        CHECK(lc.attw[0] == 1.0f);
    }

    // Identical rows (same token, zeroed position table) tie every score, so
    // row 1 splits exactly in half and row 0 is the masked singleton.
    std::fill(w.pos_emb.v.begin(), w.pos_emb.v.end(), 0.0f);
    forward(w, {3, 3}, acts);
    for (const auto& lc : acts.layers) {
        REQUIRE(lc.attw.size() == 4);
        CHECK(lc.attw[0] == 1.0f);   // row 0: [1, 0]
        CHECK(lc.attw[1] == 0.0f);   // masked
        CHECK(lc.attw[2] == 0.5f);   // row 1: [0.5, 0.5]
        CHECK(lc.attw[3] == 0.5f);
    }
}

TEST_CASE("softmax rows sum to one") {
    auto w = init_weights<float>(small_config(), 9);
    Activations<float> acts;
    forward(w, {1, 2, 3, 4, 5, 6, 7}, acts);
    const int64_t n = acts.positions;
    for (const auto& lc : acts.layers) {
        for (int32_t hh = 0; hh < 2; ++hh)
            for (int64_t i = 0; i < n; ++i) {
                double sum = 0.0;
                for (int64_t j = 0; j < n; ++j) {
                    const float v = lc.attw[static_cast<size_t>(hh * n * n + i * n + j)];
                    CHECK(v >= 0.0f);
                    if (j > i) CHECK(v == 0.0f);
                    sum += v;
                }
                CHECK(sum == doctest::Approx(1.0).epsilon(1e-6));
            }
    }
}

TEST_CASE("causality: later tokens cannot move earlier logits") {
    auto w = init_weights<float>(small_config(), 21);
    Activations<float> a, b;
    forward(w, {1, 2, 3, 4, 5}, a);
    forward(w, {1, 2, 3, 4, 9}, b);
    const int32_t v = small_config().vocab;
    CHECK(std::memcmp(a.logits.data(), b.logits.data(), sizeof(float) * 4 * v) == 0);
    bool last_differs = false;
    for (int32_t j = 0; j < v; ++j)
        if (a.logits[static_cast<size_t>(4 * v + j)] != b.logits[static_cast<size_t>(4 * v + j)])
            last_differs = true;
    CHECK(last_differs);
}

TEST_CASE("forward is deterministic and validates input") {
    auto w = init_weights<float>(small_config(), 2);
    Activations<float> a, b;
    forward(w, {1, 2, 3}, a);
    forward(w, {1, 2, 3}, b);
    CHECK(a.logits == b.logits);

    auto w2 = init_weights<float>(small_config(), 2);
    CHECK(same_tensors(w, w2));

    Activations<float> scratch;
    CHECK_THROWS_AS(forward(w, {}, scratch), ValidationError);
    CHECK_THROWS_AS(forward(w, std::vector<int32_t>(17, 1), scratch), ValidationError);
    CHECK_THROWS_AS(forward(w, {11}, scratch), ValidationError);
    CHECK_THROWS_AS(forward(w, {-1}, scratch), ValidationError);
}

TEST_CASE("nll validates target shape and range") {
    auto w = init_weights<float>(small_config(), 2);
    Activations<float> acts;
    forward(w, {1, 2, 3}, acts);
    CHECK_THROWS_AS(nll_loss(w, acts, {1, 2}, nullptr), ValidationError);
    CHECK_THROWS_AS(nll_loss(w, acts, {1, 2, 11}, nullptr), ValidationError);
    CHECK(nll_loss(w, acts, {1, 2, 3}, nullptr) > 0.0);
}

TEST_CASE("analytic gradients match central finite differences") {
    ModelConfig c = small_config();
    auto w = init_weights<double>(c, 3);
    std::vector<int32_t> tokens = {1, 4, 2, 8, 0, 10, 5, 5, 9, 3, 7, 6};
    std::vector<int32_t> targets = {4, 2, 8, 0, 10, 5, 5, 9, 3, 7, 6, 1};
    const double n = static_cast<double>(tokens.size());

    Activations<double> acts;
    forward(w, tokens, acts);
    auto grads = make_weights<double>(c);
    backward(w, acts, tokens, targets, 1.0 / n, grads);

    std::vector<Tensor<double>*> wt, gt;
    w.for_each_tensor([&](Tensor<double>& t) { wt.push_back(&t); });
    grads.for_each_tensor([&](Tensor<double>& t) { gt.push_back(&t); });

    const double h = 1e-4;
    double worst = 0.0;
    Activations<double> probe;
    for (size_t t = 0; t < wt.size(); ++t) {
        for (size_t i = 0; i < wt[t]->v.size(); ++i) {
            double& cell = wt[t]->v[i];
            const double orig = cell;
            cell = orig + h;
            forward(w, tokens, probe);
            const double up = nll_loss(w, probe, targets, nullptr);
            cell = orig - h;
            forward(w, tokens, probe);
            const double dn = nll_loss(w, probe, targets, nullptr);
            cell = orig;
            const double num = (up - dn) / (2.0 * h);
            const double ana = gt[t]->v[i];
            const double scale = std::abs(num) + std::abs(ana);
            if (scale < 1e-10) continue;
            worst = std::max(worst, std::abs(num - ana) / scale);
        }
    }
    CHECK(worst < 1e-4);

    // Two identical calls accumulate bit-identical gradients.
    auto grads2 = make_weights<double>(c);
    backward(w, acts, tokens, targets, 1.0 / n, grads2);
    CHECK(same_tensors(grads, grads2));
}

TEST_CASE("softmax minus one-hot structure on the output projection") {
    // Single token, single target: d(NLL)/d(out_proj[e][j]) must equal
    // x_final[e] * (softmax(logits)[j] - [j == target]).
    ModelConfig c = small_config();
    c.layers = 1;
    auto w = init_weights<double>(c, 13);
    std::vector<int32_t> tokens = {4};
    std::vector<int32_t> targets = {7};
    Activations<double> acts;
    forward(w, tokens, acts);
    auto grads = make_weights<double>(c);
    backward(w, acts, tokens, targets, 1.0, grads);

    double lse = 0.0;
    double mx = acts.logits[0];
    for (double l : acts.logits) mx = std::max(mx, l);
    for (double l : acts.logits) lse += std::exp(l - mx);
    lse = mx + std::log(lse);
    for (int32_t e = 0; e < c.dim; ++e)
        for (int32_t j = 0; j < c.vocab; ++j) {
            const double soft = std::exp(acts.logits[static_cast<size_t>(j)] - lse);
            const double expect = acts.x_final[static_cast<size_t>(e)] *
                                  (soft - (j == targets[0] ? 1.0 : 0.0));
            CHECK(grads.out_proj.v[static_cast<size_t>(e) * c.vocab + j] ==
                  doctest::Approx(expect).epsilon(1e-10));
        }
}

TEST_CASE("samplers") {
    const double a[3] = {0.0, 5.0, 1.0};
    CHECK(sample_greedy(a, 3) == 1);
    const double flat[4] = {2.0, 2.0, 2.0, 2.0};
    CHECK(sample_greedy(flat, 4) == 0);  // lowest index wins ties

    const double biased[2] = {std::log(3.0), 0.0};
    std::mt19937_64 rng(1234);
    int64_t zeros = 0;
    const int64_t draws = 100000;
    for (int64_t i = 0; i < draws; ++i)
        if (sample_multinomial(biased, 2, rng) == 0) ++zeros;
    const double freq = static_cast<double>(zeros) / static_cast<double>(draws);
    CHECK(freq == doctest::Approx(0.75).epsilon(0.014));

    // Same seed, same draw sequence.
    std::mt19937_64 r1(7), r2(7);
    for (int i = 0; i < 50; ++i)
        CHECK(sample_multinomial(a, 3, r1) == sample_multinomial(a, 3, r2));
}

TEST_CASE("generation stopping rules") {
    // Always-EOS model: eos follows every token, so one step then stop.
    const int32_t v = 5;  // eos id 4
    auto always = lookup_model(v, 8, {{1, 4}, {2, 4}, {4, 4}});
    auto out = generate(always, {1}, 6, Sampler::greedy, 0);
    CHECK(out == std::vector<int32_t>{1, 4});

    // Never-EOS model: the loop runs for exactly max_len appends.
    auto never = lookup_model(v, 8, {{1, 2}, {2, 1}});
    out = generate(never, {1}, 6, Sampler::greedy, 0);
    CHECK(out.size() == 7);
    CHECK(out == std::vector<int32_t>{1, 2, 1, 2, 1, 2, 1});

    // max_len 0 returns the context untouched.
    out = generate(never, {1, 2, 1}, 0, Sampler::greedy, 0);
    CHECK(out == std::vector<int32_t>{1, 2, 1});

    CHECK_THROWS_AS(generate(never, {}, 4, Sampler::greedy, 0), ValidationError);
    CHECK_THROWS_AS(generate(never, std::vector<int32_t>(9, 1), 4, Sampler::greedy, 0),
                    ValidationError);
    CHECK_THROWS_AS(generate(never, {1}, -1, Sampler::greedy, 0), ValidationError);
}

TEST_CASE("byte cycle model spells ababa") {
    auto w = lookup_model(kByteVocab, 8, {{'a', 'b'}, {'b', 'a'}});
    auto out = generate(w, bytes_to_tokens("a"), 4, Sampler::greedy, 0);
    CHECK(tokens_to_bytes(out) == "ababa");
}

TEST_CASE("generation slides past the context window") {
    auto never = lookup_model(5, 4, {{1, 2}, {2, 1}});
    auto out = generate(never, {1}, 10, Sampler::greedy, 0);
    CHECK(out.size() == 11);
    for (size_t i = 0; i < out.size(); ++i) CHECK(out[i] == (i % 2 == 0 ? 1 : 2));
}

TEST_CASE("multinomial generation is reproducible given the seed") {
    auto w = init_weights<float>(small_config(), 77);
    auto a = generate(w, {1, 2}, 8, Sampler::multinomial, 42);
    auto b = generate(w, {1, 2}, 8, Sampler::multinomial, 42);
    auto c = generate(w, {1, 2}, 8, Sampler::multinomial, 43);
    CHECK(a == b);
    CHECK(a.size() <= 10);
    (void)c;  // different seed may or may not differ; only determinism is contractual
}

TEST_CASE("train step basics") {
    ModelConfig c = small_config();
    auto w = init_weights<float>(c, 31);
    SgdState<float> opt;
    const std::vector<std::vector<int32_t>> batch = {{1, 2, 3, 4}, {5, 6, 7}};

    // Zero learn rate leaves every tensor bit-identical.
    auto before = w;
    auto m = train_step(w, opt, batch, 0.0);
    CHECK(same_tensors(w, before));
    CHECK(m.positions == 5);
    CHECK(m.ppl == doctest::Approx(std::exp(m.ce)).epsilon(1e-12));

    // A zero CE-gradient scale also freezes the weights, at any learn rate.
    SgdState<float> opt2;
    auto w2 = init_weights<float>(c, 31);
    auto ex = [](double, const infotheory::LogProbRecord&) {
        return ExtraLoss{-2.5, 0.0};
    };
    auto m2 = train_step(w2, opt2, batch, 1.0, ex);
    CHECK(same_tensors(w2, before));
    CHECK(m2.extra_value == -2.5);

    CHECK_THROWS_AS(train_step(w, opt, {}, 0.1), ValidationError);
    CHECK_THROWS_AS(train_step(w, opt, {{1}}, 0.1), ValidationError);
    CHECK_THROWS_AS(train_step(w, opt, {std::vector<int32_t>(18, 1)}, 0.1), ValidationError);
}

TEST_CASE("train step is deterministic") {
    ModelConfig c = small_config();
    const std::vector<std::vector<int32_t>> batch = {{1, 2, 3, 4, 5}, {5, 4, 3, 2, 1}};
    auto wa = init_weights<float>(c, 8);
    auto wb = init_weights<float>(c, 8);
    SgdState<float> oa, ob;
    oa.momentum = ob.momentum = 0.9;
    for (int step = 0; step < 5; ++step) {
        auto ma = train_step(wa, oa, batch, 0.1);
        auto mb = train_step(wb, ob, batch, 0.1);
        CHECK(ma.ce == mb.ce);
    }
    CHECK(same_tensors(wa, wb));
}

TEST_CASE("loss is non-increasing on a fixed batch at a small learn rate") {
    ModelConfig c;
    c.vocab = 5;
    c.dim = 8;
    c.layers = 1;
    c.heads = 1;
    c.context_len = 8;
    auto w = init_weights<float>(c, 4);
    SgdState<float> opt;
    const std::vector<std::vector<int32_t>> batch = {{1, 2, 3, 4, 1, 2, 3, 4}};
    double prev = 1e300;
    for (int step = 0; step < 100; ++step) {
        const auto m = train_step(w, opt, batch, 0.02);
        CHECK(m.ce <= prev + 1e-9);
        prev = m.ce;
    }
    CHECK(prev < std::log(5.0));  // learned something beyond uniform
}

TEST_CASE("non-finite loss aborts with a numeric error") {
    auto w = init_weights<float>(small_config(), 1);
    w.tok_emb.v[0] = std::numeric_limits<float>::quiet_NaN();
    SgdState<float> opt;
    CHECK_THROWS_AS(train_step(w, opt, {{0, 1, 2}}, 0.1), NumericError);
}

TEST_CASE("checkpoint round trip is bit exact") {
    ModelConfig c;
    c.vocab = 33;
    c.dim = 16;
    c.layers = 3;
    c.heads = 4;
    c.context_len = 9;
    auto w = init_weights<float>(c, 99);
    const std::string path = tmp_path("lm_ckpt_roundtrip.bin");
    save_checkpoint(path, w);
    auto back = load_checkpoint(path);
    CHECK(back.cfg.vocab == 33);
    CHECK(back.cfg.dim == 16);
    CHECK(back.cfg.layers == 3);
    CHECK(back.cfg.heads == 4);
    CHECK(back.cfg.context_len == 9);
    CHECK(eos_id(back.cfg) == 32);
    CHECK(same_tensors(w, back));
    std::filesystem::remove(path);
}

TEST_CASE("checkpoint rejects corrupted files") {
    auto w = init_weights<float>(small_config(), 6);
    const std::string path = tmp_path("lm_ckpt_corrupt.bin");
    save_checkpoint(path, w);
    const std::string good = slurp(path);

    std::string bad = good;
    bad[0] = 'X';
    spit(path, bad);
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

    bad = good;
    bad[4] = 2;  // version field
    spit(path, bad);
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

    spit(path, good.substr(0, good.size() / 2));
    CHECK_THROWS_AS(load_checkpoint(path), ValidationError);

    CHECK_THROWS_AS(load_checkpoint(tmp_path("lm_no_such_ckpt.bin")), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("byte tokenizer") {
    CHECK(bytes_to_tokens("Az") == std::vector<int32_t>{65, 122});
    CHECK(bytes_to_tokens("").empty());

    std::string all;
    for (int b = 0; b < 256; ++b) all.push_back(static_cast<char>(b));
    CHECK(tokens_to_bytes(bytes_to_tokens(all)) == all);

    CHECK(tokens_to_bytes({65, kEosToken, 66}) == "AB");  // EOS dropped
    CHECK_THROWS_AS(tokens_to_bytes({300}), ValidationError);
    CHECK_THROWS_AS(tokens_to_bytes({-1}), ValidationError);
}
