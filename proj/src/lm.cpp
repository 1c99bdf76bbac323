#include "phimesa/lm.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>

#include "phimesa/common.hpp"
#include "phimesa/kernels.hpp"

namespace phimesa::lm {

namespace {

constexpr double kRmsEps = 1e-8;

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

// ---------------------------------------------------------------------------
// shape helpers

template <typename T>
Tensor<T> make_tensor(std::string name, std::vector<uint32_t> dims) {
    Tensor<T> t;
    t.name = std::move(name);
    t.dims = std::move(dims);
    int64_t n = 1;
    for (uint32_t d : t.dims) n *= d;
    t.v.assign(static_cast<size_t>(n), T(0));
    return t;
}

template <typename T>
void shape_weights(Weights<T>& w) {
    const auto& c = w.cfg;
    const auto u = [](int32_t x) { return static_cast<uint32_t>(x); };
    w.tok_emb = make_tensor<T>("tok_emb", {u(c.vocab), u(c.dim)});
    w.pos_emb = make_tensor<T>("pos_emb", {u(c.context_len), u(c.dim)});
    w.layers.resize(static_cast<size_t>(c.layers));
    for (int32_t i = 0; i < c.layers; ++i) {
        const std::string p = "layer" + std::to_string(i) + ".";
        w.layers[static_cast<size_t>(i)].w_q = make_tensor<T>(p + "w_q", {u(c.dim), u(c.dim)});
        w.layers[static_cast<size_t>(i)].w_k = make_tensor<T>(p + "w_k", {u(c.dim), u(c.dim)});
        w.layers[static_cast<size_t>(i)].w_v = make_tensor<T>(p + "w_v", {u(c.dim), u(c.dim)});
        w.layers[static_cast<size_t>(i)].w_proj =
            make_tensor<T>(p + "w_proj", {u(c.dim), u(c.dim)});
    }
    w.out_proj = make_tensor<T>("out_proj", {u(c.dim), u(c.vocab)});
}

// ---------------------------------------------------------------------------
// norm

// y = x / sqrt(mean(x^2) + eps), per row; returns the per-row reciprocal norm.
template <typename T>
void rmsnorm_forward(const T* x, T* y, T* r_out, int64_t rows, int64_t d) {
    kernels::parallel_for(rows, [&](int64_t i) {
        const T* xi = x + i * d;
        T ss = T(0);
        for (int64_t j = 0; j < d; ++j) ss += xi[j] * xi[j];
        const T r = T(1) / std::sqrt(ss / static_cast<T>(d) + static_cast<T>(kRmsEps));
        r_out[i] = r;
        T* yi = y + i * d;
        for (int64_t j = 0; j < d; ++j) yi[j] = xi[j] * r;
    });
}

// dx_j = r*dy_j - (r^3/d) * x_j * sum_i(dy_i * x_i); accumulates into dx.
template <typename T>
void rmsnorm_backward(const T* x, const T* r, const T* dy, T* dx, int64_t rows, int64_t d) {
    kernels::parallel_for(rows, [&](int64_t i) {
        const T* xi = x + i * d;
        const T* dyi = dy + i * d;
        T* dxi = dx + i * d;
        T dot = T(0);
        for (int64_t j = 0; j < d; ++j) dot += dyi[j] * xi[j];
        const T ri = r[i];
        const T k = ri * ri * ri * dot / static_cast<T>(d);
        for (int64_t j = 0; j < d; ++j) dxi[j] += ri * dyi[j] - k * xi[j];
    });
}

template <typename T>
void resize_zero(std::vector<T>& v, int64_t n) {
    v.assign(static_cast<size_t>(n), T(0));
}

}  // namespace

// ---------------------------------------------------------------------------
// config

void validate(const ModelConfig& c) {
    if (c.vocab < 2) throw ValidationError("model: vocab must be at least 2");
    if (c.dim < 1) throw ValidationError("model: dim must be positive");
    if (c.layers < 1) throw ValidationError("model: layers must be positive");
    if (c.heads < 1) throw ValidationError("model: heads must be positive");
    if (c.dim % c.heads != 0) throw ValidationError("model: dim must be divisible by heads");
    if (c.context_len < 2) throw ValidationError("model: context_len must be at least 2");
}

int32_t eos_id(const ModelConfig& c) { return c.vocab - 1; }

// ---------------------------------------------------------------------------
// weights

template <typename T>
Weights<T> make_weights(const ModelConfig& cfg) {
    validate(cfg);
    Weights<T> w;
    w.cfg = cfg;
    shape_weights(w);
    return w;
}

template <typename T>
Weights<T> init_weights(const ModelConfig& cfg, uint64_t seed) {
    Weights<T> w = make_weights<T>(cfg);
    std::mt19937_64 rng(seed);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cfg.dim));
    w.for_each_tensor([&](Tensor<T>& t) {
        for (auto& x : t.v) {
            const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;  // [0,1)
            x = static_cast<T>((2.0 * u - 1.0) * bound);
        }
    });
    return w;
}

// ---------------------------------------------------------------------------
// forward

template <typename T>
void forward(const Weights<T>& w, const std::vector<int32_t>& tokens, Activations<T>& acts) {
    const auto& c = w.cfg;
    const int64_t n = static_cast<int64_t>(tokens.size());
    if (n < 1) throw ValidationError("forward: empty token sequence");
    if (n > c.context_len) throw ValidationError("forward: sequence longer than context_len");
    for (int32_t t : tokens) {
        if (t < 0 || t >= c.vocab) throw ValidationError("forward: token out of vocab range");
    }

    const int64_t d = c.dim;
    const int64_t dh = d / c.heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));

    acts.positions = n;
    acts.layers.resize(static_cast<size_t>(c.layers));
    resize_zero(acts.x0, n * d);
    for (int64_t i = 0; i < n; ++i) {
        const T* te = w.tok_emb.v.data() + static_cast<int64_t>(tokens[static_cast<size_t>(i)]) * d;
        const T* pe = w.pos_emb.v.data() + i * d;
        T* xi = acts.x0.data() + i * d;
        for (int64_t j = 0; j < d; ++j) xi[j] = te[j] + pe[j];
    }

    std::vector<T> x = acts.x0;
    for (int32_t li = 0; li < c.layers; ++li) {
        LayerCache<T>& lc = acts.layers[static_cast<size_t>(li)];
        const LayerWeights<T>& lw = w.layers[static_cast<size_t>(li)];

        // attention block: x += attend(norm(x))
        lc.x_in = x;
        resize_zero(lc.rms_in, n);
        resize_zero(lc.h, n * d);
        rmsnorm_forward(lc.x_in.data(), lc.h.data(), lc.rms_in.data(), n, d);

        resize_zero(lc.q, n * d);
        resize_zero(lc.k, n * d);
        resize_zero(lc.v, n * d);
        kernels::matmul(lc.h.data(), lw.w_q.v.data(), lc.q.data(), n, d, d);
        kernels::matmul(lc.h.data(), lw.w_k.v.data(), lc.k.data(), n, d, d);
        kernels::matmul(lc.h.data(), lw.w_v.v.data(), lc.v.data(), n, d, d);

        resize_zero(lc.attw, static_cast<int64_t>(c.heads) * n * n);
        resize_zero(lc.att, n * d);
        for (int32_t hh = 0; hh < c.heads; ++hh) {
            const int64_t off = static_cast<int64_t>(hh) * dh;
            T* wbase = lc.attw.data() + static_cast<int64_t>(hh) * n * n;
            kernels::parallel_for(n, [&](int64_t i) {
                T* wrow = wbase + i * n;
                T mx = -std::numeric_limits<T>::infinity();
                for (int64_t j = 0; j <= i; ++j) {
                    const T* qi = lc.q.data() + i * d + off;
                    const T* kj = lc.k.data() + j * d + off;
                    T s = T(0);
                    for (int64_t e = 0; e < dh; ++e) s += qi[e] * kj[e];
                    s *= inv_scale;
                    wrow[j] = s;
                    if (s > mx) mx = s;
                }
                T denom = T(0);
                for (int64_t j = 0; j <= i; ++j) {
                    wrow[j] = std::exp(wrow[j] - mx);
                    denom += wrow[j];
                }
                T* ai = lc.att.data() + i * d + off;
                for (int64_t j = 0; j <= i; ++j) {
                    wrow[j] /= denom;
                    const T* vj = lc.v.data() + j * d + off;
                    for (int64_t e = 0; e < dh; ++e) ai[e] += wrow[j] * vj[e];
                }
            });
        }

        for (int64_t i = 0; i < n * d; ++i)
            x[static_cast<size_t>(i)] += lc.att[static_cast<size_t>(i)];

        // projection block: x += relu(norm(x) * w_proj)
        lc.x_mid = x;
        resize_zero(lc.rms_mid, n);
        resize_zero(lc.h2, n * d);
        rmsnorm_forward(lc.x_mid.data(), lc.h2.data(), lc.rms_mid.data(), n, d);

        resize_zero(lc.z, n * d);
        kernels::matmul(lc.h2.data(), lw.w_proj.v.data(), lc.z.data(), n, d, d);
        for (int64_t i = 0; i < n * d; ++i) {
            const T z = lc.z[static_cast<size_t>(i)];
            if (z > T(0)) x[static_cast<size_t>(i)] += z;
        }
    }

    acts.x_final = x;
    resize_zero(acts.logits, n * c.vocab);
    kernels::matmul(acts.x_final.data(), w.out_proj.v.data(), acts.logits.data(), n, d, c.vocab);
}

// ---------------------------------------------------------------------------
// loss

template <typename T>
double nll_loss(const Weights<T>& w, const Activations<T>& acts,
                const std::vector<int32_t>& targets, infotheory::LogProbRecord* rec) {
    const int64_t n = acts.positions;
    const int32_t v = w.cfg.vocab;
    if (static_cast<int64_t>(targets.size()) != n)
        throw ValidationError("nll: targets must match logit rows");
    if (n == 0) throw InsufficientDataError("nll: empty sequence");
    double total = 0.0;
    for (int64_t i = 0; i < n; ++i) {
        const int32_t tgt = targets[static_cast<size_t>(i)];
        if (tgt < 0 || tgt >= v) throw ValidationError("nll: target out of vocab range");
        const T* row = acts.logits.data() + i * v;
        double mx = -std::numeric_limits<double>::infinity();
        for (int32_t j = 0; j < v; ++j) {
            const double x = static_cast<double>(row[j]);
            if (x > mx) mx = x;
        }
        double denom = 0.0;
        for (int32_t j = 0; j < v; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
        const double lse = mx + std::log(denom);
        const double logp = static_cast<double>(row[tgt]) - lse;
        if (rec) rec->logp.push_back(logp);
        total -= logp;
    }
    return total / static_cast<double>(n);
}

double perplexity(const infotheory::LogProbRecord& rec) {
    return std::exp(infotheory::model_conditional_entropy(rec));
}

// ---------------------------------------------------------------------------
// backward

template <typename T>
void backward(const Weights<T>& w, const Activations<T>& acts,
              const std::vector<int32_t>& tokens, const std::vector<int32_t>& targets,
              T coeff, Weights<T>& grads) {
    const auto& c = w.cfg;
    const int64_t n = acts.positions;
    const int64_t d = c.dim;
    const int32_t v = c.vocab;
    const int64_t dh = d / c.heads;
    const T inv_scale = T(1) / std::sqrt(static_cast<T>(dh));
    if (static_cast<int64_t>(tokens.size()) != n || static_cast<int64_t>(targets.size()) != n)
        throw ValidationError("backward: token/target length mismatch");

    // d(sum NLL)/d(logits) = softmax - onehot, scaled by coeff
    std::vector<T> dlogits(static_cast<size_t>(n * v), T(0));
    kernels::parallel_for(n, [&](int64_t i) {
        const T* row = acts.logits.data() + i * v;
        T* drow = dlogits.data() + i * v;
        T mx = row[0];
        for (int32_t j = 1; j < v; ++j) mx = std::max(mx, row[j]);
        T denom = T(0);
        for (int32_t j = 0; j < v; ++j) {
            drow[j] = std::exp(row[j] - mx);
            denom += drow[j];
        }
        for (int32_t j = 0; j < v; ++j) drow[j] = drow[j] / denom * coeff;
        drow[targets[static_cast<size_t>(i)]] -= coeff;
    });

    // logits = x_final * out_proj
    kernels::matmul(acts.x_final.data(), dlogits.data(), grads.out_proj.v.data(), d, n, v,
                    true, false, true);
    std::vector<T> dx(static_cast<size_t>(n * d), T(0));
    kernels::matmul(dlogits.data(), w.out_proj.v.data(), dx.data(), n, v, d, false, true);

    std::vector<T> dh_buf(static_cast<size_t>(n * d), T(0));
    std::vector<T> dq(static_cast<size_t>(n * d), T(0));
    std::vector<T> dk(static_cast<size_t>(n * d), T(0));
    std::vector<T> dv(static_cast<size_t>(n * d), T(0));
    std::vector<T> datt(static_cast<size_t>(n * d), T(0));
    std::vector<T> ds(static_cast<size_t>(n) * static_cast<size_t>(n), T(0));

    for (int32_t li = c.layers - 1; li >= 0; --li) {
        const LayerCache<T>& lc = acts.layers[static_cast<size_t>(li)];
        const LayerWeights<T>& lw = w.layers[static_cast<size_t>(li)];
        LayerWeights<T>& lg = grads.layers[static_cast<size_t>(li)];

        // projection block: x_out = x_mid + relu(h2 * w_proj)
        std::vector<T> dz(static_cast<size_t>(n * d), T(0));
        for (int64_t i = 0; i < n * d; ++i) {
            if (lc.z[static_cast<size_t>(i)] > T(0)) dz[static_cast<size_t>(i)] = dx[static_cast<size_t>(i)];
        }
        kernels::matmul(lc.h2.data(), dz.data(), lg.w_proj.v.data(), d, n, d, true, false, true);
        std::vector<T> dh2(static_cast<size_t>(n * d), T(0));
        kernels::matmul(dz.data(), lw.w_proj.v.data(), dh2.data(), n, d, d, false, true);
        // residual passthrough: dx stays, plus the normed branch
        rmsnorm_backward(lc.x_mid.data(), lc.rms_mid.data(), dh2.data(), dx.data(), n, d);

        // attention block: x_mid = x_in + att(norm(x_in)), heads concatenated
        std::copy(dx.begin(), dx.end(), datt.begin());

        std::fill(dq.begin(), dq.end(), T(0));
        std::fill(dk.begin(), dk.end(), T(0));
        std::fill(dv.begin(), dv.end(), T(0));
        for (int32_t hh = 0; hh < c.heads; ++hh) {
            const int64_t off = static_cast<int64_t>(hh) * dh;
            const T* wbase = lc.attw.data() + static_cast<int64_t>(hh) * n * n;
            // dv[j] = sum_{i>=j} w[i,j] * datt[i]
            kernels::parallel_for(n, [&](int64_t j) {
                T* dvj = dv.data() + j * d + off;
                for (int64_t i = j; i < n; ++i) {
                    const T wij = wbase[i * n + j];
                    const T* di = datt.data() + i * d + off;
                    for (int64_t e = 0; e < dh; ++e) dvj[e] += wij * di[e];
                }
            });
            // softmax backward into ds (already includes the score scale)
            kernels::parallel_for(n, [&](int64_t i) {
                const T* wrow = wbase + i * n;
                const T* di = datt.data() + i * d + off;
                T* dsrow = ds.data() + i * n;
                T dot = T(0);
                for (int64_t j = 0; j <= i; ++j) {
                    const T* vj = lc.v.data() + j * d + off;
                    T dwij = T(0);
                    for (int64_t e = 0; e < dh; ++e) dwij += di[e] * vj[e];
                    dsrow[j] = dwij;
                    dot += dwij * wrow[j];
                }
                for (int64_t j = 0; j <= i; ++j)
                    dsrow[j] = (dsrow[j] - dot) * wrow[j] * inv_scale;
            });
            // dq[i] += ds[i,:] * k; dk[j] += ds[:,j]^T * q
            kernels::parallel_for(n, [&](int64_t i) {
                T* dqi = dq.data() + i * d + off;
                const T* dsrow = ds.data() + i * n;
                for (int64_t j = 0; j <= i; ++j) {
                    const T* kj = lc.k.data() + j * d + off;
                    for (int64_t e = 0; e < dh; ++e) dqi[e] += dsrow[j] * kj[e];
                }
            });
            kernels::parallel_for(n, [&](int64_t j) {
                T* dkj = dk.data() + j * d + off;
                for (int64_t i = j; i < n; ++i) {
                    const T dsij = ds[static_cast<size_t>(i * n + j)];
                    const T* qi = lc.q.data() + i * d + off;
                    for (int64_t e = 0; e < dh; ++e) dkj[e] += dsij * qi[e];
                }
            });
        }

        kernels::matmul(lc.h.data(), dq.data(), lg.w_q.v.data(), d, n, d, true, false, true);
        kernels::matmul(lc.h.data(), dk.data(), lg.w_k.v.data(), d, n, d, true, false, true);
        kernels::matmul(lc.h.data(), dv.data(), lg.w_v.v.data(), d, n, d, true, false, true);
        std::fill(dh_buf.begin(), dh_buf.end(), T(0));
        kernels::matmul(dq.data(), lw.w_q.v.data(), dh_buf.data(), n, d, d, false, true, true);
        kernels::matmul(dk.data(), lw.w_k.v.data(), dh_buf.data(), n, d, d, false, true, true);
        kernels::matmul(dv.data(), lw.w_v.v.data(), dh_buf.data(), n, d, d, false, true, true);
        rmsnorm_backward(lc.x_in.data(), lc.rms_in.data(), dh_buf.data(), dx.data(), n, d);
    }

    // embedding scatter-add, serial for a fixed accumulation order
    for (int64_t i = 0; i < n; ++i) {
        const T* dxi = dx.data() + i * d;
        T* te = grads.tok_emb.v.data() + static_cast<int64_t>(tokens[static_cast<size_t>(i)]) * d;
        T* pe = grads.pos_emb.v.data() + i * d;
        for (int64_t j = 0; j < d; ++j) {
            te[j] += dxi[j];
            pe[j] += dxi[j];
        }
    }
}

// ---------------------------------------------------------------------------
// sampling and generation

template <typename T>
int32_t sample_greedy(const T* logits, int32_t vocab) {
    int32_t best = 0;
    for (int32_t j = 1; j < vocab; ++j) {
        if (logits[j] > logits[best]) best = j;
    }
    return best;
}

template <typename T>
int32_t sample_multinomial(const T* logits, int32_t vocab, std::mt19937_64& rng) {
    double mx = -std::numeric_limits<double>::infinity();
    for (int32_t j = 0; j < vocab; ++j)
        mx = std::max(mx, static_cast<double>(logits[j]));
    std::vector<double> p(static_cast<size_t>(vocab));
    double denom = 0.0;
    for (int32_t j = 0; j < vocab; ++j) {
        p[static_cast<size_t>(j)] = std::exp(static_cast<double>(logits[j]) - mx);
        denom += p[static_cast<size_t>(j)];
    }
    const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53 * denom;
    double acc = 0.0;
    for (int32_t j = 0; j < vocab; ++j) {
        acc += p[static_cast<size_t>(j)];
        if (u < acc) return j;
    }
    return vocab - 1;  // rounding guard
}

template <typename T>
std::vector<int32_t> generate(const Weights<T>& w, const std::vector<int32_t>& context,
                              int64_t max_len, Sampler sampler, uint64_t seed) {
    const auto& c = w.cfg;
    if (context.empty()) throw ValidationError("generate: prompt must be non-empty");
    if (static_cast<int64_t>(context.size()) > c.context_len)
        throw ValidationError("generate: prompt longer than context_len");
    if (max_len < 0) throw ValidationError("generate: max_len must be non-negative");
    for (int32_t t : context) {
        if (t < 0 || t >= c.vocab) throw ValidationError("generate: token out of vocab range");
    }

    std::mt19937_64 rng(seed);
    std::vector<int32_t> out = context;
    Activations<T> acts;
    std::vector<int32_t> window;
    for (int64_t step = 0; step < max_len; ++step) {
        const int64_t len = static_cast<int64_t>(out.size());
        const int64_t start = std::max<int64_t>(0, len - c.context_len);
        window.assign(out.begin() + start, out.end());
        forward(w, window, acts);
        const T* last = acts.logits.data() + (acts.positions - 1) * c.vocab;
        const int32_t tok = sampler == Sampler::greedy
                                ? sample_greedy(last, c.vocab)
                                : sample_multinomial(last, c.vocab, rng);
        out.push_back(tok);
        if (tok == eos_id(c)) break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// training

template <typename T>
TrainMetrics train_step(Weights<T>& w, SgdState<T>& opt,
                        const std::vector<std::vector<int32_t>>& batch, double lr,
                        const ExtraLossFn& extra_fn) {
    const auto& c = w.cfg;
    if (batch.empty()) throw InsufficientDataError("train: empty batch");
    int64_t total_positions = 0;
    for (const auto& seq : batch) {
        if (seq.size() < 2) throw ValidationError("train: sequence needs at least 2 tokens");
        if (static_cast<int64_t>(seq.size()) - 1 > c.context_len)
            throw ValidationError("train: sequence longer than context_len + 1");
        total_positions += static_cast<int64_t>(seq.size()) - 1;
    }

    const int64_t b = static_cast<int64_t>(batch.size());
    std::vector<Activations<T>> acts(static_cast<size_t>(b));
    std::vector<std::vector<int32_t>> inputs(static_cast<size_t>(b));
    std::vector<std::vector<int32_t>> targets(static_cast<size_t>(b));
    std::vector<infotheory::LogProbRecord> recs(static_cast<size_t>(b));

    kernels::parallel_for(b, [&](int64_t i) {
        const auto& seq = batch[static_cast<size_t>(i)];
        inputs[static_cast<size_t>(i)].assign(seq.begin(), seq.end() - 1);
        targets[static_cast<size_t>(i)].assign(seq.begin() + 1, seq.end());
        forward(w, inputs[static_cast<size_t>(i)], acts[static_cast<size_t>(i)]);
        nll_loss(w, acts[static_cast<size_t>(i)], targets[static_cast<size_t>(i)],
                 &recs[static_cast<size_t>(i)]);
    });

    infotheory::LogProbRecord all;
    all.logp.reserve(static_cast<size_t>(total_positions));
    for (const auto& r : recs) all.logp.insert(all.logp.end(), r.logp.begin(), r.logp.end());
    const double ce = infotheory::model_conditional_entropy(all);
    if (!std::isfinite(ce)) throw NumericError("train: non-finite cross-entropy");

    ExtraLoss extra;
    if (extra_fn) extra = extra_fn(ce, all);

    const T coeff =
        static_cast<T>(extra.ce_grad_scale / static_cast<double>(total_positions));
    std::vector<Weights<T>> grads(static_cast<size_t>(b));
    kernels::parallel_for(b, [&](int64_t i) {
        grads[static_cast<size_t>(i)] = make_weights<T>(c);
        backward(w, acts[static_cast<size_t>(i)], inputs[static_cast<size_t>(i)],
                 targets[static_cast<size_t>(i)], coeff, grads[static_cast<size_t>(i)]);
    });

    // reduce per-item gradients in batch order, then apply the update
    Weights<T>& total = grads[0];
    std::vector<Tensor<T>*> dst;
    total.for_each_tensor([&](Tensor<T>& t) { dst.push_back(&t); });
    for (int64_t i = 1; i < b; ++i) {
        size_t ti = 0;
        grads[static_cast<size_t>(i)].for_each_tensor([&](const Tensor<T>& t) {
            auto& dv = dst[ti++]->v;
            for (size_t j = 0; j < dv.size(); ++j) dv[j] += t.v[j];
        });
    }

    size_t slot = 0;
    std::vector<Tensor<T>*> gts;
    total.for_each_tensor([&](Tensor<T>& t) { gts.push_back(&t); });
    if (opt.velocity.empty()) {
        opt.velocity.resize(gts.size());
        for (size_t i = 0; i < gts.size(); ++i) opt.velocity[i].assign(gts[i]->v.size(), T(0));
    }
    w.for_each_tensor([&](Tensor<T>& t) {
        const auto& g = gts[slot]->v;
        auto& vel = opt.velocity[slot];
        ++slot;
        if (opt.momentum != 0.0) {
            const T mu = static_cast<T>(opt.momentum);
            for (size_t j = 0; j < t.v.size(); ++j) {
                vel[j] = mu * vel[j] + g[j];
                t.v[j] -= static_cast<T>(lr) * vel[j];
            }
        } else {
            for (size_t j = 0; j < t.v.size(); ++j) t.v[j] -= static_cast<T>(lr) * g[j];
        }
    });

    TrainMetrics m;
    m.ce = ce;
    m.ppl = std::exp(ce);
    m.extra_value = extra.value;
    m.positions = total_positions;
    return m;
}

// ---------------------------------------------------------------------------
// checkpoint io

namespace {

void put_u16(std::ostream& os, uint16_t x) { os.write(reinterpret_cast<const char*>(&x), 2); }
void put_u32(std::ostream& os, uint32_t x) { os.write(reinterpret_cast<const char*>(&x), 4); }

uint16_t get_u16(std::istream& is) {
    uint16_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 2);
    return x;
}
uint32_t get_u32(std::istream& is) {
    uint32_t x = 0;
    is.read(reinterpret_cast<char*>(&x), 4);
    return x;
}

void write_tensor(std::ostream& os, const std::string& name, const std::vector<uint32_t>& dims,
                  const float* data, size_t count) {
    if (name.size() > 0xffff) throw ValidationError("checkpoint: tensor name too long");
    put_u16(os, static_cast<uint16_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    const uint8_t rank = static_cast<uint8_t>(dims.size());
    os.write(reinterpret_cast<const char*>(&rank), 1);
    for (uint32_t d : dims) put_u32(os, d);
    os.write(reinterpret_cast<const char*>(data), static_cast<std::streamsize>(count * 4));
}

struct RawTensor {
    std::vector<uint32_t> dims;
    std::vector<float> v;
};

}  // namespace

void save_checkpoint(const std::string& path, const Weights<float>& w) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("checkpoint: cannot open for writing: " + path);
    os.write("PHIM", 4);
    put_u32(os, 1);  // version

    uint32_t count = 1;  // meta
    w.for_each_tensor([&](const Tensor<float>&) { ++count; });
    put_u32(os, count);

    const float heads = static_cast<float>(w.cfg.heads);
    write_tensor(os, "meta", {1}, &heads, 1);
    w.for_each_tensor([&](const Tensor<float>& t) {
        write_tensor(os, t.name, t.dims, t.v.data(), t.v.size());
    });
    if (!os) throw IoError("checkpoint: write failed: " + path);
}

Weights<float> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("checkpoint: cannot open: " + path);
    char magic[4] = {};
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PHIM", 4) != 0)
        throw ValidationError("checkpoint: bad magic bytes");
    const uint32_t version = get_u32(is);
    if (!is || version != 1)
        throw ValidationError("checkpoint: unsupported version " + std::to_string(version));
    const uint32_t count = get_u32(is);
    if (!is) throw ValidationError("checkpoint: truncated header");

    std::vector<std::pair<std::string, RawTensor>> raw;
    for (uint32_t t = 0; t < count; ++t) {
        const uint16_t name_len = get_u16(is);
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        uint8_t rank = 0;
        is.read(reinterpret_cast<char*>(&rank), 1);
        if (!is) throw ValidationError("checkpoint: truncated tensor header");
        RawTensor rt;
        int64_t cells = 1;
        for (uint8_t r = 0; r < rank; ++r) {
            const uint32_t dim = get_u32(is);
            rt.dims.push_back(dim);
            cells *= dim;
        }
        if (!is || cells < 0 || cells > (int64_t(1) << 32))
            throw ValidationError("checkpoint: bad tensor shape for " + name);
        rt.v.resize(static_cast<size_t>(cells));
        is.read(reinterpret_cast<char*>(rt.v.data()),
                static_cast<std::streamsize>(rt.v.size() * 4));
        if (!is) throw ValidationError("checkpoint: truncated tensor data for " + name);
        raw.emplace_back(std::move(name), std::move(rt));
    }

    const auto find = [&](const std::string& name) -> RawTensor* {
        for (auto& [n, rt] : raw) {
            if (n == name) return &rt;
        }
        return nullptr;
    };

    RawTensor* tok = find("tok_emb");
    RawTensor* pos = find("pos_emb");
    RawTensor* out = find("out_proj");
    if (!tok || tok->dims.size() != 2) throw ValidationError("checkpoint: missing tok_emb");
    if (!pos || pos->dims.size() != 2) throw ValidationError("checkpoint: missing pos_emb");
    if (!out || out->dims.size() != 2) throw ValidationError("checkpoint: missing out_proj");

    ModelConfig cfg;
    cfg.vocab = static_cast<int32_t>(tok->dims[0]);
    cfg.dim = static_cast<int32_t>(tok->dims[1]);
    cfg.context_len = static_cast<int32_t>(pos->dims[0]);
    cfg.heads = 1;
    if (RawTensor* meta = find("meta"); meta && !meta->v.empty())
        cfg.heads = static_cast<int32_t>(meta->v[0]);
    int32_t layers = 0;
    while (find("layer" + std::to_string(layers) + ".w_q")) ++layers;
    cfg.layers = layers;
    validate(cfg);

    Weights<float> w = make_weights<float>(cfg);
    size_t consumed = 1;  // meta
    bool shape_ok = true;
    w.for_each_tensor([&](Tensor<float>& t) {
        RawTensor* rt = find(t.name);
        if (!rt || rt->dims != t.dims) {
            shape_ok = false;
            return;
        }
        t.v = rt->v;
        ++consumed;
    });
    if (!shape_ok) throw ValidationError("checkpoint: missing or misshapen tensor");
    if (consumed != raw.size())
        throw ValidationError("checkpoint: unexpected extra tensors");
    return w;
}

// ---------------------------------------------------------------------------
// tokenizer

std::vector<int32_t> bytes_to_tokens(const std::string& bytes) {
    std::vector<int32_t> out;
    out.reserve(bytes.size());
    for (unsigned char ch : bytes) out.push_back(static_cast<int32_t>(ch));
    return out;
}

std::string tokens_to_bytes(const std::vector<int32_t>& tokens) {
    std::string out;
    out.reserve(tokens.size());
    for (int32_t t : tokens) {
        if (t < 0 || t > kEosToken)
            throw ValidationError("tokens_to_bytes: token out of byte range");
        if (t == kEosToken) continue;
        out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
    }
    return out;
}

// ---------------------------------------------------------------------------
// explicit instantiations

template Weights<float> make_weights<float>(const ModelConfig&);
template Weights<double> make_weights<double>(const ModelConfig&);
template Weights<float> init_weights<float>(const ModelConfig&, uint64_t);
template Weights<double> init_weights<double>(const ModelConfig&, uint64_t);
template void forward<float>(const Weights<float>&, const std::vector<int32_t>&,
                             Activations<float>&);
template void forward<double>(const Weights<double>&, const std::vector<int32_t>&,
                              Activations<double>&);
template double nll_loss<float>(const Weights<float>&, const Activations<float>&,
                                const std::vector<int32_t>&, infotheory::LogProbRecord*);
template double nll_loss<double>(const Weights<double>&, const Activations<double>&,
                                 const std::vector<int32_t>&, infotheory::LogProbRecord*);
template void backward<float>(const Weights<float>&, const Activations<float>&,
                              const std::vector<int32_t>&, const std::vector<int32_t>&, float,
                              Weights<float>&);
template void backward<double>(const Weights<double>&, const Activations<double>&,
                               const std::vector<int32_t>&, const std::vector<int32_t>&, double,
                               Weights<double>&);
template int32_t sample_greedy<float>(const float*, int32_t);
template int32_t sample_greedy<double>(const double*, int32_t);
template int32_t sample_multinomial<float>(const float*, int32_t, std::mt19937_64&);
template int32_t sample_multinomial<double>(const double*, int32_t, std::mt19937_64&);
template std::vector<int32_t> generate<float>(const Weights<float>&, const std::vector<int32_t>&,
                                              int64_t, Sampler, uint64_t);
template std::vector<int32_t> generate<double>(const Weights<double>&,
                                               const std::vector<int32_t>&, int64_t, Sampler,
                                               uint64_t);
template TrainMetrics train_step<float>(Weights<float>&, SgdState<float>&,
                                        const std::vector<std::vector<int32_t>>&, double,
                                        const ExtraLossFn&);
template TrainMetrics train_step<double>(Weights<double>&, SgdState<double>&,
                                         const std::vector<std::vector<int32_t>>&, double,
                                         const ExtraLossFn&);

}  // namespace phimesa::lm
