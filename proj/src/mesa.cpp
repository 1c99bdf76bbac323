#include "phimesa/mesa.hpp"

#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>

#include "phimesa/common.hpp"

namespace phimesa::mesa {

namespace {

const char* kRunLogHeader = "step,ce_nats,ppl,phi_hat,mi_whole,mi_part1,mi_part2,cut,wall_ms";

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(c);
        }
    }
    out.push_back(cur);
    return out;
}

double parse_double(const std::string& s, int64_t line_no) {
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ValidationError("runlog: bad number '" + s + "' on line " + std::to_string(line_no));
    return v;
}

int64_t parse_int(const std::string& s, int64_t line_no) {
    int64_t v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ValidationError("runlog: bad integer '" + s + "' on line " + std::to_string(line_no));
    return v;
}

}  // namespace

// ---------------------------------------------------------------------------
// configs

void validate(const ObjectiveConfig& c) {
    if (c.lambda < 0.0) throw ValidationError("mesa: lambda must be non-negative");
    if (c.tau < 1) throw ValidationError("mesa: tau must be at least 1");
    if (c.mib == phi::SearchKind::stochastic && c.mib_budget < 1)
        throw ValidationError("mesa: mib_budget must be at least 1 for stochastic search");
    if (c.encoding.vocab < 2) throw ValidationError("mesa: encoding vocab must be at least 2");
    if (c.encoding.kind == EncodingKind::token_mod_k && c.encoding.mod_k < 2)
        throw ValidationError("mesa: mod_k must be at least 2");
}

void validate(const TrainConfig& c) {
    if (!(c.learn_rate >= 0.0)) throw ValidationError("train: learn_rate must be non-negative");
    if (c.momentum < 0.0 || c.momentum >= 1.0)
        throw ValidationError("train: momentum must be in [0, 1)");
    if (c.epochs < 1) throw ValidationError("train: epochs must be at least 1");
    if (c.batch_size < 1) throw ValidationError("train: batch_size must be at least 1");
}

// ---------------------------------------------------------------------------
// channel encodings

phi::StateTrajectory encode_channels(const std::vector<int32_t>& tokens,
                                     const EncodingConfig& enc) {
    if (tokens.empty()) throw ValidationError("encode: empty token sequence");
    const int32_t eos = enc.vocab - 1;
    phi::StateTrajectory t;
    t.rows = static_cast<int64_t>(tokens.size());

    if (enc.kind == EncodingKind::byte_bits) {
        t.channels = 8;
        t.alphabet_sizes.assign(8, 2);
        t.values.assign(static_cast<size_t>(t.rows) * 8, 0);
        t.row_valid.assign(static_cast<size_t>(t.rows), 1);
        for (int64_t i = 0; i < t.rows; ++i) {
            const int32_t tok = tokens[static_cast<size_t>(i)];
            if (tok == eos) {
                t.row_valid[static_cast<size_t>(i)] = 0;  // all-zero sentinel row
                continue;
            }
            if (tok < 0 || tok > 255)
                throw ValidationError("encode: token " + std::to_string(tok) +
                                      " outside byte range");
            for (int32_t b = 0; b < 8; ++b)
                t.values[static_cast<size_t>(i * 8 + b)] = (tok >> (7 - b)) & 1;
        }
    } else {
        const int32_t k = enc.mod_k;
        if (k < 2) throw ValidationError("encode: mod_k must be at least 2");
        t.channels = 2;
        t.alphabet_sizes = {k, (enc.vocab + k - 1) / k};
        t.values.assign(static_cast<size_t>(t.rows) * 2, 0);
        t.row_valid.assign(static_cast<size_t>(t.rows), 1);
        for (int64_t i = 0; i < t.rows; ++i) {
            const int32_t tok = tokens[static_cast<size_t>(i)];
            if (tok < 0 || tok >= enc.vocab)
                throw ValidationError("encode: token " + std::to_string(tok) +
                                      " outside vocab range");
            t.values[static_cast<size_t>(i * 2)] = tok % k;
            t.values[static_cast<size_t>(i * 2 + 1)] = tok / k;
            if (tok == eos) t.row_valid[static_cast<size_t>(i)] = 0;
        }
    }
    phi::validate(t);
    return t;
}

// ---------------------------------------------------------------------------
// batch metrics

phi::MibResult batch_phi(const std::vector<std::vector<int32_t>>& batch,
                         const ObjectiveConfig& cfg) {
    validate(cfg);
    if (batch.empty()) throw InsufficientDataError("batch_phi: empty batch");

    bool first = true;
    phi::TransitionTable table;
    for (const auto& seq : batch) {
        const phi::StateTrajectory t = encode_channels(seq, cfg.encoding);
        if (first) {
            table = phi::count_transitions(t, cfg.tau);
            first = false;
        } else {
            phi::accumulate_transitions(table, t);
        }
    }
    if (table.pair_total == 0)
        throw InsufficientDataError("batch_phi: no transition at lag " +
                                    std::to_string(cfg.tau));

    if (cfg.mib == phi::SearchKind::exhaustive)
        return phi::mib_exhaustive(table, cfg.normalization);
    return phi::mib_stochastic(table, cfg.mib_seed, cfg.mib_budget, cfg.normalization);
}

double phi_surrogate(const infotheory::LogProbRecord& rec, const std::vector<int32_t>& tokens,
                     int32_t alphabet, bool drop_parts, double part_mi_sum) {
    if (rec.logp.size() != tokens.size())
        throw ValidationError("phi_surrogate: records and tokens must align");
    const double h = infotheory::marginal_entropy_empirical(tokens, alphabet);
    const double ce = infotheory::model_conditional_entropy(rec);
    if (drop_parts) return h - ce;
    return h - ce - part_mi_sum;
}

double combined_objective(double ce, double phi, const ObjectiveConfig& cfg) {
    if (cfg.mode == Mode::track) return ce;
    return ce - cfg.lambda * phi;
}

// ---------------------------------------------------------------------------
// run log

void validate(const RunLog& log) {
    for (size_t i = 0; i < log.records.size(); ++i) {
        const RunRecord& r = log.records[i];
        if (r.step != static_cast<int64_t>(i))
            throw ValidationError("runlog: step " + std::to_string(r.step) +
                                  " out of sequence at row " + std::to_string(i));
        const double expected_ppl = std::exp(r.ce_nats);
        if (std::abs(r.ppl - expected_ppl) > 1e-9 * std::max(1.0, std::abs(expected_ppl)))
            throw ValidationError("runlog: ppl != exp(ce) at step " + std::to_string(r.step));
        if (r.phi_hat != r.mi_whole - r.mi_part1 - r.mi_part2)
            throw ValidationError("runlog: phi decomposition broken at step " +
                                  std::to_string(r.step));
    }
}

void write_runlog_csv(const std::string& path, const RunLog& log) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw IoError("runlog: cannot open for writing: " + path);
    os << kRunLogHeader << "\n";
    for (const RunRecord& r : log.records) {
        os << r.step << ',' << format_double(r.ce_nats) << ',' << format_double(r.ppl) << ','
           << format_double(r.phi_hat) << ',' << format_double(r.mi_whole) << ','
           << format_double(r.mi_part1) << ',' << format_double(r.mi_part2) << ',' << r.cut
           << ',' << r.wall_ms << "\n";
    }
    if (!os) throw IoError("runlog: write failed: " + path);
}

RunLog read_runlog_csv(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("runlog: cannot open: " + path);
    std::string line;
    if (!std::getline(is, line)) throw ValidationError("runlog: empty file: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();

    const std::vector<std::string> want = split_csv(kRunLogHeader);
    const std::vector<std::string> got = split_csv(line);
    for (const auto& col : want) {
        bool found = false;
        for (const auto& g : got) {
            if (g == col) {
                found = true;
                break;
            }
        }
        if (!found) throw ValidationError("runlog: missing column '" + col + "'");
    }
    if (got != want)
        throw ValidationError("runlog: header columns out of order or unknown");

    RunLog log;
    int64_t line_no = 1;
    while (std::getline(is, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const std::vector<std::string> f = split_csv(line);
        if (f.size() != want.size())
            throw ValidationError("runlog: expected " + std::to_string(want.size()) +
                                  " fields on line " + std::to_string(line_no));
        RunRecord r;
        r.step = parse_int(f[0], line_no);
        r.ce_nats = parse_double(f[1], line_no);
        r.ppl = parse_double(f[2], line_no);
        r.phi_hat = parse_double(f[3], line_no);
        r.mi_whole = parse_double(f[4], line_no);
        r.mi_part1 = parse_double(f[5], line_no);
        r.mi_part2 = parse_double(f[6], line_no);
        r.cut = static_cast<uint32_t>(parse_int(f[7], line_no));
        r.wall_ms = parse_int(f[8], line_no);
        log.records.push_back(r);
    }
    return log;
}

// ---------------------------------------------------------------------------
// experiment loop

RunResult run_experiment(const std::string& corpus, const lm::ModelConfig& mc,
                         const ObjectiveConfig& oc, const TrainConfig& tc) {
    lm::validate(mc);
    validate(oc);
    validate(tc);
    if (corpus.empty()) throw InsufficientDataError("run: corpus is empty");

    const std::vector<int32_t> all = lm::bytes_to_tokens(corpus);
    const int64_t chunk_len = mc.context_len;
    const int64_t chunks = static_cast<int64_t>(all.size()) / chunk_len;
    if (chunks < tc.batch_size)
        throw InsufficientDataError("run: corpus smaller than one batch (" +
                                    std::to_string(chunks) + " chunks of " +
                                    std::to_string(chunk_len) + " bytes, batch size " +
                                    std::to_string(tc.batch_size) + ")");

    std::vector<std::vector<int32_t>> data(static_cast<size_t>(chunks));
    for (int64_t i = 0; i < chunks; ++i)
        data[static_cast<size_t>(i)].assign(all.begin() + i * chunk_len,
                                            all.begin() + (i + 1) * chunk_len);

    RunResult result;
    result.weights = lm::init_weights<float>(mc, tc.seed);
    lm::SgdState<float> opt;
    opt.momentum = tc.momentum;

    const int64_t batches_per_epoch = chunks / tc.batch_size;
    int64_t step = 0;
    std::vector<std::vector<int32_t>> batch(static_cast<size_t>(tc.batch_size));
    std::vector<int32_t> targets;

    for (int32_t epoch = 0; epoch < tc.epochs; ++epoch) {
        for (int64_t bi = 0; bi < batches_per_epoch; ++bi) {
            const auto t0 = std::chrono::steady_clock::now();
            for (int32_t s = 0; s < tc.batch_size; ++s)
                batch[static_cast<size_t>(s)] = data[static_cast<size_t>(bi * tc.batch_size + s)];

            const phi::MibResult mib = batch_phi(batch, oc);

            targets.clear();
            for (const auto& seq : batch) targets.insert(targets.end(), seq.begin() + 1, seq.end());

            RunRecord rec;
            const auto extra_fn = [&](double ce, const infotheory::LogProbRecord& recs) {
                rec.mi_whole =
                    infotheory::marginal_entropy_empirical(targets, mc.vocab) - ce;
                rec.mi_part1 = mib.estimate.part_mi[0];
                rec.mi_part2 = mib.estimate.part_mi[1];
                rec.phi_hat = rec.mi_whole - rec.mi_part1 - rec.mi_part2;
                rec.cut = mib.cut.part2_mask;
                lm::ExtraLoss ex;
                if (oc.mode == Mode::surrogate) {
                    const double part_sum = rec.mi_part1 + rec.mi_part2;
                    const double surr =
                        phi_surrogate(recs, targets, mc.vocab, oc.drop_parts, part_sum);
                    ex.value = -oc.lambda * surr;
                    // loss = (1 + lambda) * ce - lambda * (entropy + constants)
                    ex.ce_grad_scale = 1.0 + oc.lambda;
                }
                return ex;
            };

            const lm::TrainMetrics m =
                lm::train_step(result.weights, opt, batch, tc.learn_rate, extra_fn);

            rec.step = step;
            rec.ce_nats = m.ce;
            rec.ppl = m.ppl;
            rec.wall_ms = 0;  // kept constant so identical runs produce identical files
            result.log.records.push_back(rec);
            const auto t1 = std::chrono::steady_clock::now();
            result.batch_wall_ms.push_back(
                std::chrono::duration_cast<std::chrono::milliseconds>(t1 - t0).count());
            ++step;
        }
    }
    validate(result.log);
    return result;
}

}  // namespace phimesa::mesa
