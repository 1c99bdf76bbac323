#pragma once

// Couples the language model to the integration estimator: token streams are
// re-expressed as discrete channel trajectories, each training batch gets a
// minimum-information-bipartition estimate, and the training loop can either
// just log that mesa metric or fold a differentiable surrogate of it into the
// loss. Also owns the per-batch run log and its CSV form.

#include <cstdint>
#include <string>
#include <vector>

#include "phimesa/infotheory.hpp"
#include "phimesa/lm.hpp"
#include "phimesa/phi.hpp"

namespace phimesa::mesa {

enum class EncodingKind { byte_bits, token_mod_k };
enum class Mode { track, surrogate };

struct EncodingConfig {
    EncodingKind kind = EncodingKind::byte_bits;
    int32_t mod_k = 16;              // token_mod_k only
    int32_t vocab = lm::kByteVocab;  // fixes the EOS id and channel alphabets
};

struct ObjectiveConfig {
    Mode mode = Mode::track;
    double lambda = 1.0;
    int32_t tau = 1;
    EncodingConfig encoding;
    phi::SearchKind mib = phi::SearchKind::exhaustive;
    int64_t mib_budget = 256;
    uint64_t mib_seed = 7;
    phi::Normalization normalization = phi::Normalization::none;
    bool drop_parts = false;  // surrogate ignores the part-MI constant
};

void validate(const ObjectiveConfig& c);

// Token stream -> channel trajectory. byte_bits: 8 binary channels, MSB
// first; token_mod_k: channels (token mod k, token div k). EOS rows are kept
// in place but flagged invalid so transition statistics skip them.
phi::StateTrajectory encode_channels(const std::vector<int32_t>& tokens,
                                     const EncodingConfig& enc);

// Encodes every sequence, pools transitions within sequences only, and runs
// the configured bipartition search over the pooled table.
phi::MibResult batch_phi(const std::vector<std::vector<int32_t>>& batch,
                         const ObjectiveConfig& cfg);

// Differentiable-path estimate: marginal entropy of the realized tokens minus
// the model's conditional entropy, optionally minus a fixed part-MI constant
// (no gradient flows through either subtrahend). `tokens` must align one to
// one with the log-prob records.
double phi_surrogate(const infotheory::LogProbRecord& rec, const std::vector<int32_t>& tokens,
                     int32_t alphabet, bool drop_parts, double part_mi_sum = 0.0);

// track: loss = ce. surrogate: loss = ce - lambda * phi.
double combined_objective(double ce, double phi, const ObjectiveConfig& cfg);

struct TrainConfig {
    double learn_rate = 0.5;
    double momentum = 0.0;
    int32_t epochs = 1;
    int32_t batch_size = 8;
    uint64_t seed = 1;
};

void validate(const TrainConfig& c);

struct RunRecord {
    int64_t step = 0;
    double ce_nats = 0.0;
    double ppl = 1.0;
    double phi_hat = 0.0;
    double mi_whole = 0.0;
    double mi_part1 = 0.0;
    double mi_part2 = 0.0;
    uint32_t cut = 0;     // canonical part-2 bitmask of the batch MIB
    int64_t wall_ms = 0;  // always 0 in files; measured timings live elsewhere
};

struct RunLog {
    std::vector<RunRecord> records;
};

// Checks the per-record identities: steps count up from 0, ppl = exp(ce)
// within 1e-9 relative, and phi_hat = mi_whole - mi_part1 - mi_part2 exactly.
void validate(const RunLog& log);

// CSV with header step,ce_nats,ppl,phi_hat,mi_whole,mi_part1,mi_part2,cut,wall_ms
// and shortest round-trip double formatting.
void write_runlog_csv(const std::string& path, const RunLog& log);
RunLog read_runlog_csv(const std::string& path);

struct RunResult {
    RunLog log;
    lm::Weights<float> weights;
    std::vector<int64_t> batch_wall_ms;  // measured per batch, same order as records
};

// Splits the corpus into non-overlapping context-length byte chunks (partial
// chunk and partial batch dropped), then trains over them for the configured
// number of epochs. Per batch: the plug-in MIB supplies the cut and part MIs,
// mi_whole = marginal entropy of the batch targets - batch CE, and
// phi_hat = mi_whole - mi_part1 - mi_part2 is logged (and, in surrogate mode,
// folded into the loss). Fully deterministic given the configs.
RunResult run_experiment(const std::string& corpus, const lm::ModelConfig& mc,
                         const ObjectiveConfig& oc, const TrainConfig& tc);

}  // namespace phimesa::mesa
