// Command-line front end: train (experiment loop + run directory), phi
// (bipartition search over a trajectory CSV), generate (autoregressive
// sampling from a checkpoint), analyze (run-log statistics + scatter plot).
// Exit codes: 0 success, 2 invalid input/config/data/io, 3 numeric failure.

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "phimesa/analysis.hpp"
#include "phimesa/common.hpp"
#include "phimesa/config.hpp"
#include "phimesa/lm.hpp"
#include "phimesa/mesa.hpp"
#include "phimesa/phi.hpp"

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

// JSON has no NaN/inf literals; encode them as strings instead of null.
ordered_json jnum(double v) {
    if (std::isfinite(v)) return v;
    if (std::isnan(v)) return "nan";
    return v > 0 ? "inf" : "-inf";
}

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw phimesa::IoError("cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw phimesa::IoError("cannot open for writing: " + path);
    os << content;
    if (!os) throw phimesa::IoError("write failed: " + path);
}

// Structural UTF-8 validation; invalid bytes become U+FFFD.
std::string sanitize_utf8(const std::string& s) {
    static const char* kReplacement = "\xEF\xBF\xBD";
    std::string out;
    out.reserve(s.size());
    const size_t n = s.size();
    size_t i = 0;
    while (i < n) {
        const unsigned char c = static_cast<unsigned char>(s[i]);
        if (c < 0x80) {
            out.push_back(static_cast<char>(c));
            ++i;
            continue;
        }
        size_t need = 0;
        unsigned char lo = 0x80;
        unsigned char hi = 0xBF;
        if (c >= 0xC2 && c <= 0xDF) {
            need = 1;
        } else if (c == 0xE0) {
            need = 2;
            lo = 0xA0;
        } else if (c >= 0xE1 && c <= 0xEC) {
            need = 2;
        } else if (c == 0xED) {
            need = 2;
            hi = 0x9F;
        } else if (c >= 0xEE && c <= 0xEF) {
            need = 2;
        } else if (c == 0xF0) {
            need = 3;
            lo = 0x90;
        } else if (c >= 0xF1 && c <= 0xF3) {
            need = 3;
        } else if (c == 0xF4) {
            need = 3;
            hi = 0x8F;
        } else {
            out += kReplacement;
            ++i;
            continue;
        }
        bool ok = i + need < n;
        for (size_t j = 1; ok && j <= need; ++j) {
            const unsigned char cc = static_cast<unsigned char>(s[i + j]);
            const unsigned char l = (j == 1) ? lo : 0x80;
            const unsigned char h = (j == 1) ? hi : 0xBF;
            if (cc < l || cc > h) ok = false;
        }
        if (ok) {
            out.append(s, i, need + 1);
            i += need + 1;
        } else {
            out += kReplacement;
            ++i;
        }
    }
    return out;
}

int cmd_train(const std::string& config_path, const std::string& out_override) {
    phimesa::config::RunConfig cfg = phimesa::config::load_run_config(config_path);
    if (!out_override.empty()) cfg.run_dir = out_override;

    const std::string corpus = read_file(cfg.corpus_path);
    const phimesa::mesa::RunResult result =
        phimesa::mesa::run_experiment(corpus, cfg.model, cfg.objective, cfg.train);

    fs::create_directories(cfg.run_dir);
    phimesa::mesa::write_runlog_csv(cfg.run_dir + "/log.csv", result.log);
    phimesa::lm::save_checkpoint(cfg.run_dir + "/model.ckpt", result.weights);
    write_file(cfg.run_dir + "/config.resolved.toml", phimesa::config::resolved_toml(cfg));

    // Measured wall times live in a sidecar so log.csv stays byte-identical
    // across reruns of the same config.
    std::ostringstream timing;
    timing << "step,wall_ms\n";
    for (size_t i = 0; i < result.batch_wall_ms.size(); ++i)
        timing << i << ',' << result.batch_wall_ms[i] << "\n";
    write_file(cfg.run_dir + "/timing.csv", timing.str());

    const auto& records = result.log.records;
    std::cout << "wrote " << cfg.run_dir << ": " << records.size() << " batches";
    if (!records.empty()) {
        const auto& last = records.back();
        std::cout << ", final ce " << phimesa::format_double(last.ce_nats) << " nats, ppl "
                  << phimesa::format_double(last.ppl) << ", phi_hat "
                  << phimesa::format_double(last.phi_hat);
    }
    std::cout << "\n";
    return 0;
}

int cmd_phi(const std::string& trajectory_path, int32_t tau, const std::string& search,
            int64_t budget, uint64_t seed, const std::string& norm_name) {
    const phimesa::phi::StateTrajectory t = phimesa::phi::read_trajectory_csv(trajectory_path);

    phimesa::phi::Normalization norm;
    if (norm_name == "none") {
        norm = phimesa::phi::Normalization::none;
    } else if (norm_name == "min-part-entropy" || norm_name == "min_part_entropy") {
        norm = phimesa::phi::Normalization::min_part_entropy;
    } else {
        throw phimesa::ValidationError("--norm must be none or min-part-entropy");
    }

    phimesa::phi::MibResult mib;
    if (search == "exhaustive") {
        mib = phimesa::phi::mib_exhaustive(t, tau, norm);
    } else if (search == "stochastic") {
        mib = phimesa::phi::mib_stochastic(t, tau, seed, budget, norm);
    } else {
        throw phimesa::ValidationError("--search must be exhaustive or stochastic");
    }

    ordered_json out;
    out["phi"] = jnum(mib.estimate.phi);
    out["mi_whole"] = jnum(mib.estimate.whole_mi);
    out["mi_parts"] = {jnum(mib.estimate.part_mi[0]), jnum(mib.estimate.part_mi[1])};
    out["cut"] = mib.cut.part2_mask;
    out["tau"] = tau;
    out["search"] = search;
    out["evaluated_cuts"] = mib.evaluated_cuts;
    std::cout << out.dump() << "\n";
    return 0;
}

int cmd_generate(const std::string& checkpoint_path, const std::string& prompt, int64_t max_len,
                 const std::string& sampler_name, uint64_t seed) {
    const phimesa::lm::Weights<float> w = phimesa::lm::load_checkpoint(checkpoint_path);

    phimesa::lm::Sampler sampler;
    if (sampler_name == "greedy") {
        sampler = phimesa::lm::Sampler::greedy;
    } else if (sampler_name == "multinomial") {
        sampler = phimesa::lm::Sampler::multinomial;
    } else {
        throw phimesa::ValidationError("--sampler must be greedy or multinomial");
    }

    const std::vector<int32_t> context = phimesa::lm::bytes_to_tokens(prompt);
    const std::vector<int32_t> tokens =
        phimesa::lm::generate(w, context, max_len, sampler, seed);
    std::cout << sanitize_utf8(phimesa::lm::tokens_to_bytes(tokens)) << "\n";
    return 0;
}

int cmd_analyze(const std::string& log_path, int32_t lag, const std::string& svg_path) {
    const phimesa::mesa::RunLog log = phimesa::mesa::read_runlog_csv(log_path);
    phimesa::mesa::validate(log);

    std::vector<double> ln_ppl;
    std::vector<double> phi_hat;
    ln_ppl.reserve(log.records.size());
    phi_hat.reserve(log.records.size());
    for (const auto& r : log.records) {
        ln_ppl.push_back(std::log(r.ppl));
        phi_hat.push_back(r.phi_hat);
    }

    const phimesa::analysis::OlsFit fit = phimesa::analysis::ols(ln_ppl, phi_hat);
    const double r = phimesa::analysis::pearson(ln_ppl, phi_hat);
    // Does the mesa metric predict the base metric?
    const phimesa::analysis::GrangerResult gr = phimesa::analysis::granger(phi_hat, ln_ppl, lag);

    write_file(svg_path, phimesa::analysis::scatter_svg(ln_ppl, phi_hat, fit));

    ordered_json out;
    out["slope"] = jnum(fit.slope);
    out["slope_se"] = jnum(fit.slope_se);
    out["intercept"] = jnum(fit.intercept);
    out["intercept_se"] = jnum(fit.intercept_se);
    out["pearson_r"] = jnum(r);
    out["granger_f"] = jnum(gr.f);
    out["granger_p"] = jnum(gr.p);
    out["lag"] = gr.lag;
    out["n"] = fit.n;
    std::cout << out.dump() << "\n";
    return 0;
}

int guarded(const std::function<int()>& fn) {
    try {
        return fn();
    } catch (const phimesa::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const phimesa::ValidationError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const phimesa::IoError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "byte-level transformer training with an integrated-information mesa metric"};
    app.require_subcommand(1);

    auto* train = app.add_subcommand("train", "run a training experiment from a config file");
    std::string config_path;
    std::string out_override;
    train->add_option("--config", config_path, "TOML config path")->required();
    train->add_option("--out", out_override, "run directory (overrides [out] run_dir)");

    auto* phi = app.add_subcommand("phi", "bipartition search over a trajectory CSV");
    std::string trajectory_path;
    int32_t tau = 1;
    std::string search = "exhaustive";
    int64_t budget = 256;
    uint64_t phi_seed = 7;
    std::string norm = "none";
    phi->add_option("--trajectory", trajectory_path, "trajectory CSV path")->required();
    phi->add_option("--tau", tau, "transition lag (default 1)");
    phi->add_option("--search", search, "exhaustive or stochastic");
    phi->add_option("--budget", budget, "stochastic search evaluation budget");
    phi->add_option("--seed", phi_seed, "stochastic search seed");
    phi->add_option("--norm", norm, "cut normalization: none or min-part-entropy");

    auto* gen = app.add_subcommand("generate", "sample a continuation from a checkpoint");
    std::string checkpoint_path;
    std::string prompt;
    int64_t max_len = 64;
    std::string sampler = "greedy";
    uint64_t gen_seed = 0;
    gen->add_option("--checkpoint", checkpoint_path, "checkpoint path")->required();
    gen->add_option("--prompt", prompt, "prompt text")->required();
    gen->add_option("--max-len", max_len, "maximum tokens to generate");
    gen->add_option("--sampler", sampler, "greedy or multinomial");
    gen->add_option("--seed", gen_seed, "sampling seed");

    auto* analyze = app.add_subcommand("analyze", "regression and causality stats over a run log");
    std::string log_path;
    int32_t lag = 1;
    std::string svg_path = "scatter.svg";
    analyze->add_option("--log", log_path, "run log CSV path")->required();
    analyze->add_option("--lag", lag, "Granger lag order (default 1)");
    analyze->add_option("--svg", svg_path, "scatter plot output path");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }

    if (app.got_subcommand(train))
        return guarded([&] { return cmd_train(config_path, out_override); });
    if (app.got_subcommand(phi))
        return guarded([&] { return cmd_phi(trajectory_path, tau, search, budget, phi_seed, norm); });
    if (app.got_subcommand(gen))
        return guarded([&] { return cmd_generate(checkpoint_path, prompt, max_len, sampler, gen_seed); });
    if (app.got_subcommand(analyze))
        return guarded([&] { return cmd_analyze(log_path, lag, svg_path); });
    return 1;
}
