// Deterministic synthetic training corpus: seeded English-like prose that
// alternates between a plain low-vocabulary style and a denser survey style
// every few kilobytes. The alternation gives consecutive training batches
// correlated difficulty, which is what the run-log causality statistics need
// to have something to detect. ASCII only, no external text ingested.

#include <cstdint>
#include <fstream>
#include <iostream>
#include <random>
#include <string>
#include <vector>

#include "CLI11.hpp"

namespace {

struct Style {
    std::vector<const char*> nouns;
    std::vector<const char*> verbs;
    std::vector<const char*> adjectives;
    std::vector<const char*> tails;  // optional sentence endings
    int min_sentences = 3;
    int max_sentences = 7;
};

Style plain_style() {
    Style s;
    s.nouns = {"river", "road",  "field", "house", "boy",   "girl", "dog",  "horse",
               "town",  "tree",  "sky",   "rain",  "sun",   "wind", "stone", "bread",
               "fire",  "door",  "hill",  "bird",  "cart",  "well", "lamp", "boat"};
    s.verbs = {"walked past", "stood by",   "looked at", "came to",   "went down",
               "sat near",    "spoke of",   "waited by", "turned to", "called to",
               "moved past",  "stayed near"};
    s.adjectives = {"old", "small", "quiet", "grey", "long", "cold", "warm", "dark", "low"};
    s.tails = {"in the morning", "at dusk", "for a while", "as before", "once more",
               "without a word"};
    s.min_sentences = 4;
    s.max_sentences = 8;
    return s;
}

Style survey_style() {
    Style s;
    s.nouns = {"measurement", "apparatus",   "gradient",   "sequence",  "estimate",
               "partition",   "trajectory",  "observation", "interval",  "coefficient",
               "residual",    "hypothesis",  "procedure",  "criterion", "distribution",
               "perturbation", "correlation", "threshold",  "ensemble",  "recording",
               "instrument",  "calibration", "anomaly",    "baseline"};
    s.verbs = {"converges toward",  "correlates with",   "diverges from", "depends upon",
               "is bounded by",     "fluctuates around", "is refined by", "is compared against",
               "accumulates over",  "is projected onto", "decays toward", "is sampled from"};
    s.adjectives = {"empirical", "systematic", "marginal",  "asymptotic", "normalized",
                    "composite", "iterative",  "stationary", "aggregate",  "residual"};
    s.tails = {"under repeated trials",      "within the stated tolerance",
               "across successive intervals", "after the second pass",
               "despite the reduced budget",  "in the pooled records"};
    s.min_sentences = 3;
    s.max_sentences = 6;
    return s;
}

class Prose {
  public:
    explicit Prose(uint64_t seed) : rng_(seed) {}

    std::string sentence(const Style& s) {
        std::string out = "The ";
        if (chance(2)) out += pick(s.adjectives), out += ' ';
        out += pick(s.nouns);
        out += ' ';
        out += pick(s.verbs);
        out += " the ";
        if (chance(3)) out += pick(s.adjectives), out += ' ';
        out += pick(s.nouns);
        if (chance(2)) {
            out += ' ';
            out += pick(s.tails);
        }
        if (chance(4)) {
            out += ", and the ";
            out += pick(s.nouns);
            out += ' ';
            out += pick(s.verbs);
            out += " the ";
            out += pick(s.nouns);
        }
        out += '.';
        return out;
    }

    std::string paragraph(const Style& s) {
        const int count =
            s.min_sentences + static_cast<int>(next() % static_cast<uint64_t>(
                                                            s.max_sentences - s.min_sentences + 1));
        std::string out;
        for (int i = 0; i < count; ++i) {
            if (i > 0) out += ' ';
            out += sentence(s);
        }
        out += "\n\n";
        return out;
    }

  private:
    uint64_t next() { return rng_(); }
    bool chance(uint64_t one_in) { return next() % one_in == 0; }
    const char* pick(const std::vector<const char*>& v) {
        return v[static_cast<size_t>(next() % v.size())];
    }

    std::mt19937_64 rng_;
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"generate a deterministic synthetic text corpus"};
    std::string out_path = "corpus.txt";
    int64_t total_bytes = 200000;
    int64_t section_bytes = 6144;
    uint64_t seed = 42;
    app.add_option("--out", out_path, "output path");
    app.add_option("--bytes", total_bytes, "approximate corpus size in bytes");
    app.add_option("--section-bytes", section_bytes, "style alternation period in bytes");
    app.add_option("--seed", seed, "generator seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e);
    }
    if (total_bytes < 1 || section_bytes < 256) {
        std::cerr << "error: --bytes must be positive and --section-bytes at least 256\n";
        return 2;
    }

    const Style styles[2] = {plain_style(), survey_style()};
    Prose prose(seed);
    std::string corpus;
    corpus.reserve(static_cast<size_t>(total_bytes) + 1024);
    int style_idx = 0;
    int64_t section_end = section_bytes;
    while (static_cast<int64_t>(corpus.size()) < total_bytes) {
        corpus += prose.paragraph(styles[style_idx]);
        if (static_cast<int64_t>(corpus.size()) >= section_end) {
            style_idx = 1 - style_idx;
            section_end += section_bytes;
        }
    }
    corpus.resize(static_cast<size_t>(total_bytes));

    std::ofstream os(out_path, std::ios::binary);
    if (!os) {
        std::cerr << "error: cannot open " << out_path << "\n";
        return 2;
    }
    os << corpus;
    if (!os) {
        std::cerr << "error: write failed for " << out_path << "\n";
        return 2;
    }
    std::cout << "wrote " << out_path << " (" << corpus.size() << " bytes)\n";
    return 0;
}
