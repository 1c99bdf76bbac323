#include "phimesa/config.hpp"

#include <charconv>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "phimesa/common.hpp"

namespace phimesa::config {

namespace {

struct RawValue {
    std::string text;
    bool quoted = false;
};

using Section = std::map<std::string, RawValue>;

std::string trim(const std::string& s) {
    size_t a = 0;
    size_t b = s.size();
    while (a < b && (s[a] == ' ' || s[a] == '\t')) ++a;
    while (b > a && (s[b - 1] == ' ' || s[b - 1] == '\t' || s[b - 1] == '\r')) --b;
    return s.substr(a, b - a);
}

[[noreturn]] void fail(const std::string& where, const std::string& what) {
    throw ValidationError("config: " + where + ": " + what);
}

// Splits the line into key/value at '=', handling quoted strings and trailing
// comments.
void parse_line(const std::string& line, int64_t line_no, const std::string& section,
                std::map<std::string, Section>& out) {
    const std::string where = "line " + std::to_string(line_no);
    const size_t eq = line.find('=');
    if (eq == std::string::npos) fail(where, "expected key = value");
    const std::string key = trim(line.substr(0, eq));
    if (key.empty()) fail(where, "empty key");
    std::string rest = trim(line.substr(eq + 1));
    if (rest.empty()) fail(where, "missing value for '" + key + "'");

    RawValue v;
    if (rest[0] == '"') {
        std::string s;
        size_t i = 1;
        bool closed = false;
        for (; i < rest.size(); ++i) {
            const char c = rest[i];
            if (c == '\\' && i + 1 < rest.size()) {
                const char n = rest[++i];
                if (n == '"' || n == '\\') {
                    s.push_back(n);
                } else if (n == 'n') {
                    s.push_back('\n');
                } else if (n == 't') {
                    s.push_back('\t');
                } else {
                    fail(where, "unsupported escape in string");
                }
            } else if (c == '"') {
                closed = true;
                ++i;
                break;
            } else {
                s.push_back(c);
            }
        }
        if (!closed) fail(where, "unterminated string");
        const std::string tail = trim(rest.substr(i));
        if (!tail.empty() && tail[0] != '#') fail(where, "trailing characters after string");
        v.text = s;
        v.quoted = true;
    } else {
        const size_t hash = rest.find('#');
        if (hash != std::string::npos) rest = trim(rest.substr(0, hash));
        if (rest.empty()) fail(where, "missing value for '" + key + "'");
        v.text = rest;
    }

    Section& sec = out[section];
    if (sec.count(key)) fail(where, "duplicate key '" + key + "'");
    sec[key] = v;
}

std::map<std::string, Section> parse_toml(const std::string& text) {
    std::map<std::string, Section> out;
    std::istringstream is(text);
    std::string line;
    std::string section;
    int64_t line_no = 0;
    while (std::getline(is, line)) {
        ++line_no;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        if (t[0] == '[') {
            if (t.back() != ']')
                fail("line " + std::to_string(line_no), "malformed section header");
            section = trim(t.substr(1, t.size() - 2));
            if (section.empty()) fail("line " + std::to_string(line_no), "empty section name");
            out[section];  // section may legitimately stay empty
            continue;
        }
        if (section.empty())
            fail("line " + std::to_string(line_no), "key outside any [section]");
        parse_line(t, line_no, section, out);
    }
    return out;
}

// Typed field readers; each consumes its key so leftovers can be reported.

std::string field_name(const std::string& section, const std::string& key) {
    return "[" + section + "] " + key;
}

template <typename T>
void take_int(Section& sec, const std::string& section, const std::string& key, T& out) {
    auto it = sec.find(key);
    if (it == sec.end()) return;
    if (it->second.quoted) fail(field_name(section, key), "expected integer, got string");
    const std::string& s = it->second.text;
    T v{};
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        fail(field_name(section, key), "expected integer, got '" + s + "'");
    out = v;
    sec.erase(it);
}

void take_float(Section& sec, const std::string& section, const std::string& key, double& out) {
    auto it = sec.find(key);
    if (it == sec.end()) return;
    if (it->second.quoted) fail(field_name(section, key), "expected number, got string");
    const std::string& s = it->second.text;
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        fail(field_name(section, key), "expected number, got '" + s + "'");
    out = v;
    sec.erase(it);
}

void take_bool(Section& sec, const std::string& section, const std::string& key, bool& out) {
    auto it = sec.find(key);
    if (it == sec.end()) return;
    const std::string& s = it->second.text;
    if (it->second.quoted || (s != "true" && s != "false"))
        fail(field_name(section, key), "expected true or false");
    out = (s == "true");
    sec.erase(it);
}

void take_string(Section& sec, const std::string& section, const std::string& key,
                 std::string& out) {
    auto it = sec.find(key);
    if (it == sec.end()) return;
    if (!it->second.quoted) fail(field_name(section, key), "expected quoted string");
    out = it->second.text;
    sec.erase(it);
}

void reject_leftovers(const std::map<std::string, Section>& sections) {
    for (const auto& [name, sec] : sections) {
        if (name != "model" && name != "train" && name != "mesa" && name != "data" &&
            name != "out")
            fail("[" + name + "]", "unknown section");
        for (const auto& [key, v] : sec) fail(field_name(name, key), "unknown key");
    }
}

std::string quote(const std::string& s) {
    std::string out = "\"";
    for (char c : s) {
        if (c == '"' || c == '\\') out.push_back('\\');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

}  // namespace

RunConfig parse_run_config(const std::string& text) {
    std::map<std::string, Section> sections = parse_toml(text);
    RunConfig c;

    if (auto it = sections.find("model"); it != sections.end()) {
        Section& s = it->second;
        take_int(s, "model", "vocab", c.model.vocab);
        take_int(s, "model", "dim", c.model.dim);
        take_int(s, "model", "layers", c.model.layers);
        take_int(s, "model", "heads", c.model.heads);
        take_int(s, "model", "context_len", c.model.context_len);
    }
    if (auto it = sections.find("train"); it != sections.end()) {
        Section& s = it->second;
        take_float(s, "train", "learn_rate", c.train.learn_rate);
        take_float(s, "train", "momentum", c.train.momentum);
        take_int(s, "train", "epochs", c.train.epochs);
        take_int(s, "train", "batch_size", c.train.batch_size);
        take_int(s, "train", "seed", c.train.seed);
    }
    if (auto it = sections.find("mesa"); it != sections.end()) {
        Section& s = it->second;
        std::string mode, encoding, mib, norm;
        take_string(s, "mesa", "mode", mode);
        take_string(s, "mesa", "encoding", encoding);
        take_string(s, "mesa", "mib", mib);
        take_string(s, "mesa", "normalization", norm);
        take_float(s, "mesa", "lambda", c.objective.lambda);
        take_int(s, "mesa", "tau", c.objective.tau);
        take_int(s, "mesa", "mod_k", c.objective.encoding.mod_k);
        take_int(s, "mesa", "mib_budget", c.objective.mib_budget);
        take_int(s, "mesa", "mib_seed", c.objective.mib_seed);
        take_bool(s, "mesa", "drop_parts", c.objective.drop_parts);

        if (!mode.empty()) {
            if (mode == "track") {
                c.objective.mode = mesa::Mode::track;
            } else if (mode == "surrogate") {
                c.objective.mode = mesa::Mode::surrogate;
            } else {
                fail("[mesa] mode", "expected track or surrogate, got '" + mode + "'");
            }
        }
        if (!encoding.empty()) {
            if (encoding == "byte_bits") {
                c.objective.encoding.kind = mesa::EncodingKind::byte_bits;
            } else if (encoding == "token_mod_k") {
                c.objective.encoding.kind = mesa::EncodingKind::token_mod_k;
            } else {
                fail("[mesa] encoding",
                     "expected byte_bits or token_mod_k, got '" + encoding + "'");
            }
        }
        if (!mib.empty()) {
            if (mib == "exhaustive") {
                c.objective.mib = phi::SearchKind::exhaustive;
            } else if (mib == "stochastic") {
                c.objective.mib = phi::SearchKind::stochastic;
            } else {
                fail("[mesa] mib", "expected exhaustive or stochastic, got '" + mib + "'");
            }
        }
        if (!norm.empty()) {
            if (norm == "none") {
                c.objective.normalization = phi::Normalization::none;
            } else if (norm == "min_part_entropy" || norm == "min-part-entropy") {
                c.objective.normalization = phi::Normalization::min_part_entropy;
            } else {
                fail("[mesa] normalization",
                     "expected none or min_part_entropy, got '" + norm + "'");
            }
        }
    }
    if (auto it = sections.find("data"); it != sections.end()) {
        take_string(it->second, "data", "corpus", c.corpus_path);
    }
    if (auto it = sections.find("out"); it != sections.end()) {
        take_string(it->second, "out", "run_dir", c.run_dir);
    }
    reject_leftovers(sections);

    if (c.corpus_path.empty()) fail("[data] corpus", "required field is missing");
    c.objective.encoding.vocab = c.model.vocab;  // EOS id follows the model vocab

    lm::validate(c.model);
    mesa::validate(c.train);
    mesa::validate(c.objective);
    return c;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw IoError("config: cannot open: " + path);
    std::ostringstream buf;
    buf << is.rdbuf();
    RunConfig c = parse_run_config(buf.str());
    if (!std::filesystem::exists(c.corpus_path))
        throw ValidationError("config: [data] corpus: path does not exist: " + c.corpus_path);
    return c;
}

std::string resolved_toml(const RunConfig& c) {
    std::ostringstream os;
    os << "[model]\n";
    os << "vocab = " << c.model.vocab << "\n";
    os << "dim = " << c.model.dim << "\n";
    os << "layers = " << c.model.layers << "\n";
    os << "heads = " << c.model.heads << "\n";
    os << "context_len = " << c.model.context_len << "\n";
    os << "\n[train]\n";
    os << "learn_rate = " << format_double(c.train.learn_rate) << "\n";
    os << "momentum = " << format_double(c.train.momentum) << "\n";
    os << "epochs = " << c.train.epochs << "\n";
    os << "batch_size = " << c.train.batch_size << "\n";
    os << "seed = " << c.train.seed << "\n";
    os << "\n[mesa]\n";
    os << "mode = " << (c.objective.mode == mesa::Mode::track ? "\"track\"" : "\"surrogate\"")
       << "\n";
    os << "lambda = " << format_double(c.objective.lambda) << "\n";
    os << "tau = " << c.objective.tau << "\n";
    os << "encoding = "
       << (c.objective.encoding.kind == mesa::EncodingKind::byte_bits ? "\"byte_bits\""
                                                                      : "\"token_mod_k\"")
       << "\n";
    os << "mod_k = " << c.objective.encoding.mod_k << "\n";
    os << "mib = "
       << (c.objective.mib == phi::SearchKind::exhaustive ? "\"exhaustive\"" : "\"stochastic\"")
       << "\n";
    os << "mib_budget = " << c.objective.mib_budget << "\n";
    os << "mib_seed = " << c.objective.mib_seed << "\n";
    os << "normalization = "
       << (c.objective.normalization == phi::Normalization::none ? "\"none\""
                                                                 : "\"min_part_entropy\"")
       << "\n";
    os << "drop_parts = " << (c.objective.drop_parts ? "true" : "false") << "\n";
    os << "\n[data]\n";
    os << "corpus = " << quote(c.corpus_path) << "\n";
    os << "\n[out]\n";
    os << "run_dir = " << quote(c.run_dir) << "\n";
    return os.str();
}

}  // namespace phimesa::config
