#include "dier/run_config.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace dier {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

bool parse_bool(const std::string& v, int line) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("line " + std::to_string(line) + ": expected a boolean, got '" + v + "'");
}

std::int64_t parse_int(const std::string& v, int line) {
    char* end = nullptr;
    const long long r = std::strtoll(v.c_str(), &end, 10);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("line " + std::to_string(line) + ": expected an integer, got '" + v +
                          "'");
    }
    return r;
}

float parse_float(const std::string& v, int line) {
    char* end = nullptr;
    const double r = std::strtod(v.c_str(), &end);
    if (end == v.c_str() || *end != '\0') {
        throw ConfigError("line " + std::to_string(line) + ": expected a number, got '" + v +
                          "'");
    }
    return static_cast<float>(r);
}

std::vector<int> parse_int_list(const std::string& v, int line) {
    std::vector<int> out;
    std::stringstream ss(v);
    std::string tok;
    while (std::getline(ss, tok, ',')) {
        tok = trim(tok);
        if (tok.empty()) continue;
        out.push_back(static_cast<int>(parse_int(tok, line)));
    }
    if (out.empty()) {
        throw ConfigError("line " + std::to_string(line) + ": expected a comma list");
    }
    return out;
}

std::string join_ints(const std::vector<int>& v) {
    std::ostringstream os;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (i) os << ',';
        os << v[i];
    }
    return os.str();
}

std::string fmt_float(float v) {
    char buf[48];
    std::snprintf(buf, sizeof buf, "%.9g", static_cast<double>(v));
    return buf;
}

}  // namespace

void RunConfig::apply_preset(const std::string& name) {
    model_preset = name;
    const int ch = dit.in_channels;  // keep whatever the data dictated
    if (name == "nano") {
        dit = dit_nano(ch);
        encoder = encoder_nano(ch);
        train.batch_size = 32;
        data.train_cap = 2000;
        data.test_cap = 500;
    } else if (name == "tiny") {
        dit = dit_tiny(32, ch);
        encoder = encoder_small_images(32, ch);
    } else if (name == "small") {
        dit = dit_small(64, ch);
        encoder = encoder_small_images(64, ch);
    } else if (name == "base") {
        dit = dit_base(256, ch);
        encoder = encoder_large_images(256, ch);
    } else {
        throw ConfigError("unknown model preset: " + name);
    }
}

void RunConfig::validate() const {
    dit.validate();
    encoder.validate();
    train.validate();
    if (dit.input_size != encoder.input_size || dit.in_channels != encoder.in_channels) {
        throw ConfigError("dit and encoder disagree on input size/channels");
    }
    if (dit.cond_dim != encoder.embed_dim) {
        throw ConfigError("dit cond_dim " + std::to_string(dit.cond_dim) +
                          " != encoder embed_dim " + std::to_string(encoder.embed_dim));
    }
    if (!(beta_start > 0.0f) || !(beta_start <= beta_end) || !(beta_end < 1.0f)) {
        throw ConfigError("diffusion betas out of range");
    }
    if (probe.epochs < 1 || probe.batch_size < 1 || probe.warmup_epochs < 0) {
        throw ConfigError("probe settings out of range");
    }
}

RunConfig parse_run_config(const std::string& text) {
    RunConfig cfg;
    std::istringstream in(text);
    std::string raw;
    std::string section;
    int line = 0;
    while (std::getline(in, raw)) {
        ++line;
        std::string s = raw;
        const auto hash = s.find('#');
        if (hash != std::string::npos) s = s.substr(0, hash);
        const auto semi = s.find(';');
        if (semi != std::string::npos) s = s.substr(0, semi);
        s = trim(s);
        if (s.empty()) continue;
        if (s.front() == '[') {
            if (s.back() != ']') {
                throw ConfigError("line " + std::to_string(line) + ": malformed section header");
            }
            section = trim(s.substr(1, s.size() - 2));
            if (section != "data" && section != "model" && section != "diffusion" &&
                section != "train" && section != "probe") {
                throw ConfigError("line " + std::to_string(line) + ": unknown section [" +
                                  section + "]");
            }
            continue;
        }
        const auto eq = s.find('=');
        if (eq == std::string::npos) {
            throw ConfigError("line " + std::to_string(line) + ": expected key = value");
        }
        const std::string key = trim(s.substr(0, eq));
        const std::string value = trim(s.substr(eq + 1));
        if (section.empty()) {
            throw ConfigError("line " + std::to_string(line) + ": key outside any [section]");
        }

        auto unknown = [&]() -> ConfigError {
            return ConfigError("line " + std::to_string(line) + ": unknown key '" + key +
                               "' in [" + section + "]");
        };

        if (section == "data") {
            if (key == "path") cfg.data.path = value;
            else if (key == "train_cap") cfg.data.train_cap = parse_int(value, line);
            else if (key == "test_cap") cfg.data.test_cap = parse_int(value, line);
            else if (key == "augment_flip") cfg.data.augment_flip = parse_bool(value, line);
            else if (key == "target_size") cfg.data.target_size = static_cast<int>(parse_int(value, line));
            else throw unknown();
        } else if (section == "model") {
            if (key == "preset") cfg.apply_preset(value);
            else if (key == "input_size") {
                cfg.dit.input_size = static_cast<int>(parse_int(value, line));
                cfg.encoder.input_size = cfg.dit.input_size;
            } else if (key == "in_channels") {
                cfg.dit.in_channels = static_cast<int>(parse_int(value, line));
                cfg.encoder.in_channels = cfg.dit.in_channels;
            } else if (key == "patch") cfg.dit.patch = static_cast<int>(parse_int(value, line));
            else if (key == "hidden") cfg.dit.hidden = static_cast<int>(parse_int(value, line));
            else if (key == "depth") cfg.dit.depth = static_cast<int>(parse_int(value, line));
            else if (key == "heads") cfg.dit.heads = static_cast<int>(parse_int(value, line));
            else if (key == "mlp_ratio") cfg.dit.mlp_ratio = static_cast<int>(parse_int(value, line));
            else if (key == "t_embed_dim") cfg.dit.t_embed_dim = static_cast<int>(parse_int(value, line));
            else if (key == "embed_dim") {
                cfg.dit.cond_dim = static_cast<int>(parse_int(value, line));
                cfg.encoder.embed_dim = cfg.dit.cond_dim;
            } else if (key == "enc_base") cfg.encoder.base = static_cast<int>(parse_int(value, line));
            else if (key == "enc_blocks") cfg.encoder.blocks = static_cast<int>(parse_int(value, line));
            else if (key == "enc_heads") cfg.encoder.heads = static_cast<int>(parse_int(value, line));
            else if (key == "enc_attention") cfg.encoder.attention_resolutions = parse_int_list(value, line);
            else if (key == "enc_multipliers") cfg.encoder.channel_multipliers = parse_int_list(value, line);
            else if (key == "enc_norm_groups") cfg.encoder.norm_groups = static_cast<int>(parse_int(value, line));
            else throw unknown();
        } else if (section == "diffusion") {
            if (key == "timesteps") cfg.train.timesteps = static_cast<int>(parse_int(value, line));
            else if (key == "beta_start") cfg.beta_start = parse_float(value, line);
            else if (key == "beta_end") cfg.beta_end = parse_float(value, line);
            else throw unknown();
        } else if (section == "train") {
            if (key == "epochs") cfg.train.epochs = static_cast<int>(parse_int(value, line));
            else if (key == "batch_size") cfg.train.batch_size = static_cast<int>(parse_int(value, line));
            else if (key == "learning_rate") cfg.train.learning_rate = parse_float(value, line);
            else if (key == "seed") cfg.train.seed = static_cast<std::uint64_t>(parse_int(value, line));
            else if (key == "max_steps") cfg.train.max_steps = parse_int(value, line);
            else if (key == "checkpoint_every") cfg.train.checkpoint_every = parse_int(value, line);
            else if (key == "log_every") cfg.train.log_every = parse_int(value, line);
            else if (key == "grad_clip") cfg.train.grad_clip = parse_float(value, line);
            else throw unknown();
        } else if (section == "probe") {
            if (key == "epochs") cfg.probe.epochs = static_cast<int>(parse_int(value, line));
            else if (key == "batch_size") cfg.probe.batch_size = static_cast<int>(parse_int(value, line));
            else if (key == "weight_decay") cfg.probe.weight_decay = parse_float(value, line);
            else if (key == "warmup_epochs") cfg.probe.warmup_epochs = static_cast<int>(parse_int(value, line));
            else if (key == "peak_lr") cfg.probe.peak_lr = parse_float(value, line);
            else if (key == "standardize") cfg.probe.standardize = parse_bool(value, line);
            else if (key == "seed") cfg.probe.seed = static_cast<std::uint64_t>(parse_int(value, line));
            else throw unknown();
        }
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return parse_run_config(ss.str());
}

std::string serialize_run_config(const RunConfig& cfg) {
    std::ostringstream os;
    os << "[data]\n";
    os << "path = " << cfg.data.path << '\n';
    os << "train_cap = " << cfg.data.train_cap << '\n';
    os << "test_cap = " << cfg.data.test_cap << '\n';
    os << "augment_flip = " << (cfg.data.augment_flip ? "true" : "false") << '\n';
    os << "target_size = " << cfg.data.target_size << '\n';
    os << "\n[model]\n";
    os << "input_size = " << cfg.dit.input_size << '\n';
    os << "in_channels = " << cfg.dit.in_channels << '\n';
    os << "patch = " << cfg.dit.patch << '\n';
    os << "hidden = " << cfg.dit.hidden << '\n';
    os << "depth = " << cfg.dit.depth << '\n';
    os << "heads = " << cfg.dit.heads << '\n';
    os << "mlp_ratio = " << cfg.dit.mlp_ratio << '\n';
    os << "t_embed_dim = " << cfg.dit.t_embed_dim << '\n';
    os << "embed_dim = " << cfg.dit.cond_dim << '\n';
    os << "enc_base = " << cfg.encoder.base << '\n';
    os << "enc_blocks = " << cfg.encoder.blocks << '\n';
    os << "enc_heads = " << cfg.encoder.heads << '\n';
    os << "enc_attention = " << join_ints(cfg.encoder.attention_resolutions) << '\n';
    os << "enc_multipliers = " << join_ints(cfg.encoder.channel_multipliers) << '\n';
    os << "enc_norm_groups = " << cfg.encoder.norm_groups << '\n';
    os << "\n[diffusion]\n";
    os << "timesteps = " << cfg.train.timesteps << '\n';
    os << "beta_start = " << fmt_float(cfg.beta_start) << '\n';
    os << "beta_end = " << fmt_float(cfg.beta_end) << '\n';
    os << "\n[train]\n";
    os << "epochs = " << cfg.train.epochs << '\n';
    os << "batch_size = " << cfg.train.batch_size << '\n';
    os << "learning_rate = " << fmt_float(cfg.train.learning_rate) << '\n';
    os << "seed = " << cfg.train.seed << '\n';
    os << "max_steps = " << cfg.train.max_steps << '\n';
    os << "checkpoint_every = " << cfg.train.checkpoint_every << '\n';
    os << "log_every = " << cfg.train.log_every << '\n';
    os << "grad_clip = " << fmt_float(cfg.train.grad_clip) << '\n';
    os << "\n[probe]\n";
    os << "epochs = " << cfg.probe.epochs << '\n';
    os << "batch_size = " << cfg.probe.batch_size << '\n';
    os << "weight_decay = " << fmt_float(cfg.probe.weight_decay) << '\n';
    os << "warmup_epochs = " << cfg.probe.warmup_epochs << '\n';
    os << "peak_lr = " << fmt_float(cfg.resolved_probe_peak_lr()) << '\n';
    os << "standardize = " << (cfg.probe.standardize ? "true" : "false") << '\n';
    os << "seed = " << cfg.probe.seed << '\n';
    return os.str();
}

}  // namespace dier
