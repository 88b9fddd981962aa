#include "dier/checkpoint.hpp"

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "dier/probe.hpp"
#include "dier/run_config.hpp"

namespace dier {

namespace {

void put_u32(std::ostream& out, std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16),
                          static_cast<unsigned char>(v >> 24)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& out, std::uint64_t v) {
    unsigned char b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>(v >> (8 * i));
    out.write(reinterpret_cast<const char*>(b), 8);
}

std::uint32_t get_u32(std::istream& in, const std::string& path) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw CheckpointError(path + ": truncated checkpoint file");
    return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
           (std::uint32_t(b[3]) << 24);
}

std::uint64_t get_u64(std::istream& in, const std::string& path) {
    unsigned char b[8];
    in.read(reinterpret_cast<char*>(b), 8);
    if (!in) throw CheckpointError(path + ": truncated checkpoint file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t(b[i]) << (8 * i);
    return v;
}

void put_f32_payload(std::ostream& out, std::span<const float> data) {
    // Little-endian host assumed for the fast path; byte-exact either way.
    static_assert(sizeof(float) == 4);
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * 4));
}

constexpr char kMagic[4] = {'D', 'I', 'E', 'R'};

}  // namespace

void write_checkpoint_file(const std::string& path, const CheckpointData& data) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    out.write(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u64(out, data.config_text.size());
    out.write(data.config_text.data(), static_cast<std::streamsize>(data.config_text.size()));
    put_u64(out, data.tensors.size());
    for (const auto& [name, t] : data.tensors) {  // std::map iterates sorted
        put_u64(out, name.size());
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put_u64(out, static_cast<std::uint64_t>(t.ndim()));
        for (auto d : t.shape()) put_u64(out, static_cast<std::uint64_t>(d));
        out.put(0);  // dtype tag: f32
        put_f32_payload(out, t.data());
    }
    put_u64(out, data.rng_key);
    put_u64(out, data.rng_counter);
    put_u64(out, data.step);
    out.flush();
    if (!out) throw IoError("short write to " + path);
}

void save_checkpoint(const std::string& path, const CheckpointData& data) {
    const std::string tmp = path + ".tmp";
    write_checkpoint_file(tmp, data);
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw IoError("cannot move checkpoint into place at " + path);
    }
}

CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) {
        throw CheckpointError(path + ": not a DIER checkpoint (bad magic)");
    }
    const std::uint32_t version = get_u32(in, path);
    if (version != kCheckpointVersion) {
        throw CheckpointError(path + ": checkpoint version " + std::to_string(version) +
                              " needs an upgrade step (supported: " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    CheckpointData data;
    const std::uint64_t cfg_len = get_u64(in, path);
    data.config_text.resize(cfg_len);
    in.read(data.config_text.data(), static_cast<std::streamsize>(cfg_len));
    if (!in) throw CheckpointError(path + ": truncated config blob");

    const std::uint64_t count = get_u64(in, path);
    for (std::uint64_t i = 0; i < count; ++i) {
        const std::uint64_t name_len = get_u64(in, path);
        if (name_len > (1u << 16)) throw CheckpointError(path + ": implausible tensor name");
        std::string name(name_len, '\0');
        in.read(name.data(), static_cast<std::streamsize>(name_len));
        if (!in) throw CheckpointError(path + ": truncated tensor name");
        const std::uint64_t ndim = get_u64(in, path);
        if (ndim > 8) throw CheckpointError(path + ": tensor '" + name + "' has implausible rank");
        Shape shape(ndim);
        std::int64_t numel = 1;
        for (auto& d : shape) {
            d = static_cast<std::int64_t>(get_u64(in, path));
            numel *= d;
        }
        char dtype = 0;
        in.read(&dtype, 1);
        if (!in || dtype != 0) {
            throw CheckpointError(path + ": tensor '" + name + "' has unsupported dtype");
        }
        std::vector<float> payload(static_cast<std::size_t>(numel));
        in.read(reinterpret_cast<char*>(payload.data()),
                static_cast<std::streamsize>(payload.size() * 4));
        if (in.gcount() != static_cast<std::streamsize>(payload.size() * 4)) {
            throw CheckpointError(path + ": tensor '" + name + "' payload shorter than declared " +
                                  std::to_string(numel * 4) + " bytes");
        }
        data.tensors.emplace(std::move(name), Tensor(std::move(shape), std::move(payload)));
    }
    data.rng_key = get_u64(in, path);
    data.rng_counter = get_u64(in, path);
    data.step = get_u64(in, path);
    return data;
}

// ---------------- training bundle ----------------

void save_train_state(const std::string& path, const TrainState& state) {
    CheckpointData data;
    data.config_text = state.config_text;
    for (const auto& [name, t] : state.encoder.p.params) data.tensors.emplace("enc." + name, t);
    for (const auto& [name, t] : state.dit.p.params) data.tensors.emplace("dit." + name, t);
    for (const auto& [name, t] : state.opt.m) data.tensors.emplace("opt.m." + name, t);
    for (const auto& [name, t] : state.opt.v) data.tensors.emplace("opt.v." + name, t);
    data.rng_key = state.rng_key;
    data.rng_counter = state.rng_counter;
    data.step = state.step;
    save_checkpoint(path, data);
}

TrainState load_train_state(const std::string& path) {
    CheckpointData data = load_checkpoint(path);
    RunConfig cfg;
    try {
        cfg = parse_run_config(data.config_text);
    } catch (const ConfigError& e) {
        throw CheckpointError(path + ": embedded config is invalid: " + e.what());
    }
    TrainState state;
    state.config_text = data.config_text;
    state.train_cfg = cfg.train;
    state.sched = make_linear_schedule(cfg.train.timesteps, cfg.beta_start, cfg.beta_end);
    state.encoder = init_encoder(cfg.encoder, 0);
    state.dit = init_dit(cfg.dit, 0);
    state.rng_key = data.rng_key;
    state.rng_counter = data.rng_counter;
    state.step = data.step;
    state.opt.step = static_cast<std::int64_t>(data.step);

    auto take = [&](const std::string& name, Tensor& dst) {
        auto it = data.tensors.find(name);
        if (it == data.tensors.end()) {
            throw CheckpointError(path + ": missing tensor '" + name + "'");
        }
        if (it->second.shape() != dst.shape()) {
            throw CheckpointError(path + ": tensor '" + name + "' has shape " +
                                  shape_str(it->second.shape()) + ", expected " +
                                  shape_str(dst.shape()));
        }
        dst = it->second;
        dst.set_requires_grad(true);
    };
    for (auto& [name, t] : state.encoder.p.params) take("enc." + name, t);
    for (auto& [name, t] : state.dit.p.params) take("dit." + name, t);
    for (const auto& [name, t] : data.tensors) {
        if (name.rfind("opt.m.", 0) == 0) {
            state.opt.m.emplace(name.substr(6), t);
        } else if (name.rfind("opt.v.", 0) == 0) {
            state.opt.v.emplace(name.substr(6), t);
        }
    }
    return state;
}

// ---------------- embedding export ----------------

void export_embeddings(const EmbeddingTable& table, const std::string& path,
                       EmbeddingFormat format) {
    const std::int64_t n = table.vectors.dim(0);
    const std::int64_t d = table.vectors.dim(1);
    auto v = table.vectors.data();
    if (format == EmbeddingFormat::Csv) {
        std::ofstream out(path, std::ios::trunc);
        if (!out) throw IoError("cannot write " + path);
        out << "label";
        for (std::int64_t j = 0; j < d; ++j) out << ",v" << j;
        out << '\n';
        char buf[48];
        for (std::int64_t r = 0; r < n; ++r) {
            out << table.labels[static_cast<std::size_t>(r)];
            for (std::int64_t j = 0; j < d; ++j) {
                std::snprintf(buf, sizeof buf, ",%.9g", static_cast<double>(v[r * d + j]));
                out << buf;
            }
            out << '\n';
        }
        if (!out) {
            std::error_code ec;
            std::filesystem::remove(path, ec);
            throw IoError("short write to " + path);
        }
        return;
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path);
    put_u32(out, static_cast<std::uint32_t>(n));
    put_u32(out, static_cast<std::uint32_t>(d));
    for (int label : table.labels) {
        put_u32(out, static_cast<std::uint32_t>(static_cast<std::int32_t>(label)));
    }
    put_f32_payload(out, v);
    if (!out) {
        std::error_code ec;
        std::filesystem::remove(path, ec);
        throw IoError("short write to " + path);
    }
}

EmbeddingTable import_embeddings(const std::string& path, EmbeddingFormat format) {
    EmbeddingTable table;
    if (format == EmbeddingFormat::Csv) {
        std::ifstream in(path);
        if (!in) throw DataError("cannot open " + path);
        std::string header;
        if (!std::getline(in, header)) throw DataError(path + ": empty embedding csv");
        std::vector<float> values;
        std::string line;
        std::int64_t d = -1;
        while (std::getline(in, line)) {
            if (line.empty()) continue;
            std::stringstream ss(line);
            std::string tok;
            std::getline(ss, tok, ',');
            table.labels.push_back(std::atoi(tok.c_str()));
            std::int64_t cols = 0;
            while (std::getline(ss, tok, ',')) {
                values.push_back(static_cast<float>(std::atof(tok.c_str())));
                ++cols;
            }
            if (d < 0) d = cols;
            if (cols != d) throw DataError(path + ": ragged embedding csv row");
        }
        const std::int64_t n = static_cast<std::int64_t>(table.labels.size());
        table.vectors = Tensor({n, d}, std::move(values));
    } else {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw DataError("cannot open " + path);
        const std::uint32_t n = get_u32(in, path);
        const std::uint32_t d = get_u32(in, path);
        table.labels.resize(n);
        for (auto& label : table.labels) {
            label = static_cast<std::int32_t>(get_u32(in, path));
        }
        std::vector<float> values(static_cast<std::size_t>(n) * d);
        in.read(reinterpret_cast<char*>(values.data()),
                static_cast<std::streamsize>(values.size() * 4));
        if (in.gcount() != static_cast<std::streamsize>(values.size() * 4)) {
            throw DataError(path + ": truncated embedding payload");
        }
        table.vectors = Tensor({static_cast<std::int64_t>(n), static_cast<std::int64_t>(d)},
                               std::move(values));
    }
    int max_label = 0;
    for (int v : table.labels) max_label = std::max(max_label, v);
    table.class_count = max_label + 1;
    return table;
}

}  // namespace dier
