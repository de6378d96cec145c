#include "dbn/checkpoint.hpp"

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

namespace dbn {

namespace {

constexpr char kMagic[4] = {'D', 'B', 'N', 'C'};
constexpr std::uint32_t kVersion = 1;

struct RawTensor {
    std::vector<int> shape;
    std::vector<float> data;
};

void put_u16(std::string& out, std::uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>(v >> 8));
}
void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& out, std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
public:
    explicit Reader(std::string bytes) : bytes_(std::move(bytes)) {}

    std::uint8_t u8() { return static_cast<std::uint8_t>(take(1)[0]); }
    std::uint16_t u16() {
        const auto* p = take(2);
        return static_cast<std::uint16_t>(static_cast<std::uint8_t>(p[0]) |
                                          (static_cast<std::uint8_t>(p[1]) << 8));
    }
    std::uint32_t u32() {
        const auto* p = take(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }
    std::uint64_t u64() {
        const auto* p = take(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(static_cast<std::uint8_t>(p[i])) << (8 * i);
        return v;
    }
    std::string str(std::size_t n) { return std::string(take(n), n); }
    void floats(float* dst, std::size_t n) { std::memcpy(dst, take(n * 4), n * 4); }
    bool done() const { return pos_ == bytes_.size(); }

private:
    const char* take(std::size_t n) {
        if (pos_ + n > bytes_.size()) raise("truncated-checkpoint", "unexpected end of file");
        const char* p = bytes_.data() + pos_;
        pos_ += n;
        return p;
    }
    std::string bytes_;
    std::size_t pos_ = 0;
};

void append_tensor(std::string& out, const std::string& name, const std::vector<int>& shape,
                   const float* data, std::size_t count) {
    if (name.size() > 0xffff) raise("bad-argument", "tensor name too long");
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(shape.size()));
    for (int e : shape) put_u32(out, static_cast<std::uint32_t>(e));
    const std::size_t at = out.size();
    out.resize(at + count * 4);
    std::memcpy(out.data() + at, data, count * 4);
}

std::vector<float> pack_bytes(const std::vector<std::uint8_t>& blob) {
    // leading u32 length, zero-padded to whole floats
    const std::size_t total = 4 + blob.size();
    std::vector<float> words((total + 3) / 4, 0.0f);
    const std::uint32_t len = static_cast<std::uint32_t>(blob.size());
    std::memcpy(words.data(), &len, 4);
    std::memcpy(reinterpret_cast<std::uint8_t*>(words.data()) + 4, blob.data(), blob.size());
    return words;
}

std::vector<std::uint8_t> unpack_bytes(const std::vector<float>& words) {
    if (words.size() < 1) raise("truncated-checkpoint", "rng blob too small");
    std::uint32_t len;
    std::memcpy(&len, words.data(), 4);
    if (4 + static_cast<std::size_t>(len) > words.size() * 4) {
        raise("truncated-checkpoint", "rng blob length exceeds payload");
    }
    std::vector<std::uint8_t> blob(len);
    std::memcpy(blob.data(), reinterpret_cast<const std::uint8_t*>(words.data()) + 4, len);
    return blob;
}

}  // namespace

OptimizerState build_optimizer_state(ModelParams& params) {
    OptimizerState opt;
    for_each_trainable(params, [&](const std::string&, std::vector<float>&, const std::vector<int>& shape) {
        opt.states.emplace_back(shape);
    });
    return opt;
}

void save_checkpoint(ModelParams& params, const OptimizerState* opt, const Rng* rng,
                     const std::string& path) {
    std::string out;
    out.reserve(70 << 20);
    out.append(kMagic, 4);
    put_u32(out, kVersion);
    put_u64(out, static_cast<std::uint64_t>(params.iteration));

    std::uint32_t count = 0;
    for_each_trainable(params, [&](const std::string&, std::vector<float>&, const std::vector<int>&) { count++; });
    std::uint32_t bn_count = 0;
    for_each_bn_vec(params, [&](const std::string&, std::vector<float>&, bool trainable) {
        if (!trainable) bn_count++;
    });
    count += bn_count;
    if (opt != nullptr) count = count + 2 * static_cast<std::uint32_t>(opt->states.size()) + 1;
    if (rng != nullptr) count += 1;
    put_u32(out, count);

    for_each_trainable(params,
                       [&](const std::string& name, std::vector<float>& data, const std::vector<int>& shape) {
                           append_tensor(out, name, shape, data.data(), data.size());
                       });
    for_each_bn_vec(params, [&](const std::string& name, std::vector<float>& data, bool trainable) {
        if (trainable) return;  // gamma/beta already written
        append_tensor(out, name, {static_cast<int>(data.size())}, data.data(), data.size());
    });

    if (opt != nullptr) {
        std::size_t idx = 0;
        std::vector<float> steps;
        for_each_trainable(params, [&](const std::string& name, std::vector<float>&, const std::vector<int>&) {
            const auto& st = opt->states[idx++];
            append_tensor(out, "adam.m." + name, st.m.shape, st.m.ptr(), st.m.numel());
            append_tensor(out, "adam.v." + name, st.v.shape, st.v.ptr(), st.v.numel());
            steps.push_back(static_cast<float>(st.t));
        });
        append_tensor(out, "adam.t", {static_cast<int>(steps.size())}, steps.data(), steps.size());
    }
    if (rng != nullptr) {
        const auto words = pack_bytes(rng->save_state());
        append_tensor(out, "rng_state", {static_cast<int>(words.size())}, words.data(), words.size());
    }

    const std::string tmp = path + ".tmp";
    {
        std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
        if (!f) raise("io-error", "cannot open " + tmp);
        f.write(out.data(), static_cast<std::streamsize>(out.size()));
        if (!f) raise("io-error", "write failed: " + tmp);
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) raise("io-error", "rename " + tmp + ": " + ec.message());
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
    std::string bytes;
    {
        std::ifstream f(path, std::ios::binary);
        if (!f) raise("io-error", "cannot open " + path);
        bytes.assign(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>());
    }
    Reader r(std::move(bytes));
    const std::string magic = r.str(4);
    if (std::memcmp(magic.data(), kMagic, 4) != 0) raise("bad-magic", path + " is not a checkpoint");
    const std::uint32_t version = r.u32();
    if (version != kVersion) {
        raise("bad-version", "unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint64_t iteration = r.u64();
    const std::uint32_t count = r.u32();

    std::map<std::string, RawTensor> tensors;
    for (std::uint32_t i = 0; i < count; ++i) {
        const std::uint16_t name_len = r.u16();
        std::string name = r.str(name_len);
        const std::uint8_t rank = r.u8();
        RawTensor t;
        std::size_t numel = 1;
        for (int d = 0; d < rank; ++d) {
            const std::uint32_t e = r.u32();
            if (e == 0 || e > (1u << 30)) raise("truncated-checkpoint", "implausible extent in " + name);
            t.shape.push_back(static_cast<int>(e));
            numel *= e;
        }
        t.data.resize(numel);
        r.floats(t.data.data(), numel);
        tensors.emplace(std::move(name), std::move(t));
    }
    if (!r.done()) raise("truncated-checkpoint", "trailing bytes after tensor table");

    LoadedCheckpoint loaded;
    loaded.params.layers.resize(dbn_layers().size());
    loaded.params.iteration = static_cast<std::int64_t>(iteration);
    // allocate with the table's shapes, then fill from the file
    {
        ModelParams fresh;
        fresh.layers.resize(dbn_layers().size());
        const auto& defs = dbn_layers();
        for (std::size_t i = 0; i < defs.size(); ++i) {
            fresh.layers[i].weights = Tensor(defs[i].spec().weight_shape());
            fresh.layers[i].bias = Tensor({defs[i].out_ch});
            if (defs[i].has_bn) fresh.layers[i].bn = BatchNormStateT<float>(defs[i].out_ch);
        }
        loaded.params.layers = std::move(fresh.layers);
    }

    auto fetch = [&](const std::string& name, std::vector<float>& dst, const std::vector<int>& shape) {
        const auto it = tensors.find(name);
        if (it == tensors.end()) raise("truncated-checkpoint", "missing tensor " + name);
        if (it->second.shape != shape) {
            raise("shape-mismatch", name + ": checkpoint has " + format_shape(it->second.shape) +
                                        ", expected " + format_shape(shape));
        }
        dst = it->second.data;
    };

    for_each_trainable(loaded.params,
                       [&](const std::string& name, std::vector<float>& data, const std::vector<int>& shape) {
                           fetch(name, data, shape);
                       });
    for_each_bn_vec(loaded.params, [&](const std::string& name, std::vector<float>& data, bool trainable) {
        if (!trainable) fetch(name, data, {static_cast<int>(data.size())});
    });

    if (tensors.count("adam.t") != 0) {
        OptimizerState opt = build_optimizer_state(loaded.params);
        std::size_t idx = 0;
        for_each_trainable(loaded.params,
                           [&](const std::string& name, std::vector<float>&, const std::vector<int>& shape) {
                               auto& st = opt.states[idx++];
                               fetch("adam.m." + name, st.m.data, shape);
                               fetch("adam.v." + name, st.v.data, shape);
                           });
        const auto& steps = tensors.at("adam.t");
        if (steps.data.size() != opt.states.size()) {
            raise("shape-mismatch", "adam.t length " + std::to_string(steps.data.size()) + ", expected " +
                                        std::to_string(opt.states.size()));
        }
        for (std::size_t i = 0; i < opt.states.size(); ++i) {
            opt.states[i].t = static_cast<std::int64_t>(steps.data[i]);
        }
        loaded.opt = std::move(opt);
    }
    if (tensors.count("rng_state") != 0) {
        Rng rng;
        rng.load_state(unpack_bytes(tensors.at("rng_state").data));
        loaded.rng = rng;
    }
    return loaded;
}

}  // namespace dbn
