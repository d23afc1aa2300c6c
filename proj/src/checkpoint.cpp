#include "lsic/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

namespace lsic {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'I', 'C', 'C', 'K', 'P', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
    char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<char>((v >> (8 * i)) & 0xff);
    out.write(buf, 8);
}

std::uint64_t read_u64(std::istream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    if (!in) throw std::runtime_error("checkpoint: truncated file");
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

void write_str(std::ostream& out, const std::string& s) {
    write_u64(out, s.size());
    out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

std::string read_str(std::istream& in) {
    std::uint64_t n = read_u64(in);
    std::string s(n, '\0');
    in.read(s.data(), static_cast<std::streamsize>(n));
    if (!in) throw std::runtime_error("checkpoint: truncated string");
    return s;
}

void write_tensor(std::ostream& out, const Tensor& t) {
    write_u64(out, t.shape.size());
    for (int d : t.shape) write_u64(out, static_cast<std::uint64_t>(d));
    out.write(reinterpret_cast<const char*>(t.data.data()),
              static_cast<std::streamsize>(t.data.size() * sizeof(double)));
}

Tensor read_tensor(std::istream& in) {
    std::uint64_t rank = read_u64(in);
    std::vector<int> shape;
    for (std::uint64_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(read_u64(in)));
    Tensor t(shape);
    in.read(reinterpret_cast<char*>(t.data.data()),
            static_cast<std::streamsize>(t.data.size() * sizeof(double)));
    if (!in) throw std::runtime_error("checkpoint: truncated tensor");
    return t;
}

} // namespace

void Checkpoint::save(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("checkpoint: cannot write " + path);
    out.write(kMagic, 8);
    write_str(out, config_text);
    write_u64(out, strings.size());
    for (const auto& [k, v] : strings) {
        write_str(out, k);
        write_str(out, v);
    }
    write_u64(out, tensors.size());
    for (const auto& [k, t] : tensors) {
        write_str(out, k);
        write_tensor(out, t);
    }
    if (!out) throw std::runtime_error("checkpoint: write failure for " + path);
}

Checkpoint Checkpoint::load(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("checkpoint: cannot open " + path);
    char magic[8];
    in.read(magic, 8);
    if (!in || std::string(magic, 8) != std::string(kMagic, 8))
        throw std::runtime_error("checkpoint: bad magic in " + path);
    Checkpoint c;
    c.config_text = read_str(in);
    std::uint64_t ns = read_u64(in);
    for (std::uint64_t i = 0; i < ns; ++i) {
        std::string k = read_str(in);
        c.strings[k] = read_str(in);
    }
    std::uint64_t nt = read_u64(in);
    for (std::uint64_t i = 0; i < nt; ++i) {
        std::string k = read_str(in);
        c.tensors[k] = read_tensor(in);
    }
    return c;
}

void Checkpoint::put_params(const std::vector<ad::Parameter*>& params) {
    for (const ad::Parameter* p : params) {
        tensors[p->name] = p->value;
        if (p->m.size() > 0) {
            tensors[p->name + ".adam_m"] = p->m;
            tensors[p->name + ".adam_v"] = p->v;
        }
    }
}

void Checkpoint::restore_params(const std::vector<ad::Parameter*>& params) const {
    for (ad::Parameter* p : params) {
        auto it = tensors.find(p->name);
        if (it == tensors.end())
            throw std::runtime_error("checkpoint: missing parameter " + p->name);
        if (it->second.shape != p->value.shape)
            throw std::runtime_error("checkpoint: shape mismatch for " + p->name + " (" +
                                     it->second.shape_str() + " vs " + p->value.shape_str() + ")");
        p->value = it->second;
        auto im = tensors.find(p->name + ".adam_m");
        if (im != tensors.end()) {
            p->m = im->second;
            p->v = tensors.at(p->name + ".adam_v");
        }
        p->zero_grad();
    }
}

const Tensor& Checkpoint::tensor(const std::string& name) const {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint: missing tensor " + name);
    return it->second;
}

std::string Checkpoint::string_or(const std::string& key, const std::string& fallback) const {
    auto it = strings.find(key);
    return it == strings.end() ? fallback : it->second;
}

} // namespace lsic
