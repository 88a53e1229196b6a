#include "pfdet/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <sstream>

namespace pfdet {

// The codec assumes a little-endian host (the supported platforms here).

namespace {
void write_u32(std::ostream& os, uint32_t v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& is) {
    uint32_t v = 0;
    is.read(reinterpret_cast<char*>(&v), sizeof(v));
    if (!is) throw std::runtime_error("tensor codec: truncated stream");
    return v;
}
}  // namespace

void write_tensor_f32(std::ostream& os, const Tensor& t) {
    os.write("PFT1", 4);
    write_u32(os, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) write_u32(os, static_cast<uint32_t>(d));
    std::vector<float> buf(t.data.size());
    for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(t.data[i]);
    os.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
}

Tensor read_tensor_f32(std::istream& is) {
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PFT1", 4) != 0)
        throw std::runtime_error("tensor codec: bad magic");
    const uint32_t rank = read_u32(is);
    if (rank > 8) throw std::runtime_error("tensor codec: implausible rank");
    std::vector<int> shape(rank);
    for (auto& d : shape) d = static_cast<int>(read_u32(is));
    Tensor t(shape);
    std::vector<float> buf(t.data.size());
    is.read(reinterpret_cast<char*>(buf.data()),
            static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!is) throw std::runtime_error("tensor codec: truncated payload");
    for (size_t i = 0; i < buf.size(); ++i) t.data[i] = static_cast<double>(buf[i]);
    return t;
}

void save_tensor_file(const std::string& path, const Tensor& t) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    write_tensor_f32(os, t);
}

Tensor load_tensor_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read " + path);
    return read_tensor_f32(is);
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write " + path);
    os.write("PF3C", 4);
    write_u32(os, 1);
    write_u32(os, static_cast<uint32_t>(ckpt.size()));
    for (const auto& [name, tensor] : ckpt) {  // std::map: sorted by name
        write_u32(os, static_cast<uint32_t>(name.size()));
        os.write(name.data(), static_cast<std::streamsize>(name.size()));
        write_tensor_f32(os, tensor);
    }
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot read checkpoint " + path);
    char magic[4];
    is.read(magic, 4);
    if (!is || std::memcmp(magic, "PF3C", 4) != 0)
        throw std::runtime_error("bad checkpoint magic in " + path);
    const uint32_t version = read_u32(is);
    if (version != 1) throw std::runtime_error("unsupported checkpoint version");
    const uint32_t count = read_u32(is);
    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        const uint32_t len = read_u32(is);
        std::string name(len, '\0');
        is.read(name.data(), len);
        ckpt[name] = read_tensor_f32(is);
    }
    return ckpt;
}

Checkpoint snapshot_params(const ag::ParamStore& store) {
    Checkpoint ckpt;
    for (const auto& [name, value] : store.all()) ckpt[name] = value->val;
    return ckpt;
}

LoadReport load_into_params(ag::ParamStore& store, const Checkpoint& ckpt) {
    LoadReport report;
    for (const auto& [name, value] : store.all()) {
        auto it = ckpt.find(name);
        if (it == ckpt.end()) {
            report.missing.push_back(name);
            continue;
        }
        if (it->second.shape != value->val.shape)
            throw std::runtime_error("checkpoint shape mismatch for " + name + ": file " +
                                     it->second.shape_str() + " vs model " +
                                     value->val.shape_str());
        value->val.data = it->second.data;
        report.loaded.push_back(name);
    }
    for (const auto& [name, _] : ckpt) {
        if (!store.contains(name)) report.unexpected.push_back(name);
    }
    return report;
}

void load_into_params_strict(ag::ParamStore& store, const Checkpoint& ckpt) {
    LoadReport report = load_into_params(store, ckpt);
    if (report.missing.empty() && report.unexpected.empty()) return;
    std::ostringstream msg;
    msg << "checkpoint does not match the parameter registry;";
    if (!report.missing.empty()) {
        msg << " missing:";
        for (const auto& n : report.missing) msg << " " << n;
        msg << ";";
    }
    if (!report.unexpected.empty()) {
        msg << " unexpected:";
        for (const auto& n : report.unexpected) msg << " " << n;
    }
    throw std::runtime_error(msg.str());
}

}  // namespace pfdet
