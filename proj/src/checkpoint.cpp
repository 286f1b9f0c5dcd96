#include "fsd/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

namespace fsd {

namespace {

static_assert(std::endian::native == std::endian::little,
              "weights.bin is little-endian; big-endian hosts need byte swaps");

void write_file(const std::string& path, const char* data, size_t len) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(data, std::streamsize(len));
    if (!out) throw std::runtime_error("short write: " + path);
}

std::vector<char> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary | std::ios::ate);
    if (!in) throw std::runtime_error("cannot open: " + path);
    const auto size = in.tellg();
    in.seekg(0);
    std::vector<char> buf(static_cast<size_t>(size));
    in.read(buf.data(), size);
    if (!in) throw std::runtime_error("short read: " + path);
    return buf;
}

} // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
    for (const auto& t : tensors)
        if (t.name == name) return &t;
    return nullptr;
}

void Checkpoint::add(const std::string& name, const Shape& shape,
                     const std::vector<float>& data) {
    if (int64_t(data.size()) != numel(shape))
        throw std::invalid_argument("checkpoint tensor " + name + ": " +
                                    std::to_string(data.size()) + " values for shape " +
                                    shape_str(shape));
    tensors.push_back({name, shape, data});
}

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);

    std::vector<char> blob;
    nlohmann::json manifest;
    manifest["format"] = "fsd-checkpoint-v1";
    manifest["extra"] = ckpt.extra.is_null() ? nlohmann::json::object() : ckpt.extra;
    auto& list = manifest["tensors"] = nlohmann::json::array();
    for (const auto& t : ckpt.tensors) {
        const size_t bytes = t.data.size() * sizeof(float);
        nlohmann::json e;
        e["name"] = t.name;
        e["shape"] = t.shape;
        e["dtype"] = "f32";
        e["byte_offset"] = blob.size();
        e["byte_length"] = bytes;
        list.push_back(std::move(e));
        const size_t at = blob.size();
        blob.resize(at + bytes);
        std::memcpy(blob.data() + at, t.data.data(), bytes);
    }
    write_file((fs::path(dir) / "weights.bin").string(), blob.data(), blob.size());
    const std::string text = manifest.dump(2) + "\n";
    write_file((fs::path(dir) / "manifest.json").string(), text.data(), text.size());
}

Checkpoint load_checkpoint(const std::string& dir) {
    namespace fs = std::filesystem;
    const auto manifest_raw = read_file((fs::path(dir) / "manifest.json").string());
    const auto manifest = nlohmann::json::parse(manifest_raw.begin(), manifest_raw.end());
    if (manifest.value("format", "") != "fsd-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint format in " + dir);
    const auto blob = read_file((fs::path(dir) / "weights.bin").string());

    Checkpoint ckpt;
    ckpt.extra = manifest.value("extra", nlohmann::json::object());
    for (const auto& e : manifest.at("tensors")) {
        CheckpointTensor t;
        t.name = e.at("name").get<std::string>();
        t.shape = e.at("shape").get<Shape>();
        if (e.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("tensor " + t.name + ": unsupported dtype");
        const size_t off = e.at("byte_offset").get<size_t>();
        const size_t len = e.at("byte_length").get<size_t>();
        if (off + len > blob.size() || len % sizeof(float) != 0)
            throw std::runtime_error("tensor " + t.name + ": byte range outside blob");
        if (int64_t(len / sizeof(float)) != numel(t.shape))
            throw std::runtime_error("tensor " + t.name + ": byte length does not match shape");
        t.data.resize(len / sizeof(float));
        std::memcpy(t.data.data(), blob.data() + off, len);
        ckpt.tensors.push_back(std::move(t));
    }
    return ckpt;
}

Checkpoint make_checkpoint(const ParamStore<float>& params, const Adam<float>* opt) {
    Checkpoint ckpt;
    ckpt.extra = nlohmann::json::object();
    for (const auto& [name, node] : params.entries()) ckpt.add(name, node->shape, node->value);
    if (opt) {
        const auto& order = opt->params();
        if (order.size() != params.entries().size())
            throw std::invalid_argument("make_checkpoint: optimizer tracks a different store");
        const auto& m = opt->m();
        const auto& v = opt->v();
        size_t i = 0;
        for (const auto& [name, node] : params.entries()) {
            if (order[i] != node)
                throw std::invalid_argument(
                    "make_checkpoint: optimizer order differs from store order");
            ckpt.add("adam.m." + name, node->shape, m[i]);
            ckpt.add("adam.v." + name, node->shape, v[i]);
            ++i;
        }
        ckpt.extra["adam_t"] = opt->t();
    }
    std::sort(ckpt.tensors.begin(), ckpt.tensors.end(),
              [](const auto& a, const auto& b) { return a.name < b.name; });
    return ckpt;
}

void restore_checkpoint(const Checkpoint& ckpt, ParamStore<float>& params, Adam<float>* opt) {
    for (const auto& [name, node] : params.entries()) {
        const auto* t = ckpt.find(name);
        if (!t) throw std::runtime_error("checkpoint is missing tensor " + name);
        if (t->shape != node->shape)
            throw std::runtime_error("checkpoint tensor " + name + " has shape " +
                                     shape_str(t->shape) + ", store expects " +
                                     shape_str(node->shape));
        node->value = t->data;
    }
    if (!opt) return;
    auto& m = opt->m();
    auto& v = opt->v();
    size_t i = 0;
    for (const auto& [name, node] : params.entries()) {
        const auto* tm = ckpt.find("adam.m." + name);
        const auto* tv = ckpt.find("adam.v." + name);
        if (!tm || !tv)
            throw std::runtime_error("checkpoint has no optimizer state for " + name);
        m[i] = tm->data;
        v[i] = tv->data;
        ++i;
    }
    opt->set_t(ckpt.extra.value("adam_t", int64_t(0)));
}

} // namespace fsd
