#include "lcdiff/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>
#include <sstream>
#include <vector>

#include <nlohmann/json.hpp>

namespace lcdiff {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

std::string hash_hex(std::uint64_t h) {
    std::ostringstream os;
    os << std::hex;
    os.width(16);
    os.fill('0');
    os << h;
    return os.str();
}

std::uint64_t hash_from_hex(const std::string& s) { return std::stoull(s, nullptr, 16); }

void write_f32le(std::ofstream& f, const Tensor<float>& t) {
    std::vector<unsigned char> buf(t.size() * 4);
    for (std::size_t i = 0; i < t.size(); ++i) {
        std::uint32_t u;
        std::memcpy(&u, &t[i], 4);
        buf[4 * i + 0] = static_cast<unsigned char>(u & 0xff);
        buf[4 * i + 1] = static_cast<unsigned char>((u >> 8) & 0xff);
        buf[4 * i + 2] = static_cast<unsigned char>((u >> 16) & 0xff);
        buf[4 * i + 3] = static_cast<unsigned char>((u >> 24) & 0xff);
    }
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
}

void read_f32le(std::ifstream& f, Tensor<float>& t) {
    std::vector<unsigned char> buf(t.size() * 4);
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (static_cast<std::size_t>(f.gcount()) != buf.size())
        throw std::runtime_error("checkpoint: tensor file truncated");
    for (std::size_t i = 0; i < t.size(); ++i) {
        const std::uint32_t u = static_cast<std::uint32_t>(buf[4 * i]) |
                                (static_cast<std::uint32_t>(buf[4 * i + 1]) << 8) |
                                (static_cast<std::uint32_t>(buf[4 * i + 2]) << 16) |
                                (static_cast<std::uint32_t>(buf[4 * i + 3]) << 24);
        std::memcpy(&t[i], &u, 4);
    }
}

}  // namespace

void save_checkpoint(const fs::path& dir, const ad::ParamStore<float>& store, const CheckpointMeta& meta) {
    fs::create_directories(dir);
    json man;
    man["version"] = 1;
    man["step"] = meta.step;
    man["config_hash"] = hash_hex(meta.config_hash);
    man["tensors"] = json::array();
    for (const auto& e : store.entries()) {
        const std::string file = e.name + ".bin";
        std::ofstream f(dir / file, std::ios::binary);
        if (!f) throw std::runtime_error("save_checkpoint: cannot write " + (dir / file).string());
        write_f32le(f, e.value);
        man["tensors"].push_back({{"name", e.name}, {"shape", e.value.shape()}, {"dtype", "f32"}, {"file", file}});
    }
    std::ofstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("save_checkpoint: cannot write manifest in " + dir.string());
    mf << man.dump(2) << "\n";
}

CheckpointMeta load_checkpoint(const fs::path& dir, ad::ParamStore<float>& store) {
    std::ifstream mf(dir / "manifest.json");
    if (!mf) throw std::runtime_error("load_checkpoint: no manifest.json in " + dir.string());
    const json man = json::parse(mf);
    if (man.at("version").get<int>() != 1) throw std::runtime_error("load_checkpoint: unsupported version");
    CheckpointMeta meta;
    meta.step = man.at("step").get<std::int64_t>();
    meta.config_hash = hash_from_hex(man.at("config_hash").get<std::string>());

    std::set<std::string> seen;
    for (const auto& jt : man.at("tensors")) {
        const std::string name = jt.at("name").get<std::string>();
        if (jt.at("dtype").get<std::string>() != "f32")
            throw std::runtime_error("load_checkpoint: unsupported dtype for " + name);
        bool found = false;
        for (auto& e : store.entries()) {
            if (e.name != name) continue;
            const std::vector<int> shape = jt.at("shape").get<std::vector<int>>();
            if (shape != e.value.shape())
                throw std::runtime_error("load_checkpoint: shape mismatch for " + name);
            std::ifstream f(dir / jt.at("file").get<std::string>(), std::ios::binary);
            if (!f) throw std::runtime_error("load_checkpoint: missing tensor file for " + name);
            read_f32le(f, e.value);
            found = true;
            break;
        }
        if (!found) throw std::runtime_error("load_checkpoint: store has no parameter named " + name);
        seen.insert(name);
    }
    for (const auto& e : store.entries())
        if (!seen.count(e.name)) throw std::runtime_error("load_checkpoint: checkpoint lacks parameter " + e.name);
    return meta;
}

bool is_checkpoint_dir(const fs::path& dir) { return fs::exists(dir / "manifest.json"); }

}  // namespace lcdiff
