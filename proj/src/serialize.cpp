#include "dagr/serialize.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "json.hpp"

namespace dagr {

namespace fs = std::filesystem;
using nlohmann::json;

std::uint64_t fnv1a64(const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    std::uint64_t hash = 0xcbf29ce484222325ULL;
    for (std::size_t i = 0; i < size; ++i) {
        hash ^= bytes[i];
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

namespace {

std::string hash_hex(std::uint64_t h) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void check_name(const std::string& name) {
    if (name.empty() || name.find('/') != std::string::npos || name.find('\\') != std::string::npos)
        throw Error("checkpoint: invalid tensor name '" + name + "'");
}

std::string blob_bytes(const std::string& name, const Tensor& tensor) {
    json header;
    header["dtype"] = "f64";
    header["name"] = name;
    header["shape"] = tensor.shape();
    std::string out = header.dump();
    out.push_back('\n');
    const auto& values = tensor.data();
    const std::size_t payload = values.size() * sizeof(double);
    const std::size_t text_size = out.size();
    out.resize(text_size + payload);
    if (payload) std::memcpy(out.data() + text_size, values.data(), payload);
    return out;
}

}  // namespace

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("io: cannot open '" + path + "' for writing");
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    if (!out) throw Error("io: failed writing '" + path + "'");
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("io: cannot open '" + path + "'");
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

void write_tensor_blob(const std::string& path, const std::string& name, const Tensor& tensor) {
    check_name(name);
    write_text_file(path, blob_bytes(name, tensor));
}

std::pair<std::string, Tensor> read_tensor_blob(const std::string& path) {
    const std::string raw = read_text_file(path);
    const std::size_t nl = raw.find('\n');
    if (nl == std::string::npos) throw Error("checkpoint: malformed blob '" + path + "'");
    json header;
    try {
        header = json::parse(raw.substr(0, nl));
    } catch (const std::exception& e) {
        throw Error("checkpoint: bad blob header in '" + path + "': " + e.what());
    }
    if (header.value("dtype", "") != "f64")
        throw Error("checkpoint: unsupported dtype in '" + path + "'");
    Shape shape = header.at("shape").get<Shape>();
    const std::string name = header.at("name").get<std::string>();
    const std::size_t count = shape_numel(shape);
    const std::size_t payload = raw.size() - nl - 1;
    if (payload != count * sizeof(double))
        throw Error("checkpoint: blob size mismatch in '" + path + "'");
    std::vector<double> values(count);
    if (count) std::memcpy(values.data(), raw.data() + nl + 1, payload);
    return {name, Tensor::from_data(std::move(shape), std::move(values))};
}

void save_checkpoint(const std::string& dir,
                     const std::vector<std::pair<std::string, Tensor>>& named_tensors) {
    fs::create_directories(dir);
    json manifest;
    manifest["format_version"] = kCheckpointFormatVersion;
    json entries = json::array();
    // manifest order is name-sorted so save -> load -> save round-trips
    // byte-identically regardless of the caller's ordering
    std::vector<std::pair<std::string, Tensor>> sorted = named_tensors;
    std::sort(sorted.begin(), sorted.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });
    std::map<std::string, bool> seen;
    for (const auto& [name, tensor] : sorted) {
        check_name(name);
        if (seen.count(name)) throw Error("checkpoint: duplicate tensor name '" + name + "'");
        seen[name] = true;
        const std::string file = name + ".bin";
        const std::string bytes = blob_bytes(name, tensor);
        write_text_file((fs::path(dir) / file).string(), bytes);
        json entry;
        entry["file"] = file;
        entry["hash"] = hash_hex(fnv1a64(bytes.data(), bytes.size()));
        entry["name"] = name;
        entry["shape"] = tensor.shape();
        entries.push_back(entry);
    }
    manifest["tensors"] = entries;
    write_text_file((fs::path(dir) / "manifest.json").string(), manifest.dump(2) + "\n");
}

std::map<std::string, Tensor> load_checkpoint(const std::string& dir) {
    const fs::path root(dir);
    json manifest;
    try {
        manifest = json::parse(read_text_file((root / "manifest.json").string()));
    } catch (const Error&) {
        throw;
    } catch (const std::exception& e) {
        throw Error(std::string("checkpoint: bad manifest: ") + e.what());
    }
    if (manifest.value("format_version", -1) != kCheckpointFormatVersion)
        throw Error("checkpoint: format version mismatch in '" + dir + "'");
    std::map<std::string, Tensor> out;
    for (const auto& entry : manifest.at("tensors")) {
        const std::string name = entry.at("name").get<std::string>();
        const std::string file = entry.at("file").get<std::string>();
        const std::string bytes = read_text_file((root / file).string());
        const std::string expect = entry.at("hash").get<std::string>();
        if (hash_hex(fnv1a64(bytes.data(), bytes.size())) != expect)
            throw Error("checkpoint: content hash mismatch for '" + name + "'");
        auto [blob_name, tensor] = read_tensor_blob((root / file).string());
        if (blob_name != name) throw Error("checkpoint: blob/manifest name mismatch for '" + name + "'");
        const Shape expect_shape = entry.at("shape").get<Shape>();
        if (tensor.shape() != expect_shape)
            throw Error("checkpoint: shape mismatch for '" + name + "'");
        out.emplace(name, std::move(tensor));
    }
    return out;
}

}  // namespace dagr
