#include "dlcfm/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>

#include "dlcfm/errors.hpp"

static_assert(std::endian::native == std::endian::little, "DLT1 payloads are little-endian");

namespace dlcfm::io {

namespace {
constexpr char kMagic[8] = {'D', 'L', 'C', 'F', 'M', 'v', '1', '\n'};
}

void Container::put(const std::string& name, ad::Array a) {
    for (auto& [n, _] : arrays)
        if (n == name) throw IoError("container: duplicate array name '" + name + "'");
    arrays.emplace_back(name, std::move(a));
}

bool Container::has(const std::string& name) const {
    for (const auto& [n, _] : arrays)
        if (n == name) return true;
    return false;
}

const ad::Array& Container::get(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return a;
    throw IoError("container: no array named '" + name + "'");
}

void write_container(const Container& c, const std::string& path) {
    nlohmann::json header;
    header["arrays"] = nlohmann::json::array();
    for (const auto& [name, a] : c.arrays) {
        nlohmann::json entry;
        entry["name"] = name;
        entry["shape"] = a.shape;
        entry["dtype"] = "f64";
        header["arrays"].push_back(entry);
    }
    header["meta"] = c.meta;
    const std::string line = header.dump();

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open '" + path + "' for writing");
    out.write(kMagic, sizeof(kMagic));
    out.write(line.data(), static_cast<std::streamsize>(line.size()));
    out.put('\n');
    for (const auto& [name, a] : c.arrays) {
        out.write(reinterpret_cast<const char*>(a.data.data()),
                  static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        (void)name;
    }
    out.flush();
    if (!out) throw IoError("write failed for '" + path + "'");
}

Container read_container(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open '" + path + "' for reading");

    char magic[8];
    in.read(magic, sizeof(magic));
    if (in.gcount() != sizeof(magic) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw IoError("bad magic in '" + path + "': not a DLT1 container");

    std::string line;
    if (!std::getline(in, line)) throw IoError("missing header line in '" + path + "'");

    nlohmann::json header;
    try {
        header = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
        throw IoError("bad header in '" + path + "': " + e.what());
    }
    if (!header.contains("arrays") || !header["arrays"].is_array())
        throw IoError("bad header in '" + path + "': missing 'arrays'");

    Container c;
    if (header.contains("meta")) c.meta = header["meta"];

    // Validate shapes and total payload size against what is actually in
    // the file before reading any array.
    std::size_t expected = 0;
    std::vector<std::pair<std::string, ad::Shape>> decls;
    for (const auto& entry : header["arrays"]) {
        if (!entry.contains("name") || !entry.contains("shape") || !entry.contains("dtype"))
            throw IoError("bad header in '" + path + "': array entry missing name/shape/dtype");
        if (entry["dtype"] != "f64")
            throw IoError("bad header in '" + path + "': unsupported dtype " + entry["dtype"].dump());
        ad::Shape shape;
        for (const auto& d : entry["shape"]) {
            const std::int64_t v = d.get<std::int64_t>();
            if (v <= 0) throw IoError("bad header in '" + path + "': non-positive dimension");
            shape.push_back(static_cast<std::size_t>(v));
        }
        expected += ad::shape_numel(shape) * sizeof(double);
        decls.emplace_back(entry["name"].get<std::string>(), std::move(shape));
    }

    const std::streampos payload_start = in.tellg();
    in.seekg(0, std::ios::end);
    const std::size_t actual = static_cast<std::size_t>(in.tellg() - payload_start);
    if (actual < expected)
        throw IoError("truncated payload in '" + path + "': header declares " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(actual));
    if (actual > expected)
        throw IoError("payload size mismatch in '" + path + "': header declares " + std::to_string(expected) +
                      " bytes, file has " + std::to_string(actual) + " (trailing bytes)");
    in.seekg(payload_start);

    for (auto& [name, shape] : decls) {
        ad::Array a(shape);
        in.read(reinterpret_cast<char*>(a.data.data()),
                static_cast<std::streamsize>(a.data.size() * sizeof(double)));
        if (static_cast<std::size_t>(in.gcount()) != a.data.size() * sizeof(double))
            throw IoError("truncated payload in '" + path + "' while reading array '" + name + "'");
        c.put(name, std::move(a));
    }
    return c;
}

}  // namespace dlcfm::io
