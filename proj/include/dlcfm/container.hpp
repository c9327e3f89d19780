#pragma once

#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dlcfm/array.hpp"

namespace dlcfm::io {

// DLT1 container: 8 magic bytes "DLCFMv1\n", one UTF-8 JSON header line
// declaring named f64 arrays with shapes plus free-form metadata, then the
// raw little-endian payloads concatenated in header order. Write/read
// round-trips are bit-exact; catalogs, checkpoints and sample dumps all
// use this one format.
struct Container {
    std::vector<std::pair<std::string, ad::Array>> arrays;
    nlohmann::json meta = nlohmann::json::object();

    void put(const std::string& name, ad::Array a);
    bool has(const std::string& name) const;
    const ad::Array& get(const std::string& name) const;
};

void write_container(const Container& c, const std::string& path);
Container read_container(const std::string& path);

}  // namespace dlcfm::io
