#include <doctest.h>

#include <cstdint>
#include <filesystem>
#include <fstream>

#include "dlcfm/container.hpp"
#include "dlcfm/errors.hpp"
#include "dlcfm/rng.hpp"

using namespace dlcfm;

namespace {

std::filesystem::path tmp_file(const std::string& name) {
    return std::filesystem::temp_directory_path() / ("dlcfm_test_" + name);
}

std::string slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void spit(const std::filesystem::path& p, const std::string& bytes) {
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

io::Container sample_container() {
    StreamRng rng(3, "test.container");
    io::Container c;
    ad::Array a({2, 3});
    for (double& v : a.data) v = rng.normal();
    ad::Array b({4});
    for (double& v : b.data) v = rng.uniform();
    c.put("alpha", a);
    c.put("beta", b);
    c.meta = {{"kind", "test"}, {"seed", 3}, {"scale", 0.12345678901234567}};
    return c;
}

}  // namespace

TEST_CASE("container round-trip is bit-exact") {
    const auto path = tmp_file("rt.dlt1");
    io::Container c = sample_container();
    io::write_container(c, path.string());
    io::Container r = io::read_container(path.string());

    REQUIRE(r.arrays.size() == 2);
    CHECK(r.arrays[0].first == "alpha");
    CHECK(r.arrays[1].first == "beta");
    CHECK(r.get("alpha").shape == c.get("alpha").shape);
    CHECK(r.get("alpha").data == c.get("alpha").data);
    CHECK(r.get("beta").data == c.get("beta").data);
    CHECK(r.meta["scale"].get<double>() == 0.12345678901234567);

    // writing the read-back container reproduces the file bytes
    const auto path2 = tmp_file("rt2.dlt1");
    io::write_container(r, path2.string());
    CHECK(slurp(path) == slurp(path2));
    std::filesystem::remove(path);
    std::filesystem::remove(path2);
}

TEST_CASE("magic bytes are the 8-byte DLCFMv1 newline header") {
    const auto path = tmp_file("magic.dlt1");
    io::write_container(sample_container(), path.string());
    const std::string bytes = slurp(path);
    CHECK(bytes.substr(0, 8) == "DLCFMv1\n");
    std::filesystem::remove(path);
}

TEST_CASE("corrupted magic is a distinct error") {
    const auto path = tmp_file("badmagic.dlt1");
    io::write_container(sample_container(), path.string());
    std::string bytes = slurp(path);
    bytes[0] = 'X';
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(io::read_container(path.string()), doctest::Contains("bad magic"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("truncated payload is a distinct error") {
    const auto path = tmp_file("trunc.dlt1");
    io::write_container(sample_container(), path.string());
    std::string bytes = slurp(path);
    bytes.resize(bytes.size() - 9);
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(io::read_container(path.string()), doctest::Contains("truncated"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("header/payload size mismatch is a distinct error") {
    const auto path = tmp_file("mismatch.dlt1");
    io::write_container(sample_container(), path.string());
    std::string bytes = slurp(path);
    bytes += std::string(8, '\0');  // trailing garbage the header does not declare
    spit(path, bytes);
    CHECK_THROWS_WITH_AS(io::read_container(path.string()), doctest::Contains("mismatch"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("malformed header JSON is reported") {
    const auto path = tmp_file("badheader.dlt1");
    spit(path, std::string("DLCFMv1\n{not json}\n"));
    CHECK_THROWS_WITH_AS(io::read_container(path.string()), doctest::Contains("bad header"), IoError);
    std::filesystem::remove(path);
}

TEST_CASE("duplicate array names are rejected") {
    io::Container c;
    c.put("a", ad::Array({1, 1}));
    CHECK_THROWS_AS(c.put("a", ad::Array({1, 1})), IoError);
}

TEST_CASE("stream rng: streams and forks are deterministic and distinct") {
    StreamRng a(5, "data");
    StreamRng b(5, "data");
    StreamRng c(5, "train");
    const double va = a.uniform();
    CHECK(va == b.uniform());
    CHECK(va != c.uniform());

    StreamRng f1 = StreamRng(5, "data").fork(10);
    StreamRng f2 = StreamRng(5, "data").fork(10);
    StreamRng f3 = StreamRng(5, "data").fork(11);
    const double v1 = f1.normal();
    CHECK(v1 == f2.normal());
    CHECK(v1 != f3.normal());
}

TEST_CASE("stream rng: uniforms land in [0,1)") {
    StreamRng rng(6, "range");
    for (int i = 0; i < 10000; ++i) {
        const double u = rng.uniform();
        CHECK(u >= 0.0);
        CHECK(u < 1.0);
    }
}
