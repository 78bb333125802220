// SPDX-License-Identifier: Apache-2.0

#include "wxlab/container.hpp"

#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wxlab/timeutil.hpp"

namespace wxlab {

using nlohmann::json;

void save_container(const std::string& dir, const ArrayContainer& c) {
    int64_t n = 1;
    for (int64_t d : c.dims) n *= d;
    if (n != c.data.numel()) {
        throw std::runtime_error("container dims do not match data size");
    }

    std::filesystem::create_directories(dir);

    json m;
    m["kind"] = c.kind;
    m["dims"] = c.dims;
    m["channel_names"] = c.channel_names;
    m["channel_mean"] = c.channel_mean;
    m["channel_std"] = c.channel_std;
    m["lats"] = c.lats;
    m["lons"] = c.lons;
    std::vector<std::string> stamps;
    stamps.reserve(c.timestamps.size());
    for (int64_t t : c.timestamps) stamps.push_back(format_iso8601(t));
    m["timestamps"] = stamps;

    std::ofstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot write " + dir + "/manifest.json");
    mf << m.dump(2) << "\n";
    mf.close();

    std::ofstream df(dir + "/data.f32", std::ios::binary);
    if (!df) throw std::runtime_error("cannot write " + dir + "/data.f32");
    std::vector<float> buf(static_cast<size_t>(c.data.numel()));
    for (int64_t i = 0; i < c.data.numel(); ++i) buf[static_cast<size_t>(i)] = static_cast<float>(c.data[i]);
    df.write(reinterpret_cast<const char*>(buf.data()),
             static_cast<std::streamsize>(buf.size() * sizeof(float)));
    if (!df) throw std::runtime_error("short write to " + dir + "/data.f32");
}

ArrayContainer load_container(const std::string& dir) {
    std::ifstream mf(dir + "/manifest.json");
    if (!mf) throw std::runtime_error("cannot open " + dir + "/manifest.json");
    json m;
    try {
        mf >> m;
    } catch (const json::exception& e) {
        throw std::runtime_error("malformed manifest in " + dir + ": " + e.what());
    }

    ArrayContainer c;
    try {
        c.kind = m.at("kind").get<std::string>();
        c.dims = m.at("dims").get<std::vector<int64_t>>();
        c.channel_names = m.at("channel_names").get<std::vector<std::string>>();
        c.channel_mean = m.at("channel_mean").get<std::vector<double>>();
        c.channel_std = m.at("channel_std").get<std::vector<double>>();
        c.lats = m.at("lats").get<std::vector<double>>();
        c.lons = m.at("lons").get<std::vector<double>>();
        for (const auto& s : m.at("timestamps").get<std::vector<std::string>>()) {
            c.timestamps.push_back(parse_iso8601(s));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error("manifest in " + dir + " is missing fields: " + e.what());
    }

    int64_t n = 1;
    for (int64_t d : c.dims) {
        if (d <= 0) throw std::runtime_error("manifest in " + dir + " has non-positive dims");
        n *= d;
    }

    std::ifstream df(dir + "/data.f32", std::ios::binary | std::ios::ate);
    if (!df) throw std::runtime_error("cannot open " + dir + "/data.f32");
    auto bytes = static_cast<int64_t>(df.tellg());
    if (bytes != n * static_cast<int64_t>(sizeof(float))) {
        throw std::runtime_error(dir + "/data.f32 holds " + std::to_string(bytes) +
                                 " bytes, manifest dims imply " +
                                 std::to_string(n * sizeof(float)));
    }
    df.seekg(0);
    std::vector<float> buf(static_cast<size_t>(n));
    df.read(reinterpret_cast<char*>(buf.data()), bytes);
    if (!df) throw std::runtime_error("short read from " + dir + "/data.f32");

    c.data = Tensor(c.dims);
    for (int64_t i = 0; i < n; ++i) c.data[i] = static_cast<double>(buf[static_cast<size_t>(i)]);
    return c;
}

}  // namespace wxlab
