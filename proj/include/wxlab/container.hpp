// SPDX-License-Identifier: Apache-2.0
//
// On-disk array container shared by datasets and static masks: a directory
// holding manifest.json (dims, channel names, coordinates, timestamps,
// normalization stats) plus data.f32, little-endian 32-bit floats in C order.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wxlab/tensor.hpp"

namespace wxlab {

struct ArrayContainer {
    std::string kind;  // "series" or "static"
    std::vector<int64_t> dims;
    std::vector<std::string> channel_names;
    std::vector<double> channel_mean;
    std::vector<double> channel_std;
    std::vector<double> lats;
    std::vector<double> lons;
    std::vector<int64_t> timestamps;  // empty for static containers
    Tensor data;                      // doubles in memory, f32 on disk
};

// Writes manifest.json and data.f32 under `dir` (created if missing).
// Values are rounded to f32 on write; a container loaded and saved again
// reproduces the data file byte for byte.
void save_container(const std::string& dir, const ArrayContainer& c);

// Throws std::runtime_error on missing files, malformed manifests, or a
// data file whose size disagrees with the manifest dims.
ArrayContainer load_container(const std::string& dir);

}  // namespace wxlab
