#pragma once

// Self-describing container of named real arrays.
//
// Layout (all integers little-endian):
//   bytes 0..7   magic "UV2DARC1"
//   bytes 8..15  u64 manifest length L
//   next L bytes UTF-8 JSON manifest:
//                {"meta": {...}, "arrays": [{"name", "shape": [n,c,h,w], "offset"}]}
//                `offset` counts doubles from the start of the payload
//   payload      IEEE-754 binary64 values, arrays in manifest order

#include "univ2d/tensor.hpp"

#include <nlohmann/json.hpp>

#include <map>
#include <string>

namespace univ2d {

struct Archive {
    nlohmann::json meta = nlohmann::json::object();
    std::map<std::string, Tensor> arrays;

    void save(const std::string& path) const;
    static Archive load(const std::string& path);
};

} // namespace univ2d
