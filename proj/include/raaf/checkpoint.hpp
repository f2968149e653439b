#pragma once

#include <string>
#include <vector>

#include "raaf/tensor.hpp"

namespace raaf {

/// Flat binary parameter container. Layout: magic "RAAF1", then one record
/// per slot: u64 name length, name bytes, u64 rank, u64 dims, f64 values.
/// All integers and floats little-endian. Round-trips bit-exactly.
void save_checkpoint(const std::string& path, const std::vector<const ParamSlot*>& slots);

/// Loads values into the given slots, matched by name. Every slot must be
/// present in the file with an identical shape; unknown names in the file
/// are an error.
void load_checkpoint(const std::string& path, const std::vector<ParamSlot*>& slots);

struct RawSlot {
    std::string name;
    Tensor value;
};

std::vector<RawSlot> read_checkpoint(const std::string& path);

}  // namespace raaf
