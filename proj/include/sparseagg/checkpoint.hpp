#pragma once

#include <string>
#include <vector>

#include "sparseagg/params.hpp"

namespace sparseagg {

// Manifest-plus-payload weight file. Layout (all integers little-endian):
//
//   bytes 0..7   magic "SAGGCKPT"
//   u32          version (1)
//   u64          config length, followed by that many bytes of config text
//   u64          parameter count
//   per entry:   u64 name length, name bytes, u32 rank, u32 dims[rank],
//                u64 byte offset into the payload
//   u64          payload length in bytes
//   payload      32-bit little-endian floats, row-major, manifest order
//
// Round-trips are bit-exact.
struct CheckpointEntry {
    std::string name;
    std::vector<int> shape;
    std::vector<float> values;
};

struct Checkpoint {
    std::string config_text;
    std::vector<CheckpointEntry> entries;
};

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_store(const ParamStore<float>& store, const std::string& config_text);

// Loads entries into an already-built store; names and shapes must match the
// manifest exactly.
void checkpoint_into_store(const Checkpoint& ckpt, ParamStore<float>& store);

}  // namespace sparseagg
