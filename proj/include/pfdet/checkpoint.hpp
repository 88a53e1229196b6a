#pragma once

#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "pfdet/autograd.hpp"
#include "pfdet/tensor.hpp"

namespace pfdet {

// Flat binary tensor codec: magic "PFT1", u32 rank, u32 dims[rank], then
// little-endian float32 payload. Shared by dataset files and checkpoints.
void write_tensor_f32(std::ostream& os, const Tensor& t);
Tensor read_tensor_f32(std::istream& is);
void save_tensor_file(const std::string& path, const Tensor& t);
Tensor load_tensor_file(const std::string& path);

// Checkpoint archive: magic "PF3C", u32 version, u32 count, then
// (u32 name_len, name, tensor) entries sorted by name. Names are the
// stage-to-stage weight compatibility contract.
using Checkpoint = std::map<std::string, Tensor>;

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint snapshot_params(const ag::ParamStore& store);

struct LoadReport {
    std::vector<std::string> loaded;
    std::vector<std::string> missing;     // in store, absent from checkpoint
    std::vector<std::string> unexpected;  // in checkpoint, absent from store
};

// Loads every matching name; leaves missing parameters at their current
// values. Shape mismatches always throw.
LoadReport load_into_params(ag::ParamStore& store, const Checkpoint& ckpt);

// Requires an exact name match in both directions.
void load_into_params_strict(ag::ParamStore& store, const Checkpoint& ckpt);

}  // namespace pfdet
