// Checkpoint format: a directory holding manifest.json plus weights.bin, a
// single little-endian float32 blob. The manifest lists every tensor with its
// shape and byte range, and carries a free-form "extra" object for counters.
// Round trips are bit-exact.
#pragma once

#include <string>
#include <vector>

#include "fsd/adam.hpp"
#include "fsd/params.hpp"
#include "fsd/tensor.hpp"
#include "json.hpp"

namespace fsd {

struct CheckpointTensor {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    std::vector<CheckpointTensor> tensors; // sorted by name
    nlohmann::json extra;

    const CheckpointTensor* find(const std::string& name) const;
    void add(const std::string& name, const Shape& shape, const std::vector<float>& data);
};

void save_checkpoint(const std::string& dir, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& dir);

// Packs model parameters plus, when an optimizer is given, its first and
// second moments under "adam.m." / "adam.v." and its step counter in extra.
Checkpoint make_checkpoint(const ParamStore<float>& params, const Adam<float>* opt);

// Restores parameter values (shapes must match the store exactly) and, when
// an optimizer is given, its moments and step counter.
void restore_checkpoint(const Checkpoint& ckpt, ParamStore<float>& params, Adam<float>* opt);

} // namespace fsd
