#pragma once

#include <cstdint>
#include <filesystem>

#include "lcdiff/autodiff.hpp"

namespace lcdiff {

struct CheckpointMeta {
    std::int64_t step = 0;
    std::uint64_t config_hash = 0;
};

// Checkpoint layout: one little-endian float32 raw file per named tensor
// plus manifest.json carrying names, shapes, dtype, training step, and the
// config hash.
void save_checkpoint(const std::filesystem::path& dir, const ad::ParamStore<float>& store,
                     const CheckpointMeta& meta);

// Fills an already-constructed store (same names and shapes) from dir.
CheckpointMeta load_checkpoint(const std::filesystem::path& dir, ad::ParamStore<float>& store);

bool is_checkpoint_dir(const std::filesystem::path& dir);

}  // namespace lcdiff
