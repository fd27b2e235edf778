#pragma once

#include <cstdint>

namespace soda {

// Independent, reproducible sub-seed for stream `stream` of a run seeded
// with `seed` (per-policy init, per-epoch shuffles, per-rollout streams).
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace soda
