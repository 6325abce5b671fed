#pragma once

#include <cstdint>
#include <cstddef>
#include <vector>

namespace imc {

/// Deterministic random stream (xoshiro256** seeded via splitmix64).
/// Identical seeds give identical draw sequences on every platform; the
/// standard library distributions are not portable, so draws are produced
/// here directly.
class RngStream {
  public:
    explicit RngStream(std::uint64_t seed);

    /// Independent stream derived from the base seed and an id. Derivation
    /// ignores draws already made, so substreams do not depend on the order
    /// in which the parent was used.
    RngStream substream(std::uint64_t id) const;

    std::uint64_t next_u64();

    /// Uniform in [0, 1).
    double uniform();
    double uniform(double lo, double hi);

    /// Standard normal (Box-Muller).
    double normal();

    /// Uniform index in [0, n).
    std::size_t uniform_index(std::size_t n);

    /// k distinct indices from [0, n), in draw order (partial Fisher-Yates).
    std::vector<std::size_t> sample_without_replacement(std::size_t n, std::size_t k);

  private:
    std::uint64_t base_seed_;
    std::uint64_t s_[4];
    double spare_normal_ = 0.0;
    bool has_spare_ = false;
};

}  // namespace imc
