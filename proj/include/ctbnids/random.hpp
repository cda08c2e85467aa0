#ifndef CTBNIDS_RANDOM_HPP
#define CTBNIDS_RANDOM_HPP

#include <cstdint>
#include <random>
#include <string_view>

namespace ctbnids {

using Rng = std::mt19937_64;

// Independent sub-stream seeds. All randomness in the library flows from an
// explicit seed through these, so results do not depend on call order.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0);
std::uint64_t derive_seed(std::uint64_t base, std::string_view stream);

double uniform01(Rng& rng);
// Exponential waiting time; +inf when rate is zero.
double exponential(Rng& rng, double rate);

}  // namespace ctbnids

#endif
