#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace switchlab {

using Engine = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

// Independent stream seed for a (master seed, index...) tuple. Streams depend
// only on the tuple, never on scheduling.
inline std::uint64_t derive_seed(std::uint64_t seed, std::initializer_list<std::uint64_t> ids) {
    std::uint64_t h = splitmix64(seed);
    for (std::uint64_t id : ids) h = splitmix64(h ^ splitmix64(id + 0x632be59bd9b4e019ULL));
    return h;
}

inline Engine make_engine(std::uint64_t seed, std::initializer_list<std::uint64_t> ids = {}) {
    return Engine(derive_seed(seed, ids));
}

inline double std_normal(Engine& eng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    return nd(eng);
}

}  // namespace switchlab
