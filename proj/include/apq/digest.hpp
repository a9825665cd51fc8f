#pragma once

#include <bit>
#include <cstdint>
#include <cstdio>
#include <string>
#include <string_view>

#include <Eigen/Core>

namespace apq {

/// 64-bit FNV-1a over the bit patterns of the values fed to it.
class Digest {
public:
    Digest& bytes(const void* data, std::size_t size) {
        const auto* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < size; ++i) {
            state_ ^= p[i];
            state_ *= 0x100000001b3ULL;
        }
        return *this;
    }
    Digest& add(double x) {
        const auto bits = std::bit_cast<std::uint64_t>(x);
        return bytes(&bits, sizeof bits);
    }
    Digest& add(std::uint64_t x) { return bytes(&x, sizeof x); }
    Digest& add(std::string_view s) {
        add(static_cast<std::uint64_t>(s.size()));
        return bytes(s.data(), s.size());
    }
    template <typename Derived>
    Digest& add(const Eigen::DenseBase<Derived>& m) {
        add(static_cast<std::uint64_t>(m.rows()));
        add(static_cast<std::uint64_t>(m.cols()));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) add(static_cast<double>(m(i, j)));
        return *this;
    }
    std::uint64_t value() const { return state_; }
    std::string hex() const {
        char buf[17];
        std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(state_));
        return buf;
    }

private:
    std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

}  // namespace apq
