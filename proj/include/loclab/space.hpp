#pragma once

#include "loclab/errors.hpp"

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

namespace loclab {

using Scope = std::vector<int>;

/// Mixed-radix enumeration of a product of finite sets. Coordinate 0 is the
/// most significant digit, so joint index = sum_i x_i * stride_i with
/// stride_{n-1} = 1. Every table in the library uses this order.
class ProductSpace {
public:
    ProductSpace() = default;

    explicit ProductSpace(std::vector<int> sizes) : sizes_(std::move(sizes)), strides_(sizes_.size()) {
        std::size_t stride = 1;
        for (std::size_t i = sizes_.size(); i-- > 0;) {
            if (sizes_[i] < 1)
                throw InvalidArgument("coordinate " + std::to_string(i) + " has cardinality < 1");
            strides_[i] = stride;
            stride *= static_cast<std::size_t>(sizes_[i]);
        }
        total_ = stride;
    }

    std::size_t rank() const { return sizes_.size(); }
    std::size_t size() const { return total_; }
    int extent(std::size_t i) const { return sizes_[i]; }
    std::size_t stride(std::size_t i) const { return strides_[i]; }
    const std::vector<int>& extents() const { return sizes_; }

    int digit(std::size_t index, std::size_t i) const {
        return static_cast<int>((index / strides_[i]) % static_cast<std::size_t>(sizes_[i]));
    }

    void decode(std::size_t index, std::span<int> digits) const {
        for (std::size_t i = 0; i < sizes_.size(); ++i) {
            digits[i] = static_cast<int>(index / strides_[i]);
            index %= strides_[i];
        }
    }

    std::vector<int> decode(std::size_t index) const {
        std::vector<int> d(sizes_.size());
        decode(index, d);
        return d;
    }

    std::size_t encode(std::span<const int> digits) const {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < sizes_.size(); ++i)
            idx += static_cast<std::size_t>(digits[i]) * strides_[i];
        return idx;
    }

    /// Index of the state equal to `index` except that coordinate i takes `value`.
    std::size_t with_digit(std::size_t index, std::size_t i, int value) const {
        const int cur = digit(index, i);
        return index + static_cast<std::size_t>(value) * strides_[i] - static_cast<std::size_t>(cur) * strides_[i];
    }

    /// Hamming distance between two joint indices.
    std::size_t hamming(std::size_t x, std::size_t y) const {
        std::size_t d = 0;
        for (std::size_t i = 0; i < sizes_.size(); ++i)
            d += digit(x, i) != digit(y, i);
        return d;
    }

    friend bool operator==(const ProductSpace& a, const ProductSpace& b) { return a.sizes_ == b.sizes_; }

private:
    std::vector<int> sizes_;
    std::vector<std::size_t> strides_;
    std::size_t total_ = 1;
};

/// Projection of a joint assignment onto a sorted subset of coordinates, with
/// the projected assignments enumerated in the same mixed-radix order.
class ScopeIndexer {
public:
    ScopeIndexer() = default;

    ScopeIndexer(const ProductSpace& full, Scope scope) : scope_(std::move(scope)) {
        if (!std::is_sorted(scope_.begin(), scope_.end()) ||
            std::adjacent_find(scope_.begin(), scope_.end()) != scope_.end())
            throw InvalidArgument("scope must be strictly increasing");
        std::vector<int> sizes;
        sizes.reserve(scope_.size());
        for (int c : scope_) {
            if (c < 0 || static_cast<std::size_t>(c) >= full.rank())
                throw InvalidArgument("scope coordinate " + std::to_string(c) + " out of range");
            sizes.push_back(full.extent(static_cast<std::size_t>(c)));
        }
        local_ = ProductSpace(std::move(sizes));
    }

    const Scope& scope() const { return scope_; }
    const ProductSpace& local() const { return local_; }
    std::size_t size() const { return local_.size(); }

    bool contains(int coord) const { return std::binary_search(scope_.begin(), scope_.end(), coord); }

    /// Position of `coord` inside the scope, or -1.
    int position(int coord) const {
        auto it = std::lower_bound(scope_.begin(), scope_.end(), coord);
        return (it != scope_.end() && *it == coord) ? static_cast<int>(it - scope_.begin()) : -1;
    }

    std::size_t project(std::span<const int> full_digits) const {
        std::size_t idx = 0;
        for (std::size_t p = 0; p < scope_.size(); ++p)
            idx += static_cast<std::size_t>(full_digits[static_cast<std::size_t>(scope_[p])]) * local_.stride(p);
        return idx;
    }

private:
    Scope scope_;
    ProductSpace local_;
};

inline Scope full_scope(std::size_t n) {
    Scope s(n);
    for (std::size_t i = 0; i < n; ++i)
        s[i] = static_cast<int>(i);
    return s;
}

} // namespace loclab
