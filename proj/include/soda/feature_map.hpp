#pragma once

#include <cmath>
#include <cstddef>
#include <vector>

#include "soda/error.hpp"

namespace soda {

// Dense token x hidden-dim matrix, row-major. The workhorse value type for
// module inputs/outputs and denoising states.
struct FeatureMap {
    int tokens = 0;
    int dim = 0;
    std::vector<double> data;

    FeatureMap() = default;
    FeatureMap(int tokens_, int dim_)
        : tokens(tokens_), dim(dim_),
          data(static_cast<size_t>(tokens_) * static_cast<size_t>(dim_), 0.0) {
        if (tokens_ < 0 || dim_ < 0) fail(ErrorCode::shape, "FeatureMap: negative shape");
    }

    double* row(int t) { return data.data() + static_cast<size_t>(t) * static_cast<size_t>(dim); }
    const double* row(int t) const {
        return data.data() + static_cast<size_t>(t) * static_cast<size_t>(dim);
    }

    double& at(int t, int k) { return data[static_cast<size_t>(t) * dim + static_cast<size_t>(k)]; }
    double at(int t, int k) const {
        return data[static_cast<size_t>(t) * dim + static_cast<size_t>(k)];
    }

    size_t size() const { return data.size(); }

    bool same_shape(const FeatureMap& other) const {
        return tokens == other.tokens && dim == other.dim;
    }

    bool all_finite() const {
        for (double v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    void add_inplace(const FeatureMap& other) {
        if (!same_shape(other)) fail(ErrorCode::shape, "FeatureMap: shape mismatch in add");
        for (size_t i = 0; i < data.size(); ++i) data[i] += other.data[i];
    }

    bool operator==(const FeatureMap& other) const {
        return tokens == other.tokens && dim == other.dim && data == other.data;
    }
};

inline void require_same_shape(const FeatureMap& a, const FeatureMap& b, const char* where) {
    if (!a.same_shape(b)) fail(ErrorCode::shape, std::string(where) + ": shape mismatch");
}

}  // namespace soda
