#include "tffa/grid.hpp"

namespace tffa {

SpatialGrid SpatialGrid::dense(std::vector<int> dims) {
    SpatialGrid g;
    g.dims_ = std::move(dims);
    g.build();
    return g;
}

SpatialGrid SpatialGrid::masked(std::vector<int> dims, std::vector<std::uint8_t> mask) {
    SpatialGrid g;
    g.dims_ = std::move(dims);
    g.mask_ = std::move(mask);
    g.build();
    return g;
}

void SpatialGrid::build() {
    validate(!dims_.empty(), "grid must have at least one dimension");
    total_ = 1;
    for (int d : dims_) {
        validate(d >= 2, "every grid dimension must be >= 2");
        total_ *= d;
    }
    if (!mask_.empty()) {
        validate(static_cast<std::int64_t>(mask_.size()) == total_,
                 "grid mask size must match the product of dims");
    }

    full_to_active_.assign(static_cast<std::size_t>(total_), -1);
    active_to_full_.clear();
    active_multi_.clear();

    const int D = ndim();
    std::vector<int> m(D, 0);
    for (std::int64_t full = 0; full < total_; ++full) {
        if (is_active_full(full)) {
            full_to_active_[full] = static_cast<std::int64_t>(active_to_full_.size());
            active_to_full_.push_back(full);
            active_multi_.insert(active_multi_.end(), m.begin(), m.end());
        }
        // advance lexicographic counter, last dimension fastest
        for (int d = D - 1; d >= 0; --d) {
            if (++m[d] < dims_[d]) break;
            m[d] = 0;
        }
    }
    validate(!active_to_full_.empty(), "grid mask must leave at least one active voxel");
}

std::int64_t SpatialGrid::linearize(const std::vector<int>& m) const {
    validate(static_cast<int>(m.size()) == ndim(), "multi-index rank mismatch");
    std::int64_t idx = 0;
    for (int d = 0; d < ndim(); ++d) {
        validate(m[d] >= 0 && m[d] < dims_[d], "multi-index out of range");
        idx = idx * dims_[d] + m[d];
    }
    return idx;
}

std::vector<int> SpatialGrid::unlinearize(std::int64_t full_index) const {
    validate(full_index >= 0 && full_index < total_, "linear index out of range");
    std::vector<int> m(ndim());
    for (int d = ndim() - 1; d >= 0; --d) {
        m[d] = static_cast<int>(full_index % dims_[d]);
        full_index /= dims_[d];
    }
    return m;
}

}  // namespace tffa
