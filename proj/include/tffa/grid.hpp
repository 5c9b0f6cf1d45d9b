#pragma once

#include "tffa/common.hpp"

#include <cstdint>
#include <vector>

namespace tffa {

// Uniform partition of the unit cube [0,1]^D into M_1 x ... x M_D cells,
// optionally restricted by a boolean mask. Cell d has width 1/M_d and the
// observation point of a cell is its center.
//
// Multi-indices are 0-based in code. The packed (active) row order is the
// lexicographic order of multi-indices with the first dimension slowest;
// this order is the on-disk contract for every per-voxel artifact.
class SpatialGrid {
public:
    SpatialGrid() = default;

    static SpatialGrid dense(std::vector<int> dims);
    static SpatialGrid masked(std::vector<int> dims, std::vector<std::uint8_t> mask);

    int ndim() const { return static_cast<int>(dims_.size()); }
    const std::vector<int>& dims() const { return dims_; }
    std::int64_t total_cells() const { return total_; }
    std::int64_t active_count() const { return static_cast<std::int64_t>(active_to_full_.size()); }
    bool has_mask() const { return !mask_.empty(); }
    const std::vector<std::uint8_t>& mask() const { return mask_; }

    // Full-grid linear index <-> multi-index (lexicographic bijection).
    std::int64_t linearize(const std::vector<int>& m) const;
    std::vector<int> unlinearize(std::int64_t full_index) const;

    bool is_active_full(std::int64_t full_index) const {
        return mask_.empty() || mask_[static_cast<std::size_t>(full_index)] != 0;
    }

    // Packed active row -> full-grid linear index, and inverse (-1 if inactive).
    std::int64_t active_to_full(std::int64_t active_row) const { return active_to_full_[active_row]; }
    std::int64_t full_to_active(std::int64_t full_index) const { return full_to_active_[full_index]; }

    // Multi-index of an active row, flattened as rows of a (active x D) table.
    const std::vector<int>& active_multi_index() const { return active_multi_; }
    int active_coord(std::int64_t active_row, int d) const {
        return active_multi_[static_cast<std::size_t>(active_row) * ndim() + d];
    }

    // Center coordinate of cell index md (0-based) along dimension d.
    double center(int d, int md) const { return (md + 0.5) / dims_[d]; }

    bool same_shape(const SpatialGrid& other) const {
        return dims_ == other.dims_ && mask_ == other.mask_;
    }

private:
    void build();

    std::vector<int> dims_;
    std::vector<std::uint8_t> mask_;  // empty => all cells active
    std::int64_t total_ = 0;
    std::vector<std::int64_t> active_to_full_;
    std::vector<std::int64_t> full_to_active_;
    std::vector<int> active_multi_;
};

}  // namespace tffa
