#pragma once

#include "tffa/common.hpp"
#include "tffa/grid.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace tffa {

enum class DType : std::uint8_t { F32 = 1, F64 = 2 };

// Dense N-dimensional tensor with row-major storage. Values are held in
// working precision (f64); f32 exists only at rest on disk.
struct Tensor {
    std::vector<std::int64_t> dims;
    std::vector<double> data;  // row-major

    std::int64_t size() const {
        std::int64_t s = 1;
        for (auto d : dims) s *= d;
        return s;
    }
    static Tensor from_matrix(const Eigen::MatrixXd& m);
    static Tensor from_vector(const Eigen::VectorXd& v);
    Eigen::MatrixXd to_matrix() const;  // requires 2-D
    Eigen::VectorXd to_vector() const;  // requires 1-D
};

// TFT1 container:
//   bytes 0..3   magic "TFT1"
//   byte  4      dtype code (1 = f32, 2 = f64)
//   byte  5      ndim
//   next 8*ndim  dims, little-endian u64
//   payload      row-major values, little-endian
void write_tensor(const std::filesystem::path& path, const Tensor& tensor,
                  DType dtype = DType::F64);
Tensor read_tensor(const std::filesystem::path& path);

// Matrix convenience wrappers over the same format.
void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m,
                  DType dtype = DType::F64);
Eigen::MatrixXd read_matrix(const std::filesystem::path& path);

// One subject's discretized spatiotemporal observation: packed active
// voxels by rows, time points by columns.
struct ScanTensor {
    SpatialGrid grid;
    std::int64_t n_time = 0;
    Eigen::MatrixXd values;  // active_count x n_time

    void validate_shape() const {
        validate(n_time >= 1, "scan must have at least one time point");
        validate(values.rows() == grid.active_count() && values.cols() == n_time,
                 "scan value shape does not match grid/n_time");
    }
};

struct DatasetManifest {
    std::string format_version = "1";
    std::vector<int> grid_dims;
    std::string mask_path;  // optional, relative to the manifest
    std::int64_t n_time = 0;
    std::vector<std::string> scan_paths;  // relative to the manifest

    int n_subjects() const { return static_cast<int>(scan_paths.size()); }
};

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::filesystem::path& path);

// Loads and validates every scan in the manifest against the shared grid.
// No centering happens here; the covariance assembly removes the
// cross-subject mean itself.
std::vector<ScanTensor> load_dataset(const DatasetManifest& manifest,
                                     const std::filesystem::path& base_dir);
std::vector<ScanTensor> load_dataset(const std::filesystem::path& manifest_path);

SpatialGrid grid_from_manifest(const DatasetManifest& manifest,
                               const std::filesystem::path& base_dir);

// Evenly spaced temporal grid on [0,1] (cell midpoints), shared by the
// generator and the basis evaluation.
Eigen::VectorXd time_grid(std::int64_t n_time);

}  // namespace tffa
