#include "tffa/tensor_io.hpp"

#include <nlohmann/json.hpp>

#include <cmath>
#include <cstring>
#include <fstream>

namespace tffa {

namespace {

constexpr char kMagic[4] = {'T', 'F', 'T', '1'};

void put_u64_le(std::ofstream& out, std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
    out.write(reinterpret_cast<const char*>(buf), 8);
}

std::uint64_t get_u64_le(std::ifstream& in) {
    unsigned char buf[8];
    in.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
}

}  // namespace

Tensor Tensor::from_matrix(const Eigen::MatrixXd& m) {
    Tensor t;
    t.dims = {m.rows(), m.cols()};
    t.data.resize(static_cast<std::size_t>(m.size()));
    for (Eigen::Index r = 0; r < m.rows(); ++r)
        for (Eigen::Index c = 0; c < m.cols(); ++c)
            t.data[static_cast<std::size_t>(r * m.cols() + c)] = m(r, c);
    return t;
}

Tensor Tensor::from_vector(const Eigen::VectorXd& v) {
    Tensor t;
    t.dims = {v.size()};
    t.data.assign(v.data(), v.data() + v.size());
    return t;
}

Eigen::MatrixXd Tensor::to_matrix() const {
    validate(dims.size() == 2, "tensor is not 2-D");
    Eigen::MatrixXd m(dims[0], dims[1]);
    for (std::int64_t r = 0; r < dims[0]; ++r)
        for (std::int64_t c = 0; c < dims[1]; ++c)
            m(r, c) = data[static_cast<std::size_t>(r * dims[1] + c)];
    return m;
}

Eigen::VectorXd Tensor::to_vector() const {
    validate(dims.size() == 1, "tensor is not 1-D");
    return Eigen::Map<const Eigen::VectorXd>(data.data(), static_cast<Eigen::Index>(data.size()));
}

void write_tensor(const std::filesystem::path& path, const Tensor& tensor, DType dtype) {
    validate(!tensor.dims.empty() && tensor.dims.size() <= 255, "tensor rank must be in [1, 255]");
    validate(tensor.size() == static_cast<std::int64_t>(tensor.data.size()),
             "tensor data size does not match dims");
    for (double v : tensor.data) {
        validate(std::isfinite(v), "refusing to write non-finite tensor values");
    }

    std::ofstream out(path, std::ios::binary);
    require(out.good(), "cannot open for writing: " + path.string());
    out.write(kMagic, 4);
    const std::uint8_t code = static_cast<std::uint8_t>(dtype);
    out.write(reinterpret_cast<const char*>(&code), 1);
    const std::uint8_t ndim = static_cast<std::uint8_t>(tensor.dims.size());
    out.write(reinterpret_cast<const char*>(&ndim), 1);
    for (auto d : tensor.dims) put_u64_le(out, static_cast<std::uint64_t>(d));

    if (dtype == DType::F64) {
        static_assert(sizeof(double) == 8);
        out.write(reinterpret_cast<const char*>(tensor.data.data()),
                  static_cast<std::streamsize>(tensor.data.size() * 8));
    } else {
        std::vector<float> buf(tensor.data.begin(), tensor.data.end());
        out.write(reinterpret_cast<const char*>(buf.data()),
                  static_cast<std::streamsize>(buf.size() * 4));
    }
    require(out.good(), "write failed: " + path.string());
}

Tensor read_tensor(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    validate(in.good(), "cannot open tensor file: " + path.string());

    char magic[4];
    in.read(magic, 4);
    validate(in.gcount() == 4 && std::memcmp(magic, kMagic, 4) == 0,
             "bad magic bytes (not a TFT1 file): " + path.string());

    std::uint8_t code = 0, ndim = 0;
    in.read(reinterpret_cast<char*>(&code), 1);
    in.read(reinterpret_cast<char*>(&ndim), 1);
    validate(in.good() && ndim >= 1, "truncated TFT1 header: " + path.string());
    validate(code == 1 || code == 2, "unknown dtype code in " + path.string());

    Tensor t;
    t.dims.resize(ndim);
    for (int d = 0; d < ndim; ++d) {
        t.dims[d] = static_cast<std::int64_t>(get_u64_le(in));
        validate(in.good() && t.dims[d] >= 1, "bad dims in TFT1 header: " + path.string());
    }

    const std::int64_t n = t.size();
    t.data.resize(static_cast<std::size_t>(n));
    if (code == 2) {
        in.read(reinterpret_cast<char*>(t.data.data()), n * 8);
        validate(in.gcount() == n * 8, "truncated TFT1 payload: " + path.string());
    } else {
        std::vector<float> buf(static_cast<std::size_t>(n));
        in.read(reinterpret_cast<char*>(buf.data()), n * 4);
        validate(in.gcount() == n * 4, "truncated TFT1 payload: " + path.string());
        for (std::int64_t i = 0; i < n; ++i) t.data[static_cast<std::size_t>(i)] = buf[static_cast<std::size_t>(i)];
    }
    return t;
}

void write_matrix(const std::filesystem::path& path, const Eigen::MatrixXd& m, DType dtype) {
    write_tensor(path, Tensor::from_matrix(m), dtype);
}

Eigen::MatrixXd read_matrix(const std::filesystem::path& path) {
    return read_tensor(path).to_matrix();
}

void write_manifest(const std::filesystem::path& path, const DatasetManifest& manifest) {
    nlohmann::json j;
    j["version"] = manifest.format_version;
    j["grid"]["dims"] = manifest.grid_dims;
    if (!manifest.mask_path.empty()) j["grid"]["mask_path"] = manifest.mask_path;
    j["n_time"] = manifest.n_time;
    j["scans"] = manifest.scan_paths;
    std::ofstream out(path);
    require(out.good(), "cannot open for writing: " + path.string());
    out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    validate(in.good(), "cannot open manifest: " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest is not valid JSON: " + std::string(e.what()));
    }
    DatasetManifest m;
    try {
        m.format_version = j.at("version").get<std::string>();
        m.grid_dims = j.at("grid").at("dims").get<std::vector<int>>();
        if (j.at("grid").contains("mask_path"))
            m.mask_path = j["grid"]["mask_path"].get<std::string>();
        m.n_time = j.at("n_time").get<std::int64_t>();
        m.scan_paths = j.at("scans").get<std::vector<std::string>>();
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("manifest missing required field: " + std::string(e.what()));
    }
    validate(!m.scan_paths.empty(), "manifest must list at least one scan");
    validate(m.n_time >= 1, "manifest n_time must be positive");
    return m;
}

SpatialGrid grid_from_manifest(const DatasetManifest& manifest,
                               const std::filesystem::path& base_dir) {
    if (manifest.mask_path.empty()) return SpatialGrid::dense(manifest.grid_dims);
    const Tensor mt = read_tensor(base_dir / manifest.mask_path);
    validate(static_cast<int>(mt.dims.size()) == static_cast<int>(manifest.grid_dims.size()),
             "mask rank does not match grid dims");
    for (std::size_t d = 0; d < mt.dims.size(); ++d) {
        validate(mt.dims[d] == manifest.grid_dims[d], "mask shape does not match grid dims");
    }
    std::vector<std::uint8_t> mask(mt.data.size());
    for (std::size_t i = 0; i < mt.data.size(); ++i) mask[i] = mt.data[i] != 0.0 ? 1 : 0;
    return SpatialGrid::masked(manifest.grid_dims, std::move(mask));
}

std::vector<ScanTensor> load_dataset(const DatasetManifest& manifest,
                                     const std::filesystem::path& base_dir) {
    const SpatialGrid grid = grid_from_manifest(manifest, base_dir);
    std::vector<ScanTensor> scans;
    scans.reserve(manifest.scan_paths.size());
    for (const auto& rel : manifest.scan_paths) {
        const Tensor t = read_tensor(base_dir / rel);
        validate(t.dims.size() == 2, "scan tensor must be 2-D (voxels x time): " + rel);
        validate(t.dims[0] == grid.active_count(),
                 "scan voxel count does not match manifest grid: " + rel);
        validate(t.dims[1] == manifest.n_time,
                 "scan n_time does not match manifest: " + rel);
        ScanTensor s;
        s.grid = grid;
        s.n_time = manifest.n_time;
        s.values = t.to_matrix();
        scans.push_back(std::move(s));
    }
    return scans;
}

std::vector<ScanTensor> load_dataset(const std::filesystem::path& manifest_path) {
    const DatasetManifest m = read_manifest(manifest_path);
    return load_dataset(m, manifest_path.parent_path());
}

Eigen::VectorXd time_grid(std::int64_t n_time) {
    Eigen::VectorXd t(n_time);
    for (std::int64_t j = 0; j < n_time; ++j) t[j] = (j + 0.5) / static_cast<double>(n_time);
    return t;
}

}  // namespace tffa
