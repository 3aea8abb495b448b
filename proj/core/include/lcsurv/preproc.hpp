#pragma once

// CT volume preparation: smooth each axial slice, threshold air-like voxels,
// keep lung-sized 3D components near the scan centre, close and hull each
// slice, window to bytes with a constant fill outside the mask, resample.
//
// Volumes are indexed [D, H, W] with D the axial (slice) axis. Everything here
// is deterministic.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "lcsurv/tensor.hpp"

namespace lcsurv {

struct CtVolume {
    Tensor voxels;                             // [D, H, W], Hounsfield units
    std::array<double, 3> spacing{1, 1, 1};    // (dz, dy, dx) in mm

    std::size_t depth() const { return voxels.dim(0); }
    std::size_t height() const { return voxels.dim(1); }
    std::size_t width() const { return voxels.dim(2); }
    void validate() const;
};

struct LungMask {
    Shape shape;                     // [D, H, W]
    std::vector<std::uint8_t> data;  // 0 or 1

    LungMask() = default;
    explicit LungMask(Shape shape_);

    std::size_t count() const;
    std::size_t index(std::size_t z, std::size_t y, std::size_t x) const { return (z * shape[1] + y) * shape[2] + x; }
    std::uint8_t at(std::size_t z, std::size_t y, std::size_t x) const { return data[index(z, y, x)]; }
    bool contains(const LungMask& other) const;
    friend bool operator==(const LungMask&, const LungMask&) = default;
};

double mask_iou(const LungMask& a, const LungMask& b);
double voxel_litres(std::size_t count, const std::array<double, 3>& spacing);

// Normalized 1D kernel over offsets [-r, r], r = ceil(4 sigma). sigma 0 gives {1}.
std::vector<double> gaussian_kernel(double sigma);

// Separable 2D Gaussian on each axial slice with nearest-edge boundary.
CtVolume gaussian_smooth(const CtVolume& v, double sigma_voxels);

LungMask binarize(const CtVolume& v, double threshold = -600.0);

struct Component {
    std::size_t voxels = 0;
    std::array<double, 3> centroid{};  // voxel coordinates (z, y, x)
    std::vector<std::size_t> indices;  // flat voxel indices
};

struct Components {
    Shape shape;
    std::vector<Component> items;  // largest first
};

// 6-connected labelling. Ties in size keep discovery (raster) order.
Components connected_components_3d(const LungMask& mask);

struct FilterConfig {
    double min_litres = 0.68;
    double max_litres = 7.5;
    // Maximum centroid distance from the scan centre as a fraction of the
    // physical half-diagonal.
    double max_center_fraction = 0.35;
};

struct FilterResult {
    LungMask mask;
    std::size_t kept = 0;
    std::size_t rejected_size = 0;
    std::size_t rejected_position = 0;
    bool empty() const { return kept == 0; }
};

FilterResult filter_components(const Components& components, const std::array<double, 3>& spacing,
                               const FilterConfig& cfg = {});

// One per-slice 3x3 closing pass.
LungMask close_slices(const LungMask& mask);

// Lattice points inside the convex hull of a slice's foreground voxel centres.
LungMask hull_slices(const LungMask& mask);

struct CompletionResult {
    LungMask mask;
    bool empty_input = false;
};

// Closing followed by per-slice convex hull. Always a superset of the input.
CompletionResult complete_mask(const LungMask& mask);

struct ByteVolume {
    Shape shape;
    std::vector<std::uint8_t> data;
    friend bool operator==(const ByteVolume&, const ByteVolume&) = default;
};

struct WindowConfig {
    double low = -1200.0;
    double high = 600.0;
    std::uint8_t fill = 170;
};

// Maps one HU value through the window (round half away from zero).
std::uint8_t window_value(double hu, const WindowConfig& cfg = {});
ByteVolume window_normalize_fill(const CtVolume& v, const LungMask& mask, const WindowConfig& cfg = {});

// Trilinear resampling with corner alignment. Every target extent must be >= 2.
Tensor resample(const Tensor& volume, const Shape& target);
Tensor resample(const ByteVolume& volume, const Shape& target);

struct PreprocConfig {
    double sigma_voxels = 1.0;
    double threshold_hu = -600.0;
    FilterConfig filter;
    WindowConfig window;
    Shape target{128, 256, 256};

    void validate() const;
};

struct StageDiagnostics {
    std::string stage;
    std::size_t components = 0;
    double mask_litres = 0.0;
};

struct PreprocResult {
    Tensor volume;  // resampled, values in [0, 255]
    LungMask mask;  // completed mask at source resolution
    std::vector<StageDiagnostics> diagnostics;
};

using StageSink = std::function<void(const std::string& stage, const LungMask& mask)>;

// Throws DataError naming the stage at which the mask became empty.
PreprocResult preprocess_pipeline(const CtVolume& v, const PreprocConfig& cfg = {}, const StageSink& emit = {});

inline const std::vector<std::string>& pipeline_stages() {
    static const std::vector<std::string> stages{"binarize", "filter", "close", "complete"};
    return stages;
}

// Thorax-like test volume: soft tissue body cylinder in air with two
// ellipsoidal air-filled lungs placed symmetrically about the midline.
struct ThoraxPhantomConfig {
    std::size_t size = 160;
    double spacing_mm = 2.0;
    double lung_litres = 2.0;
    double lung_offset_mm = 80.0;
    std::array<double, 2> lung_aspect{110.0, 80.0};  // z and y semi-axes (mm); x solves the volume
    std::array<double, 2> body_semi_axes{120.0, 150.0};  // y and x (mm)
};

struct ThoraxPhantom {
    CtVolume volume;
    LungMask lungs;      // voxels whose centre lies in an ellipsoid
    LungMask reference;  // per-slice hull of the lungs
};

ThoraxPhantom make_thorax_phantom(const ThoraxPhantomConfig& cfg = {});

// Raw HU volume as <stem>.json + <stem>.f32 (float32 little-endian).
void save_ct_volume(const std::filesystem::path& stem, const CtVolume& v);
CtVolume load_ct_volume(const std::filesystem::path& stem);
// Byte volume as <stem>.json + <stem>.u8.
void save_byte_volume(const std::filesystem::path& stem, const ByteVolume& v);
void save_mask(const std::filesystem::path& stem, const LungMask& m);

}  // namespace lcsurv
