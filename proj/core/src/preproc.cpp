#include "lcsurv/preproc.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include <json.hpp>

#include "lcsurv/error.hpp"
#include "lcsurv/io.hpp"

namespace lcsurv {

using nlohmann::json;

void CtVolume::validate() const {
    if (voxels.rank() != 3) throw DimensionError("CT volume must be [D, H, W], got " + shape_string(voxels.shape()));
    for (std::size_t a = 0; a < 3; ++a) {
        if (voxels.dim(a) < 8) throw DimensionError("CT volume extents must be at least 8, got " + shape_string(voxels.shape()));
        if (!(spacing[a] > 0.0)) throw ArgumentError("CT voxel spacing must be positive");
    }
}

LungMask::LungMask(Shape shape_) : shape(std::move(shape_)), data(shape_size(shape), 0) {}

std::size_t LungMask::count() const { return static_cast<std::size_t>(std::count(data.begin(), data.end(), 1)); }

bool LungMask::contains(const LungMask& other) const {
    if (shape != other.shape) return false;
    for (std::size_t i = 0; i < data.size(); ++i) {
        if (other.data[i] && !data[i]) return false;
    }
    return true;
}

double mask_iou(const LungMask& a, const LungMask& b) {
    if (a.shape != b.shape) throw DimensionError("mask shapes differ: " + shape_string(a.shape) + " vs " + shape_string(b.shape));
    std::size_t inter = 0, uni = 0;
    for (std::size_t i = 0; i < a.data.size(); ++i) {
        inter += a.data[i] & b.data[i];
        uni += a.data[i] | b.data[i];
    }
    return uni == 0 ? 1.0 : static_cast<double>(inter) / static_cast<double>(uni);
}

double voxel_litres(std::size_t count, const std::array<double, 3>& spacing) {
    return static_cast<double>(count) * spacing[0] * spacing[1] * spacing[2] / 1e6;
}

std::vector<double> gaussian_kernel(double sigma) {
    if (!(sigma >= 0.0)) throw ArgumentError("gaussian sigma must be nonnegative");
    if (sigma == 0.0) return {1.0};
    const auto r = static_cast<long>(std::ceil(4.0 * sigma));
    std::vector<double> k(static_cast<std::size_t>(2 * r + 1));
    double total = 0.0;
    for (long o = -r; o <= r; ++o) {
        const double v = std::exp(-static_cast<double>(o * o) / (2.0 * sigma * sigma));
        k[static_cast<std::size_t>(o + r)] = v;
        total += v;
    }
    for (auto& v : k) v /= total;
    return k;
}

CtVolume gaussian_smooth(const CtVolume& v, double sigma_voxels) {
    const auto kernel = gaussian_kernel(sigma_voxels);
    if (kernel.size() == 1) return v;
    const long r = static_cast<long>(kernel.size() / 2);
    const std::size_t D = v.voxels.dim(0), H = v.voxels.dim(1), W = v.voxels.dim(2);
    CtVolume out = v;
    std::vector<double> row(H * W);
    for (std::size_t z = 0; z < D; ++z) {
        const double* src = v.voxels.data() + z * H * W;
        double* dst = out.voxels.data() + z * H * W;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long o = -r; o <= r; ++o) {
                    const long xx = std::clamp(static_cast<long>(x) + o, 0L, static_cast<long>(W) - 1);
                    acc += kernel[static_cast<std::size_t>(o + r)] * src[y * W + static_cast<std::size_t>(xx)];
                }
                row[y * W + x] = acc;
            }
        }
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                double acc = 0.0;
                for (long o = -r; o <= r; ++o) {
                    const long yy = std::clamp(static_cast<long>(y) + o, 0L, static_cast<long>(H) - 1);
                    acc += kernel[static_cast<std::size_t>(o + r)] * row[static_cast<std::size_t>(yy) * W + x];
                }
                dst[y * W + x] = acc;
            }
        }
    }
    return out;
}

LungMask binarize(const CtVolume& v, double threshold) {
    LungMask m(v.voxels.shape());
    for (std::size_t i = 0; i < m.data.size(); ++i) m.data[i] = v.voxels[i] < threshold ? 1 : 0;
    return m;
}

Components connected_components_3d(const LungMask& mask) {
    if (mask.shape.size() != 3) throw DimensionError("mask must be [D, H, W]");
    const std::size_t D = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
    Components out{mask.shape, {}};
    std::vector<std::uint8_t> seen(mask.data.size(), 0);
    std::vector<std::size_t> stack;
    for (std::size_t start = 0; start < mask.data.size(); ++start) {
        if (!mask.data[start] || seen[start]) continue;
        Component comp;
        double sz = 0, sy = 0, sx = 0;
        seen[start] = 1;
        stack.push_back(start);
        while (!stack.empty()) {
            const std::size_t i = stack.back();
            stack.pop_back();
            comp.indices.push_back(i);
            const std::size_t z = i / (H * W), y = (i / W) % H, x = i % W;
            sz += static_cast<double>(z);
            sy += static_cast<double>(y);
            sx += static_cast<double>(x);
            auto push = [&](std::size_t j) {
                if (mask.data[j] && !seen[j]) {
                    seen[j] = 1;
                    stack.push_back(j);
                }
            };
            if (z > 0) push(i - H * W);
            if (z + 1 < D) push(i + H * W);
            if (y > 0) push(i - W);
            if (y + 1 < H) push(i + W);
            if (x > 0) push(i - 1);
            if (x + 1 < W) push(i + 1);
        }
        std::sort(comp.indices.begin(), comp.indices.end());
        comp.voxels = comp.indices.size();
        const double n = static_cast<double>(comp.voxels);
        comp.centroid = {sz / n, sy / n, sx / n};
        out.items.push_back(std::move(comp));
    }
    std::stable_sort(out.items.begin(), out.items.end(),
                     [](const Component& a, const Component& b) { return a.voxels > b.voxels; });
    return out;
}

FilterResult filter_components(const Components& components, const std::array<double, 3>& spacing,
                               const FilterConfig& cfg) {
    if (components.shape.size() != 3) throw DimensionError("components must describe a [D, H, W] volume");
    FilterResult result{LungMask(components.shape), 0, 0, 0};
    double half_diag_sq = 0.0;
    std::array<double, 3> centre{};
    for (std::size_t a = 0; a < 3; ++a) {
        const double extent = static_cast<double>(components.shape[a]) * spacing[a];
        half_diag_sq += 0.25 * extent * extent;
        centre[a] = 0.5 * static_cast<double>(components.shape[a] - 1) * spacing[a];
    }
    const double max_dist = cfg.max_center_fraction * std::sqrt(half_diag_sq);
    for (const auto& c : components.items) {
        const double litres = voxel_litres(c.voxels, spacing);
        if (litres < cfg.min_litres || litres > cfg.max_litres) {
            ++result.rejected_size;
            continue;
        }
        double d2 = 0.0;
        for (std::size_t a = 0; a < 3; ++a) {
            const double d = c.centroid[a] * spacing[a] - centre[a];
            d2 += d * d;
        }
        if (std::sqrt(d2) > max_dist) {
            ++result.rejected_position;
            continue;
        }
        ++result.kept;
        for (std::size_t i : c.indices) result.mask.data[i] = 1;
    }
    return result;
}

namespace {

// 3x3 per-slice min/max filter. Pixels outside the slice read as `outside`.
LungMask slice_filter(const LungMask& in, bool dilate) {
    const std::size_t D = in.shape[0], H = in.shape[1], W = in.shape[2];
    const std::uint8_t outside = dilate ? 0 : 1;
    LungMask out(in.shape);
    for (std::size_t z = 0; z < D; ++z) {
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                std::uint8_t v = dilate ? 0 : 1;
                for (int dy = -1; dy <= 1; ++dy) {
                    for (int dx = -1; dx <= 1; ++dx) {
                        const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
                        const bool inside = yy >= 0 && xx >= 0 && yy < static_cast<long>(H) && xx < static_cast<long>(W);
                        const std::uint8_t s = inside ? in.at(z, static_cast<std::size_t>(yy), static_cast<std::size_t>(xx)) : outside;
                        v = dilate ? std::max(v, s) : std::min(v, s);
                    }
                }
                out.data[out.index(z, y, x)] = v;
            }
        }
    }
    return out;
}

using Point = std::array<long, 2>;  // (y, x)

long cross(const Point& o, const Point& a, const Point& b) {
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0]);
}

// Andrew's monotone chain, counter-clockwise without collinear points.
std::vector<Point> convex_hull(std::vector<Point> pts) {
    std::sort(pts.begin(), pts.end());
    pts.erase(std::unique(pts.begin(), pts.end()), pts.end());
    if (pts.size() < 3) return pts;
    std::vector<Point> hull(2 * pts.size());
    std::size_t k = 0;
    for (const auto& p : pts) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], p) <= 0) --k;
        hull[k++] = p;
    }
    for (std::size_t i = pts.size() - 1, lower = k + 1; i-- > 0;) {
        while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k - 1);
    return hull;
}

}  // namespace

LungMask close_slices(const LungMask& mask) { return slice_filter(slice_filter(mask, true), false); }

LungMask hull_slices(const LungMask& mask) {
    const std::size_t D = mask.shape[0], H = mask.shape[1], W = mask.shape[2];
    LungMask out(mask.shape);
    for (std::size_t z = 0; z < D; ++z) {
        std::vector<Point> pts;
        long y0 = static_cast<long>(H), y1 = -1, x0 = static_cast<long>(W), x1 = -1;
        for (std::size_t y = 0; y < H; ++y) {
            for (std::size_t x = 0; x < W; ++x) {
                if (!mask.at(z, y, x)) continue;
                const long yy = static_cast<long>(y), xx = static_cast<long>(x);
                pts.push_back({yy, xx});
                y0 = std::min(y0, yy);
                y1 = std::max(y1, yy);
                x0 = std::min(x0, xx);
                x1 = std::max(x1, xx);
            }
        }
        if (pts.empty()) continue;
        const auto hull = convex_hull(std::move(pts));
        for (long y = y0; y <= y1; ++y) {
            for (long x = x0; x <= x1; ++x) {
                bool inside = true;
                for (std::size_t e = 0; e < hull.size() && inside; ++e) {
                    if (cross(hull[e], hull[(e + 1) % hull.size()], {y, x}) < 0) inside = false;
                }
                if (inside) out.data[out.index(z, static_cast<std::size_t>(y), static_cast<std::size_t>(x))] = 1;
            }
        }
    }
    return out;
}

CompletionResult complete_mask(const LungMask& mask) {
    if (mask.count() == 0) return {mask, true};
    LungMask done = hull_slices(close_slices(mask));
    // Closing with an out-of-bounds foreground erosion can never drop input
    // voxels, but keep the superset guarantee explicit.
    for (std::size_t i = 0; i < done.data.size(); ++i) done.data[i] |= mask.data[i];
    return {std::move(done), false};
}

std::uint8_t window_value(double hu, const WindowConfig& cfg) {
    const double clipped = std::clamp(hu, cfg.low, cfg.high);
    const double scaled = (clipped - cfg.low) / (cfg.high - cfg.low) * 255.0;
    return static_cast<std::uint8_t>(std::round(scaled));
}

ByteVolume window_normalize_fill(const CtVolume& v, const LungMask& mask, const WindowConfig& cfg) {
    if (mask.shape != v.voxels.shape()) {
        throw DimensionError("mask shape " + shape_string(mask.shape) + " does not match volume " + shape_string(v.voxels.shape()));
    }
    if (!(cfg.high > cfg.low)) throw ConfigError("HU window upper bound must exceed the lower bound");
    ByteVolume out{mask.shape, std::vector<std::uint8_t>(mask.data.size())};
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = mask.data[i] ? window_value(v.voxels[i], cfg) : cfg.fill;
    }
    return out;
}

Tensor resample(const Tensor& volume, const Shape& target) {
    if (volume.rank() != 3) throw DimensionError("resample expects [D, H, W], got " + shape_string(volume.shape()));
    if (target.size() != 3) throw ArgumentError("resample target must have three extents");
    for (std::size_t t : target) {
        if (t < 2) throw ArgumentError("resample target extents must be at least 2, got " + shape_string(target));
    }
    const Shape& src = volume.shape();
    if (src == target) return volume;

    struct Axis {
        std::vector<std::size_t> lo, hi;
        std::vector<double> frac;
    };
    auto axis = [](std::size_t n_src, std::size_t n_dst) {
        Axis a;
        for (std::size_t i = 0; i < n_dst; ++i) {
            const double pos = static_cast<double>(i) * static_cast<double>(n_src - 1) / static_cast<double>(n_dst - 1);
            const auto lo = std::min(static_cast<std::size_t>(std::floor(pos)), n_src - 1);
            a.lo.push_back(lo);
            a.hi.push_back(std::min(lo + 1, n_src - 1));
            a.frac.push_back(pos - static_cast<double>(lo));
        }
        return a;
    };
    const Axis az = axis(src[0], target[0]), ay = axis(src[1], target[1]), ax = axis(src[2], target[2]);
    Tensor out(target);
    const std::size_t H = src[1], W = src[2];
    auto at = [&](std::size_t z, std::size_t y, std::size_t x) { return volume[(z * H + y) * W + x]; };
    for (std::size_t z = 0; z < target[0]; ++z) {
        for (std::size_t y = 0; y < target[1]; ++y) {
            for (std::size_t x = 0; x < target[2]; ++x) {
                const double fz = az.frac[z], fy = ay.frac[y], fx = ax.frac[x];
                const std::size_t z0 = az.lo[z], z1 = az.hi[z], y0 = ay.lo[y], y1 = ay.hi[y], x0 = ax.lo[x], x1 = ax.hi[x];
                const double c00 = at(z0, y0, x0) * (1 - fx) + at(z0, y0, x1) * fx;
                const double c01 = at(z0, y1, x0) * (1 - fx) + at(z0, y1, x1) * fx;
                const double c10 = at(z1, y0, x0) * (1 - fx) + at(z1, y0, x1) * fx;
                const double c11 = at(z1, y1, x0) * (1 - fx) + at(z1, y1, x1) * fx;
                const double c0 = c00 * (1 - fy) + c01 * fy;
                const double c1 = c10 * (1 - fy) + c11 * fy;
                out[(z * target[1] + y) * target[2] + x] = c0 * (1 - fz) + c1 * fz;
            }
        }
    }
    return out;
}

Tensor resample(const ByteVolume& volume, const Shape& target) {
    std::vector<double> values(volume.data.begin(), volume.data.end());
    return resample(Tensor(volume.shape, std::move(values)), target);
}

void PreprocConfig::validate() const {
    if (!(sigma_voxels >= 0.0)) throw ConfigError("preprocessing sigma must be nonnegative");
    if (!(filter.min_litres <= filter.max_litres)) throw ConfigError("component volume range is empty");
    if (!(filter.max_center_fraction > 0.0)) throw ConfigError("centre distance fraction must be positive");
    if (!(window.high > window.low)) throw ConfigError("HU window upper bound must exceed the lower bound");
    if (target.size() != 3) throw ConfigError("preprocessing target must have three extents");
}

PreprocResult preprocess_pipeline(const CtVolume& v, const PreprocConfig& cfg, const StageSink& emit) {
    v.validate();
    cfg.validate();
    PreprocResult result;
    auto record = [&](const std::string& stage, const LungMask& m, std::size_t components) {
        result.diagnostics.push_back({stage, components, voxel_litres(m.count(), v.spacing)});
        if (emit) emit(stage, m);
        if (m.count() == 0) throw DataError("preprocessing produced an empty mask at the " + stage + " stage");
    };

    const CtVolume smooth = gaussian_smooth(v, cfg.sigma_voxels);
    const LungMask raw = binarize(smooth, cfg.threshold_hu);
    const Components comps = connected_components_3d(raw);
    record("binarize", raw, comps.items.size());

    const FilterResult filtered = filter_components(comps, v.spacing, cfg.filter);
    record("filter", filtered.mask, filtered.kept);

    const LungMask closed = close_slices(filtered.mask);
    record("close", closed, connected_components_3d(closed).items.size());

    CompletionResult done = complete_mask(filtered.mask);
    record("complete", done.mask, connected_components_3d(done.mask).items.size());

    const ByteVolume bytes = window_normalize_fill(v, done.mask, cfg.window);
    result.volume = resample(bytes, cfg.target);
    result.mask = std::move(done.mask);
    return result;
}

ThoraxPhantom make_thorax_phantom(const ThoraxPhantomConfig& cfg) {
    const std::size_t n = cfg.size;
    if (n < 8) throw ArgumentError("phantom size must be at least 8");
    const double s = cfg.spacing_mm;
    const double a = cfg.lung_aspect[0], b = cfg.lung_aspect[1];
    const double c = 3.0 * cfg.lung_litres * 1e6 / (4.0 * std::numbers::pi * a * b);
    const double mid = 0.5 * static_cast<double>(n - 1);

    ThoraxPhantom p;
    p.volume.voxels = Tensor({n, n, n}, -1000.0);
    p.volume.spacing = {s, s, s};
    p.lungs = LungMask({n, n, n});
    for (std::size_t z = 0; z < n; ++z) {
        for (std::size_t y = 0; y < n; ++y) {
            for (std::size_t x = 0; x < n; ++x) {
                const double pz = (static_cast<double>(z) - mid) * s;
                const double py = (static_cast<double>(y) - mid) * s;
                const double px = (static_cast<double>(x) - mid) * s;
                const std::size_t i = p.lungs.index(z, y, x);
                const double by = py / cfg.body_semi_axes[0], bx = px / cfg.body_semi_axes[1];
                if (by * by + bx * bx <= 1.0) p.volume.voxels[i] = 0.0;
                for (double side : {-1.0, 1.0}) {
                    const double ez = pz / a, ey = py / b, ex = (px - side * cfg.lung_offset_mm) / c;
                    if (ez * ez + ey * ey + ex * ex <= 1.0) {
                        p.volume.voxels[i] = -1000.0;
                        p.lungs.data[i] = 1;
                    }
                }
            }
        }
    }
    p.reference = hull_slices(p.lungs);
    return p;
}

namespace {

json volume_meta(const Shape& shape, const std::string& dtype, const std::string& blob) {
    return json{{"shape", shape}, {"dtype", dtype}, {"byte_order", "little"}, {"blob", blob}};
}

std::filesystem::path with_ext(const std::filesystem::path& stem, const std::string& ext) {
    return std::filesystem::path(stem.string() + ext);
}

}  // namespace

void save_ct_volume(const std::filesystem::path& stem, const CtVolume& v) {
    std::string blob;
    blob.reserve(v.voxels.size() * 4);
    for (double x : v.voxels.values()) put_f32(blob, static_cast<float>(x));
    json meta = volume_meta(v.voxels.shape(), "float32", with_ext(stem, ".f32").filename().string());
    meta["spacing_mm"] = v.spacing;
    meta["units"] = "HU";
    write_file(with_ext(stem, ".json"), meta.dump(1));
    write_file(with_ext(stem, ".f32"), blob);
}

CtVolume load_ct_volume(const std::filesystem::path& stem) {
    const auto meta_path = with_ext(stem, ".json");
    if (!std::filesystem::exists(meta_path)) throw DataError("no volume metadata at " + meta_path.string());
    try {
        const json meta = json::parse(read_file(meta_path));
        CtVolume v;
        const Shape shape = meta.at("shape").get<Shape>();
        v.spacing = meta.at("spacing_mm").get<std::array<double, 3>>();
        const std::string dtype = meta.at("dtype").get<std::string>();
        const std::string blob = read_file(meta_path.parent_path() / meta.at("blob").get<std::string>());
        std::vector<double> values(shape_size(shape));
        ByteReader in(blob);
        if (dtype == "float32") {
            for (auto& x : values) x = in.f32();
        } else if (dtype == "int16") {
            for (auto& x : values) {
                const auto lo = in.u8(), hi = in.u8();
                x = static_cast<double>(static_cast<std::int16_t>(static_cast<std::uint16_t>(lo | (hi << 8))));
            }
        } else {
            throw DataError("unsupported volume dtype '" + dtype + "'");
        }
        if (!in.done()) throw DataError("volume blob is larger than its shape");
        v.voxels = Tensor(shape, std::move(values));
        v.validate();
        return v;
    } catch (const json::exception& e) {
        throw DataError("invalid volume metadata: " + std::string(e.what()));
    }
}

void save_byte_volume(const std::filesystem::path& stem, const ByteVolume& v) {
    write_file(with_ext(stem, ".json"), volume_meta(v.shape, "uint8", with_ext(stem, ".u8").filename().string()).dump(1));
    write_file(with_ext(stem, ".u8"), std::string(v.data.begin(), v.data.end()));
}

void save_mask(const std::filesystem::path& stem, const LungMask& m) { save_byte_volume(stem, ByteVolume{m.shape, m.data}); }

}  // namespace lcsurv
