#include "hvx/scenegen.hpp"

#include <Eigen/Geometry>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

namespace hvx::scenegen {

namespace {

constexpr double kPi = std::numbers::pi;

void require(bool ok, const char* msg) {
    if (!ok) throw std::runtime_error(msg);
}

}  // namespace

void SceneSpec::validate() const {
    require(n_boxes >= 0, "scene spec: n_boxes must be >= 0");
    require(points_per_box >= 0, "scene spec: points_per_box must be >= 0");
    require(clutter_points >= 0, "scene spec: clutter_points must be >= 0");
    require(image_width >= 1 && image_height >= 1, "scene spec: image dims must be positive");
    require(feature_width >= 0 && feature_height >= 0,
            "scene spec: feature dims must be >= 0 (0 = image size)");
    require(d_img >= 1, "scene spec: d_img must be positive");
    for (int a = 0; a < 3; ++a) {
        require(extent_min[a] > 0.0, "scene spec: extents must be positive");
        require(extent_min[a] <= extent_max[a], "scene spec: extent_min must be <= extent_max");
        require(workspace_min[a] < workspace_max[a],
                "scene spec: workspace_min must be < workspace_max");
    }
    require(mask_flip_prob >= 0.0 && mask_flip_prob <= 1.0,
            "scene spec: mask_flip_prob must be in [0, 1]");
}

Eigen::VectorXd SmoothField3D::eval(const Eigen::Vector3d& p) const {
    Eigen::VectorXd v(dim());
    for (int c = 0; c < dim(); ++c) {
        double acc = 0.0;
        for (const Harmonic3D& h : channels[c]) acc += h.amp * std::sin(h.k.dot(p) + h.phase);
        v[c] = acc;
    }
    return v;
}

SmoothField3D make_field3d(int dim, int harmonics, double max_freq, Rng& rng) {
    require(dim >= 1 && harmonics >= 1, "field: dim and harmonics must be positive");
    SmoothField3D f;
    f.channels.resize(dim);
    for (int c = 0; c < dim; ++c) {
        f.channels[c].resize(harmonics);
        for (Harmonic3D& h : f.channels[c]) {
            h.k = Eigen::Vector3d(rng.uniform(-max_freq, max_freq),
                                  rng.uniform(-max_freq, max_freq),
                                  rng.uniform(-max_freq, max_freq));
            h.phase = rng.uniform(0.0, 2.0 * kPi);
            h.amp = rng.uniform(0.2, 1.0) / harmonics;
        }
    }
    return f;
}

std::vector<Eigen::Vector3d> sample_box_surface(const fago::Box3D& box, int n, Rng& rng) {
    box.validate();
    require(n >= 0, "surface sampling: n must be >= 0");
    const double sx = box.size.x(), sy = box.size.y(), sz = box.size.z();
    // face order: -x, +x, -y, +y, -z, +z
    const std::array<double, 6> areas{sy * sz, sy * sz, sx * sz, sx * sz, sx * sy, sx * sy};
    std::array<double, 6> cum{};
    double total = 0.0;
    for (int i = 0; i < 6; ++i) {
        total += areas[i];
        cum[i] = total;
    }

    const double c = std::cos(box.yaw), s = std::sin(box.yaw);
    std::vector<Eigen::Vector3d> pts;
    pts.reserve(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        const double pick = rng.uniform(0.0, total);
        int face = 0;
        while (face < 5 && pick > cum[face]) ++face;
        const double a = rng.uniform();
        const double b = rng.uniform();
        Eigen::Vector3d local;
        switch (face) {
            case 0: local = {-0.5 * sx, (a - 0.5) * sy, (b - 0.5) * sz}; break;
            case 1: local = {0.5 * sx, (a - 0.5) * sy, (b - 0.5) * sz}; break;
            case 2: local = {(a - 0.5) * sx, -0.5 * sy, (b - 0.5) * sz}; break;
            case 3: local = {(a - 0.5) * sx, 0.5 * sy, (b - 0.5) * sz}; break;
            case 4: local = {(a - 0.5) * sx, (b - 0.5) * sy, -0.5 * sz}; break;
            default: local = {(a - 0.5) * sx, (b - 0.5) * sy, 0.5 * sz}; break;
        }
        pts.emplace_back(box.center + Eigen::Vector3d(c * local.x() - s * local.y(),
                                                      s * local.x() + c * local.y(),
                                                      local.z()));
    }
    return pts;
}

vox::CameraModel make_orbit_camera(const Eigen::Vector3d& target, double azimuth,
                                   double elevation, double distance, int width, int height) {
    require(distance > 0.0, "orbit camera: distance must be positive");
    require(width >= 1 && height >= 1, "orbit camera: image dims must be positive");
    const Eigen::Vector3d eye =
        target + distance * Eigen::Vector3d(std::cos(elevation) * std::cos(azimuth),
                                            std::cos(elevation) * std::sin(azimuth),
                                            std::sin(elevation));
    const Eigen::Vector3d fwd = (target - eye).normalized();
    Eigen::Vector3d right = fwd.cross(Eigen::Vector3d::UnitZ());
    const double rn = right.norm();
    require(rn > 1e-9, "orbit camera: view direction too close to vertical");
    right /= rn;
    const Eigen::Vector3d down = fwd.cross(right);

    vox::CameraModel cam;
    cam.rotation.row(0) = right.transpose();
    cam.rotation.row(1) = down.transpose();
    cam.rotation.row(2) = fwd.transpose();
    cam.translation = -cam.rotation * eye;
    cam.width = width;
    cam.height = height;
    cam.fx = cam.fy = 0.85 * width;
    cam.cx = 0.5 * width;
    cam.cy = 0.5 * height;
    cam.validate();
    return cam;
}

fusion::FeatureMap2D make_feature_map(int width, int height, int dim, int harmonics, Rng& rng) {
    require(harmonics >= 1, "feature map: harmonics must be positive");
    fusion::FeatureMap2D f = fusion::FeatureMap2D::zeros(width, height, dim);
    struct Wave {
        double kx, ky, phase, amp;
    };
    std::vector<std::vector<Wave>> waves(dim);
    for (int c = 0; c < dim; ++c) {
        waves[c].resize(harmonics);
        for (Wave& w : waves[c]) {
            w.kx = 2.0 * kPi * rng.uniform(-2.0, 2.0);
            w.ky = 2.0 * kPi * rng.uniform(-2.0, 2.0);
            w.phase = rng.uniform(0.0, 2.0 * kPi);
            w.amp = rng.uniform(0.2, 1.0) / harmonics;
        }
    }
    const double nx = width > 1 ? 1.0 / (width - 1) : 1.0;
    const double ny = height > 1 ? 1.0 / (height - 1) : 1.0;
    for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
            for (int c = 0; c < dim; ++c) {
                double acc = 0.0;
                for (const Wave& w : waves[c])
                    acc += w.amp * std::sin(w.kx * (x * nx) + w.ky * (y * ny) + w.phase);
                f.ref(x, y, c) = static_cast<float>(acc);
            }
    return f;
}

namespace {

// monotone chain; returns the hull counter-clockwise in image coordinates
std::vector<Eigen::Vector2d> convex_hull(std::vector<Eigen::Vector2d> pts) {
    std::sort(pts.begin(), pts.end(), [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
        return a.x() != b.x() ? a.x() < b.x() : a.y() < b.y();
    });
    pts.erase(std::unique(pts.begin(), pts.end(),
                          [](const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
                              return a.x() == b.x() && a.y() == b.y();
                          }),
              pts.end());
    const std::size_t n = pts.size();
    if (n < 3) return {};
    auto cross = [](const Eigen::Vector2d& o, const Eigen::Vector2d& a,
                    const Eigen::Vector2d& b) {
        return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
    };
    std::vector<Eigen::Vector2d> hull(2 * n);
    std::size_t k = 0;
    for (std::size_t i = 0; i < n; ++i) {
        while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    for (std::size_t i = n - 1, t = k + 1; i-- > 0;) {
        while (k >= t && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
        hull[k++] = pts[i];
    }
    hull.resize(k > 0 ? k - 1 : 0);
    if (hull.size() < 3) return {};
    return hull;
}

bool point_in_hull(const std::vector<Eigen::Vector2d>& hull, const Eigen::Vector2d& p) {
    for (std::size_t i = 0; i < hull.size(); ++i) {
        const Eigen::Vector2d& a = hull[i];
        const Eigen::Vector2d& b = hull[(i + 1) % hull.size()];
        const double cr = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
        if (cr < -1e-9) return false;
    }
    return true;
}

}  // namespace

vox::ForegroundMask render_box_mask(std::span<const fago::Box3D> boxes,
                                    const vox::CameraModel& cam) {
    cam.validate();
    vox::ForegroundMask mask = vox::ForegroundMask::zeros(cam.width, cam.height);
    for (const auto& box : boxes) {
        std::vector<Eigen::Vector2d> proj;
        for (const Eigen::Vector3d& corner : box.corners()) {
            const Eigen::Vector3d pc = cam.rotation * corner + cam.translation;
            if (pc.z() <= 1e-6) continue;
            proj.emplace_back(cam.fx * pc.x() / pc.z() + cam.cx,
                              cam.fy * pc.y() / pc.z() + cam.cy);
        }
        if (proj.size() < 3) continue;
        const std::vector<Eigen::Vector2d> hull = convex_hull(std::move(proj));
        if (hull.empty()) continue;

        double ulo = hull[0].x(), uhi = hull[0].x(), vlo = hull[0].y(), vhi = hull[0].y();
        for (const auto& h : hull) {
            ulo = std::min(ulo, h.x());
            uhi = std::max(uhi, h.x());
            vlo = std::min(vlo, h.y());
            vhi = std::max(vhi, h.y());
        }
        const int x0 = std::max(0, static_cast<int>(std::floor(ulo)));
        const int x1 = std::min(cam.width - 1, static_cast<int>(std::ceil(uhi)));
        const int y0 = std::max(0, static_cast<int>(std::floor(vlo)));
        const int y1 = std::min(cam.height - 1, static_cast<int>(std::ceil(vhi)));
        for (int y = y0; y <= y1; ++y)
            for (int x = x0; x <= x1; ++x)
                if (!mask.at(x, y) && point_in_hull(hull, {x + 0.5, y + 0.5}))
                    mask.set(x, y, true);
    }
    return mask;
}

SyntheticScene generate_scene(const SceneSpec& spec, std::uint64_t seed) {
    spec.validate();
    Rng rng(seed);
    SyntheticScene scene;
    scene.seed = seed;

    // boxes: centers keep a half-extent margin from the workspace boundary
    for (int i = 0; i < spec.n_boxes; ++i) {
        fago::Box3D box;
        for (int a = 0; a < 3; ++a) {
            const double margin = 0.5 * spec.extent_max[a];
            double lo = spec.workspace_min[a] + margin;
            double hi = spec.workspace_max[a] - margin;
            if (lo > hi) lo = hi = 0.5 * (spec.workspace_min[a] + spec.workspace_max[a]);
            box.center[a] = rng.uniform(lo, hi);
            box.size[a] = rng.uniform(spec.extent_min[a], spec.extent_max[a]);
        }
        box.yaw = rng.uniform(-kPi, kPi);
        scene.boxes.push_back(box);
    }

    const SmoothField3D field = make_field3d(spec.d_img, 3, 2.0, rng);

    for (const auto& box : scene.boxes)
        for (const Eigen::Vector3d& p : sample_box_surface(box, spec.points_per_box, rng)) {
            scene.points.push_back(p);
            scene.point_features.push_back(field.eval(p));
        }
    for (int i = 0; i < spec.clutter_points; ++i) {
        Eigen::Vector3d p;
        for (int a = 0; a < 3; ++a)
            p[a] = rng.uniform(spec.workspace_min[a], spec.workspace_max[a]);
        scene.points.push_back(p);
        scene.point_features.push_back(field.eval(p));
    }

    // orbit far enough out that the whole workspace sphere fits in both
    // fields of view (fx = 0.85 w gives the tighter, vertical, half-angle
    // atan(h / (1.7 w)); distance = radius / sin covers every point)
    const Eigen::Vector3d target = 0.5 * (spec.workspace_min + spec.workspace_max);
    // yawed boxes may overhang the workspace in xy by up to half the extent
    // diagonal, so the covering sphere grows by that much
    const double radius = 0.5 * (spec.workspace_max - spec.workspace_min).norm() +
                          0.5 * spec.extent_max.norm();
    const double half_fov_v =
        std::atan2(0.5 * spec.image_height, 0.85 * spec.image_width);
    const double fit = radius / std::sin(half_fov_v);
    const double azimuth = rng.uniform(0.0, 2.0 * kPi);
    const double elevation = rng.uniform(0.26, 0.79);  // ~15 to ~45 degrees
    const double distance = fit * rng.uniform(1.05, 1.25);
    scene.camera = make_orbit_camera(target, azimuth, elevation, distance, spec.image_width,
                                     spec.image_height);

    const int fw = spec.feature_width > 0 ? spec.feature_width : spec.image_width;
    const int fh = spec.feature_height > 0 ? spec.feature_height : spec.image_height;
    scene.feature_map = make_feature_map(fw, fh, spec.d_img, 4, rng);

    scene.mask = render_box_mask(scene.boxes, scene.camera);
    if (spec.mask_flip_prob > 0.0)
        for (auto& bit : scene.mask.bits)
            if (rng.uniform() < spec.mask_flip_prob) bit = bit ? 0 : 1;

    return scene;
}

}  // namespace hvx::scenegen
