#include "hvx/io.hpp"

#include <array>
#include <bit>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace hvx::io {

using nlohmann::json;

json load_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    json j;
    try {
        in >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("invalid JSON in " + path + ": " + e.what());
    }
    return j;
}

void save_json(const std::string& path, const json& j, int indent) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(indent) << "\n";
    if (!out) throw std::runtime_error("write failed: " + path);
}

namespace {

Eigen::Vector3d vec3_from_json(const json& j, const char* what) {
    if (!j.is_array() || j.size() != 3)
        throw std::runtime_error(std::string(what) + " must be a 3-element array");
    return {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

json vec3_to_json(const Eigen::Vector3d& v) { return json::array({v.x(), v.y(), v.z()}); }

void append_u32_le(std::string& buf, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void append_i32_le(std::string& buf, std::int32_t v) {
    append_u32_le(buf, static_cast<std::uint32_t>(v));
}

void append_f64_le(std::string& buf, double v) {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) buf.push_back(static_cast<char>((bits >> (8 * i)) & 0xff));
}

struct ByteReader {
    const std::string& buf;
    std::size_t at = 0;

    std::uint8_t byte() {
        if (at >= buf.size()) throw std::runtime_error("binary grid file truncated");
        return static_cast<std::uint8_t>(buf[at++]);
    }
    std::uint32_t u32() {
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(byte()) << (8 * i);
        return v;
    }
    std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
    double f64() {
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(byte()) << (8 * i);
        return std::bit_cast<double>(v);
    }
};

}  // namespace

json grid_to_json(const vox::SparseVoxelGrid& g) {
    json coords = json::array();
    for (const auto& c : g.coords) coords.push_back(json::array({c.x, c.y, c.z}));
    json feats = json::array();
    for (Eigen::Index r = 0; r < g.features.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < g.features.cols(); ++c) row.push_back(g.features(r, c));
        feats.push_back(std::move(row));
    }
    return json{{"stride", g.stride},
                {"voxel_size", g.voxel_size},
                {"origin", vec3_to_json(g.origin)},
                {"coords", std::move(coords)},
                {"features", std::move(feats)}};
}

vox::SparseVoxelGrid grid_from_json(const json& j) {
    vox::SparseVoxelGrid g;
    try {
        g.stride = j.at("stride").get<int>();
        g.voxel_size = j.at("voxel_size").get<double>();
        g.origin = vec3_from_json(j.at("origin"), "origin");
        const json& coords = j.at("coords");
        const json& feats = j.at("features");
        if (!coords.is_array() || !feats.is_array())
            throw std::runtime_error("coords and features must be arrays");
        if (coords.size() != feats.size())
            throw std::runtime_error("coords and features disagree on voxel count");
        g.coords.reserve(coords.size());
        Eigen::Index dim = -1;
        for (std::size_t i = 0; i < coords.size(); ++i) {
            const json& c = coords[i];
            if (!c.is_array() || c.size() != 3)
                throw std::runtime_error("each coord must be a 3-element array");
            g.coords.push_back(
                {c[0].get<std::int32_t>(), c[1].get<std::int32_t>(), c[2].get<std::int32_t>()});
            const json& f = feats[i];
            if (!f.is_array()) throw std::runtime_error("each feature row must be an array");
            if (dim < 0) {
                dim = static_cast<Eigen::Index>(f.size());
                g.features.resize(static_cast<Eigen::Index>(coords.size()), dim);
            }
            if (static_cast<Eigen::Index>(f.size()) != dim)
                throw std::runtime_error("feature rows have inconsistent lengths");
            for (Eigen::Index c2 = 0; c2 < dim; ++c2)
                g.features(static_cast<Eigen::Index>(i), c2) = f[c2].get<double>();
        }
        if (coords.empty()) g.features.resize(0, 0);
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed grid JSON: ") + e.what());
    }
    g.validate();
    return g;
}

void save_grid_json(const std::string& path, const vox::SparseVoxelGrid& g) {
    save_json(path, grid_to_json(g));
}

vox::SparseVoxelGrid load_grid_json(const std::string& path) {
    return grid_from_json(load_json(path));
}

void save_grid_binary(const std::string& path, const vox::SparseVoxelGrid& g) {
    g.validate();
    std::string buf;
    buf.reserve(16 + g.size() * (12 + 8 * static_cast<std::size_t>(g.features.cols())));
    buf += "HVGX";
    append_u32_le(buf, 1);  // version
    append_u32_le(buf, static_cast<std::uint32_t>(g.size()));
    append_u32_le(buf, static_cast<std::uint32_t>(g.features.cols()));
    for (const auto& c : g.coords) {
        append_i32_le(buf, c.x);
        append_i32_le(buf, c.y);
        append_i32_le(buf, c.z);
    }
    for (Eigen::Index r = 0; r < g.features.rows(); ++r)
        for (Eigen::Index c = 0; c < g.features.cols(); ++c) append_f64_le(buf, g.features(r, c));

    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out) throw std::runtime_error("write failed: " + path);
}

vox::SparseVoxelGrid load_grid_binary(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for reading: " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    const std::string buf = ss.str();

    if (buf.size() < 16 || buf.compare(0, 4, "HVGX") != 0)
        throw std::runtime_error("not a binary grid file: " + path);
    ByteReader rd{buf, 4};
    const std::uint32_t version = rd.u32();
    if (version != 1)
        throw std::runtime_error("unsupported binary grid version " + std::to_string(version));
    const std::uint32_t count = rd.u32();
    const std::uint32_t dim = rd.u32();

    vox::SparseVoxelGrid g;
    g.coords.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
        vox::Coord c;
        c.x = rd.i32();
        c.y = rd.i32();
        c.z = rd.i32();
        g.coords.push_back(c);
    }
    g.features.resize(count, dim);
    for (std::uint32_t r = 0; r < count; ++r)
        for (std::uint32_t c = 0; c < dim; ++c) g.features(r, c) = rd.f64();
    if (rd.at != buf.size()) throw std::runtime_error("trailing bytes in binary grid file");
    g.validate();
    return g;
}

void save_ply(const std::string& path, const vox::SparseVoxelGrid& g,
              const Eigen::VectorXd& scores) {
    if (static_cast<std::size_t>(scores.size()) != g.size())
        throw std::runtime_error("ply export: scores and grid disagree on length");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << "ply\n"
        << "format ascii 1.0\n"
        << "comment synthetic desk-scale dump for inspection, not a benchmark artifact\n"
        << "element vertex " << g.size() << "\n"
        << "property float x\nproperty float y\nproperty float z\nproperty float score\n"
        << "end_header\n";
    out << std::setprecision(9);
    for (std::size_t i = 0; i < g.size(); ++i) {
        const Eigen::Vector3d c = g.center(g.coords[i]);
        out << static_cast<float>(c.x()) << " " << static_cast<float>(c.y()) << " "
            << static_cast<float>(c.z()) << " "
            << static_cast<float>(scores[static_cast<Eigen::Index>(i)]) << "\n";
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

json mlp_to_json(const fusion::Mlp& mlp) {
    json layers = json::array();
    for (const auto& l : mlp.layers) {
        json w = json::array();
        for (Eigen::Index r = 0; r < l.w.rows(); ++r) {
            json row = json::array();
            for (Eigen::Index c = 0; c < l.w.cols(); ++c) row.push_back(l.w(r, c));
            w.push_back(std::move(row));
        }
        json b = json::array();
        for (Eigen::Index r = 0; r < l.b.size(); ++r) b.push_back(l.b[r]);
        layers.push_back(json{{"w", std::move(w)},
                              {"b", std::move(b)},
                              {"act", fusion::activation_name(l.act)}});
    }
    return json{{"layers", std::move(layers)}};
}

fusion::Mlp mlp_from_json(const json& j) {
    fusion::Mlp mlp;
    try {
        for (const json& lj : j.at("layers")) {
            fusion::MlpLayer layer;
            const json& w = lj.at("w");
            if (!w.is_array() || w.empty()) throw std::runtime_error("layer weight is empty");
            const Eigen::Index rows = static_cast<Eigen::Index>(w.size());
            const Eigen::Index cols = static_cast<Eigen::Index>(w[0].size());
            layer.w.resize(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                if (static_cast<Eigen::Index>(w[r].size()) != cols)
                    throw std::runtime_error("ragged weight matrix");
                for (Eigen::Index c = 0; c < cols; ++c) layer.w(r, c) = w[r][c].get<double>();
            }
            const json& b = lj.at("b");
            layer.b.resize(static_cast<Eigen::Index>(b.size()));
            for (Eigen::Index r = 0; r < layer.b.size(); ++r) layer.b[r] = b[r].get<double>();
            layer.act = fusion::activation_from_name(lj.at("act").get<std::string>());
            mlp.layers.push_back(std::move(layer));
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed mlp JSON: ") + e.what());
    }
    mlp.validate();
    return mlp;
}

namespace {
constexpr char kB64[] = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
}

std::string base64_encode(const std::uint8_t* data, std::size_t len) {
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    for (std::size_t i = 0; i < len; i += 3) {
        const std::uint32_t b0 = data[i];
        const std::uint32_t b1 = i + 1 < len ? data[i + 1] : 0;
        const std::uint32_t b2 = i + 2 < len ? data[i + 2] : 0;
        const std::uint32_t v = (b0 << 16) | (b1 << 8) | b2;
        out.push_back(kB64[(v >> 18) & 63]);
        out.push_back(kB64[(v >> 12) & 63]);
        out.push_back(i + 1 < len ? kB64[(v >> 6) & 63] : '=');
        out.push_back(i + 2 < len ? kB64[v & 63] : '=');
    }
    return out;
}

std::vector<std::uint8_t> base64_decode(const std::string& text) {
    if (text.size() % 4 != 0) throw std::runtime_error("base64 length must be a multiple of 4");
    std::array<std::int8_t, 256> rev;
    rev.fill(-1);
    for (int i = 0; i < 64; ++i) rev[static_cast<unsigned char>(kB64[i])] = static_cast<int8_t>(i);

    std::vector<std::uint8_t> out;
    out.reserve(text.size() / 4 * 3);
    for (std::size_t i = 0; i < text.size(); i += 4) {
        int pad = 0;
        std::uint32_t v = 0;
        for (int k = 0; k < 4; ++k) {
            const char ch = text[i + k];
            if (ch == '=') {
                if (i + 4 != text.size() || k < 2) throw std::runtime_error("bad base64 padding");
                ++pad;
                v <<= 6;
                continue;
            }
            if (pad > 0) throw std::runtime_error("bad base64 padding");
            const std::int8_t d = rev[static_cast<unsigned char>(ch)];
            if (d < 0) throw std::runtime_error("invalid base64 character");
            v = (v << 6) | static_cast<std::uint32_t>(d);
        }
        out.push_back(static_cast<std::uint8_t>((v >> 16) & 0xff));
        if (pad < 2) out.push_back(static_cast<std::uint8_t>((v >> 8) & 0xff));
        if (pad < 1) out.push_back(static_cast<std::uint8_t>(v & 0xff));
    }
    return out;
}

std::vector<std::vector<int>> rle_encode_rows(const vox::ForegroundMask& mask) {
    std::vector<std::vector<int>> rows(static_cast<std::size_t>(mask.height));
    for (int y = 0; y < mask.height; ++y) {
        auto& row = rows[static_cast<std::size_t>(y)];
        bool cur = false;  // runs alternate starting with background
        int run = 0;
        for (int x = 0; x < mask.width; ++x) {
            if (mask.at(x, y) == cur) {
                ++run;
            } else {
                row.push_back(run);
                cur = !cur;
                run = 1;
            }
        }
        row.push_back(run);
    }
    return rows;
}

vox::ForegroundMask rle_decode_rows(int width, int height,
                                    const std::vector<std::vector<int>>& rows) {
    if (static_cast<int>(rows.size()) != height)
        throw std::runtime_error("mask rle: row count does not match height");
    vox::ForegroundMask mask = vox::ForegroundMask::zeros(width, height);
    for (int y = 0; y < height; ++y) {
        int x = 0;
        bool cur = false;
        for (const int run : rows[static_cast<std::size_t>(y)]) {
            if (run < 0) throw std::runtime_error("mask rle: negative run length");
            if (x + run > width) throw std::runtime_error("mask rle: row overruns width");
            if (cur)
                for (int i = 0; i < run; ++i) mask.set(x + i, y, true);
            x += run;
            cur = !cur;
        }
        if (x != width) throw std::runtime_error("mask rle: row does not sum to width");
    }
    return mask;
}

namespace {

json camera_to_json(const vox::CameraModel& cam) {
    json rows = json::array();
    for (int r = 0; r < 3; ++r)
        rows.push_back(json::array(
            {cam.rotation(r, 0), cam.rotation(r, 1), cam.rotation(r, 2)}));
    return json{{"fx", cam.fx},         {"fy", cam.fy},
                {"cx", cam.cx},         {"cy", cam.cy},
                {"R", std::move(rows)}, {"t", vec3_to_json(cam.translation)},
                {"w", cam.width},       {"h", cam.height}};
}

vox::CameraModel camera_from_json(const json& j) {
    vox::CameraModel cam;
    cam.fx = j.at("fx").get<double>();
    cam.fy = j.at("fy").get<double>();
    cam.cx = j.at("cx").get<double>();
    cam.cy = j.at("cy").get<double>();
    const json& rows = j.at("R");
    if (!rows.is_array() || rows.size() != 3)
        throw std::runtime_error("camera R must have 3 rows");
    for (int r = 0; r < 3; ++r) {
        if (!rows[r].is_array() || rows[r].size() != 3)
            throw std::runtime_error("camera R rows must have 3 entries");
        for (int c = 0; c < 3; ++c) cam.rotation(r, c) = rows[r][c].get<double>();
    }
    cam.translation = vec3_from_json(j.at("t"), "camera t");
    cam.width = j.at("w").get<int>();
    cam.height = j.at("h").get<int>();
    cam.validate();
    return cam;
}

}  // namespace

json scene_to_json(const scenegen::SyntheticScene& scene) {
    json boxes = json::array();
    for (const auto& b : scene.boxes)
        boxes.push_back(json{{"center", vec3_to_json(b.center)},
                             {"size", vec3_to_json(b.size)},
                             {"yaw", b.yaw}});

    json points = json::array();
    for (const auto& p : scene.points) points.push_back(vec3_to_json(p));

    json feats = json::array();
    for (const auto& f : scene.point_features) {
        json row = json::array();
        for (Eigen::Index i = 0; i < f.size(); ++i) row.push_back(f[i]);
        feats.push_back(std::move(row));
    }

    scene.feature_map.validate();
    std::vector<std::uint8_t> raw(scene.feature_map.data.size() * 4);
    for (std::size_t i = 0; i < scene.feature_map.data.size(); ++i) {
        const auto bits = std::bit_cast<std::uint32_t>(scene.feature_map.data[i]);
        for (int k = 0; k < 4; ++k)
            raw[i * 4 + static_cast<std::size_t>(k)] =
                static_cast<std::uint8_t>((bits >> (8 * k)) & 0xff);
    }

    return json{{"seed", scene.seed},
                {"boxes", std::move(boxes)},
                {"points", std::move(points)},
                {"point_features", std::move(feats)},
                {"camera", camera_to_json(scene.camera)},
                {"mask",
                 {{"w", scene.mask.width},
                  {"h", scene.mask.height},
                  {"rows", rle_encode_rows(scene.mask)}}},
                {"feature_map",
                 {{"w", scene.feature_map.width},
                  {"h", scene.feature_map.height},
                  {"dim", scene.feature_map.dim},
                  {"data", base64_encode(raw.data(), raw.size())}}}};
}

scenegen::SyntheticScene scene_from_json(const json& j) {
    scenegen::SyntheticScene scene;
    try {
        scene.seed = j.at("seed").get<std::uint64_t>();
        for (const json& bj : j.at("boxes")) {
            fago::Box3D b;
            b.center = vec3_from_json(bj.at("center"), "box center");
            b.size = vec3_from_json(bj.at("size"), "box size");
            b.yaw = bj.at("yaw").get<double>();
            b.validate();
            scene.boxes.push_back(b);
        }
        for (const json& pj : j.at("points"))
            scene.points.push_back(vec3_from_json(pj, "point"));
        for (const json& fj : j.at("point_features")) {
            Eigen::VectorXd f(fj.size());
            for (Eigen::Index i = 0; i < f.size(); ++i)
                f[i] = fj[static_cast<std::size_t>(i)].get<double>();
            scene.point_features.push_back(std::move(f));
        }
        if (scene.points.size() != scene.point_features.size())
            throw std::runtime_error("points and point_features disagree on length");
        scene.camera = camera_from_json(j.at("camera"));

        const json& mj = j.at("mask");
        scene.mask = rle_decode_rows(mj.at("w").get<int>(), mj.at("h").get<int>(),
                                     mj.at("rows").get<std::vector<std::vector<int>>>());

        const json& fj = j.at("feature_map");
        scene.feature_map = fusion::FeatureMap2D::zeros(
            fj.at("w").get<int>(), fj.at("h").get<int>(), fj.at("dim").get<int>());
        const std::vector<std::uint8_t> raw = base64_decode(fj.at("data").get<std::string>());
        if (raw.size() != scene.feature_map.data.size() * 4)
            throw std::runtime_error("feature map byte count does not match dims");
        for (std::size_t i = 0; i < scene.feature_map.data.size(); ++i) {
            std::uint32_t bits = 0;
            for (int k = 0; k < 4; ++k)
                bits |= static_cast<std::uint32_t>(raw[i * 4 + static_cast<std::size_t>(k)])
                        << (8 * k);
            scene.feature_map.data[i] = std::bit_cast<float>(bits);
        }
    } catch (const json::exception& e) {
        throw std::runtime_error(std::string("malformed scene JSON: ") + e.what());
    }
    return scene;
}

void save_scene(const std::string& path, const scenegen::SyntheticScene& scene) {
    save_json(path, scene_to_json(scene));
}

scenegen::SyntheticScene load_scene(const std::string& path) {
    return scene_from_json(load_json(path));
}

}  // namespace hvx::io
