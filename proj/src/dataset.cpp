#include "fsd/dataset.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "fsd/image_io.hpp"
#include "fsd/rng.hpp"
#include "fsd/scene.hpp"
#include "json.hpp"

namespace fsd {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

std::string frame_name(int64_t i) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "frame_%02d.png", int(i));
    return buf;
}

json camera_to_json(const CameraModel& cam) {
    return {{"focal_length", cam.focal_length},
            {"f_number", cam.f_number},
            {"baseline", cam.baseline},
            {"pixel_pitch", cam.pixel_pitch},
            {"sensor_distance", cam.sensor_distance}};
}

CameraModel camera_from_json(const json& j) {
    CameraModel cam;
    cam.focal_length = j.at("focal_length").get<double>();
    cam.f_number = j.at("f_number").get<double>();
    cam.baseline = j.at("baseline").get<double>();
    cam.pixel_pitch = j.at("pixel_pitch").get<double>();
    cam.sensor_distance = j.at("sensor_distance").get<double>();
    return cam;
}

void write_json(const std::string& path, const json& j) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << j.dump(2) << "\n";
    if (!out) throw std::runtime_error("short write: " + path);
}

json read_json(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open: " + path);
    json j;
    in >> j;
    return j;
}

} // namespace

void generate_dataset(const RunConfig& cfg, const std::string& root, int64_t count) {
    if (count < 1) throw std::invalid_argument("generate_dataset: count must be >= 1");
    cfg.validate();
    fs::create_directories(root);

    const auto focus = default_focus_distances(cfg.z_min, cfg.z_max, cfg.stack_frames);
    json root_manifest;
    root_manifest["image_size"] = cfg.image_size;
    root_manifest["stack_frames"] = cfg.stack_frames;
    root_manifest["seed"] = cfg.seed;
    auto& stacks = root_manifest["stacks"] = json::array();

    for (int64_t i = 0; i < count; ++i) {
        char name[32];
        std::snprintf(name, sizeof(name), "stack_%04d", int(i));
        const fs::path dir = fs::path(root) / name;
        fs::create_directories(dir);
        stacks.push_back(name);

        MakeSceneOptions opt;
        opt.z_min = cfg.z_min;
        opt.z_max = cfg.z_max;
        // Keep scene depths on the focus grid so every frame holds a region
        // rendered exactly in focus.
        opt.depth_levels = cfg.stack_frames;
        opt.patch = cfg.encoder.patch;
        const uint64_t stack_seed = mix_seed(cfg.seed, uint64_t(i));
        const Scene scene = make_scene(stack_seed, cfg.image_size, cfg.image_size, opt);
        const FocalStack stack = render_stack(scene, cfg.camera, focus);

        for (size_t f = 0; f < stack.frames.size(); ++f)
            write_png16((dir / frame_name(int64_t(f))).string(), stack.frames[f]);

        ImageBuf depth = make_image(cfg.image_size, cfg.image_size, 1);
        depth.data = scene.depth;
        write_pfm((dir / "depth.pfm").string(), depth);

        json m;
        m["camera"] = camera_to_json(cfg.camera);
        m["focus_distances"] = focus;
        m["seed"] = stack_seed;
        m["height"] = cfg.image_size;
        m["width"] = cfg.image_size;
        write_json((dir / "manifest.json").string(), m);
    }
    write_json((fs::path(root) / "manifest.json").string(), root_manifest);
}

StackSample load_stack(const std::string& dir) {
    const json m = read_json((fs::path(dir) / "manifest.json").string());
    StackSample s;
    s.h = m.at("height").get<int64_t>();
    s.w = m.at("width").get<int64_t>();
    s.seed = m.at("seed").get<uint64_t>();
    s.stack.camera = camera_from_json(m.at("camera"));
    s.stack.focus_distances = m.at("focus_distances").get<std::vector<double>>();

    for (size_t f = 0; f < s.stack.focus_distances.size(); ++f) {
        ImageBuf img = read_png16((fs::path(dir) / frame_name(int64_t(f))).string());
        if (img.h != s.h || img.w != s.w)
            throw std::runtime_error("frame extent mismatch in " + dir);
        s.stack.frames.push_back(std::move(img));
    }
    s.stack.validate();

    ImageBuf depth = read_pfm((fs::path(dir) / "depth.pfm").string());
    if (depth.h != s.h || depth.w != s.w || depth.c != 1)
        throw std::runtime_error("depth map extent mismatch in " + dir);
    s.depth = std::move(depth.data);
    for (float z : s.depth)
        if (!(z > 0.0f)) throw std::runtime_error("non-positive depth in " + dir);
    return s;
}

std::vector<std::string> list_stacks(const std::string& root) {
    const json m = read_json((fs::path(root) / "manifest.json").string());
    std::vector<std::string> dirs;
    for (const auto& name : m.at("stacks"))
        dirs.push_back((fs::path(root) / name.get<std::string>()).string());
    return dirs;
}

std::vector<float> gt_disparity(const CameraModel& cam, const std::vector<float>& depth) {
    std::vector<float> disp(depth.size());
    for (size_t i = 0; i < depth.size(); ++i)
        disp[i] = float(depth_to_disparity(cam, double(depth[i])));
    return disp;
}

} // namespace fsd
