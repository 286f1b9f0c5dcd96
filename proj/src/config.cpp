#include "fsd/config.hpp"

#include <cstdlib>
#include <fstream>
#include <stdexcept>
#include <string>

namespace fsd {

namespace {

using nlohmann::json;

void reject_unknown_keys(const json& j, std::initializer_list<const char*> known,
                         const std::string& where) {
    for (const auto& [key, _] : j.items()) {
        bool ok = false;
        for (const char* k : known) ok |= key == k;
        if (!ok) throw std::invalid_argument("config: unknown key '" + key + "' in " + where);
    }
}

} // namespace

void RunConfig::validate() const {
    if (image_size < 32) throw std::invalid_argument("config: image_size must be >= 32");
    if (image_size % encoder.patch != 0)
        throw std::invalid_argument("config: image_size must be divisible by the patch size");
    if (stack_frames < 1) throw std::invalid_argument("config: stack_frames must be >= 1");
    if (train_count < 1 || val_count < 1)
        throw std::invalid_argument("config: dataset counts must be >= 1");
    if (epochs < 0) throw std::invalid_argument("config: epochs must be >= 0");
    if (accum < 1) throw std::invalid_argument("config: accum must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("config: lr must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0))
        throw std::invalid_argument("config: beta1 must be in [0, 1)");
    if (!(z_min > 0.0 && z_max > z_min))
        throw std::invalid_argument("config: need 0 < z_min < z_max");
    if (!(loss.alpha >= 0.0)) throw std::invalid_argument("config: loss alpha must be >= 0");
    camera.validate();
    model_config().validate();
}

ModelConfig RunConfig::model_config() const {
    ModelConfig mc;
    mc.encoder = encoder;
    mc.fusion = fusion;
    mc.fusion.token_threshold = encoder.token_threshold;
    mc.decoder = decoder;
    mc.no_lstm = no_lstm;
    return mc;
}

json run_config_to_json(const RunConfig& cfg) {
    json j;
    j["seed"] = cfg.seed;
    j["image_size"] = cfg.image_size;
    j["stack_frames"] = cfg.stack_frames;
    j["train_count"] = cfg.train_count;
    j["val_count"] = cfg.val_count;
    j["epochs"] = cfg.epochs;
    j["accum"] = cfg.accum;
    j["lr"] = cfg.lr;
    j["beta1"] = cfg.beta1;
    j["z_min"] = cfg.z_min;
    j["z_max"] = cfg.z_max;
    j["random_prefix"] = cfg.random_prefix;
    j["camera"] ={{"focal_length", cfg.camera.focal_length},
                   {"f_number", cfg.camera.f_number},
                   {"baseline", cfg.camera.baseline},
                   {"pixel_pitch", cfg.camera.pixel_pitch},
                   {"sensor_distance", cfg.camera.sensor_distance}};
    j["encoder"] = {{"patch", cfg.encoder.patch},
                    {"d_model", cfg.encoder.d_model},
                    {"num_heads", cfg.encoder.num_heads},
                    {"num_blocks", cfg.encoder.num_blocks},
                    {"multiscale_kernels", cfg.encoder.multiscale_kernels},
                    {"token_threshold", cfg.encoder.token_threshold},
                    {"skip_block_indices", cfg.encoder.skip_block_indices}};
    j["fusion"] = {{"d_hidden", cfg.fusion.d_hidden},
                   {"lstm_layers", cfg.fusion.lstm_layers},
                   {"normalize_before_threshold", cfg.fusion.normalize_before_threshold}};
    j["decoder"] = {{"widths", cfg.decoder.widths},
                    {"disparity_floor", cfg.decoder.disparity_floor}};
    j["loss"] = {{"alpha", cfg.loss.alpha}, {"variant", loss_variant_name(cfg.loss.variant)}};
    j["ablations"] = {{"no_lstm", cfg.no_lstm},
                      {"constant_kernel", cfg.encoder.constant_kernel},
                      {"no_depth_conv", cfg.encoder.no_depth_conv}};
    return j;
}

RunConfig run_config_from_json(const json& j) {
    RunConfig cfg;
    reject_unknown_keys(j,
                        {"seed", "image_size", "stack_frames", "train_count", "val_count",
                         "epochs", "accum", "lr", "beta1", "z_min", "z_max", "random_prefix",
                         "camera", "encoder", "fusion", "decoder", "loss", "ablations"},
                        "top level");
    cfg.seed = j.value("seed", cfg.seed);
    cfg.image_size = j.value("image_size", cfg.image_size);
    cfg.stack_frames = j.value("stack_frames", cfg.stack_frames);
    cfg.train_count = j.value("train_count", cfg.train_count);
    cfg.val_count = j.value("val_count", cfg.val_count);
    cfg.epochs = j.value("epochs", cfg.epochs);
    cfg.accum = j.value("accum", cfg.accum);
    cfg.lr = j.value("lr", cfg.lr);
    cfg.beta1 = j.value("beta1", cfg.beta1);
    cfg.z_min = j.value("z_min", cfg.z_min);
    cfg.z_max = j.value("z_max", cfg.z_max);
    cfg.random_prefix = j.value("random_prefix", cfg.random_prefix);
    if (j.contains("camera")) {
        const auto& c = j.at("camera");
        reject_unknown_keys(
            c, {"focal_length", "f_number", "baseline", "pixel_pitch", "sensor_distance"},
            "camera");
        cfg.camera.focal_length = c.value("focal_length", cfg.camera.focal_length);
        cfg.camera.f_number = c.value("f_number", cfg.camera.f_number);
        cfg.camera.baseline = c.value("baseline", cfg.camera.baseline);
        cfg.camera.pixel_pitch = c.value("pixel_pitch", cfg.camera.pixel_pitch);
        cfg.camera.sensor_distance = c.value("sensor_distance", cfg.camera.sensor_distance);
    }
    if (j.contains("encoder")) {
        const auto& e = j.at("encoder");
        reject_unknown_keys(e,
                            {"patch", "d_model", "num_heads", "num_blocks",
                             "multiscale_kernels", "token_threshold", "skip_block_indices"},
                            "encoder");
        cfg.encoder.patch = e.value("patch", cfg.encoder.patch);
        cfg.encoder.d_model = e.value("d_model", cfg.encoder.d_model);
        cfg.encoder.num_heads = e.value("num_heads", cfg.encoder.num_heads);
        cfg.encoder.num_blocks = e.value("num_blocks", cfg.encoder.num_blocks);
        cfg.encoder.multiscale_kernels =
            e.value("multiscale_kernels", cfg.encoder.multiscale_kernels);
        cfg.encoder.token_threshold = e.value("token_threshold", cfg.encoder.token_threshold);
        cfg.encoder.skip_block_indices =
            e.value("skip_block_indices", cfg.encoder.skip_block_indices);
    }
    if (j.contains("fusion")) {
        const auto& f = j.at("fusion");
        reject_unknown_keys(f, {"d_hidden", "lstm_layers", "normalize_before_threshold"},
                            "fusion");
        cfg.fusion.d_hidden = f.value("d_hidden", cfg.fusion.d_hidden);
        cfg.fusion.lstm_layers = f.value("lstm_layers", cfg.fusion.lstm_layers);
        cfg.fusion.normalize_before_threshold =
            f.value("normalize_before_threshold", cfg.fusion.normalize_before_threshold);
    }
    if (j.contains("decoder")) {
        const auto& d = j.at("decoder");
        reject_unknown_keys(d, {"widths", "disparity_floor"}, "decoder");
        cfg.decoder.widths = d.value("widths", cfg.decoder.widths);
        cfg.decoder.disparity_floor = d.value("disparity_floor", cfg.decoder.disparity_floor);
    }
    if (j.contains("loss")) {
        const auto& l = j.at("loss");
        reject_unknown_keys(l, {"alpha", "variant"}, "loss");
        cfg.loss.alpha = l.value("alpha", cfg.loss.alpha);
        if (l.contains("variant"))
            cfg.loss.variant = parse_loss_variant(l.at("variant").get<std::string>());
    }
    if (j.contains("ablations")) {
        const auto& a = j.at("ablations");
        reject_unknown_keys(a, {"no_lstm", "constant_kernel", "no_depth_conv"}, "ablations");
        cfg.no_lstm = a.value("no_lstm", cfg.no_lstm);
        cfg.encoder.constant_kernel = a.value("constant_kernel", cfg.encoder.constant_kernel);
        cfg.encoder.no_depth_conv = a.value("no_depth_conv", cfg.encoder.no_depth_conv);
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    RunConfig cfg;
    if (!path.empty()) {
        std::ifstream in(path);
        if (!in) throw std::runtime_error("cannot open config file: " + path);
        nlohmann::json j;
        in >> j;
        cfg = run_config_from_json(j);
    }
    if (const char* env = std::getenv("RUN_SEED")) {
        try {
            size_t used = 0;
            cfg.seed = std::stoull(env, &used);
            if (used != std::string(env).size()) throw std::invalid_argument("trailing junk");
        } catch (const std::exception&) {
            throw std::invalid_argument("RUN_SEED must be an unsigned integer, got '" +
                                        std::string(env) + "'");
        }
    }
    return cfg;
}

} // namespace fsd
