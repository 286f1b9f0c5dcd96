// Command-line front end. Every verb delegates to the fsd:: command layer;
// this file only turns flags into a RunConfig. Precedence for each field is
// command line, then the RUN_SEED environment variable, then the config file.
#include <cstdio>
#include <exception>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "fsd/commands.hpp"

namespace {

struct ConfigFlags {
    std::string config_path;

    uint64_t seed = 0;
    int64_t image_size = 0, frames = 0, train_count = 0, val_count = 0;
    int64_t epochs = 0, accum = 0;
    double lr = 0, beta1 = 0, z_min = 0, z_max = 0;
    int64_t patch = 0, d_model = 0, heads = 0, blocks = 0;
    double tau = 0;
    int64_t d_hidden = 0, lstm_layers = 0;
    double alpha = 0;
    std::string loss_variant;
    std::vector<int64_t> widths, kernels, skip_blocks;
    bool random_prefix = false;
    bool no_lstm = false, constant_kernel = false, no_depth_conv = false;

    CLI::App* app = nullptr;

    void add_to(CLI::App* sub) {
        app = sub;
        sub->add_option("--config", config_path, "JSON run config file");
        sub->add_option("--seed", seed, "master seed");
        sub->add_option("--image-size", image_size, "square frame extent, px");
        sub->add_option("--frames", frames, "focal stack depth");
        sub->add_option("--train-count", train_count, "training stacks to generate");
        sub->add_option("--val-count", val_count, "validation stacks to generate");
        sub->add_option("--epochs", epochs, "training epochs");
        sub->add_option("--accum", accum, "stacks per optimizer update");
        sub->add_option("--lr", lr, "Adam learning rate");
        sub->add_option("--beta1", beta1, "Adam first-moment decay");
        sub->add_option("--z-min", z_min, "nearest scene depth, m");
        sub->add_option("--z-max", z_max, "farthest scene depth, m");
        sub->add_option("--patch", patch, "token patch size, px");
        sub->add_option("--d-model", d_model, "token width");
        sub->add_option("--heads", heads, "attention heads");
        sub->add_option("--blocks", blocks, "transformer blocks");
        sub->add_option("--tau", tau, "token activation threshold");
        sub->add_option("--d-hidden", d_hidden, "recurrent width (0: token width)");
        sub->add_option("--lstm-layers", lstm_layers, "stacked recurrent layers");
        sub->add_option("--alpha", alpha, "gradient-term weight in the loss");
        sub->add_option("--loss-variant", loss_variant, "mse, mae, or mse+grad");
        sub->add_option("--widths", widths, "decoder stage widths")->delimiter(',');
        sub->add_option("--kernels", kernels, "multiscale kernel sizes")->delimiter(',');
        sub->add_option("--skip-blocks", skip_blocks, "1-based blocks feeding skips")
            ->delimiter(',');
        sub->add_flag("--random-prefix", random_prefix,
                      "train on a random 4..n frame prefix per stack visit");
        sub->add_flag("--no-lstm", no_lstm, "replace fusion with per-frame averaging");
        sub->add_flag("--constant-kernel", constant_kernel, "single-scale front end");
        sub->add_flag("--no-depth-conv", no_depth_conv, "drop the 1x1 depth head");
    }

    bool given(const std::string& flag) const { return app->count(flag) > 0; }

    fsd::RunConfig resolve() const {
        fsd::RunConfig cfg = fsd::load_run_config(config_path);
        if (given("--seed")) cfg.seed = seed;
        if (given("--image-size")) cfg.image_size = image_size;
        if (given("--frames")) cfg.stack_frames = frames;
        if (given("--train-count")) cfg.train_count = train_count;
        if (given("--val-count")) cfg.val_count = val_count;
        if (given("--epochs")) cfg.epochs = epochs;
        if (given("--accum")) cfg.accum = accum;
        if (given("--lr")) cfg.lr = lr;
        if (given("--beta1")) cfg.beta1 = beta1;
        if (given("--z-min")) cfg.z_min = z_min;
        if (given("--z-max")) cfg.z_max = z_max;
        if (given("--patch")) cfg.encoder.patch = patch;
        if (given("--d-model")) cfg.encoder.d_model = d_model;
        if (given("--heads")) cfg.encoder.num_heads = heads;
        if (given("--blocks")) cfg.encoder.num_blocks = blocks;
        if (given("--tau")) cfg.encoder.token_threshold = tau;
        if (given("--d-hidden")) cfg.fusion.d_hidden = d_hidden;
        if (given("--lstm-layers")) cfg.fusion.lstm_layers = lstm_layers;
        if (given("--alpha")) cfg.loss.alpha = alpha;
        if (given("--loss-variant")) cfg.loss.variant = fsd::parse_loss_variant(loss_variant);
        if (given("--widths")) cfg.decoder.widths = widths;
        if (given("--kernels")) cfg.encoder.multiscale_kernels = kernels;
        if (given("--skip-blocks")) cfg.encoder.skip_block_indices = skip_blocks;
        if (given("--random-prefix")) cfg.random_prefix = true;
        if (given("--no-lstm")) cfg.no_lstm = true;
        if (given("--constant-kernel")) cfg.encoder.constant_kernel = true;
        if (given("--no-depth-conv")) cfg.encoder.no_depth_conv = true;
        cfg.validate();
        return cfg;
    }
};

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"focal-stack depth estimation"};
    app.require_subcommand(1);

    auto* gen = app.add_subcommand("gen-data", "render a synthetic focal-stack dataset");
    ConfigFlags gen_cfg;
    gen_cfg.add_to(gen);
    std::string gen_out;
    int64_t gen_count = -1;
    gen->add_option("--out", gen_out, "dataset root directory")->required();
    gen->add_option("--count", gen_count, "stacks to render (default: train count)");

    auto* train = app.add_subcommand("train", "fit the model to a dataset");
    ConfigFlags train_cfg;
    train_cfg.add_to(train);
    std::string train_data, train_out, train_resume;
    int64_t train_max_steps = -1;
    bool train_quiet = false;
    train->add_option("--data", train_data, "dataset root directory")->required();
    train->add_option("--out", train_out, "run output directory")->required();
    train->add_option("--resume", train_resume, "checkpoint directory to resume from");
    train->add_option("--max-steps", train_max_steps, "stop after this many optimizer updates");
    train->add_flag("--quiet", train_quiet, "suppress per-epoch loss lines");

    auto* eval = app.add_subcommand("eval", "metrics over a dataset, swept over frame budgets");
    std::string eval_ckpt, eval_data, eval_out, eval_space = "disparity";
    std::vector<int64_t> eval_ks = {2, 4, 6, 8, 10};
    eval->add_option("--checkpoint", eval_ckpt, "checkpoint directory")->required();
    eval->add_option("--data", eval_data, "dataset root directory")->required();
    eval->add_option("--k", eval_ks, "frame budgets to evaluate")->delimiter(',');
    eval->add_option("--out", eval_out, "CSV output path");
    eval->add_option("--space", eval_space, "metric space: disparity or depth")
        ->check(CLI::IsMember({"disparity", "depth"}));

    auto* infer = app.add_subcommand("infer", "predict depth for one stack");
    std::string infer_ckpt, infer_stack, infer_out;
    int64_t infer_frames = -1;
    infer->add_option("--checkpoint", infer_ckpt, "checkpoint directory")->required();
    infer->add_option("--stack", infer_stack, "stack directory")->required();
    infer->add_option("--out", infer_out, "output directory")->required();
    infer->add_option("--frames", infer_frames, "leading frames to use (-1: all)");

    auto* attn = app.add_subcommand("attention-dump", "export last-block attention rows");
    std::string attn_ckpt, attn_stack, attn_out;
    int64_t attn_token = 0;
    attn->add_option("--checkpoint", attn_ckpt, "checkpoint directory")->required();
    attn->add_option("--stack", attn_stack, "stack directory")->required();
    attn->add_option("--out", attn_out, "CSV output path")->required();
    attn->add_option("--token", attn_token, "query token index");

    auto* verify = app.add_subcommand("verify", "run the built-in numerical checks");
    bool verify_quick = false;
    verify->add_flag("--quick", verify_quick, "skip the whole-network gradient check");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            const auto cfg = gen_cfg.resolve();
            return fsd::cmd_gen_data(cfg, gen_out, gen_count < 0 ? cfg.train_count : gen_count);
        }
        if (train->parsed()) {
            return fsd::cmd_train(train_cfg.resolve(), train_data, train_out, train_resume,
                                  train_max_steps, !train_quiet);
        }
        if (eval->parsed())
            return fsd::cmd_eval(eval_ckpt, eval_data, eval_ks, eval_out,
                                 eval_space == "depth");
        if (infer->parsed()) return fsd::cmd_infer(infer_ckpt, infer_stack, infer_out, infer_frames);
        if (attn->parsed())
            return fsd::cmd_attention_dump(attn_ckpt, attn_stack, attn_out, attn_token);
        if (verify->parsed()) return fsd::cmd_verify(verify_quick);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 0;
}
