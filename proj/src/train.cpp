#include "fsd/train.hpp"

#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

#include "fsd/adam.hpp"
#include "fsd/checkpoint.hpp"
#include "fsd/rng.hpp"

namespace fsd {

namespace {

constexpr uint64_t kEpochStream = 0x45504f4348ULL;
constexpr uint64_t kPrefixStream = 0x5052454649ULL;

// Prefix length for one visit, derived statelessly from (epoch, position) so
// that resuming mid-epoch replays the same draws.
int64_t prefix_len(uint64_t seed, int64_t epoch, int64_t pos, int64_t n) {
    if (n <= 4) return n;
    Rng rng(mix_seed(seed, kPrefixStream + uint64_t(epoch) * 0x1f123bb5ULL + uint64_t(pos)));
    return rng.randint(4, n + 1);
}

NodePtr<float> disparity_target(const StackSample& s) {
    auto gt = gt_disparity(s.stack.camera, s.depth);
    auto node = make_node<float>({s.h, s.w});
    node->value.assign(gt.begin(), gt.end());
    return node;
}

std::vector<NodePtr<float>> stack_nodes(const StackSample& s, int64_t k) {
    const int64_t n = int64_t(s.stack.frames.size());
    if (k < 0) k = n;
    if (k < 1 || k > n)
        throw std::invalid_argument("need 1.." + std::to_string(n) + " frames, got " +
                                    std::to_string(k));
    std::vector<NodePtr<float>> frames;
    frames.reserve(size_t(k));
    for (int64_t i = 0; i < k; ++i) frames.push_back(frame_to_node(s.stack.frames[size_t(i)]));
    return frames;
}

} // namespace

NodePtr<float> frame_to_node(const ImageBuf& img) {
    if (img.c != 3) throw std::invalid_argument("frame_to_node: expected 3 channels");
    auto node = make_node<float>({img.c, img.h, img.w});
    for (int64_t ch = 0; ch < img.c; ++ch)
        for (int64_t y = 0; y < img.h; ++y)
            for (int64_t x = 0; x < img.w; ++x)
                node->value[size_t((ch * img.h + y) * img.w + x)] = img.at(y, x, ch);
    return node;
}

std::vector<float> infer_disparity(DepthNet<float>& net, const StackSample& sample, int64_t k) {
    auto frames = stack_nodes(sample, k);
    auto disp = net.forward(nullptr, frames);
    return disp->value;
}

TrainResult train_model(DepthNet<float>& net, const std::vector<StackSample>& data,
                        const LossConfig& loss_cfg, const TrainOptions& opt) {
    if (data.empty()) throw std::invalid_argument("train_model: empty dataset");
    if (opt.accum < 1) throw std::invalid_argument("train_model: accum must be >= 1");
    if (opt.epochs < 0) throw std::invalid_argument("train_model: epochs must be >= 0");

    // Frames and targets are converted once and shared across epochs.
    std::vector<std::vector<NodePtr<float>>> frames;
    std::vector<NodePtr<float>> targets;
    for (const auto& s : data) {
        frames.push_back(stack_nodes(s, -1));
        targets.push_back(disparity_target(s));
    }

    Adam<float> optimizer(net.params.all(), opt.lr, opt.beta1);
    int64_t epoch0 = 0, pos0 = 0, global_step = 0;
    if (!opt.resume_from.empty()) {
        const Checkpoint ckpt = load_checkpoint(opt.resume_from);
        restore_checkpoint(ckpt, net.params, &optimizer);
        epoch0 = ckpt.extra.value("epoch", int64_t(0));
        pos0 = ckpt.extra.value("sample_pos", int64_t(0));
        global_step = ckpt.extra.value("global_step", int64_t(0));
        const uint64_t saved_seed = ckpt.extra.value("train_seed", opt.seed);
        if (saved_seed != opt.seed)
            throw std::runtime_error("resume: checkpoint was trained with seed " +
                                     std::to_string(saved_seed) + ", options say " +
                                     std::to_string(opt.seed));
    }

    TrainResult result;
    result.global_step = global_step;
    int64_t epoch = epoch0;
    int64_t pos = pos0;
    bool done = opt.max_steps >= 0 && global_step >= opt.max_steps;

    auto save = [&](int64_t next_epoch, int64_t next_pos) {
        if (opt.checkpoint_dir.empty()) return;
        Checkpoint ckpt = make_checkpoint(net.params, &optimizer);
        ckpt.extra["epoch"] = next_epoch;
        ckpt.extra["sample_pos"] = next_pos;
        ckpt.extra["global_step"] = result.global_step;
        ckpt.extra["train_seed"] = opt.seed;
        save_checkpoint(opt.checkpoint_dir, ckpt);
    };

    for (; epoch < opt.epochs && !done; ++epoch, pos = 0) {
        std::vector<int64_t> order(data.size());
        std::iota(order.begin(), order.end(), int64_t(0));
        Rng shuffle_rng(mix_seed(opt.seed, kEpochStream + uint64_t(epoch)));
        shuffle_rng.shuffle(order);

        int64_t pending = 0;
        double epoch_loss = 0.0;
        int64_t epoch_count = 0;
        for (int64_t i = pos; i < int64_t(order.size()) && !done; ++i) {
            const int64_t s = order[size_t(i)];
            const auto& full = frames[size_t(s)];
            int64_t take = int64_t(full.size());
            if (opt.random_prefix) take = prefix_len(opt.seed, epoch, i, take);
            Tape<float> tape;
            NodePtr<float> disp;
            if (take < int64_t(full.size())) {
                std::vector<NodePtr<float>> prefix(full.begin(), full.begin() + take);
                disp = net.forward(&tape, prefix);
            } else {
                disp = net.forward(&tape, full);
            }
            auto loss = total_loss(&tape, disp, targets[size_t(s)], loss_cfg);
            const float value = loss->value[0];
            if (!std::isfinite(value))
                throw std::runtime_error(
                    "training loss is not finite at update " + std::to_string(global_step) +
                    ", epoch " + std::to_string(epoch) + ", sample " + std::to_string(i));
            tape.backward(loss);
            result.sample_losses.push_back(value);
            epoch_loss += value;
            ++epoch_count;
            ++pending;

            const bool epoch_end = i + 1 == int64_t(order.size());
            if (pending == opt.accum || epoch_end) {
                optimizer.step(1.0 / double(pending));
                optimizer.zero_grad();
                pending = 0;
                ++global_step;
                ++result.updates;
                result.global_step = global_step;
                if (opt.max_steps >= 0 && global_step >= opt.max_steps) {
                    done = true;
                    const bool rolls_over = epoch_end;
                    save(rolls_over ? epoch + 1 : epoch, rolls_over ? 0 : i + 1);
                }
            }
        }
        if (!done) ++result.epochs_done;
        if (opt.verbose && epoch_count > 0)
            std::printf("epoch %lld  mean loss %.6f\n", (long long)epoch,
                        epoch_loss / double(epoch_count));
    }
    result.global_step = global_step;
    if (!done) save(epoch, 0);
    return result;
}

} // namespace fsd
