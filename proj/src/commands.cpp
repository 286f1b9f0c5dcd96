#include "fsd/commands.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "fsd/checkpoint.hpp"
#include "fsd/dataset.hpp"
#include "fsd/image_io.hpp"
#include "fsd/metrics.hpp"
#include "fsd/verify.hpp"

namespace fsd {

namespace {

std::vector<StackSample> load_all_stacks(const std::string& data_dir) {
    std::vector<StackSample> samples;
    for (const auto& dir : list_stacks(data_dir)) samples.push_back(load_stack(dir));
    if (samples.empty()) throw std::runtime_error("no stacks under " + data_dir);
    return samples;
}

void write_text(const std::string& path, const std::string& text) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open " + path + " for writing");
    f << text;
}

MetricsReport eval_sample(DepthNet<float>& net, const StackSample& sample, int64_t k,
                          bool depth_space) {
    const auto pred = infer_disparity(net, sample, k);
    std::vector<double> pred_d(pred.size()), gt_d(pred.size());
    if (depth_space) {
        for (size_t i = 0; i < pred.size(); ++i) {
            pred_d[i] = disparity_to_depth(sample.stack.camera, double(pred[i]));
            gt_d[i] = double(sample.depth[i]);
        }
    } else {
        const auto gt = gt_disparity(sample.stack.camera, sample.depth);
        pred_d.assign(pred.begin(), pred.end());
        gt_d.assign(gt.begin(), gt.end());
    }
    return compute_metrics(pred_d, gt_d, {}, sample.h, sample.w);
}

MetricsReport mean_report(const std::vector<MetricsReport>& reports) {
    MetricsReport avg;
    const double inv = 1.0 / double(reports.size());
    for (const auto& r : reports) {
        avg.rmse += inv * r.rmse;
        avg.log_rmse += inv * r.log_rmse;
        avg.abs_rel += inv * r.abs_rel;
        avg.sqr_rel += inv * r.sqr_rel;
        avg.bump += inv * r.bump;
        avg.acc_1 += inv * r.acc_1;
        avg.acc_2 += inv * r.acc_2;
        avg.acc_3 += inv * r.acc_3;
    }
    return avg;
}

} // namespace

DepthNet<float> net_from_checkpoint(const std::string& dir, RunConfig* cfg_out) {
    const Checkpoint ckpt = load_checkpoint(dir);
    if (!ckpt.extra.contains("config"))
        throw std::runtime_error("checkpoint under " + dir + " has no embedded run config");
    const RunConfig cfg = run_config_from_json(ckpt.extra.at("config"));
    DepthNet<float> net(cfg.model_config(), cfg.image_size, cfg.image_size, cfg.seed);
    restore_checkpoint(ckpt, net.params, nullptr);
    if (cfg_out) *cfg_out = cfg;
    return net;
}

int cmd_gen_data(const RunConfig& cfg, const std::string& out_dir, int64_t count) {
    cfg.validate();
    if (count < 1) throw std::invalid_argument("gen-data: count must be >= 1");
    generate_dataset(cfg, out_dir, count);
    std::printf("wrote %lld stacks of %lld frames at %lldx%lld under %s\n",
                (long long)count, (long long)cfg.stack_frames, (long long)cfg.image_size,
                (long long)cfg.image_size, out_dir.c_str());
    return 0;
}

int cmd_train(const RunConfig& cfg, const std::string& data_dir, const std::string& out_dir,
              const std::string& resume_from, int64_t max_steps, bool verbose) {
    cfg.validate();
    const auto data = load_all_stacks(data_dir);
    for (const auto& s : data)
        if (s.h != cfg.image_size || s.w != cfg.image_size)
            throw std::runtime_error("stack extent " + std::to_string(s.h) + "x" +
                                     std::to_string(s.w) + " does not match configured size " +
                                     std::to_string(cfg.image_size));

    DepthNet<float> net(cfg.model_config(), cfg.image_size, cfg.image_size, cfg.seed);
    std::filesystem::create_directories(out_dir);

    TrainOptions topt;
    topt.epochs = cfg.epochs;
    topt.accum = cfg.accum;
    topt.lr = cfg.lr;
    topt.beta1 = cfg.beta1;
    topt.seed = cfg.seed;
    topt.max_steps = max_steps;
    topt.random_prefix = cfg.random_prefix;
    topt.checkpoint_dir = out_dir + "/checkpoint";
    topt.resume_from = resume_from;
    topt.verbose = verbose;

    const TrainResult res = train_model(net, data, cfg.loss, topt);

    Checkpoint ckpt = load_checkpoint(topt.checkpoint_dir);
    ckpt.extra["config"] = run_config_to_json(cfg);
    save_checkpoint(topt.checkpoint_dir, ckpt);

    write_text(out_dir + "/config.json", run_config_to_json(cfg).dump(2) + "\n");
    std::ostringstream csv;
    csv << "sample,loss\n";
    char buf[64];
    for (size_t i = 0; i < res.sample_losses.size(); ++i) {
        std::snprintf(buf, sizeof buf, "%zu,%.9g\n", i, double(res.sample_losses[i]));
        csv << buf;
    }
    write_text(out_dir + "/loss_history.csv", csv.str());

    std::printf("trained %lld updates (global step %lld), checkpoint under %s\n",
                (long long)res.updates, (long long)res.global_step, topt.checkpoint_dir.c_str());
    return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::vector<int64_t>& ks, const std::string& csv_out, bool depth_space) {
    if (ks.empty()) throw std::invalid_argument("eval: need at least one frame budget");
    auto net = net_from_checkpoint(checkpoint_dir);
    const auto samples = load_all_stacks(data_dir);

    std::ostringstream csv;
    csv << "k," << metrics_csv_header() << "\n";
    for (int64_t k : ks) {
        std::vector<MetricsReport> reports;
        reports.reserve(samples.size());
        for (const auto& s : samples) reports.push_back(eval_sample(net, s, k, depth_space));
        csv << k << "," << metrics_csv_row(mean_report(reports)) << "\n";
    }

    std::fputs(csv.str().c_str(), stdout);
    if (!csv_out.empty()) write_text(csv_out, csv.str());
    return 0;
}

int cmd_infer(const std::string& checkpoint_dir, const std::string& stack_dir,
              const std::string& out_dir, int64_t frames) {
    auto net = net_from_checkpoint(checkpoint_dir);
    const StackSample sample = load_stack(stack_dir);
    const auto disp = infer_disparity(net, sample, frames);

    std::filesystem::create_directories(out_dir);
    ImageBuf dimg = make_image(sample.h, sample.w, 1);
    ImageBuf zimg = make_image(sample.h, sample.w, 1);
    float lo = std::numeric_limits<float>::infinity(), hi = -lo;
    for (size_t i = 0; i < disp.size(); ++i) {
        dimg.data[i] = disp[i];
        zimg.data[i] = float(disparity_to_depth(sample.stack.camera, double(disp[i])));
        lo = std::min(lo, disp[i]);
        hi = std::max(hi, disp[i]);
    }
    write_pfm(out_dir + "/disparity.pfm", dimg);
    write_pfm(out_dir + "/depth.pfm", zimg);

    // Near surfaces render bright.
    ImageBuf vis = make_image(sample.h, sample.w, 1);
    const float span = hi - lo;
    for (size_t i = 0; i < disp.size(); ++i)
        vis.data[i] = span > 0.0f ? (disp[i] - lo) / span : 0.5f;
    write_png_gray8(out_dir + "/depth_vis.png", vis);

    std::printf("disparity range [%g, %g] over %lld frames, outputs under %s\n", double(lo),
                double(hi), (long long)(frames < 0 ? sample.stack.frames.size() : size_t(frames)),
                out_dir.c_str());
    return 0;
}

int cmd_attention_dump(const std::string& checkpoint_dir, const std::string& stack_dir,
                       const std::string& out_csv, int64_t token_index) {
    auto net = net_from_checkpoint(checkpoint_dir);
    const StackSample sample = load_stack(stack_dir);
    std::vector<NodePtr<float>> frames;
    for (const auto& img : sample.stack.frames) frames.push_back(frame_to_node(img));

    ForwardExtras<float> extras;
    extras.capture_attention = true;
    net.forward(nullptr, frames, &extras);

    if (extras.attention.empty() || extras.attention[0].empty())
        throw std::runtime_error("forward pass captured no attention maps");
    const int64_t num_tokens = extras.attention[0][0]->shape[0];
    if (token_index < 0 || token_index >= num_tokens)
        throw std::invalid_argument("token index must be in 0.." + std::to_string(num_tokens - 1));

    std::ostringstream csv;
    csv << "frame,head";
    for (int64_t j = 0; j < num_tokens; ++j) csv << ",a_" << j;
    csv << "\n";
    char buf[32];
    for (size_t f = 0; f < extras.attention.size(); ++f) {
        for (size_t h = 0; h < extras.attention[f].size(); ++h) {
            const auto& a = extras.attention[f][h];
            csv << f << "," << h;
            for (int64_t j = 0; j < num_tokens; ++j) {
                std::snprintf(buf, sizeof buf, ",%.9g", double(a->value[token_index * num_tokens + j]));
                csv << buf;
            }
            csv << "\n";
        }
    }
    write_text(out_csv, csv.str());
    std::printf("wrote %zu frames x %zu heads of attention for token %lld to %s\n",
                extras.attention.size(), extras.attention[0].size(), (long long)token_index,
                out_csv.c_str());
    return 0;
}

int cmd_verify(bool quick) {
    const auto results = run_verification(quick);
    return report_verification(results) > 0 ? 1 : 0;
}

} // namespace fsd
