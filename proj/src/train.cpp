#include "maunet/train.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "maunet/checkpoint.hpp"

namespace maunet {

namespace {

constexpr double kClampLo = 1e-7;
constexpr double kClampHi = 1.0 - 1e-7;

}  // namespace

template <typename S>
Tensor<S> bce_loss(GradTape<S>* tape, const Tensor<S>& pre, const Tensor<S>& gt,
                   TrainConfig::Reduction reduction) {
    if (!same_shape(pre.shape(), gt.shape())) {
        throw ShapeError("bce_loss: prediction shape " + shape_str(pre.shape()) +
                         " does not match ground truth " + shape_str(gt.shape()));
    }
    for (std::size_t i = 0; i < gt.size(); ++i) {
        if (gt[i] != S(0) && gt[i] != S(1)) {
            throw DataError("bce_loss: ground truth value " + std::to_string(gt[i]) +
                            " at flat index " + std::to_string(i) + " is not in {0,1}");
        }
    }
    const double inv_count =
        reduction == TrainConfig::Reduction::Mean ? 1.0 / static_cast<double>(pre.size()) : 1.0;

    double acc = 0.0;
    for (std::size_t i = 0; i < pre.size(); ++i) {
        double p = static_cast<double>(pre[i]);
        p = std::min(kClampHi, std::max(kClampLo, p));
        const double g = static_cast<double>(gt[i]);
        acc -= g * std::log(p) + (1.0 - g) * std::log(1.0 - p);
    }
    std::vector<S> out{static_cast<S>(acc * inv_count)};
    ensure_finite(out, "bce_loss");
    Tensor<S> result({1}, std::move(out));

    if (!tape) return result;
    const int pre_id = tape->node_of(pre);
    if (pre_id < 0) return result;
    Tensor<S> saved_pre = pre.detached();
    Tensor<S> saved_gt = gt.detached();
    auto backward = [pre_id, saved_pre, saved_gt, inv_count](
                        const Tensor<S>& up, typename GradTape<S>::Gradients& grads) {
        const double u = static_cast<double>(up[0]) * inv_count;
        std::vector<S> din(saved_pre.size());
        for (std::size_t i = 0; i < din.size(); ++i) {
            const double raw = static_cast<double>(saved_pre[i]);
            if (raw < kClampLo || raw > kClampHi) {
                din[i] = S(0);  // clamp is flat outside the interval
                continue;
            }
            const double g = static_cast<double>(saved_gt[i]);
            din[i] = static_cast<S>(-u * (g / raw - (1.0 - g) / (1.0 - raw)));
        }
        grads.accumulate(pre_id, Tensor<S>(saved_pre.shape(), std::move(din)));
    };
    const int node = tape->record("bce_loss", {pre_id}, result.shape(), std::move(backward));
    return result.with_node(tape, node);
}

template <typename S>
void adam_step(ParamStore<S>& params, const typename GradTape<S>::Gradients& grads,
               const std::vector<Tensor<S>>& bound, const TrainConfig& config, int t) {
    if (t < 1) throw UsageError("adam_step: t must be >= 1");
    if (bound.size() != params.size()) {
        throw UsageError("adam_step: bound list does not match the param store");
    }
    const double bias1 = 1.0 - std::pow(config.beta1, t);
    const double bias2 = 1.0 - std::pow(config.beta2, t);

    for (std::size_t i = 0; i < params.size(); ++i) {
        auto& entry = params[static_cast<int>(i)];
        const Tensor<S> grad = grads.get_or_zero(bound[i].node(), entry.value.shape());
        for (std::size_t j = 0; j < grad.size(); ++j) {
            if (!std::isfinite(static_cast<double>(grad[j]))) {
                throw NumericError("adam_step: non-finite gradient for parameter '" + entry.name +
                                   "'");
            }
        }
        std::vector<S> theta(entry.value.size());
        std::vector<S> m(entry.value.size());
        std::vector<S> v(entry.value.size());
        for (std::size_t j = 0; j < theta.size(); ++j) {
            const double g = static_cast<double>(grad[j]);
            const double mj = config.beta1 * static_cast<double>(entry.m[j]) + (1.0 - config.beta1) * g;
            const double vj =
                config.beta2 * static_cast<double>(entry.v[j]) + (1.0 - config.beta2) * g * g;
            const double m_hat = mj / bias1;
            const double v_hat = vj / bias2;
            theta[j] = static_cast<S>(static_cast<double>(entry.value[j]) -
                                      config.learning_rate * m_hat / (std::sqrt(v_hat) + config.eps));
            m[j] = static_cast<S>(mj);
            v[j] = static_cast<S>(vj);
        }
        entry.value = Tensor<S>(entry.value.shape(), std::move(theta));
        entry.m = Tensor<S>(entry.m.shape(), std::move(m));
        entry.v = Tensor<S>(entry.v.shape(), std::move(v));
    }
}

std::vector<TensorF> predict_masks(const MaUnet<float>& model,
                                   const std::vector<const SegSample*>& samples, int batch_size,
                                   float threshold) {
    std::vector<TensorF> masks;
    masks.reserve(samples.size());
    for (std::size_t start = 0; start < samples.size();
         start += static_cast<std::size_t>(batch_size)) {
        std::vector<const SegSample*> batch(
            samples.begin() + static_cast<std::ptrdiff_t>(start),
            samples.begin() + static_cast<std::ptrdiff_t>(
                                  std::min(samples.size(), start + static_cast<std::size_t>(batch_size))));
        const TensorF prob = forward_model(model, stack_images(batch));
        const TensorF hard = binarize(prob, threshold);
        const int h = hard.dim(2), w = hard.dim(3);
        for (std::size_t b = 0; b < batch.size(); ++b) {
            std::vector<float> one(static_cast<std::size_t>(h) * w);
            const float* src = hard.data() + b * one.size();
            std::copy(src, src + one.size(), one.begin());
            masks.emplace_back(Shape{1, h, w}, std::move(one));
        }
    }
    return masks;
}

MetricsReport evaluate_model(const MaUnet<float>& model,
                             const std::vector<const SegSample*>& samples, int batch_size,
                             float threshold) {
    if (samples.empty()) throw DataError("evaluate_model: no samples");
    const std::vector<TensorF> pred = predict_masks(model, samples, batch_size, threshold);
    std::vector<TensorF> gt;
    gt.reserve(samples.size());
    for (const auto* s : samples) gt.push_back(s->mask);
    MetricsReport report = evaluate_masks(pred, gt);
    const ParamReport pr = param_report(model);
    report.param_count = pr.count;
    report.param_mb = pr.megabytes;
    return report;
}

std::string epoch_log_csv(const std::vector<EpochLog>& log) {
    std::ostringstream os;
    os << "epoch,loss,miou,mdc,seconds\n";
    char buf[160];
    for (const auto& e : log) {
        std::snprintf(buf, sizeof buf, "%d,%.17g,%.17g,%.17g,%.3f\n", e.epoch, e.mean_loss,
                      e.val_miou, e.val_mdc, e.seconds);
        os << buf;
    }
    return os.str();
}

TrainState train_model(MaUnet<float>& model, const std::vector<SegSample>& data,
                       const TrainConfig& config, const std::string& checkpoint_path,
                       const std::string& log_csv_path, const TrainHooks& hooks) {
    config.validate();
    const auto train_split = split_of(data, SegSample::Split::Train);
    auto val_split = split_of(data, SegSample::Split::Val);
    if (train_split.empty()) throw DataError("train: training split is empty");
    if (val_split.empty()) val_split = train_split;  // no held-out data at all

    const RunConfig run_config{model.config, config};
    TrainState state;
    const RngState root(config.seed);

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        const auto epoch_start = std::chrono::steady_clock::now();

        // seeded shuffle of the training order
        std::vector<std::size_t> order(train_split.size());
        for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
        RngState shuffle_rng = root.split(RngState::kShuffle).split(static_cast<std::uint64_t>(epoch));
        for (std::size_t i = order.size(); i > 1; --i) {
            std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.next_below(i))]);
        }

        double loss_sum = 0.0;
        int batches = 0;
        for (std::size_t start = 0; start < order.size();
             start += static_cast<std::size_t>(config.batch_size)) {
            if (hooks.max_steps > 0 && state.step >= hooks.max_steps) break;
            std::vector<const SegSample*> batch;
            for (std::size_t i = start;
                 i < std::min(order.size(), start + static_cast<std::size_t>(config.batch_size)); ++i) {
                batch.push_back(train_split[order[i]]);
            }

            GradTape<float> tape;
            const std::vector<TensorF> bound = model.params.bind(&tape);
            const TensorF pred = forward_model(model, &tape, bound, stack_images(batch));
            const TensorF loss = bce_loss(&tape, pred, stack_masks(batch), config.loss_reduction);
            const auto grads = tape.backward(tape.node_of(loss));

            ++state.step;
            adam_step(model.params, grads, bound, config, state.step);
            loss_sum += static_cast<double>(loss[0]);
            ++batches;
        }

        const MetricsReport metrics = evaluate_model(model, val_split, config.batch_size);
        double monitored =
            config.monitor == TrainConfig::Monitor::Mdc ? metrics.mdc : metrics.miou;
        if (hooks.monitor_override) monitored = hooks.monitor_override(epoch, monitored);

        // keep-best: strict improvement only, ties do not overwrite
        if (!state.has_best || monitored > state.best_metric) {
            save_checkpoint(checkpoint_path, model.params, run_config);
            state.best_metric = monitored;
            state.has_best = true;
            state.best_checkpoint_path = checkpoint_path;
            ++state.checkpoint_writes;
        }

        const double seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - epoch_start).count();
        state.log.push_back(EpochLog{epoch, batches > 0 ? loss_sum / batches : 0.0, metrics.miou,
                                     metrics.mdc, seconds});

        if (hooks.max_steps > 0 && state.step >= hooks.max_steps) break;
    }

    if (!log_csv_path.empty()) {
        std::ofstream out(log_csv_path, std::ios::binary);
        if (!out) throw IoError("train: cannot open " + log_csv_path + " for writing");
        out << epoch_log_csv(state.log);
    }
    return state;
}

template Tensor<float> bce_loss(GradTape<float>*, const Tensor<float>&, const Tensor<float>&,
                                TrainConfig::Reduction);
template Tensor<double> bce_loss(GradTape<double>*, const Tensor<double>&, const Tensor<double>&,
                                 TrainConfig::Reduction);
template void adam_step(ParamStore<float>&, const GradTape<float>::Gradients&,
                        const std::vector<Tensor<float>>&, const TrainConfig&, int);
template void adam_step(ParamStore<double>&, const GradTape<double>::Gradients&,
                        const std::vector<Tensor<double>>&, const TrainConfig&, int);

}  // namespace maunet
