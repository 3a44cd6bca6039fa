#pragma once

#include <functional>
#include <string>
#include <vector>

#include "maunet/configs.hpp"
#include "maunet/dataset.hpp"
#include "maunet/metrics.hpp"
#include "maunet/model.hpp"

namespace maunet {

// Binary cross entropy. Sum reduction is the literal double sum over pixels
// then batch: -sum_n sum_hw [gt*log(p) + (1-gt)*log(1-p)]; mean divides by
// N*H*W. Predictions are clamped to [1e-7, 1-1e-7] before the log.
// Differentiable w.r.t. `pre`; `gt` must be exactly binary.
template <typename S>
Tensor<S> bce_loss(GradTape<S>* tape, const Tensor<S>& pre, const Tensor<S>& gt,
                   TrainConfig::Reduction reduction);

extern template Tensor<float> bce_loss(GradTape<float>*, const Tensor<float>&,
                                       const Tensor<float>&, TrainConfig::Reduction);
extern template Tensor<double> bce_loss(GradTape<double>*, const Tensor<double>&,
                                        const Tensor<double>&, TrainConfig::Reduction);

// One Adam update over every store entry, state slots updated in place.
// t is the 1-based step count used for bias correction. `bound` is the
// watched tensor list the forward pass used (its node ids key the gradients);
// parameters the loss never reached receive zero gradients and only their
// moment decay.
template <typename S>
void adam_step(ParamStore<S>& params, const typename GradTape<S>::Gradients& grads,
               const std::vector<Tensor<S>>& bound, const TrainConfig& config, int t);

extern template void adam_step(ParamStore<float>&, const GradTape<float>::Gradients&,
                               const std::vector<Tensor<float>>&, const TrainConfig&, int);
extern template void adam_step(ParamStore<double>&, const GradTape<double>::Gradients&,
                               const std::vector<Tensor<double>>&, const TrainConfig&, int);

struct EpochLog {
    int epoch = 0;        // 1-based
    double mean_loss = 0.0;
    double val_miou = 0.0;
    double val_mdc = 0.0;
    double seconds = 0.0;
};

struct TrainState {
    int step = 0;                     // total Adam steps taken
    double best_metric = 0.0;         // max of the monitored metric so far
    bool has_best = false;
    std::string best_checkpoint_path;
    int checkpoint_writes = 0;
    std::vector<EpochLog> log;
};

struct TrainHooks {
    // Test seam: replaces the computed validation metric for keep-best
    // decisions (epoch is 1-based).
    std::function<double(int epoch, double computed)> monitor_override;
    // Stop after this many Adam steps (0 = no cap). The epoch in progress
    // still runs its validation pass.
    int max_steps = 0;
};

// Keep-best training loop: per epoch a seeded shuffle, minibatch
// forward/loss/backward/Adam, then validation MIoU+MDC; the checkpoint at
// `checkpoint_path` is (re)written only when the monitored metric strictly
// improves. When the dataset has no val split the metrics are computed on the
// training split instead. The epoch log is returned and, when a path is
// given, persisted as CSV (header epoch,loss,miou,mdc,seconds).
TrainState train_model(MaUnet<float>& model, const std::vector<SegSample>& data,
                       const TrainConfig& config, const std::string& checkpoint_path,
                       const std::string& log_csv_path = "", const TrainHooks& hooks = {});

// Forward every sample (in minibatches) and binarize at the threshold.
std::vector<TensorF> predict_masks(const MaUnet<float>& model,
                                   const std::vector<const SegSample*>& samples, int batch_size,
                                   float threshold = 0.5f);

MetricsReport evaluate_model(const MaUnet<float>& model,
                             const std::vector<const SegSample*>& samples, int batch_size,
                             float threshold = 0.5f);

std::string epoch_log_csv(const std::vector<EpochLog>& log);

}  // namespace maunet
