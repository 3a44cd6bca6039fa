#pragma once

#include <cstdint>
#include <vector>

#include "maunet/tensor.hpp"

namespace maunet {

// Binarization, confusion counting, Mean IoU and Mean Dice. All counts are
// exact integers; each metric is one division at the end, so parallel or
// re-ordered accumulation cannot change results.

// value >= threshold -> 1 (threshold itself maps to foreground).
TensorF binarize(const TensorF& prob, float threshold = 0.5f);

// p[i][j] = pixels with true class i predicted as class j.
class ConfusionMatrix {
  public:
    explicit ConfusionMatrix(int num_classes = 2);

    void add(int true_class, int predicted_class, std::int64_t count = 1);
    std::int64_t at(int true_class, int predicted_class) const;
    std::int64_t total() const;
    int num_classes() const { return k_; }

    // IoU_c = p_cc / (sum_j p_cj + sum_j p_jc - p_cc); classes absent from
    // both prediction and truth are excluded (reported as -1).
    std::vector<double> per_class_iou() const;
    double mean_iou() const;

  private:
    int k_;
    std::vector<std::int64_t> counts_;
};

// Accumulate one mask pair; values must be exactly 0 or 1, shapes must match.
void accumulate_confusion(ConfusionMatrix& cm, const TensorF& pred, const TensorF& gt);

// Pooled MIoU over all pixels of all pairs.
double miou(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt);

// Mean Dice: per sample (2|P n G| + s) / (|P| + |G| + s), s = 1e-6, averaged
// over samples; an empty-vs-empty pair counts as 1 through the smoothing.
double mean_dice(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt);

struct MetricsReport {
    double miou = 0.0;
    double mdc = 0.0;
    std::vector<double> per_class_iou;
    int n_samples = 0;
    std::size_t param_count = 0;
    double param_mb = 0.0;
};

MetricsReport evaluate_masks(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt);

// "metric,value" rows, LF line endings, '.' decimal separator.
std::string metrics_report_csv(const MetricsReport& report);

}  // namespace maunet
