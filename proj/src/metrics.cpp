#include "maunet/metrics.hpp"

#include <cmath>
#include <sstream>

#include "maunet/error.hpp"

namespace maunet {

namespace {

int mask_value(float v, const char* what, std::size_t flat) {
    if (v == 0.0f) return 0;
    if (v == 1.0f) return 1;
    throw DataError(std::string(what) + ": mask value " + std::to_string(v) + " at flat index " +
                    std::to_string(flat) + " is not in {0,1}");
}

void check_pair(const TensorF& pred, const TensorF& gt, std::size_t i) {
    if (!same_shape(pred.shape(), gt.shape())) {
        throw DataError("mask pair " + std::to_string(i) + ": shape mismatch " +
                        shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    }
}

}  // namespace

TensorF binarize(const TensorF& prob, float threshold) {
    if (!(threshold > 0.0f && threshold < 1.0f)) {
        throw ConfigError("binarize: threshold must be in (0,1)");
    }
    std::vector<float> out(prob.size());
    for (std::size_t i = 0; i < prob.size(); ++i) out[i] = prob[i] >= threshold ? 1.0f : 0.0f;
    return TensorF(prob.shape(), std::move(out));
}

ConfusionMatrix::ConfusionMatrix(int num_classes) : k_(num_classes) {
    if (num_classes < 2) throw ConfigError("confusion matrix: need at least 2 classes");
    counts_.assign(static_cast<std::size_t>(k_) * static_cast<std::size_t>(k_), 0);
}

void ConfusionMatrix::add(int true_class, int predicted_class, std::int64_t count) {
    counts_[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(k_) +
            static_cast<std::size_t>(predicted_class)] += count;
}

std::int64_t ConfusionMatrix::at(int true_class, int predicted_class) const {
    return counts_[static_cast<std::size_t>(true_class) * static_cast<std::size_t>(k_) +
                   static_cast<std::size_t>(predicted_class)];
}

std::int64_t ConfusionMatrix::total() const {
    std::int64_t t = 0;
    for (auto c : counts_) t += c;
    return t;
}

std::vector<double> ConfusionMatrix::per_class_iou() const {
    std::vector<double> iou(static_cast<std::size_t>(k_), -1.0);
    for (int c = 0; c < k_; ++c) {
        std::int64_t row = 0, col = 0;
        for (int j = 0; j < k_; ++j) {
            row += at(c, j);
            col += at(j, c);
        }
        const std::int64_t uni = row + col - at(c, c);
        if (uni > 0) {
            iou[static_cast<std::size_t>(c)] =
                static_cast<double>(at(c, c)) / static_cast<double>(uni);
        }
    }
    return iou;
}

double ConfusionMatrix::mean_iou() const {
    const auto iou = per_class_iou();
    double sum = 0.0;
    int present = 0;
    for (double v : iou) {
        if (v >= 0.0) {
            sum += v;
            ++present;
        }
    }
    if (present == 0) throw DataError("mean_iou: no pixels counted");
    return sum / static_cast<double>(present);
}

void accumulate_confusion(ConfusionMatrix& cm, const TensorF& pred, const TensorF& gt) {
    check_pair(pred, gt, 0);
    std::int64_t cell[2][2] = {{0, 0}, {0, 0}};
    for (std::size_t i = 0; i < pred.size(); ++i) {
        cell[mask_value(gt[i], "gt", i)][mask_value(pred[i], "pred", i)]++;
    }
    for (int t = 0; t < 2; ++t) {
        for (int p = 0; p < 2; ++p) cm.add(t, p, cell[t][p]);
    }
}

double miou(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt) {
    if (pred.size() != gt.size()) {
        throw DataError("miou: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(gt.size()) + " ground-truth masks");
    }
    if (pred.empty()) throw DataError("miou: empty mask set");
    ConfusionMatrix cm(2);
    for (std::size_t i = 0; i < pred.size(); ++i) {
        check_pair(pred[i], gt[i], i);
        accumulate_confusion(cm, pred[i], gt[i]);
    }
    return cm.mean_iou();
}

double mean_dice(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt) {
    if (pred.size() != gt.size()) {
        throw DataError("mean_dice: " + std::to_string(pred.size()) + " predictions vs " +
                        std::to_string(gt.size()) + " ground-truth masks");
    }
    if (pred.empty()) throw DataError("mean_dice: empty mask set");
    const double smooth = 1e-6;
    double sum = 0.0;
    for (std::size_t i = 0; i < pred.size(); ++i) {
        check_pair(pred[i], gt[i], i);
        std::int64_t inter = 0, p_count = 0, g_count = 0;
        for (std::size_t f = 0; f < pred[i].size(); ++f) {
            const int p = mask_value(pred[i][f], "pred", f);
            const int g = mask_value(gt[i][f], "gt", f);
            inter += p & g;
            p_count += p;
            g_count += g;
        }
        sum += (2.0 * static_cast<double>(inter) + smooth) /
               (static_cast<double>(p_count + g_count) + smooth);
    }
    return sum / static_cast<double>(pred.size());
}

MetricsReport evaluate_masks(const std::vector<TensorF>& pred, const std::vector<TensorF>& gt) {
    MetricsReport report;
    ConfusionMatrix cm(2);
    if (pred.size() != gt.size() || pred.empty()) {
        throw DataError("evaluate_masks: need equal, non-empty mask sets");
    }
    for (std::size_t i = 0; i < pred.size(); ++i) {
        check_pair(pred[i], gt[i], i);
        accumulate_confusion(cm, pred[i], gt[i]);
    }
    report.miou = cm.mean_iou();
    report.per_class_iou = cm.per_class_iou();
    report.mdc = mean_dice(pred, gt);
    report.n_samples = static_cast<int>(pred.size());
    return report;
}

std::string metrics_report_csv(const MetricsReport& report) {
    std::ostringstream os;
    os.precision(10);
    os << "metric,value\n";
    os << "miou," << report.miou << "\n";
    os << "mdc," << report.mdc << "\n";
    for (std::size_t c = 0; c < report.per_class_iou.size(); ++c) {
        os << "iou_class" << c << "," << report.per_class_iou[c] << "\n";
    }
    os << "n_samples," << report.n_samples << "\n";
    os << "param_count," << report.param_count << "\n";
    os << "param_mb," << report.param_mb << "\n";
    return os.str();
}

}  // namespace maunet
