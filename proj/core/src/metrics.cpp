#include "priormoe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <map>
#include <sstream>
#include <stdexcept>

#include <nlohmann/json.hpp>

#include "priormoe/image_io.hpp"

namespace fs = std::filesystem;

namespace priormoe {

namespace {

constexpr double kEps = 2.220446049250313e-16;

void check_shapes(const char* op, const Tensor& pred, const Tensor& gt) {
    if (!pred.same_shape(gt)) {
        throw std::invalid_argument(std::string(op) + ": shape mismatch " + pred.shape_str() + " vs " +
                                    gt.shape_str());
    }
}

struct Counts {
    int64_t inter = 0, pred = 0, gt = 0;
};

Counts binarized_counts(const Tensor& pred, const Tensor& gt, double threshold) {
    Counts c;
    for (int64_t i = 0; i < pred.numel(); ++i) {
        const bool p = pred[i] >= threshold;
        const bool g = gt[i] >= 0.5;
        c.inter += (p && g) ? 1 : 0;
        c.pred += p ? 1 : 0;
        c.gt += g ? 1 : 0;
    }
    return c;
}

}  // namespace

double iou(const Tensor& pred, const Tensor& gt, double threshold) {
    check_shapes("iou", pred, gt);
    Counts c = binarized_counts(pred, gt, threshold);
    const int64_t uni = c.pred + c.gt - c.inter;
    if (uni == 0) return 1.0;  // both empty
    return static_cast<double>(c.inter) / static_cast<double>(uni);
}

double dice_coeff(const Tensor& pred, const Tensor& gt, double threshold) {
    check_shapes("dice_coeff", pred, gt);
    Counts c = binarized_counts(pred, gt, threshold);
    if (c.pred + c.gt == 0) return 1.0;
    return 2.0 * static_cast<double>(c.inter) / static_cast<double>(c.pred + c.gt);
}

double mae(const Tensor& pred, const Tensor& gt) {
    check_shapes("mae", pred, gt);
    double acc = 0.0;
    for (int64_t i = 0; i < pred.numel(); ++i) acc += std::fabs(pred[i] - gt[i]);
    return acc / static_cast<double>(pred.numel());
}

double weighted_fmeasure(const Tensor& pred, const Tensor& gt, bool* empty_gt) {
    check_shapes("weighted_fmeasure", pred, gt);
    if (pred.ndim() != 2) throw std::invalid_argument("weighted_fmeasure: expected [H,W] maps");
    const int64_t H = pred.dim(0), W = pred.dim(1), N = H * W;

    std::vector<int64_t> fg;
    for (int64_t i = 0; i < N; ++i) {
        if (gt[i] >= 0.5) fg.push_back(i);
    }
    if (empty_gt) *empty_gt = fg.empty();
    if (fg.empty()) return 0.0;

    // Per-pixel absolute error, nearest-foreground distance and index.
    std::vector<double> E(static_cast<size_t>(N)), Et(static_cast<size_t>(N));
    std::vector<double> dist(static_cast<size_t>(N), 0.0);
    for (int64_t i = 0; i < N; ++i) E[static_cast<size_t>(i)] = std::fabs(pred[i] - (gt[i] >= 0.5 ? 1.0 : 0.0));
    Et = E;
    for (int64_t i = 0; i < N; ++i) {
        if (gt[i] >= 0.5) continue;
        const int64_t y = i / W, x = i % W;
        int64_t best = -1;
        int64_t best_d2 = std::numeric_limits<int64_t>::max();
        for (int64_t j : fg) {
            const int64_t fy = j / W, fx = j % W;
            const int64_t d2 = (fy - y) * (fy - y) + (fx - x) * (fx - x);
            if (d2 < best_d2) {
                best_d2 = d2;
                best = j;
            }
        }
        dist[static_cast<size_t>(i)] = std::sqrt(static_cast<double>(best_d2));
        Et[static_cast<size_t>(i)] = E[static_cast<size_t>(best)];
    }

    // 7x7 Gaussian (sigma 5) dependency filter, zero padding.
    double kern[7][7];
    double ksum = 0.0;
    for (int a = 0; a < 7; ++a) {
        for (int b = 0; b < 7; ++b) {
            const double dy = a - 3, dx = b - 3;
            kern[a][b] = std::exp(-(dy * dy + dx * dx) / 50.0);
            ksum += kern[a][b];
        }
    }
    for (auto& row : kern) {
        for (double& v : row) v /= ksum;
    }
    std::vector<double> EA(static_cast<size_t>(N), 0.0);
    for (int64_t y = 0; y < H; ++y) {
        for (int64_t x = 0; x < W; ++x) {
            double acc = 0.0;
            for (int a = 0; a < 7; ++a) {
                const int64_t yy = y + a - 3;
                if (yy < 0 || yy >= H) continue;
                for (int b = 0; b < 7; ++b) {
                    const int64_t xx = x + b - 3;
                    if (xx < 0 || xx >= W) continue;
                    acc += kern[a][b] * Et[static_cast<size_t>(yy * W + xx)];
                }
            }
            EA[static_cast<size_t>(y * W + x)] = acc;
        }
    }

    // Foreground keeps min(E, EA); background errors decay with distance.
    const double ln_half_over5 = std::log(0.5) / 5.0;
    double ew_fg_sum = 0.0, ew_bg_sum = 0.0;
    for (int64_t i = 0; i < N; ++i) {
        const bool isfg = gt[i] >= 0.5;
        double v = E[static_cast<size_t>(i)];
        if (isfg && EA[static_cast<size_t>(i)] < v) v = EA[static_cast<size_t>(i)];
        const double B = isfg ? 1.0 : 2.0 - std::exp(ln_half_over5 * dist[static_cast<size_t>(i)]);
        const double ew = v * B;
        if (isfg) {
            ew_fg_sum += ew;
        } else {
            ew_bg_sum += ew;
        }
    }
    const double n_fg = static_cast<double>(fg.size());
    const double tpw = n_fg - ew_fg_sum;
    const double fpw = ew_bg_sum;
    const double recall = 1.0 - ew_fg_sum / n_fg;
    const double precision = tpw / (kEps + tpw + fpw);
    return 2.0 * recall * precision / (kEps + recall + precision);
}

std::string MetricReport::to_text() const {
    std::ostringstream os;
    os << "images: " << n_images << "\n";
    char buf[64];
    std::snprintf(buf, sizeof(buf), "iou:  %.6f\n", iou);
    os << buf;
    std::snprintf(buf, sizeof(buf), "dice: %.6f\n", dice);
    os << buf;
    std::snprintf(buf, sizeof(buf), "fw:   %.6f\n", f_w);
    os << buf;
    std::snprintf(buf, sizeof(buf), "mae:  %.6f\n", mae);
    os << buf;
    os << "empty_gt: ";
    if (empty_gt_stems.empty()) {
        os << "none\n";
    } else {
        for (size_t i = 0; i < empty_gt_stems.size(); ++i) {
            os << (i ? "," : "") << empty_gt_stems[i];
        }
        os << "\n";
    }
    return os.str();
}

std::string MetricReport::to_json() const {
    nlohmann::json j;
    j["n_images"] = n_images;
    j["iou"] = iou;
    j["dice"] = dice;
    j["f_w"] = f_w;
    j["mae"] = mae;
    j["empty_gt"] = empty_gt_stems;
    return j.dump(2);
}

MetricReport aggregate(const std::vector<PerImageMetrics>& rows) {
    MetricReport rep;
    rep.n_images = static_cast<int>(rows.size());
    for (const auto& r : rows) {
        rep.iou += r.iou;
        rep.dice += r.dice;
        rep.f_w += r.f_w;
        rep.mae += r.mae;
        if (r.empty_gt) rep.empty_gt_stems.push_back(r.stem);
    }
    if (!rows.empty()) {
        const double inv = 1.0 / static_cast<double>(rows.size());
        rep.iou *= inv;
        rep.dice *= inv;
        rep.f_w *= inv;
        rep.mae *= inv;
    }
    return rep;
}

MetricReport evaluate_dataset(const std::string& pred_dir, const std::string& gt_dir,
                              bool allow_missing, std::vector<PerImageMetrics>* per_image,
                              std::vector<std::string>* unmatched_out) {
    if (!fs::is_directory(pred_dir)) throw std::runtime_error("evaluate_dataset: no such directory " + pred_dir);
    if (!fs::is_directory(gt_dir)) throw std::runtime_error("evaluate_dataset: no such directory " + gt_dir);

    auto collect = [](const std::string& dir, bool strip_msk) {
        std::map<std::string, std::string> stems;
        for (const auto& e : fs::directory_iterator(dir)) {
            if (!e.is_regular_file()) continue;
            std::string name = e.path().filename().string();
            const auto dot = name.find_last_of('.');
            if (dot == std::string::npos) continue;
            const std::string ext = name.substr(dot);
            if (ext != ".pgm" && ext != ".png" && ext != ".ppm") continue;
            std::string stem = name.substr(0, dot);
            if (strip_msk && stem.rfind("msk_", 0) == 0) stem = stem.substr(4);
            if (stem.rfind("img_", 0) == 0) continue;  // dataset dirs hold images too
            stems[stem] = e.path().string();
        }
        return stems;
    };
    auto preds = collect(pred_dir, true);
    auto gts = collect(gt_dir, true);

    std::vector<std::string> unmatched;
    for (const auto& [stem, path] : preds) {
        if (!gts.count(stem)) unmatched.push_back("pred:" + stem);
    }
    for (const auto& [stem, path] : gts) {
        if (!preds.count(stem)) unmatched.push_back("gt:" + stem);
    }
    if (unmatched_out) *unmatched_out = unmatched;
    if (!unmatched.empty() && !allow_missing) {
        std::string list;
        for (const auto& u : unmatched) list += " " + u;
        throw std::runtime_error("evaluate_dataset: unmatched stems:" + list);
    }

    std::vector<PerImageMetrics> rows;
    for (const auto& [stem, path] : preds) {
        auto git = gts.find(stem);
        if (git == gts.end()) continue;
        Tensor pred = gray_to_tensor(read_image(path));
        Tensor gt = gray_to_tensor(read_image(git->second));
        for (int64_t i = 0; i < gt.numel(); ++i) gt[i] = gt[i] > 0.5 ? 1.0 : 0.0;
        PerImageMetrics m;
        m.stem = stem;
        m.iou = iou(pred, gt);
        m.dice = dice_coeff(pred, gt);
        m.f_w = weighted_fmeasure(pred, gt, &m.empty_gt);
        m.mae = mae(pred, gt);
        if (m.iou > m.dice + 1e-12) {
            throw std::logic_error("evaluate_dataset: iou exceeded dice on '" + stem + "'");
        }
        rows.push_back(std::move(m));
    }
    if (per_image) *per_image = rows;
    return aggregate(rows);
}

}  // namespace priormoe
