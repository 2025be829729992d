#include "priormoe/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "priormoe/image_io.hpp"
#include "priormoe/rng.hpp"

namespace fs = std::filesystem;

namespace priormoe {

namespace {

constexpr double kTwoPi = 6.283185307179586476925286766559;

struct Shape {
    bool is_ellipse = true;
    // ellipse
    double cx = 0, cy = 0, ax = 0, ay = 0, rot = 0;
    // polygon
    std::vector<double> px, py;

    bool contains(double x, double y) const {
        if (is_ellipse) {
            const double dx = x - cx, dy = y - cy;
            const double c = std::cos(rot), s = std::sin(rot);
            const double u = (dx * c + dy * s) / ax;
            const double v = (-dx * s + dy * c) / ay;
            return u * u + v * v <= 1.0;
        }
        // Even-odd crossing test.
        bool inside = false;
        const size_t n = px.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            if ((py[i] > y) != (py[j] > y)) {
                const double xi = px[j] + (y - py[j]) / (py[i] - py[j]) * (px[i] - px[j]);
                if (x < xi) inside = !inside;
            }
        }
        return inside;
    }

    double area() const {
        if (is_ellipse) return 3.14159265358979323846 * ax * ay;
        double acc = 0.0;
        const size_t n = px.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            acc += px[j] * py[i] - px[i] * py[j];
        }
        return std::fabs(acc) * 0.5;
    }

    double perimeter() const {
        if (is_ellipse) {
            // Ramanujan approximation; accurate far below the 1-pixel band.
            const double a = ax, b = ay;
            return 3.14159265358979323846 *
                   (3.0 * (a + b) - std::sqrt((3.0 * a + b) * (a + 3.0 * b)));
        }
        double acc = 0.0;
        const size_t n = px.size();
        for (size_t i = 0, j = n - 1; i < n; j = i++) {
            acc += std::hypot(px[i] - px[j], py[i] - py[j]);
        }
        return acc;
    }
};

struct TextureComponent {
    double wx, wy, phase, amp;
};

uint64_t sample_seed(uint64_t texture_seed, int index) {
    uint64_t s = texture_seed;
    uint64_t a = splitmix64(s);
    s = a ^ (0x9e3779b97f4a7c15ull * static_cast<uint64_t>(index + 1));
    return splitmix64(s);
}

}  // namespace

ShapeFamily shape_family_from_string(const std::string& s) {
    if (s == "ellipse") return ShapeFamily::kEllipse;
    if (s == "polygon") return ShapeFamily::kPolygon;
    if (s == "mix") return ShapeFamily::kMix;
    throw std::invalid_argument("shape family must be ellipse|polygon|mix, got '" + s + "'");
}

std::string to_string(ShapeFamily f) {
    switch (f) {
        case ShapeFamily::kEllipse: return "ellipse";
        case ShapeFamily::kPolygon: return "polygon";
        default: return "mix";
    }
}

SamplePair gen_sample(const DatasetSpec& spec, int index) {
    const int64_t S = spec.image_size;
    Rng rng(sample_seed(spec.texture_seed, index));

    // Multi-frequency texture, shared geometry across channels with small
    // per-channel phase offsets.
    const int K = 5;
    std::vector<TextureComponent> comps(K);
    double amp_sum = 0.0;
    for (int k = 0; k < K; ++k) {
        const double cycles = std::pow(2.0, 1.0 + 0.6 * k) * rng.uniform(0.8, 1.25);
        const double theta = rng.uniform(0.0, kTwoPi);
        comps[k].wx = kTwoPi * cycles * std::cos(theta) / static_cast<double>(S);
        comps[k].wy = kTwoPi * cycles * std::sin(theta) / static_cast<double>(S);
        comps[k].phase = rng.uniform(0.0, kTwoPi);
        comps[k].amp = 1.0 / (1.0 + k);
        amp_sum += comps[k].amp;
    }
    double chan_phase[3] = {0.0, rng.uniform(0.0, 0.7), rng.uniform(0.0, 0.7)};
    const double fg_shift = kTwoPi * (1.0 - spec.camouflage);

    Shape shape;
    bool ellipse = spec.shapes == ShapeFamily::kEllipse ||
                   (spec.shapes == ShapeFamily::kMix && index % 2 == 0);
    if (ellipse) {
        shape.is_ellipse = true;
        shape.cx = rng.uniform(0.38, 0.62) * static_cast<double>(S);
        shape.cy = rng.uniform(0.38, 0.62) * static_cast<double>(S);
        shape.ax = rng.uniform(0.12, 0.28) * static_cast<double>(S);
        shape.ay = rng.uniform(0.12, 0.28) * static_cast<double>(S);
        shape.rot = rng.uniform(0.0, kTwoPi);
    } else {
        shape.is_ellipse = false;
        const double cx = rng.uniform(0.4, 0.6) * static_cast<double>(S);
        const double cy = rng.uniform(0.4, 0.6) * static_cast<double>(S);
        const int nv = 5 + static_cast<int>(rng.uniform_int(5));
        for (int v = 0; v < nv; ++v) {
            const double ang = kTwoPi * (static_cast<double>(v) + rng.uniform(-0.2, 0.2)) /
                               static_cast<double>(nv);
            const double rad = rng.uniform(0.14, 0.3) * static_cast<double>(S);
            shape.px.push_back(cx + rad * std::cos(ang));
            shape.py.push_back(cy + rad * std::sin(ang));
        }
    }

    SamplePair out;
    out.image = Tensor({3, S, S});
    out.mask = Tensor({S, S});
    out.analytic_area = shape.area();
    out.analytic_perimeter = shape.perimeter();
    for (int64_t y = 0; y < S; ++y) {
        for (int64_t x = 0; x < S; ++x) {
            const double fx = static_cast<double>(x) + 0.5;
            const double fy = static_cast<double>(y) + 0.5;
            const bool fg = shape.contains(fx, fy);
            out.mask[y * S + x] = fg ? 1.0 : 0.0;
            for (int c = 0; c < 3; ++c) {
                double v = 0.0;
                for (const auto& tc : comps) {
                    double ph = tc.phase + chan_phase[c];
                    if (fg) ph += fg_shift;
                    v += tc.amp * std::sin(tc.wx * fx + tc.wy * fy + ph);
                }
                out.image[c * S * S + y * S + x] = 0.5 + 0.5 * v / amp_sum;
            }
        }
    }
    return out;
}

DatasetManifest gen_synthetic_dataset(const DatasetSpec& spec, const std::string& out_dir) {
    if (spec.count <= 0) throw std::invalid_argument("gen_synthetic_dataset: count must be positive");
    if (spec.image_size <= 0) throw std::invalid_argument("gen_synthetic_dataset: image size must be positive");
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (!fs::is_directory(out_dir)) {
        throw std::runtime_error("gen_synthetic_dataset: cannot create directory " + out_dir);
    }

    DatasetManifest manifest;
    manifest.spec = spec;
    const std::string img_ext = spec.png ? ".png" : ".ppm";
    const std::string msk_ext = spec.png ? ".png" : ".pgm";
    for (int i = 0; i < spec.count; ++i) {
        SamplePair sp = gen_sample(spec, i);
        char stem[32];
        std::snprintf(stem, sizeof(stem), "%04d", i);
        write_image(out_dir + "/img_" + stem + img_ext, tensor_to_image(sp.image));
        write_image(out_dir + "/msk_" + stem + msk_ext, tensor_to_gray(sp.mask));
        GeneratedSample g;
        g.stem = stem;
        g.analytic_area = sp.analytic_area;
        g.analytic_perimeter = sp.analytic_perimeter;
        int64_t count = 0;
        for (int64_t p = 0; p < sp.mask.numel(); ++p) count += sp.mask[p] > 0.5 ? 1 : 0;
        g.mask_pixels = count;
        manifest.samples.push_back(g);
    }

    std::ofstream mf(out_dir + "/manifest.txt");
    if (!mf) throw std::runtime_error("gen_synthetic_dataset: cannot write manifest in " + out_dir);
    mf << "count=" << spec.count << " size=" << spec.image_size << " texture_seed=" << spec.texture_seed
       << " shapes=" << to_string(spec.shapes) << " camouflage=" << spec.camouflage << "\n";
    for (const auto& g : manifest.samples) {
        mf << g.stem << " area=" << g.analytic_area << " perimeter=" << g.analytic_perimeter
           << " mask_pixels=" << g.mask_pixels << "\n";
    }
    return manifest;
}

std::vector<LoadedSample> load_dataset(const std::string& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("load_dataset: no such directory " + dir);
    std::map<std::string, std::pair<std::string, std::string>> stems;  // stem -> (img, msk)
    for (const auto& e : fs::directory_iterator(dir)) {
        if (!e.is_regular_file()) continue;
        const std::string name = e.path().filename().string();
        const std::string full = e.path().string();
        if (name.rfind("img_", 0) == 0) {
            stems[name.substr(4, name.find_last_of('.') - 4)].first = full;
        } else if (name.rfind("msk_", 0) == 0) {
            stems[name.substr(4, name.find_last_of('.') - 4)].second = full;
        }
    }
    std::vector<LoadedSample> out;
    for (const auto& [stem, paths] : stems) {
        if (paths.first.empty() || paths.second.empty()) {
            throw std::runtime_error("load_dataset: unmatched pair for stem '" + stem + "' in " + dir);
        }
        LoadedSample s;
        s.stem = stem;
        s.image = image_to_tensor(read_image(paths.first));
        Tensor m = gray_to_tensor(read_image(paths.second));
        for (int64_t i = 0; i < m.numel(); ++i) m[i] = m[i] > 0.5 ? 1.0 : 0.0;
        s.mask = std::move(m);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace priormoe
