#include "ortho/dataset.hpp"
#include "ortho/io.hpp"
#include "ortho/rng.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace ortho {

namespace {
constexpr std::uint32_t kDatasetMagic = 0x5344444fu; // "ODDS"
constexpr std::uint32_t kDatasetVersion = 1;

// background texture parameters, indexed by class
struct Grating {
    double fx, fy, base;
};

Grating grating_for(int cls, int num_classes, int width) {
    const double angle = 3.14159265358979323846 * double(cls) / double(num_classes);
    const double cycles = 2.0 + 0.8 * double(cls);
    // brightness ladder: the dominant class cue, deliberately overlapping
    // between neighbours once the per-sample jitter is added
    const double base =
        num_classes > 1 ? 0.30 + 0.35 * double(cls) / double(num_classes - 1)
                        : 0.45;
    return {cycles * std::cos(angle) / double(width),
            cycles * std::sin(angle) / double(width), base};
}

} // namespace

double BiasConfig::rho_of(int cls) const {
    for (int k : biased_classes)
        if (k == cls) return rho_biased;
    return 0.5;
}

int BiasConfig::marker_size() const {
    return std::min(9, std::min(height, width) / 3);
}

std::vector<double> Dataset::gather_pixels(const std::vector<int> &idx) const {
    const std::size_t per = samples.empty() ? 0 : samples[0].pixels.size();
    std::vector<double> out;
    out.reserve(idx.size() * per);
    for (int i : idx)
        out.insert(out.end(), samples[std::size_t(i)].pixels.begin(),
                   samples[std::size_t(i)].pixels.end());
    return out;
}

std::vector<int> Dataset::labels_of(const std::vector<int> &idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(samples[std::size_t(i)].label);
    return out;
}

std::vector<int> Dataset::attrs_of(const std::vector<int> &idx) const {
    std::vector<int> out;
    out.reserve(idx.size());
    for (int i : idx) out.push_back(samples[std::size_t(i)].attr);
    return out;
}

Sample render_sample(int cls, int attr, const BiasConfig &cfg, std::uint64_t seed) {
    const int H = cfg.height, W = cfg.width, S = cfg.marker_size();
    if (S < 3)
        throw std::invalid_argument("image too small for a visible marker");
    Sample s;
    s.label = std::uint8_t(cls);
    s.attr = std::uint8_t(attr);
    s.pixels.resize(std::size_t(3) * H * W);

    // background: class-indexed grating plus pixel noise; independent of attr
    Rng bg(sub_seed(seed, "bg"));
    const Grating gr = grating_for(cls, cfg.num_classes, W);
    // phase is fixed per class so the texture stays linearly decodable
    const double phase = 0.9 * cls;
    // whole-image luminance jitter makes neighbouring brightness rungs
    // overlap, so the class cue alone cannot saturate accuracy
    const double jitter = bg.uniform(-0.045, 0.045);
    for (int c = 0; c < 3; ++c) {
        const double chan_shift = 0.6 * c;
        for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x) {
                const double wave = std::sin(
                    6.283185307179586 * (gr.fx * x + gr.fy * y) + phase + chan_shift);
                double v = gr.base + jitter + 0.15 * wave + bg.uniform(-0.12, 0.12);
                s.pixels[(std::size_t(c) * H + y) * W + x] = std::clamp(v, 0.0, 1.0);
            }
    }

    // marker placement comes from its own stream, also independent of attr
    Rng pos(sub_seed(seed, "pos"));
    s.box_size = std::uint16_t(S);
    s.box_row = std::uint16_t(pos.next_below(std::uint64_t(H - S + 1)));
    s.box_col = std::uint16_t(pos.next_below(std::uint64_t(W - S + 1)));

    // glyph: attr 0 -> filled square, attr 1 -> disc; distinct color channels
    const double color0[3] = {0.95, 0.10, 0.10};
    const double color1[3] = {0.10, 0.10, 0.95};
    const double *color = attr ? color1 : color0;
    const double cy = (S - 1) / 2.0, cx = (S - 1) / 2.0, r2 = (S / 2.0) * (S / 2.0);
    for (int dy = 0; dy < S; ++dy)
        for (int dx = 0; dx < S; ++dx) {
            if (attr && ((dy - cy) * (dy - cy) + (dx - cx) * (dx - cx)) > r2)
                continue;
            const int y = s.box_row + dy, x = s.box_col + dx;
            for (int c = 0; c < 3; ++c)
                s.pixels[(std::size_t(c) * H + y) * W + x] = color[c];
        }
    return s;
}

Dataset generate(const BiasConfig &cfg) {
    if (cfg.num_classes < 1 || cfg.per_class < 1)
        throw std::invalid_argument("num_classes and per_class must be positive");
    for (int k : cfg.biased_classes)
        if (k < 0 || k >= cfg.num_classes)
            throw std::invalid_argument("biased class index " + std::to_string(k) +
                                        " out of range [0," +
                                        std::to_string(cfg.num_classes) + ")");
    if (cfg.rho_biased < 0.0 || cfg.rho_biased > 1.0)
        throw std::invalid_argument("rho must be in [0,1]");

    // exact ratios are the experiment's control variable: reject any class
    // whose positive count would need rounding
    for (int s = 0; s < cfg.num_classes; ++s) {
        const double want = double(cfg.per_class) * cfg.rho_of(s);
        if (std::abs(want - std::round(want)) > 1e-9) {
            std::ostringstream os;
            os << "per_class * rho is not integral for class " << s << " (rho="
               << cfg.rho_of(s) << ", per_class=" << cfg.per_class
               << "); pick per_class so that per_class*rho and per_class/2 are whole";
            throw std::invalid_argument(os.str());
        }
    }

    Dataset ds;
    ds.cfg = cfg;
    ds.samples.reserve(std::size_t(cfg.num_classes) * cfg.per_class);
    for (int s = 0; s < cfg.num_classes; ++s) {
        const int n_pos = int(std::llround(double(cfg.per_class) * cfg.rho_of(s)));
        for (int i = 0; i < cfg.per_class; ++i) {
            const int attr = i < n_pos ? 1 : 0;
            const std::uint64_t seed =
                sub_seed(cfg.seed, "sample", std::uint64_t(s) * std::uint64_t(cfg.per_class) + std::uint64_t(i));
            ds.samples.push_back(render_sample(s, attr, cfg, seed));
        }
    }
    return ds;
}

Split stratified_split(const Dataset &ds, double train_frac, std::uint64_t seed) {
    if (!(train_frac > 0.0 && train_frac < 1.0))
        throw std::invalid_argument("train_frac must be in (0,1)");
    Split sp;
    for (int cls = 0; cls < ds.cfg.num_classes; ++cls)
        for (int attr = 0; attr < 2; ++attr) {
            std::vector<int> cell;
            for (int i = 0; i < ds.size(); ++i)
                if (ds.samples[std::size_t(i)].label == cls &&
                    ds.samples[std::size_t(i)].attr == attr)
                    cell.push_back(i);
            if (cell.empty()) continue; // empty cells happen at rho 0 or 1
            if (cell.size() < 2)
                throw std::invalid_argument(
                    "cannot split: (class " + std::to_string(cls) + ", attr " +
                    std::to_string(attr) + ") has fewer than 2 samples");
            Rng rng(sub_seed(seed, "split", std::uint64_t(cls) * 2 + std::uint64_t(attr)));
            for (std::size_t i = cell.size(); i > 1; --i)
                std::swap(cell[i - 1], cell[std::size_t(rng.next_below(i))]);
            std::size_t n_train = std::size_t(std::llround(train_frac * double(cell.size())));
            n_train = std::clamp<std::size_t>(n_train, 1, cell.size() - 1);
            sp.train.insert(sp.train.end(), cell.begin(), cell.begin() + std::ptrdiff_t(n_train));
            sp.test.insert(sp.test.end(), cell.begin() + std::ptrdiff_t(n_train), cell.end());
        }
    std::sort(sp.train.begin(), sp.train.end());
    std::sort(sp.test.begin(), sp.test.end());
    return sp;
}

void save_dataset(const Dataset &ds, const std::string &path) {
    io::Writer w(path);
    w.u32(kDatasetMagic);
    w.u32(kDatasetVersion);
    w.i32(ds.cfg.num_classes);
    w.i32(ds.cfg.per_class);
    w.i32(ds.cfg.height);
    w.i32(ds.cfg.width);
    w.u32(std::uint32_t(ds.cfg.biased_classes.size()));
    for (int k : ds.cfg.biased_classes) w.i32(k);
    w.f64(ds.cfg.rho_biased);
    w.u64(ds.cfg.seed);
    for (const Sample &s : ds.samples) {
        w.u8(s.label);
        w.u8(s.attr);
        w.u16(s.box_row);
        w.u16(s.box_col);
        w.u16(s.box_size);
        w.f64s(s.pixels);
    }
}

Dataset load_dataset(const std::string &path) {
    io::Reader r(path);
    r.expect_magic(kDatasetMagic, "dataset");
    if (r.u32() != kDatasetVersion)
        throw io::FileError(path + ": unsupported dataset version");
    Dataset ds;
    ds.cfg.num_classes = r.i32();
    ds.cfg.per_class = r.i32();
    ds.cfg.height = r.i32();
    ds.cfg.width = r.i32();
    if (ds.cfg.num_classes < 1 || ds.cfg.per_class < 1 || ds.cfg.height < 1 ||
        ds.cfg.width < 1)
        throw io::FileError(path + ": malformed header at offset 8");
    const std::uint32_t kc = r.u32();
    if (kc > std::uint32_t(ds.cfg.num_classes))
        throw io::FileError(path + ": malformed biased-set size at offset " +
                            std::to_string(r.offset() - 4));
    for (std::uint32_t i = 0; i < kc; ++i) ds.cfg.biased_classes.push_back(r.i32());
    ds.cfg.rho_biased = r.f64();
    ds.cfg.seed = r.u64();
    const std::size_t count = std::size_t(ds.cfg.num_classes) * std::size_t(ds.cfg.per_class);
    const std::size_t per = std::size_t(3) * ds.cfg.height * ds.cfg.width;
    ds.samples.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        Sample s;
        s.label = r.u8();
        s.attr = r.u8();
        s.box_row = r.u16();
        s.box_col = r.u16();
        s.box_size = r.u16();
        s.pixels = r.f64s(per);
        ds.samples.push_back(std::move(s));
    }
    if (!r.at_eof())
        throw io::FileError(path + ": trailing bytes after sample records at offset " +
                            std::to_string(r.offset()));
    return ds;
}

std::string manifest_text(const Dataset &ds) {
    std::ostringstream os;
    os << "num_classes: " << ds.cfg.num_classes << "\n"
       << "per_class: " << ds.cfg.per_class << "\n"
       << "height: " << ds.cfg.height << "\n"
       << "width: " << ds.cfg.width << "\n"
       << "marker_size: " << ds.cfg.marker_size() << "\n"
       << "seed: " << ds.cfg.seed << "\n"
       << "rho_biased: " << ds.cfg.rho_biased << "\n"
       << "biased_classes:";
    for (int k : ds.cfg.biased_classes) os << ' ' << k;
    os << "\n";
    for (int s = 0; s < ds.cfg.num_classes; ++s) {
        int pos = 0, total = 0;
        for (const Sample &sm : ds.samples)
            if (sm.label == s) {
                ++total;
                pos += sm.attr;
            }
        os << "class " << s << ": rho=" << (total ? double(pos) / total : 0.0)
           << " (" << pos << "/" << total << " attr-positive)\n";
    }
    return os.str();
}

std::uint64_t dataset_hash(const Dataset &ds) {
    std::uint64_t h = 1469598103934665603ULL;
    for (const Sample &s : ds.samples) {
        const std::uint8_t meta[2] = {s.label, s.attr};
        h = io::fnv1a(meta, 2, h);
        const std::uint16_t box[3] = {s.box_row, s.box_col, s.box_size};
        h = io::fnv1a(box, 6, h);
        h = io::fnv1a(s.pixels, h);
    }
    return h;
}

} // namespace ortho
