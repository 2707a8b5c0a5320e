#include "proton/dataset.hpp"

#include "proton/checkpoint.hpp"

#include <png.h>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace proton {

namespace fs = std::filesystem;

std::size_t Dataset::impression_count() const {
    std::size_t n = 0;
    for (const auto& c : classes) n += c.impressions.size();
    return n;
}

void Dataset::sort() {
    std::sort(classes.begin(), classes.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    for (auto& c : classes) {
        std::sort(c.impressions.begin(), c.impressions.end(), [](const auto& a, const auto& b) { return a.id < b.id; });
    }
}

void Dataset::validate() const {
    std::set<std::string> ids;
    const Index expected = sample_size();
    for (const auto& c : classes) {
        if (!ids.insert(c.id).second) throw DatasetError("duplicate class id '" + c.id + "'");
        std::set<std::string> imp;
        for (const auto& i : c.impressions) {
            if (!imp.insert(i.id).second) throw DatasetError("duplicate impression '" + c.id + "/" + i.id + "'");
            if (i.values.size() != expected) {
                throw DatasetError("impression '" + c.id + "/" + i.id + "' has " + std::to_string(i.values.size()) +
                                   " values, expected " + std::to_string(expected));
            }
        }
    }
}

DatasetSplits split_by_class(const Dataset& data, double train_frac, double test_frac, std::uint64_t seed) {
    if (train_frac <= 0 || test_frac < 0 || train_frac + test_frac > 1.0) {
        throw std::invalid_argument("split fractions must satisfy 0 < train, 0 <= test, train + test <= 1");
    }
    const std::size_t n = data.classes.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    Rng rng(derive_seed(seed, {0x5B117}));
    std::shuffle(order.begin(), order.end(), rng);

    auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    auto n_test = static_cast<std::size_t>(std::llround(test_frac * static_cast<double>(n)));
    const bool want_val = train_frac + test_frac < 1.0 - 1e-12;
    if (n >= 3) {
        n_train = std::clamp<std::size_t>(n_train, 1, n - 2);
        if (test_frac > 0) n_test = std::clamp<std::size_t>(n_test, 1, n - n_train - (want_val ? 1 : 0));
    }
    n_train = std::min(n_train, n);
    n_test = std::min(n_test, n - n_train);

    DatasetSplits s;
    for (Dataset* d : {&s.train, &s.test, &s.val}) {
        d->kind = data.kind;
        d->image_hw = data.image_hw;
        d->embed_dim = data.embed_dim;
    }
    for (std::size_t i = 0; i < n; ++i) {
        Dataset& dst = i < n_train ? s.train : (i < n_train + n_test ? s.test : s.val);
        dst.classes.push_back(data.classes[order[i]]);
    }
    s.train.sort();
    s.test.sort();
    s.val.sort();
    return s;
}

Dataset merge_classes(const std::vector<const Dataset*>& parts) {
    if (parts.empty()) throw std::invalid_argument("merge_classes: nothing to merge");
    Dataset out;
    out.kind = parts.front()->kind;
    out.image_hw = parts.front()->image_hw;
    out.embed_dim = parts.front()->embed_dim;
    for (const Dataset* p : parts) {
        if (p->kind != out.kind || p->sample_size() != out.sample_size()) {
            throw DatasetError("merge_classes: incompatible datasets");
        }
        out.classes.insert(out.classes.end(), p->classes.begin(), p->classes.end());
    }
    out.sort();
    out.validate();
    return out;
}

// ---------------------------------------------------------------------------
// Synthetic data

void SyntheticDatasetSpec::validate() const {
    if (num_classes < 1 || impressions_per_class < 1) throw std::invalid_argument("synthetic: counts must be positive");
    if (image_hw < 4) throw std::invalid_argument("synthetic: image_hw must be >= 4");
    if (noise_sigma < 0) throw std::invalid_argument("synthetic: noise_sigma must be >= 0");
    if (max_shift < 0 || max_shift >= image_hw) throw std::invalid_argument("synthetic: max_shift out of range");
}

namespace {

std::string padded(Index v, int width) {
    std::string s = std::to_string(v);
    return std::string(static_cast<std::size_t>(std::max(0, width - static_cast<int>(s.size()))), '0') + s;
}

int digits(Index n) { return static_cast<int>(std::to_string(std::max<Index>(n - 1, 0)).size()); }

// Bilinear upsampling of a g×g grid to hw×hw, one channel.
void upsample(const Vector& grid, Index g, Index hw, double* dst) {
    for (Index y = 0; y < hw; ++y) {
        const double fy = (static_cast<double>(y) + 0.5) * static_cast<double>(g) / static_cast<double>(hw) - 0.5;
        const Index y0 = std::clamp<Index>(static_cast<Index>(std::floor(fy)), 0, g - 1);
        const Index y1 = std::min(y0 + 1, g - 1);
        const double ty = std::clamp(fy - static_cast<double>(y0), 0.0, 1.0);
        for (Index x = 0; x < hw; ++x) {
            const double fx = (static_cast<double>(x) + 0.5) * static_cast<double>(g) / static_cast<double>(hw) - 0.5;
            const Index x0 = std::clamp<Index>(static_cast<Index>(std::floor(fx)), 0, g - 1);
            const Index x1 = std::min(x0 + 1, g - 1);
            const double tx = std::clamp(fx - static_cast<double>(x0), 0.0, 1.0);
            const double top = grid[y0 * g + x0] * (1 - tx) + grid[y0 * g + x1] * tx;
            const double bot = grid[y1 * g + x0] * (1 - tx) + grid[y1 * g + x1] * tx;
            dst[y * hw + x] = top * (1 - ty) + bot * ty;
        }
    }
}

}  // namespace

Dataset generate_synthetic(const SyntheticDatasetSpec& spec) {
    spec.validate();
    Dataset data;
    data.kind = SampleKind::image;
    data.image_hw = spec.image_hw;
    const Index hw = spec.image_hw;
    const Index plane = hw * hw;
    const Index g = std::max<Index>(2, hw / 4);
    const int cw = digits(spec.num_classes), iw = digits(spec.impressions_per_class);
    std::uniform_real_distribution<double> unit(0.0, 1.0);
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_int_distribution<Index> shift(-spec.max_shift, spec.max_shift);
    for (Index c = 0; c < spec.num_classes; ++c) {
        Rng rng(derive_seed(spec.seed, {1, static_cast<std::uint64_t>(c)}));
        Vector tmpl(3 * plane);
        for (Index ch = 0; ch < 3; ++ch) {
            Vector grid(g * g);
            for (Index i = 0; i < grid.size(); ++i) grid[i] = unit(rng);
            upsample(grid, g, hw, tmpl.data() + ch * plane);
        }
        IdentityClass cls;
        cls.id = "c" + padded(c, cw);
        for (Index k = 0; k < spec.impressions_per_class; ++k) {
            const Index dy = spec.max_shift ? shift(rng) : 0;
            const Index dx = spec.max_shift ? shift(rng) : 0;
            Vector img(3 * plane);
            for (Index ch = 0; ch < 3; ++ch) {
                for (Index y = 0; y < hw; ++y) {
                    const Index sy = ((y - dy) % hw + hw) % hw;
                    for (Index x = 0; x < hw; ++x) {
                        const Index sx = ((x - dx) % hw + hw) % hw;
                        double v = tmpl[ch * plane + sy * hw + sx];
                        if (spec.noise_sigma > 0) v += spec.noise_sigma * gauss(rng);
                        img[ch * plane + y * hw + x] = std::clamp(v, 0.0, 1.0);
                    }
                }
            }
            cls.impressions.push_back({"i" + padded(k, iw), std::move(img)});
        }
        data.classes.push_back(std::move(cls));
    }
    return data;
}

Dataset generate_synthetic_embeddings(const SyntheticDatasetSpec& spec, Index dim) {
    if (spec.num_classes < 1 || spec.impressions_per_class < 1 || dim < 1 || spec.noise_sigma < 0) {
        throw std::invalid_argument("synthetic embeddings: invalid spec");
    }
    Dataset data;
    data.kind = SampleKind::embedding;
    data.embed_dim = dim;
    const int cw = digits(spec.num_classes), iw = digits(spec.impressions_per_class);
    std::normal_distribution<double> gauss(0.0, 1.0);
    for (Index c = 0; c < spec.num_classes; ++c) {
        Rng rng(derive_seed(spec.seed, {2, static_cast<std::uint64_t>(c)}));
        Vector centre(dim);
        for (Index i = 0; i < dim; ++i) centre[i] = gauss(rng);
        IdentityClass cls;
        cls.id = "c" + padded(c, cw);
        for (Index k = 0; k < spec.impressions_per_class; ++k) {
            Vector v = centre;
            if (spec.noise_sigma > 0) {
                for (Index i = 0; i < dim; ++i) v[i] += spec.noise_sigma * gauss(rng);
            }
            cls.impressions.push_back({"i" + padded(k, iw), std::move(v)});
        }
        data.classes.push_back(std::move(cls));
    }
    return data;
}

Vector augment_image(const Vector& image, Index hw, bool flip, double noise_sigma, Rng& rng) {
    Vector out = image;
    const Index plane = hw * hw;
    if (flip && std::bernoulli_distribution(0.5)(rng)) {
        for (Index ch = 0; ch < 3; ++ch) {
            for (Index y = 0; y < hw; ++y) {
                auto rowv = out.segment(ch * plane + y * hw, hw);
                rowv.reverseInPlace();
            }
        }
    }
    if (noise_sigma > 0) {
        std::normal_distribution<double> gauss(0.0, noise_sigma);
        for (Index i = 0; i < out.size(); ++i) out[i] += gauss(rng);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Embedding CSV

namespace {

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

std::string format_double(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

}  // namespace

Dataset load_embeddings(const fs::path& path) {
    std::ifstream f(path);
    if (!f) throw DatasetError("cannot open embedding table " + path.string());
    std::string line;
    if (!std::getline(f, line)) throw DatasetError(path.string() + ": empty file");
    if (!line.empty() && line.back() == '\r') line.pop_back();
    const auto header = split_csv(line);
    if (header.size() < 3 || header[0] != "class_id" || header[1] != "impression_id") {
        throw DatasetError(path.string() + ":1: header must be class_id,impression_id,e0,...");
    }
    const Index dim = static_cast<Index>(header.size()) - 2;
    for (Index i = 0; i < dim; ++i) {
        if (header[static_cast<std::size_t>(i + 2)] != "e" + std::to_string(i)) {
            throw DatasetError(path.string() + ":1: expected column e" + std::to_string(i));
        }
    }
    Dataset data;
    data.kind = SampleKind::embedding;
    data.embed_dim = dim;
    std::map<std::string, std::size_t> class_index;
    std::set<std::pair<std::string, std::string>> seen;
    std::size_t lineno = 1;
    while (std::getline(f, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto fields = split_csv(line);
        const std::string where = path.string() + ":" + std::to_string(lineno) + ": ";
        if (static_cast<Index>(fields.size()) != dim + 2) {
            throw DatasetError(where + "expected " + std::to_string(dim) + " values, found " +
                               std::to_string(static_cast<Index>(fields.size()) - 2));
        }
        if (fields[0].empty() || fields[1].empty()) throw DatasetError(where + "empty class or impression id");
        if (!seen.emplace(fields[0], fields[1]).second) {
            throw DatasetError(where + "duplicate key " + fields[0] + "/" + fields[1]);
        }
        Vector v(dim);
        for (Index i = 0; i < dim; ++i) {
            const std::string& s = fields[static_cast<std::size_t>(i + 2)];
            double x = 0;
            auto res = std::from_chars(s.data(), s.data() + s.size(), x);
            if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
                throw DatasetError(where + "malformed value '" + s + "' in column e" + std::to_string(i));
            }
            v[i] = x;
        }
        auto [it, inserted] = class_index.emplace(fields[0], data.classes.size());
        if (inserted) data.classes.push_back({fields[0], {}});
        data.classes[it->second].impressions.push_back({fields[1], std::move(v)});
    }
    data.sort();
    return data;
}

std::string format_embeddings(const Dataset& data) {
    if (data.kind != SampleKind::embedding) throw DatasetError("format_embeddings: dataset holds images");
    std::string out = "class_id,impression_id";
    for (Index i = 0; i < data.embed_dim; ++i) out += ",e" + std::to_string(i);
    out += '\n';
    for (const auto& c : data.classes) {
        for (const auto& imp : c.impressions) {
            out += c.id + "," + imp.id;
            for (Index i = 0; i < imp.values.size(); ++i) out += "," + format_double(imp.values[i]);
            out += '\n';
        }
    }
    return out;
}

void save_embeddings(const fs::path& path, const Dataset& data) { write_file_atomic(path, format_embeddings(data)); }

// ---------------------------------------------------------------------------
// PNG folders

namespace {

Vector resize_bilinear(const std::vector<unsigned char>& rgb, Index w, Index h, Index hw) {
    Vector out(3 * hw * hw);
    for (Index ch = 0; ch < 3; ++ch) {
        for (Index y = 0; y < hw; ++y) {
            const double fy = std::clamp((y + 0.5) * static_cast<double>(h) / static_cast<double>(hw) - 0.5, 0.0,
                                         static_cast<double>(h - 1));
            const Index y0 = static_cast<Index>(fy);
            const Index y1 = std::min(y0 + 1, h - 1);
            const double ty = fy - static_cast<double>(y0);
            for (Index x = 0; x < hw; ++x) {
                const double fx = std::clamp((x + 0.5) * static_cast<double>(w) / static_cast<double>(hw) - 0.5, 0.0,
                                             static_cast<double>(w - 1));
                const Index x0 = static_cast<Index>(fx);
                const Index x1 = std::min(x0 + 1, w - 1);
                const double tx = fx - static_cast<double>(x0);
                auto px = [&](Index yy, Index xx) { return rgb[static_cast<std::size_t>((yy * w + xx) * 3 + ch)] / 255.0; };
                const double top = px(y0, x0) * (1 - tx) + px(y0, x1) * tx;
                const double bot = px(y1, x0) * (1 - tx) + px(y1, x1) * tx;
                out[ch * hw * hw + y * hw + x] = top * (1 - ty) + bot * ty;
            }
        }
    }
    return out;
}

}  // namespace

Dataset load_image_folder(const fs::path& root, Index hw) {
    if (!fs::is_directory(root)) throw DatasetError("dataset directory not found: " + root.string());
    Dataset data;
    data.kind = SampleKind::image;
    data.image_hw = hw;
    for (const auto& class_dir : fs::directory_iterator(root)) {
        if (!class_dir.is_directory()) continue;
        IdentityClass cls;
        cls.id = class_dir.path().filename().string();
        for (const auto& file : fs::directory_iterator(class_dir.path())) {
            if (file.path().extension() != ".png") continue;
            png_image image{};
            image.version = PNG_IMAGE_VERSION;
            if (!png_image_begin_read_from_file(&image, file.path().c_str())) {
                throw DatasetError("cannot decode " + file.path().string() + ": " + image.message);
            }
            image.format = PNG_FORMAT_RGB;
            std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
            if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
                throw DatasetError("cannot decode " + file.path().string() + ": " + image.message);
            }
            cls.impressions.push_back(
                {file.path().stem().string(), resize_bilinear(buf, image.width, image.height, hw)});
        }
        if (!cls.impressions.empty()) data.classes.push_back(std::move(cls));
    }
    if (data.classes.empty()) throw DatasetError("no class folders with PNG images under " + root.string());
    data.sort();
    data.validate();
    return data;
}

void save_image_folder(const fs::path& root, const Dataset& data) {
    if (data.kind != SampleKind::image) throw DatasetError("save_image_folder: dataset holds embeddings");
    const Index hw = data.image_hw;
    const Index plane = hw * hw;
    for (const auto& c : data.classes) {
        fs::create_directories(root / c.id);
        for (const auto& imp : c.impressions) {
            std::vector<unsigned char> rgb(static_cast<std::size_t>(3 * plane));
            for (Index p = 0; p < plane; ++p) {
                for (Index ch = 0; ch < 3; ++ch) {
                    const double v = std::clamp(imp.values[ch * plane + p], 0.0, 1.0);
                    rgb[static_cast<std::size_t>(p * 3 + ch)] = static_cast<unsigned char>(std::lround(v * 255.0));
                }
            }
            png_image image{};
            image.version = PNG_IMAGE_VERSION;
            image.width = static_cast<png_uint_32>(hw);
            image.height = static_cast<png_uint_32>(hw);
            image.format = PNG_FORMAT_RGB;
            const fs::path out = root / c.id / (imp.id + ".png");
            if (!png_image_write_to_file(&image, out.c_str(), 0, rgb.data(), 0, nullptr)) {
                throw DatasetError("cannot write " + out.string() + ": " + image.message);
            }
        }
    }
}

}  // namespace proton
