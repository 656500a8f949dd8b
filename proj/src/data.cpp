#include "bppn/data.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "bppn/error.hpp"
#include "bppn/imageops.hpp"
#include "bppn/io.hpp"
#include "bppn/rng.hpp"

namespace bppn {

namespace fs = std::filesystem;

void GenConfig::validate() const {
    if (count_pos < 1 || count_neg < 1) throw ConfigError("gen: counts must be >= 1");
    if (height < 8 || width < 8) throw ConfigError("gen: image size too small");
    if (!(radius_min > 0.0f) || radius_max < radius_min)
        throw ConfigError("gen: invalid radius range");
    if (radius_max >= 0.5f * static_cast<float>(std::min(height, width)))
        throw ConfigError("gen: radius must be < min(H,W)/2");
    if (boost_min < 0.0f || boost_max < boost_min) throw ConfigError("gen: invalid boost range");
    if (texture_scale < 0.0f) throw ConfigError("gen: texture_scale must be >= 0");
}

int Dataset::count_with_label(int label) const {
    int n = 0;
    for (const auto& s : samples) n += (s.label == label) ? 1 : 0;
    return n;
}

namespace {

float quantize8(float v) {
    const float c = std::clamp(v, 0.0f, 1.0f);
    return static_cast<float>(std::lround(c * 255.0f)) / 255.0f;
}

Tensor make_background(const GenConfig& cfg, Rng& rng) {
    const int h = cfg.height, w = cfg.width;
    Tensor img({h, w}, 0.12f);
    std::uniform_int_distribution<int> nbumps_dist(4, 8);
    const int nbumps = nbumps_dist(rng);
    const float m = static_cast<float>(std::min(h, w));
    for (int b = 0; b < nbumps; ++b) {
        const float cx = uniform_float(rng, 0.0f, static_cast<float>(w));
        const float cy = uniform_float(rng, 0.0f, static_cast<float>(h));
        const float sigma = uniform_float(rng, 0.15f * m, 0.60f * m);
        const float amp = uniform_float(rng, 0.05f, std::max(0.05f, cfg.texture_scale));
        const float inv2s2 = 1.0f / (2.0f * sigma * sigma);
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
                const float dx = static_cast<float>(x) - cx;
                const float dy = static_cast<float>(y) - cy;
                img.at2(y, x) += amp * std::exp(-(dx * dx + dy * dy) * inv2s2);
            }
        }
    }
    for (float& v : img.data) v += uniform_float(rng, 0.0f, 0.05f);
    return img;
}

void plant_lesion(Tensor& img, Tensor& mask, const GenConfig& cfg, Rng& rng) {
    const int h = cfg.height, w = cfg.width;
    const float ra = uniform_float(rng, cfg.radius_min, cfg.radius_max);
    const float rb = uniform_float(rng, cfg.radius_min, cfg.radius_max);
    const float margin = std::max(ra, rb) + 2.0f;
    const float cx = uniform_float(rng, margin, static_cast<float>(w) - margin);
    const float cy = uniform_float(rng, margin, static_cast<float>(h) - margin);
    const float phi = uniform_float(rng, 0.0f, 3.14159265f);
    const float boost = uniform_float(rng, cfg.boost_min, cfg.boost_max);
    // a bright interior core whose size, strength and placement vary per
    // lesion, so lesion interiors differ across images
    const float core_frac = uniform_float(rng, 0.40f, 0.70f);
    const float core_lift = uniform_float(rng, 0.55f, 0.90f) * boost;
    const float core_u = uniform_float(rng, -0.25f, 0.25f);
    const float core_v = uniform_float(rng, -0.25f, 0.25f);
    const float c = std::cos(phi), s = std::sin(phi);
    mask = Tensor({h, w});
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            const float dx = static_cast<float>(x) - cx;
            const float dy = static_cast<float>(y) - cy;
            const float u = (c * dx + s * dy) / ra;
            const float v = (-s * dx + c * dy) / rb;
            const float rho2 = u * u + v * v;
            if (rho2 <= 1.0f) {
                float lift = boost * std::sqrt(1.0f - rho2);
                const float cu = (u - core_u) / core_frac;
                const float cv = (v - core_v) / core_frac;
                const float core = cu * cu + cv * cv;
                if (core < 1.0f) lift += core_lift * std::sqrt(1.0f - core);
                img.at2(y, x) += lift;
                mask.at2(y, x) = 1.0f;
            }
        }
    }
}

std::string pad4(int i) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%04d", i);
    return buf;
}

}  // namespace

Dataset generate(const GenConfig& config) {
    config.validate();
    Dataset ds;
    ds.gen = config;
    const int total = config.count_neg + config.count_pos;
    ds.samples.resize(static_cast<std::size_t>(total));
    for (int i = 0; i < total; ++i) {
        Rng rng = make_rng(mix_seed(config.seed, static_cast<std::uint64_t>(i)));
        Sample& s = ds.samples[static_cast<std::size_t>(i)];
        s.name = pad4(i);
        s.label = (i >= config.count_neg) ? 1 : 0;
        s.image = make_background(config, rng);
        if (s.label == 1) plant_lesion(s.image, s.mask, config, rng);
        for (float& v : s.image.data) v = quantize8(v);
    }
    return ds;
}

// --- persistence -------------------------------------------------------------

std::string encode_pgm(const Tensor& image) {
    if (image.rank() != 2) throw ShapeError("pgm: image must be [H,W]");
    const int h = image.dim(0), w = image.dim(1);
    std::string out = "P5\n" + std::to_string(w) + " " + std::to_string(h) + "\n255\n";
    out.reserve(out.size() + image.numel());
    for (float v : image.data) {
        out.push_back(static_cast<char>(
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f))));
    }
    return out;
}

void write_pgm(const fs::path& path, const Tensor& image) {
    atomic_write_file(path, encode_pgm(image));
}

Tensor read_pgm(const fs::path& path) {
    const std::string bytes = read_file_bytes(path);
    std::size_t pos = 0;
    auto fail = [&](const std::string& what) {
        throw ParseError(path.string() + " @" + std::to_string(pos) + ": " + what);
    };
    auto skip_ws = [&]() {
        while (pos < bytes.size()) {
            if (bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
            } else if (std::isspace(static_cast<unsigned char>(bytes[pos]))) {
                ++pos;
            } else {
                break;
            }
        }
    };
    auto read_int = [&]() {
        skip_ws();
        std::size_t start = pos;
        while (pos < bytes.size() && std::isdigit(static_cast<unsigned char>(bytes[pos]))) ++pos;
        if (pos == start) fail("expected integer");
        return std::stoi(bytes.substr(start, pos - start));
    };
    if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') fail("not a P5 PGM");
    pos = 2;
    const int w = read_int();
    const int h = read_int();
    const int maxval = read_int();
    if (maxval != 255) fail("maxval must be 255");
    if (pos >= bytes.size() || !std::isspace(static_cast<unsigned char>(bytes[pos])))
        fail("expected whitespace before raster");
    ++pos;
    const std::size_t need = static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    if (bytes.size() - pos < need) fail("truncated raster");
    Tensor img({h, w});
    for (std::size_t i = 0; i < need; ++i) {
        img.data[i] = static_cast<float>(static_cast<unsigned char>(bytes[pos + i])) / 255.0f;
    }
    return img;
}

void save_dataset(const Dataset& ds, const fs::path& dir) {
    fs::create_directories(dir / "images");
    fs::create_directories(dir / "masks");
    std::string labels = "filename,label,mask_filename\n";
    for (const auto& s : ds.samples) {
        const std::string fname = s.name + ".pgm";
        write_pgm(dir / "images" / fname, s.image);
        std::string mask_name;
        if (s.has_mask()) {
            mask_name = fname;
            write_pgm(dir / "masks" / fname, s.mask);
        }
        labels += fname + "," + std::to_string(s.label) + "," + mask_name + "\n";
    }
    atomic_write_file(dir / "labels.csv", labels);

    const GenConfig& g = ds.gen;
    std::vector<std::pair<std::string, std::string>> kv = {
        {"seed", std::to_string(g.seed)},
        {"count_pos", std::to_string(g.count_pos)},
        {"count_neg", std::to_string(g.count_neg)},
        {"height", std::to_string(g.height)},
        {"width", std::to_string(g.width)},
        {"radius_min", format_float(g.radius_min)},
        {"radius_max", format_float(g.radius_max)},
        {"boost_min", format_float(g.boost_min)},
        {"boost_max", format_float(g.boost_max)},
        {"texture_scale", format_float(g.texture_scale)},
    };
    atomic_write_file(dir / "genconfig.txt", format_kv(kv));
}

Dataset load_dataset(const fs::path& dir) {
    Dataset ds;
    for (const auto& [k, v] : read_kv_file(dir / "genconfig.txt")) {
        GenConfig& g = ds.gen;
        if (k == "seed") g.seed = std::stoull(v);
        else if (k == "count_pos") g.count_pos = std::stoi(v);
        else if (k == "count_neg") g.count_neg = std::stoi(v);
        else if (k == "height") g.height = std::stoi(v);
        else if (k == "width") g.width = std::stoi(v);
        else if (k == "radius_min") g.radius_min = std::stof(v);
        else if (k == "radius_max") g.radius_max = std::stof(v);
        else if (k == "boost_min") g.boost_min = std::stof(v);
        else if (k == "boost_max") g.boost_max = std::stof(v);
        else if (k == "texture_scale") g.texture_scale = std::stof(v);
        else throw ParseError(dir.string() + "/genconfig.txt: unknown key '" + k + "'");
    }

    const fs::path labels_path = dir / "labels.csv";
    if (!fs::exists(labels_path)) throw ParseError("missing labels file: " + labels_path.string());
    std::istringstream in(read_file_bytes(labels_path));
    std::string line;
    std::size_t lineno = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        if (!header_seen) {
            header_seen = true;
            if (line != "filename,label,mask_filename") {
                throw ParseError(labels_path.string() + ":1: bad header '" + line + "'");
            }
            continue;
        }
        std::size_t c1 = line.find(',');
        std::size_t c2 = (c1 == std::string::npos) ? std::string::npos : line.find(',', c1 + 1);
        if (c2 == std::string::npos) {
            throw ParseError(labels_path.string() + ":" + std::to_string(lineno) +
                             ": expected 3 columns");
        }
        Sample s;
        const std::string fname = line.substr(0, c1);
        const std::string label_str = line.substr(c1 + 1, c2 - c1 - 1);
        const std::string mask_name = line.substr(c2 + 1);
        if (label_str != "0" && label_str != "1") {
            throw ParseError(labels_path.string() + ":" + std::to_string(lineno) +
                             ": label must be 0 or 1, got '" + label_str + "'");
        }
        s.label = (label_str == "1") ? 1 : 0;
        const fs::path img_path = dir / "images" / fname;
        if (!fs::exists(img_path)) {
            throw ValidationError("labels.csv references absent image: " + fname);
        }
        s.image = read_pgm(img_path);
        s.name = fs::path(fname).stem().string();
        if (!mask_name.empty()) {
            const fs::path mask_path = dir / "masks" / mask_name;
            if (!fs::exists(mask_path)) {
                throw ValidationError("labels.csv references absent mask: " + mask_name);
            }
            s.mask = read_pgm(mask_path);
            for (float& v : s.mask.data) v = (v > 0.5f) ? 1.0f : 0.0f;
            if (!s.mask.same_shape(s.image)) {
                throw ValidationError("mask shape differs from image: " + mask_name);
            }
        }
        if (s.has_mask() != (s.label == 1)) {
            throw ValidationError("mask presence must match cancer label: " + fname);
        }
        ds.samples.push_back(std::move(s));
    }
    if (!header_seen) throw ParseError(labels_path.string() + ": empty file");
    return ds;
}

void preprocess_otsu(Dataset& ds, int out_h, int out_w) {
    for (auto& s : ds.samples) {
        CropResult r = otsu_crop(s.image, out_h, out_w);
        if (s.has_mask()) {
            const int ch = r.box.y1 - r.box.y0, cw = r.box.x1 - r.box.x0;
            Tensor crop({ch, cw});
            for (int y = 0; y < ch; ++y) {
                for (int x = 0; x < cw; ++x) {
                    crop.at2(y, x) = s.mask.at2(r.box.y0 + y, r.box.x0 + x);
                }
            }
            Tensor resized = resize_bilinear(crop, out_h, out_w);
            for (float& v : resized.data) v = (v > 0.5f) ? 1.0f : 0.0f;
            s.mask = std::move(resized);
        }
        s.image = std::move(r.image);
    }
}

}  // namespace bppn
