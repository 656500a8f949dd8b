#include <bit>
#include <cstring>

#include "bppn/error.hpp"
#include "bppn/io.hpp"
#include "bppn/model.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint codec assumes a little-endian host");

namespace bppn {

namespace {

constexpr char kMagic[4] = {'B', 'P', 'P', 'N'};
constexpr std::uint32_t kVersion = 1;
constexpr const char* kMetaName = "meta.config";

void put_u32(std::string& out, std::uint32_t v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

void put_f32(std::string& out, float v) {
    out.append(reinterpret_cast<const char*>(&v), 4);
}

struct Reader {
    const std::string& bytes;
    std::size_t pos = 0;
    std::string origin;

    void need(std::size_t n, const char* what) {
        if (bytes.size() - pos < n) {
            throw ParseError(origin + " @" + std::to_string(pos) + ": truncated " + what);
        }
    }
    std::uint32_t u32(const char* what) {
        need(4, what);
        std::uint32_t v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    }
    float f32(const char* what) {
        need(4, what);
        float v;
        std::memcpy(&v, bytes.data() + pos, 4);
        pos += 4;
        return v;
    }
    std::string str(std::size_t n, const char* what) {
        need(n, what);
        std::string s = bytes.substr(pos, n);
        pos += n;
        return s;
    }
};

void put_entry(std::string& out, const std::string& name, const Tensor& t) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out += name;
    put_u32(out, static_cast<std::uint32_t>(t.rank()));
    for (int e : t.shape) put_u32(out, static_cast<std::uint32_t>(e));
    for (float v : t.data) put_f32(out, v);
}

Tensor meta_tensor(const ModelConfig& cfg) {
    std::vector<float> v = {
        static_cast<float>(cfg.backbone.height),
        static_cast<float>(cfg.backbone.width),
        static_cast<float>(cfg.prototype_count),
        cfg.effective_temperature(),
        static_cast<float>(cfg.backbone.stage_channels.size()),
    };
    for (int c : cfg.backbone.stage_channels) v.push_back(static_cast<float>(c));
    const int extent = static_cast<int>(v.size());
    return Tensor::from({extent}, std::move(v));
}

ModelConfig config_from_meta(const Tensor& t, const std::string& origin) {
    if (t.rank() != 1 || t.numel() < 6) throw ParseError(origin + ": malformed meta.config");
    ModelConfig cfg;
    cfg.backbone.height = static_cast<int>(t.data[0]);
    cfg.backbone.width = static_cast<int>(t.data[1]);
    cfg.prototype_count = static_cast<int>(t.data[2]);
    cfg.temperature = t.data[3];
    const int stages = static_cast<int>(t.data[4]);
    if (t.numel() != static_cast<std::size_t>(5 + stages)) {
        throw ParseError(origin + ": meta.config stage count mismatch");
    }
    cfg.backbone.stage_channels.clear();
    for (int i = 0; i < stages; ++i) {
        cfg.backbone.stage_channels.push_back(static_cast<int>(t.data[static_cast<std::size_t>(5 + i)]));
    }
    return cfg;
}

}  // namespace

std::string encode_checkpoint(const ModelState& model) {
    std::string out(kMagic, 4);
    put_u32(out, kVersion);

    ModelState& m = const_cast<ModelState&>(model);
    std::vector<Param*> params = m.all_params();
    put_u32(out, static_cast<std::uint32_t>(params.size() + 1));
    put_entry(out, kMetaName, meta_tensor(model.cfg));
    for (const Param* p : params) put_entry(out, p->name, p->value);

    put_u32(out, static_cast<std::uint32_t>(model.prototypes.provenance.size()));
    for (const Provenance& pr : model.prototypes.provenance) {
        put_u32(out, static_cast<std::uint32_t>(pr.image_index));
        put_u32(out, static_cast<std::uint32_t>(pr.row));
        put_u32(out, static_cast<std::uint32_t>(pr.col));
        put_f32(out, pr.distance);
    }
    return out;
}

void save_checkpoint(const ModelState& model, const std::filesystem::path& path) {
    atomic_write_file(path, encode_checkpoint(model));
}

ModelState decode_checkpoint(const std::string& bytes, const std::string& origin) {
    Reader r{bytes, 0, origin};
    if (r.str(4, "magic") != std::string(kMagic, 4)) {
        throw ParseError(origin + ": bad magic, not a checkpoint");
    }
    const std::uint32_t version = r.u32("version");
    if (version != kVersion) {
        throw ParseError(origin + ": unsupported checkpoint version " + std::to_string(version));
    }
    const std::uint32_t entries = r.u32("entry count");
    if (entries < 1) throw ParseError(origin + ": no entries");

    auto read_entry = [&](std::string& name, Tensor& t) {
        const std::uint32_t nlen = r.u32("name length");
        name = r.str(nlen, "name");
        const std::uint32_t rank = r.u32("rank");
        std::vector<int> shape;
        for (std::uint32_t i = 0; i < rank; ++i) shape.push_back(static_cast<int>(r.u32("extent")));
        t = Tensor(shape);
        for (auto& v : t.data) v = r.f32("tensor data");
    };

    std::string name;
    Tensor meta;
    read_entry(name, meta);
    if (name != kMetaName) throw ParseError(origin + ": first entry must be " + std::string(kMetaName));
    ModelState model = ModelState::init(config_from_meta(meta, origin), /*seed=*/0);

    std::vector<Param*> params = model.all_params();
    if (entries != params.size() + 1) {
        throw ParseError(origin + ": expected " + std::to_string(params.size() + 1) +
                         " entries, found " + std::to_string(entries));
    }
    for (Param* p : params) {
        Tensor t;
        read_entry(name, t);
        if (name != p->name) {
            throw ParseError(origin + ": expected param '" + p->name + "', found '" + name + "'");
        }
        if (t.shape != p->value.shape) {
            throw ParseError(origin + ": param '" + name + "' shape " + shape_str(t.shape) +
                             " != expected " + shape_str(p->value.shape));
        }
        p->value.data = std::move(t.data);
        p->value.ensure_grad();
        p->value.zero_grad();
    }

    const std::uint32_t prov_count = r.u32("provenance count");
    if (prov_count != 0 && prov_count != static_cast<std::uint32_t>(model.prototypes.count)) {
        throw ParseError(origin + ": provenance count " + std::to_string(prov_count) +
                         " != prototype count " + std::to_string(model.prototypes.count));
    }
    for (std::uint32_t i = 0; i < prov_count; ++i) {
        Provenance pr;
        pr.image_index = static_cast<int>(r.u32("provenance image"));
        pr.row = static_cast<int>(r.u32("provenance row"));
        pr.col = static_cast<int>(r.u32("provenance col"));
        pr.distance = r.f32("provenance distance");
        model.prototypes.provenance.push_back(pr);
    }
    if (r.pos != bytes.size()) {
        throw ParseError(origin + " @" + std::to_string(r.pos) + ": trailing bytes");
    }
    return model;
}

ModelState load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file_bytes(path), path.string());
}

}  // namespace bppn
