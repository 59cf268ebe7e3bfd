#include "fsm/io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <json.hpp>

#include "bytes.hpp"
#include "fsm/error.hpp"

static_assert(std::endian::native == std::endian::little,
              "archive format assumes a little-endian host");

namespace fsm {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Region {
    uint64_t offset = 0;
    uint64_t bytes = 0;
    std::string name;
};

json tensor_entry(const Tensor& t, uint64_t offset) {
    json e;
    e["shape"] = t.shape;
    e["offset"] = offset;
    return e;
}

}  // namespace

void save_model(const ModelGraph& g, const std::string& stem) {
    validate(g);

    std::vector<float> blob;
    uint64_t offset = 0;
    auto put = [&blob, &offset](json& tensors, const char* name, const Tensor& t) {
        tensors[name] = tensor_entry(t, offset);
        blob.insert(blob.end(), t.data.begin(), t.data.end());
        offset += static_cast<uint64_t>(t.data.size()) * 4;
    };

    json layers = json::array();
    for (const Layer& l : g.layers) {
        json jl;
        jl["kind"] = layer_kind_name(l.kind);
        switch (l.kind) {
            case LayerKind::Conv2d: {
                jl["stride"] = l.stride;
                jl["padding"] = l.padding;
                json t;
                put(t, "weight", l.weight);
                if (l.bias) put(t, "bias", *l.bias);
                jl["tensors"] = t;
                break;
            }
            case LayerKind::BatchNorm: {
                jl["epsilon"] = l.epsilon;
                json t;
                put(t, "gamma", l.gamma);
                put(t, "beta", l.beta);
                put(t, "running_mean", l.running_mean);
                put(t, "running_var", l.running_var);
                jl["tensors"] = t;
                break;
            }
            case LayerKind::Linear: {
                json t;
                put(t, "weight", l.weight);
                if (l.bias) put(t, "bias", *l.bias);
                jl["tensors"] = t;
                break;
            }
            case LayerKind::MaxPool:
            case LayerKind::AvgPool:
                jl["k"] = l.pool_k;
                jl["s"] = l.pool_s;
                break;
            default:
                break;
        }
        layers.push_back(std::move(jl));
    }

    json links = json::array();
    for (const ResidualLink& rl : g.residual_links)
        links.push_back(json::array({rl.from_unit, rl.to_unit}));

    json m;
    m["format"] = "fsm-model-v1";
    m["input_shape"] = json::array({g.input_shape.c, g.input_shape.h, g.input_shape.w});
    m["layers"] = std::move(layers);
    m["residual_links"] = std::move(links);
    m["blob_bytes"] = offset;
    m["blob_crc32"] =
        detail::crc32_of(reinterpret_cast<const unsigned char*>(blob.data()), blob.size() * 4);

    std::string text = m.dump(2);
    text.push_back('\n');
    detail::write_file_bytes(stem + ".manifest", text.data(), text.size());
    detail::write_file_bytes(stem + ".blob", blob.data(), blob.size() * 4);
}

ModelGraph load_model(const std::string& stem) {
    const fs::path mpath = stem + ".manifest";
    const fs::path bpath = stem + ".blob";

    auto mbytes = detail::read_file_bytes(mpath);
    json m;
    try {
        m = json::parse(mbytes.begin(), mbytes.end());
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
    }

    ModelGraph g;
    std::vector<Region> regions;

    try {
        if (m.at("format").get<std::string>() != "fsm-model-v1")
            throw IoError("manifest " + mpath.string() + ": unknown format '" +
                          m.at("format").get<std::string>() + "'");
        auto is = m.at("input_shape");
        if (!is.is_array() || is.size() != 3)
            throw IoError("manifest " + mpath.string() + ": input_shape must have 3 entries");
        g.input_shape = Shape4{1, is[0].get<int64_t>(), is[1].get<int64_t>(), is[2].get<int64_t>()};

        auto grab = [&](const json& jl, const char* name, Tensor& dst, int layer_idx,
                        const std::string& kind) {
            const std::string entry =
                "layer " + std::to_string(layer_idx) + " (" + kind + ") " + name;
            if (!jl.contains("tensors") || !jl["tensors"].contains(name))
                throw IoError("manifest " + mpath.string() + ": missing tensor for " + entry);
            const json& te = jl["tensors"][name];
            std::vector<int64_t> shape = te.at("shape").get<std::vector<int64_t>>();
            uint64_t off = te.at("offset").get<uint64_t>();
            int64_t count = 1;
            for (int64_t d : shape) {
                if (d < 1) throw IoError("manifest " + mpath.string() + ": bad shape for " + entry);
                count *= d;
            }
            dst.shape = std::move(shape);
            dst.data.assign(static_cast<size_t>(count), 0.0f);
            regions.push_back({off, static_cast<uint64_t>(count) * 4, entry});
        };

        int idx = -1;
        for (const json& jl : m.at("layers")) {
            ++idx;
            const std::string kind = jl.at("kind").get<std::string>();
            Layer l;
            if (kind == "conv2d") {
                l.kind = LayerKind::Conv2d;
                l.stride = jl.at("stride").get<int>();
                l.padding = jl.at("padding").get<int>();
                grab(jl, "weight", l.weight, idx, kind);
                if (jl.contains("tensors") && jl["tensors"].contains("bias")) {
                    l.bias.emplace();
                    grab(jl, "bias", *l.bias, idx, kind);
                }
            } else if (kind == "batchnorm") {
                l.kind = LayerKind::BatchNorm;
                l.epsilon = jl.at("epsilon").get<float>();
                grab(jl, "gamma", l.gamma, idx, kind);
                grab(jl, "beta", l.beta, idx, kind);
                grab(jl, "running_mean", l.running_mean, idx, kind);
                grab(jl, "running_var", l.running_var, idx, kind);
            } else if (kind == "relu") {
                l.kind = LayerKind::ReLU;
            } else if (kind == "maxpool" || kind == "avgpool") {
                l.kind = kind == "maxpool" ? LayerKind::MaxPool : LayerKind::AvgPool;
                l.pool_k = jl.at("k").get<int>();
                l.pool_s = jl.at("s").get<int>();
            } else if (kind == "flatten") {
                l.kind = LayerKind::Flatten;
            } else if (kind == "linear") {
                l.kind = LayerKind::Linear;
                grab(jl, "weight", l.weight, idx, kind);
                if (jl.contains("tensors") && jl["tensors"].contains("bias")) {
                    l.bias.emplace();
                    grab(jl, "bias", *l.bias, idx, kind);
                }
            } else {
                throw IoError("manifest " + mpath.string() + ": layer " + std::to_string(idx) +
                              " has unknown kind '" + kind + "'");
            }
            g.layers.push_back(std::move(l));
        }

        for (const json& rl : m.at("residual_links")) {
            if (!rl.is_array() || rl.size() != 2)
                throw IoError("manifest " + mpath.string() + ": residual link must be a pair");
            g.residual_links.push_back({rl[0].get<int>(), rl[1].get<int>()});
        }
    } catch (const json::exception& e) {
        throw IoError("malformed manifest " + mpath.string() + ": " + e.what());
    }

    // Tensor targets are resolved after parsing so vector reallocation cannot
    // invalidate them. Walk order must mirror the grab order above.
    std::vector<std::pair<Tensor*, size_t>> pending;
    {
        size_t r = 0;
        for (Layer& l : g.layers) {
            switch (l.kind) {
                case LayerKind::Conv2d:
                case LayerKind::Linear:
                    pending.emplace_back(&l.weight, r++);
                    if (l.bias) pending.emplace_back(&*l.bias, r++);
                    break;
                case LayerKind::BatchNorm:
                    pending.emplace_back(&l.gamma, r++);
                    pending.emplace_back(&l.beta, r++);
                    pending.emplace_back(&l.running_mean, r++);
                    pending.emplace_back(&l.running_var, r++);
                    break;
                default:
                    break;
            }
        }
        if (r != regions.size())
            throw IoError("manifest " + mpath.string() + ": inconsistent tensor bookkeeping");
    }

    auto blob = detail::read_file_bytes(bpath);
    const uint64_t blob_size = blob.size();

    for (const Region& r : regions) {
        if (r.offset % 4 != 0)
            throw IoError(bpath.string() + ": unaligned offset for " + r.name);
        if (r.offset + r.bytes > blob_size)
            throw IoError(bpath.string() + ": offset overrun for " + r.name + " (needs bytes [" +
                          std::to_string(r.offset) + ", " + std::to_string(r.offset + r.bytes) +
                          "), blob has " + std::to_string(blob_size) + ")");
    }
    {
        std::vector<const Region*> sorted;
        for (const Region& r : regions) sorted.push_back(&r);
        std::sort(sorted.begin(), sorted.end(),
                  [](const Region* a, const Region* b) { return a->offset < b->offset; });
        for (size_t i = 1; i < sorted.size(); ++i)
            if (sorted[i - 1]->offset + sorted[i - 1]->bytes > sorted[i]->offset)
                throw IoError(bpath.string() + ": overlapping regions " + sorted[i - 1]->name +
                              " and " + sorted[i]->name);
    }

    uint32_t want_crc = m.at("blob_crc32").get<uint32_t>();
    uint32_t got_crc = detail::crc32_of(blob.data(), blob.size());
    if (want_crc != got_crc)
        throw IoError(bpath.string() + ": checksum mismatch (manifest " + std::to_string(want_crc) +
                      ", blob " + std::to_string(got_crc) + ")");

    for (auto& [dst, ri] : pending) {
        const Region& r = regions[ri];
        std::memcpy(dst->data.data(), blob.data() + r.offset, static_cast<size_t>(r.bytes));
    }

    validate(g);
    return g;
}

Dataset load_cifar10(const std::string& path, const std::string& split, int64_t limit,
                     const Normalize* norm) {
    std::vector<fs::path> files;
    if (fs::is_regular_file(path)) {
        files.push_back(path);
    } else if (fs::is_directory(path)) {
        if (split == "train") {
            for (const auto& e : fs::directory_iterator(path)) {
                std::string name = e.path().filename().string();
                if (name.rfind("data_batch_", 0) == 0 && name.size() > 4 &&
                    name.substr(name.size() - 4) == ".bin")
                    files.push_back(e.path());
            }
            std::sort(files.begin(), files.end());
            if (files.empty())
                throw IoError("no data_batch_*.bin files in " + path);
        } else if (split == "test") {
            fs::path p = fs::path(path) / "test_batch.bin";
            if (!fs::is_regular_file(p)) throw IoError("missing " + p.string());
            files.push_back(p);
        } else {
            throw IoError("unknown split '" + split + "' (want train or test)");
        }
    } else {
        throw IoError("no such file or directory: " + path);
    }

    constexpr int64_t kRecord = 3073;
    constexpr int64_t kPixels = 3072;

    int64_t total = 0;
    std::vector<std::vector<unsigned char>> contents;
    for (const fs::path& f : files) {
        auto bytes = detail::read_file_bytes(f);
        if (bytes.size() % kRecord != 0)
            throw IoError(f.string() + ": length " + std::to_string(bytes.size()) +
                          " is not a multiple of 3073");
        total += static_cast<int64_t>(bytes.size()) / kRecord;
        contents.push_back(std::move(bytes));
    }
    if (limit >= 0) total = std::min(total, limit);

    Dataset ds;
    if (total == 0) return ds;
    ds.images = Tensor({total, 3, 32, 32}, 0.0f);
    ds.labels.reserve(static_cast<size_t>(total));

    float ch_mean[3] = {0.0f, 0.0f, 0.0f};
    float ch_inv[3] = {1.0f, 1.0f, 1.0f};
    if (norm) {
        for (int c = 0; c < 3; ++c) {
            if (!(norm->stddev[static_cast<size_t>(c)] > 0.0))
                throw ConfigError("normalization stddev must be positive");
            ch_mean[c] = static_cast<float>(norm->mean[static_cast<size_t>(c)]);
            ch_inv[c] = static_cast<float>(1.0 / norm->stddev[static_cast<size_t>(c)]);
        }
    }

    int64_t rec = 0;
    for (size_t fi = 0; fi < contents.size() && rec < total; ++fi) {
        const auto& bytes = contents[fi];
        int64_t n = static_cast<int64_t>(bytes.size()) / kRecord;
        for (int64_t r = 0; r < n && rec < total; ++r, ++rec) {
            const unsigned char* p = bytes.data() + r * kRecord;
            if (p[0] > 9)
                throw IoError(files[fi].string() + ": record " + std::to_string(r) +
                              " has label " + std::to_string(int(p[0])));
            ds.labels.push_back(static_cast<int>(p[0]));
            float* img = ds.images.data.data() + rec * kPixels;
            for (int c = 0; c < 3; ++c) {
                const unsigned char* plane = p + 1 + c * 1024;
                float* out = img + c * 1024;
                for (int i = 0; i < 1024; ++i)
                    out[i] = (static_cast<float>(plane[i]) / 255.0f - ch_mean[c]) * ch_inv[c];
            }
        }
    }
    return ds;
}

double RateConfig::rate_for(int unit) const {
    auto it = rates.find(unit);
    return it == rates.end() ? 0.0 : it->second;
}

namespace {

void set_rate(RateConfig& rc, int unit, double v) {
    if (unit < 0) throw ConfigError("rate for negative unit " + std::to_string(unit));
    if (!(v >= 0.0) || v >= 1.0)
        throw ConfigError("rate " + std::to_string(v) + " for unit " + std::to_string(unit) +
                          " outside [0, 1)");
    rc.rates[unit] = v;
}

}  // namespace

RateConfig load_rates(const std::string& path) {
    auto bytes = detail::read_file_bytes(path);
    std::string text(bytes.begin(), bytes.end());
    RateConfig rc;
    if (text.find_first_not_of(" \t\r\n") == std::string::npos) return rc;

    json j;
    try {
        j = json::parse(text);
    } catch (const json::exception& e) {
        throw ConfigError("malformed rate config " + path + ": " + e.what());
    }
    try {
        if (j.contains("rates")) {
            const json& r = j["rates"];
            if (r.is_array()) {
                int u = 0;
                for (const json& v : r) set_rate(rc, u++, v.get<double>());
            } else if (r.is_object()) {
                for (auto it = r.begin(); it != r.end(); ++it) {
                    std::string key = it.key();
                    if (key.rfind("unit", 0) == 0) key = key.substr(4);
                    size_t pos = 0;
                    int u;
                    try {
                        u = std::stoi(key, &pos);
                    } catch (const std::exception&) {
                        throw ConfigError("rate config " + path + ": bad unit key '" + it.key() +
                                          "'");
                    }
                    if (pos != key.size())
                        throw ConfigError("rate config " + path + ": bad unit key '" + it.key() +
                                          "'");
                    set_rate(rc, u, it.value().get<double>());
                }
            } else {
                throw ConfigError("rate config " + path + ": rates must be array or object");
            }
        }
        if (j.contains("lambda")) rc.use_lambda = j["lambda"].get<bool>();
        if (j.contains("var_coeff")) {
            rc.var_coeff = j["var_coeff"].get<double>();
            if (!(rc.var_coeff > 0.0))
                throw ConfigError("rate config " + path + ": var_coeff must be positive");
        }
        if (j.contains("finetune_epochs")) {
            rc.finetune_epochs = j["finetune_epochs"].get<int>();
            if (rc.finetune_epochs < 0)
                throw ConfigError("rate config " + path + ": finetune_epochs must be >= 0");
        }
        if (j.contains("seed")) rc.seed = j["seed"].get<uint64_t>();
        if (j.contains("normalize")) {
            Normalize nm;
            const json& n = j["normalize"];
            auto m = n.at("mean").get<std::vector<double>>();
            auto s = n.at("stddev").get<std::vector<double>>();
            if (m.size() != 3 || s.size() != 3)
                throw ConfigError("rate config " + path + ": normalize wants 3 means + 3 stddevs");
            for (int c = 0; c < 3; ++c) {
                if (!(s[static_cast<size_t>(c)] > 0.0))
                    throw ConfigError("rate config " + path + ": stddev must be positive");
                nm.mean[static_cast<size_t>(c)] = m[static_cast<size_t>(c)];
                nm.stddev[static_cast<size_t>(c)] = s[static_cast<size_t>(c)];
            }
            rc.normalize = nm;
        }
    } catch (const json::exception& e) {
        throw ConfigError("rate config " + path + ": " + e.what());
    }
    return rc;
}

}  // namespace fsm
