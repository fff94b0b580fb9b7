#pragma once

#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dewarp/fieldgen.hpp"
#include "dewarp/png_io.hpp"
#include "dewarp/synthdoc.hpp"

namespace dewarp {

struct SampleMeta {
    std::uint64_t layout_seed = 0;
    std::uint64_t field_seed = 0;
    std::uint64_t background_seed = 0;
    std::uint64_t overlap_seed = 0;  // 0: no overlap blend
    double overlap_weight = 0.5;
    double severity = 0.5;
    int size = 288;
    int base_size = 288;  // generation size before cropping
    std::optional<CropRect> crop;
    double invert_ratio = 0.4;
    int dropped_points = 0;
    int dropped_lines = 0;
};

inline nlohmann::ordered_json meta_to_json(const SampleMeta& m) {
    nlohmann::ordered_json j;
    j["layout_seed"] = m.layout_seed;
    j["field_seed"] = m.field_seed;
    j["background_seed"] = m.background_seed;
    j["overlap_seed"] = m.overlap_seed;
    j["overlap_weight"] = m.overlap_weight;
    j["severity"] = m.severity;
    j["size"] = m.size;
    j["base_size"] = m.base_size;
    if (m.crop) {
        j["crop"] = {{"x", m.crop->x}, {"y", m.crop->y}, {"width", m.crop->width},
                     {"height", m.crop->height}};
    } else {
        j["crop"] = nullptr;
    }
    j["invert_ratio"] = m.invert_ratio;
    j["dropped_points"] = m.dropped_points;
    j["dropped_lines"] = m.dropped_lines;
    j["complete"] = true;
    return j;
}

inline SampleMeta meta_from_json(const nlohmann::json& j, const std::string& origin) {
    SampleMeta m;
    try {
        m.layout_seed = j.at("layout_seed").get<std::uint64_t>();
        m.field_seed = j.at("field_seed").get<std::uint64_t>();
        m.background_seed = j.at("background_seed").get<std::uint64_t>();
        m.overlap_seed = j.at("overlap_seed").get<std::uint64_t>();
        m.overlap_weight = j.at("overlap_weight").get<double>();
        m.severity = j.at("severity").get<double>();
        m.size = j.at("size").get<int>();
        m.base_size = j.at("base_size").get<int>();
        if (!j.at("crop").is_null()) {
            CropRect r;
            r.x = j["crop"].at("x").get<int>();
            r.y = j["crop"].at("y").get<int>();
            r.width = j["crop"].at("width").get<int>();
            r.height = j["crop"].at("height").get<int>();
            m.crop = r;
        }
        m.invert_ratio = j.at("invert_ratio").get<double>();
        m.dropped_points = j.value("dropped_points", 0);
        m.dropped_lines = j.value("dropped_lines", 0);
    } catch (const nlohmann::json::exception& e) {
        throw data_error("meta_from_json: " + origin + ": " + e.what());
    }
    return m;
}

// Rebuilds the target field recorded by a meta block (generation is
// deterministic, so this is exact up to the f32 file quantization).
inline DeformationField field_from_meta(const SampleMeta& m) {
    DeformationField bm = generate_field(m.field_seed, m.base_size, m.base_size, m.severity);
    if (m.crop) bm = crop_augment(bm, *m.crop);
    if (m.overlap_seed != 0) {
        DeformationField other =
            generate_field(m.overlap_seed, m.base_size, m.base_size, m.severity);
        if (m.crop) other = crop_augment(other, *m.crop);
        bm = overlap_augment(bm, other, m.overlap_weight);
    }
    return bm;
}

inline TrainingSample sample_from_meta(const SampleMeta& m, SampleBuildInfo* info = nullptr) {
    DocumentLayout layout = make_layout(m.layout_seed, m.size, m.size);
    RenderedDocument doc = render_document(layout);
    return make_sample(doc, field_from_meta(m), m.background_seed, m.invert_ratio, info);
}

// sample_%06d/: distorted.png, mask.png, lines.jsonl, target.dfld, meta.json.
// meta.json is written last so an interrupted sample is detectably partial.
inline void save_sample(const std::string& dir, const TrainingSample& s,
                        const SampleMeta& meta) {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw data_error("save_sample: cannot create " + dir);
    write_png(dir + "/distorted.png", s.distorted, 8);
    write_png(dir + "/mask.png", s.mask, 8);
    save_lines(dir + "/lines.jsonl", s.lines);
    save_field(dir + "/target.dfld", s.target_bm);
    std::ofstream os(dir + "/meta.json", std::ios::binary);
    if (!os) throw data_error("save_sample: cannot open meta.json in " + dir);
    os << meta_to_json(meta).dump(2) << "\n";
    if (!os) throw data_error("save_sample: meta write failed in " + dir);
}

struct LoadedSample {
    TrainingSample sample;
    SampleMeta meta;
};

inline bool sample_complete(const std::string& dir) {
    namespace fs = std::filesystem;
    for (const char* f :
         {"distorted.png", "mask.png", "lines.jsonl", "target.dfld", "meta.json"}) {
        if (!fs::exists(dir + "/" + std::string(f))) return false;
    }
    std::ifstream is(dir + "/meta.json");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception&) {
        return false;
    }
    return j.value("complete", false);
}

inline LoadedSample load_sample(const std::string& dir) {
    if (!sample_complete(dir)) throw data_error("load_sample: incomplete sample at " + dir);
    LoadedSample out;
    std::ifstream is(dir + "/meta.json");
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("load_sample: bad meta.json at " + dir + ": " + e.what());
    }
    out.meta = meta_from_json(j, dir + "/meta.json");
    out.sample.distorted = read_png(dir + "/distorted.png");
    out.sample.mask = read_png(dir + "/mask.png");
    for (double& v : out.sample.mask.data) v = v >= 0.5 ? 1.0 : 0.0;
    out.sample.lines = load_lines(dir + "/lines.jsonl");
    out.sample.target_bm = load_field(dir + "/target.dfld");
    return out;
}

struct GenConfig {
    int count = 8;
    std::uint64_t seed = 1;
    int size = 288;
    double severity_min = 0.2;
    double severity_max = 0.6;
    double crop_prob = 0.25;
    double overlap_prob = 0.25;
    double invert_ratio = 0.4;

    void validate() const {
        if (count < 1) throw invalid_argument("GenConfig: count must be positive");
        if (size < 96) throw invalid_argument("GenConfig: size must be at least 96");
        if (!(severity_min >= 0.0 && severity_min <= severity_max && severity_max <= 1.0))
            throw invalid_argument("GenConfig: bad severity range");
        if (!(crop_prob >= 0.0 && crop_prob <= 1.0 && overlap_prob >= 0.0 &&
              overlap_prob <= 1.0))
            throw invalid_argument("GenConfig: probabilities must be in [0,1]");
        if (!(invert_ratio > 0.0 && invert_ratio <= 1.0))
            throw invalid_argument("GenConfig: invert_ratio must be in (0,1]");
    }
};

inline std::string sample_dir_name(int index) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "sample_%06d", index);
    return buf;
}

// Per-index deterministic derivation of all sample parameters.
inline SampleMeta derive_meta(const GenConfig& cfg, int index) {
    Rng rng(cfg.seed ^ (0x517cc1b727220a95ull * (index + 1)), 0xD5u);
    SampleMeta m;
    m.size = cfg.size;
    m.invert_ratio = cfg.invert_ratio;
    m.layout_seed = (static_cast<std::uint64_t>(rng.next_u32()) << 32) | rng.next_u32();
    m.field_seed = (static_cast<std::uint64_t>(rng.next_u32()) << 32) | rng.next_u32();
    m.background_seed = (static_cast<std::uint64_t>(rng.next_u32()) << 32) | rng.next_u32();
    std::uint64_t overlap_candidate =
        (static_cast<std::uint64_t>(rng.next_u32()) << 32) | rng.next_u32() | 1ull;
    m.severity = rng.uniform(cfg.severity_min, cfg.severity_max);
    bool crop = rng.chance(cfg.crop_prob);
    bool overlap = rng.chance(cfg.overlap_prob);
    double ow = rng.uniform(0.3, 0.7);
    if (crop) {
        // Generate larger, then crop back to the sample size (area >= 75%).
        m.base_size = (cfg.size * 10 + 8) / 9;
        CropRect r;
        r.width = cfg.size;
        r.height = cfg.size;
        r.x = static_cast<int>(rng.below(m.base_size - cfg.size + 1));
        r.y = static_cast<int>(rng.below(m.base_size - cfg.size + 1));
        m.crop = r;
    } else {
        m.base_size = cfg.size;
    }
    if (overlap) {
        m.overlap_seed = overlap_candidate;
        m.overlap_weight = ow;
    }
    return m;
}

struct GenReport {
    int generated = 0;
    int skipped = 0;  // already complete, left untouched
    std::vector<std::string> incomplete_dirs;
};

inline nlohmann::ordered_json gen_config_json(const GenConfig& cfg) {
    nlohmann::ordered_json j;
    j["count"] = cfg.count;
    j["seed"] = cfg.seed;
    j["size"] = cfg.size;
    j["severity_min"] = cfg.severity_min;
    j["severity_max"] = cfg.severity_max;
    j["crop_prob"] = cfg.crop_prob;
    j["overlap_prob"] = cfg.overlap_prob;
    j["invert_ratio"] = cfg.invert_ratio;
    return j;
}

// Resumable generation: complete samples are skipped, partial ones redone.
// The manifest reflects the on-disk state at the end of the run.
inline GenReport generate_dataset(const std::string& out_dir, const GenConfig& cfg) {
    namespace fs = std::filesystem;
    cfg.validate();
    std::error_code ec;
    fs::create_directories(out_dir, ec);
    if (ec) throw data_error("generate_dataset: cannot create " + out_dir);
    GenReport report;
    for (int i = 0; i < cfg.count; ++i) {
        std::string dir = out_dir + "/" + sample_dir_name(i);
        if (sample_complete(dir)) {
            ++report.skipped;
            continue;
        }
        SampleMeta meta = derive_meta(cfg, i);
        SampleBuildInfo info;
        TrainingSample s = sample_from_meta(meta, &info);
        meta.dropped_points = info.dropped_points;
        meta.dropped_lines = info.dropped_lines;
        save_sample(dir, s, meta);
        ++report.generated;
    }
    nlohmann::ordered_json manifest;
    manifest["config"] = gen_config_json(cfg);
    auto& samples = manifest["samples"] = nlohmann::ordered_json::array();
    for (int i = 0; i < cfg.count; ++i) {
        std::string name = sample_dir_name(i);
        bool ok = sample_complete(out_dir + "/" + name);
        samples.push_back({{"dir", name}, {"status", ok ? "complete" : "incomplete"}});
        if (!ok) report.incomplete_dirs.push_back(name);
    }
    std::ofstream os(out_dir + "/manifest.json", std::ios::binary);
    if (!os) throw data_error("generate_dataset: cannot write manifest in " + out_dir);
    os << manifest.dump(2) << "\n";
    return report;
}

// Sample directories listed by the manifest as complete.
inline std::vector<std::string> list_complete_samples(const std::string& dataset_dir) {
    std::ifstream is(dataset_dir + "/manifest.json");
    if (!is) throw data_error("list_complete_samples: no manifest in " + dataset_dir);
    nlohmann::json j;
    try {
        is >> j;
    } catch (const nlohmann::json::exception& e) {
        throw data_error("list_complete_samples: bad manifest: " + std::string(e.what()));
    }
    std::vector<std::string> out;
    for (const auto& row : j.at("samples")) {
        if (row.at("status").get<std::string>() == "complete")
            out.push_back(dataset_dir + "/" + row.at("dir").get<std::string>());
    }
    return out;
}

}  // namespace dewarp
