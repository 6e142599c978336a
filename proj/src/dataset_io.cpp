#include "datesort/dataset_io.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

#include "json.hpp"

namespace datesort {

namespace {

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw ValidationError("cannot open file for writing: " + path.string());
    out << text;
    if (!out) throw ValidationError("write failed: " + path.string());
}

std::string read_text_file(const std::filesystem::path& path, const std::string& what) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ValidationError("cannot open " + what + ": " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string format_channel(double x) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.6f", x);
    return buf;
}

nlohmann::ordered_json config_to_json(const GeneratorConfig& cfg) {
    nlohmann::ordered_json j;
    j["canvas"] = cfg.canvas;
    j["class_separation"] = cfg.class_separation;
    j["spoilage_prob"] = cfg.spoilage_prob;
    j["spectral_noise"] = cfg.spectral_noise;
    j["speckle_noise"] = cfg.speckle_noise;
    j["tamar_moisture_max"] = cfg.tamar_moisture_max;
    return j;
}

GeneratorConfig config_from_json(const nlohmann::json& j) {
    GeneratorConfig cfg;
    cfg.canvas = j.at("canvas").get<int>();
    cfg.class_separation = j.at("class_separation").get<double>();
    cfg.spoilage_prob = j.at("spoilage_prob").get<double>();
    cfg.spectral_noise = j.at("spectral_noise").get<double>();
    cfg.speckle_noise = j.at("speckle_noise").get<double>();
    cfg.tamar_moisture_max = j.at("tamar_moisture_max").get<double>();
    return cfg;
}

}  // namespace

std::string encode_ppm(const ImageRaster& img) {
    if (img.width <= 0 || img.height <= 0)
        throw ValidationError("encode_ppm: empty raster");
    if (img.normalized)
        throw ValidationError("encode_ppm: raster must be in the raw 8-bit stage");
    std::string out = "P3\n";
    out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n255\n";
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < 3; ++c) {
                const double v = img.at(x, y, c);
                if (!(v >= 0.0 && v <= 255.0) || v != std::floor(v))
                    throw ValidationError("encode_ppm: sample at (" + std::to_string(x) + ", " +
                                          std::to_string(y) + ") is not an 8-bit integer");
                if (x != 0 || c != 0) out += ' ';
                out += std::to_string(static_cast<int>(v));
            }
        }
        out += '\n';
    }
    return out;
}

ImageRaster decode_ppm(const std::string& text, const std::string& name) {
    std::istringstream in(text);
    std::string magic;
    in >> magic;
    if (magic != "P3") throw ValidationError("corrupt image file (not plain P3): " + name);
    long long w = 0, h = 0, maxval = 0;
    if (!(in >> w >> h >> maxval))
        throw ValidationError("corrupt image file (bad header): " + name);
    if (w <= 0 || h <= 0 || maxval != 255)
        throw ValidationError("corrupt image file (bad dimensions or depth): " + name);
    ImageRaster img = ImageRaster::raw(static_cast<int>(w), static_cast<int>(h));
    for (std::size_t i = 0; i < img.data.size(); ++i) {
        long long v = 0;
        if (!(in >> v))
            throw ValidationError("corrupt image file (truncated pixel data): " + name);
        if (v < 0 || v > 255)
            throw ValidationError("corrupt image file (sample out of range): " + name);
        img.data[i] = static_cast<double>(v);
    }
    long long extra = 0;
    if (in >> extra) throw ValidationError("corrupt image file (trailing data): " + name);
    return img;
}

std::string encode_spectral_csv(const SpectralReading& reading) {
    if (reading.kind != SpectralKind::RAW)
        throw ValidationError("encode_spectral_csv: reading must be raw counts");
    std::string out;
    for (double v : reading.channels) {
        if (!std::isfinite(v)) throw ValidationError("encode_spectral_csv: non-finite channel");
        out += format_channel(v);
        out += '\n';
    }
    return out;
}

SpectralReading decode_spectral_csv(const std::string& text, const std::string& name) {
    std::istringstream in(text);
    SpectralReading reading;
    reading.kind = SpectralKind::RAW;
    std::string line;
    int n = 0;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (n >= kSpectralChannels)
            throw ValidationError("corrupt spectral file (more than 18 values): " + name);
        std::size_t pos = 0;
        double v = 0.0;
        try {
            v = std::stod(line, &pos);
        } catch (const std::exception&) {
            throw ValidationError("corrupt spectral file (bad value): " + name);
        }
        while (pos < line.size() && (line[pos] == ' ' || line[pos] == '\r')) ++pos;
        if (pos != line.size() || !std::isfinite(v))
            throw ValidationError("corrupt spectral file (bad value): " + name);
        reading.channels[n++] = v;
    }
    if (n != kSpectralChannels)
        throw ValidationError("corrupt spectral file (expected 18 values, got " +
                              std::to_string(n) + "): " + name);
    return reading;
}

void write_dataset(const std::filesystem::path& dir, const std::vector<FruitSample>& samples,
                   const GeneratorConfig& config, std::uint64_t seed) {
    if (samples.empty()) throw ValidationError("write_dataset: no samples");
    std::set<int> ids;
    for (const FruitSample& s : samples)
        if (!ids.insert(s.id).second)
            throw ValidationError("write_dataset: duplicate sample id " + std::to_string(s.id));

    std::filesystem::create_directories(dir / "img");
    std::filesystem::create_directories(dir / "spec");

    std::map<Variety, int> counts;
    nlohmann::ordered_json entries = nlohmann::ordered_json::array();
    for (const FruitSample& s : samples) {
        const std::string id = std::to_string(s.id);
        write_text_file(dir / "img" / (id + ".ppm"), encode_ppm(s.image));
        write_text_file(dir / "spec" / (id + ".csv"), encode_spectral_csv(s.spectral));
        ++counts[s.variety];

        nlohmann::ordered_json e;
        e["id"] = s.id;
        e["variety"] = variety_name(s.variety);
        e["ripeness"] = ripeness_name(s.ripeness);
        e["seed"] = s.seed;
        nlohmann::ordered_json a;
        a["moisture"] = s.attrs.moisture;
        a["tss"] = s.attrs.tss;
        a["sugar"] = s.attrs.sugar;
        a["tannin"] = s.attrs.tannin;
        a["ph"] = s.attrs.ph;
        a["firmness"] = s.attrs.firmness;
        a["days_to_expiry"] = s.attrs.days_to_expiry;
        a["spoiled"] = s.attrs.spoiled;
        e["attrs"] = a;
        e["image"] = "img/" + id + ".ppm";
        e["spectral"] = "spec/" + id + ".csv";
        entries.push_back(e);
    }

    nlohmann::ordered_json counts_json;
    for (const auto& [v, n] : counts) counts_json[variety_name(v)] = n;

    nlohmann::ordered_json manifest;
    manifest["layout"] = kDatasetLayoutTag;
    manifest["seed"] = seed;
    manifest["config"] = config_to_json(config);
    manifest["counts"] = counts_json;
    manifest["samples"] = entries;
    write_text_file(dir / "manifest.json", manifest.dump(2) + "\n");
}

StoredDataset read_dataset(const std::filesystem::path& dir) {
    const std::filesystem::path manifest_path = dir / "manifest.json";
    const std::string manifest_text = read_text_file(manifest_path, "dataset manifest");
    nlohmann::json manifest;
    try {
        manifest = nlohmann::json::parse(manifest_text);
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
    }

    StoredDataset out;
    try {
        if (manifest.at("layout").get<std::string>() != kDatasetLayoutTag)
            throw ValidationError("unknown dataset layout in " + manifest_path.string());
        out.seed = manifest.at("seed").get<std::uint64_t>();
        out.config = config_from_json(manifest.at("config"));

        std::set<int> ids;
        for (const nlohmann::json& e : manifest.at("samples")) {
            FruitSample s;
            s.id = e.at("id").get<int>();
            if (!ids.insert(s.id).second)
                throw ValidationError("dataset manifest repeats sample id " + std::to_string(s.id));
            s.variety = variety_from_name(e.at("variety").get<std::string>());
            s.ripeness = ripeness_from_name(e.at("ripeness").get<std::string>());
            s.seed = e.at("seed").get<std::uint64_t>();
            const nlohmann::json& a = e.at("attrs");
            s.attrs.moisture = a.at("moisture").get<double>();
            s.attrs.tss = a.at("tss").get<double>();
            s.attrs.sugar = a.at("sugar").get<double>();
            s.attrs.tannin = a.at("tannin").get<double>();
            s.attrs.ph = a.at("ph").get<double>();
            s.attrs.firmness = a.at("firmness").get<double>();
            s.attrs.days_to_expiry = a.at("days_to_expiry").get<int>();
            s.attrs.spoiled = a.at("spoiled").get<bool>();
            if (s.attrs.days_to_expiry < 0 || (s.attrs.spoiled && s.attrs.days_to_expiry != 0))
                throw ValidationError("dataset manifest has inconsistent shelf life for sample id " +
                                      std::to_string(s.id));

            const std::filesystem::path img_path = dir / e.at("image").get<std::string>();
            if (!std::filesystem::exists(img_path))
                throw ValidationError("missing image file for sample id " + std::to_string(s.id) +
                                      ": " + img_path.string());
            s.image = decode_ppm(read_text_file(img_path, "image file"), img_path.string());

            const std::filesystem::path spec_path = dir / e.at("spectral").get<std::string>();
            if (!std::filesystem::exists(spec_path))
                throw ValidationError("missing spectral file for sample id " + std::to_string(s.id) +
                                      ": " + spec_path.string());
            s.spectral = decode_spectral_csv(read_text_file(spec_path, "spectral file"),
                                             spec_path.string());
            out.samples.push_back(std::move(s));
        }
    } catch (const nlohmann::json::exception& e) {
        throw ValidationError("malformed dataset manifest " + manifest_path.string() + ": " + e.what());
    }
    if (out.samples.empty())
        throw ValidationError("dataset manifest lists no samples: " + manifest_path.string());
    return out;
}

}  // namespace datesort
