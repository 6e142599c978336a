#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "datesort/dataset_io.hpp"
#include "datesort/rng.hpp"
#include "doctest.h"

using namespace datesort;

namespace {

std::filesystem::path fresh_dir(const std::string& name) {
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / name;
    std::filesystem::remove_all(dir);
    std::filesystem::create_directories(dir);
    return dir;
}

std::string slurp(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void spit(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    out << text;
}

std::vector<FruitSample> tiny_dataset() {
    GeneratorConfig cfg;
    cfg.canvas = 24;
    cfg.spoilage_prob = 0.5;
    DatasetSpec spec;
    spec.counts[Variety::AJWA] = 3;
    spec.counts[Variety::BERHI] = 2;
    return generate_dataset(cfg, spec, 7001);
}

GeneratorConfig tiny_config() {
    GeneratorConfig cfg;
    cfg.canvas = 24;
    cfg.spoilage_prob = 0.5;
    return cfg;
}

}  // namespace

TEST_CASE("a two-pixel raster encodes to the exact plain-P3 document") {
    ImageRaster img = ImageRaster::raw(2, 1);
    img.at(0, 0, 0) = 255;
    img.at(0, 0, 1) = 0;
    img.at(0, 0, 2) = 17;
    img.at(1, 0, 0) = 1;
    img.at(1, 0, 1) = 2;
    img.at(1, 0, 2) = 3;
    CHECK(encode_ppm(img) == "P3\n2 1\n255\n255 0 17 1 2 3\n");
}

TEST_CASE("ppm encoding round-trips bit for bit") {
    Rng rng(401);
    ImageRaster img = ImageRaster::raw(13, 9);
    for (double& v : img.data) v = static_cast<double>(rng.uniform_int(256));
    const ImageRaster back = decode_ppm(encode_ppm(img), "roundtrip.ppm");
    CHECK(back == img);
    // Idempotent re-encoding: the text form is canonical.
    CHECK(encode_ppm(back) == encode_ppm(img));
}

TEST_CASE("ppm encoding rejects rasters outside the raw 8-bit stage") {
    ImageRaster img = ImageRaster::raw(2, 2, 10.0);
    SUBCASE("normalized raster") {
        img.normalized = true;
        CHECK_THROWS_AS(encode_ppm(img), ValidationError);
    }
    SUBCASE("fractional sample") {
        img.at(1, 1, 0) = 3.5;
        CHECK_THROWS_AS(encode_ppm(img), ValidationError);
    }
    SUBCASE("sample above 255") {
        img.at(0, 1, 2) = 256.0;
        CHECK_THROWS_AS(encode_ppm(img), ValidationError);
    }
    SUBCASE("negative sample") {
        img.at(0, 0, 1) = -1.0;
        CHECK_THROWS_AS(encode_ppm(img), ValidationError);
    }
    SUBCASE("empty raster") { CHECK_THROWS_AS(encode_ppm(ImageRaster{}), ValidationError); }
}

TEST_CASE("ppm decoding rejects malformed documents and quotes the name") {
    const auto reject = [](const std::string& text) {
        CHECK_THROWS_WITH_AS(decode_ppm(text, "bad.ppm"), doctest::Contains("bad.ppm"),
                             ValidationError);
    };
    reject("P6\n1 1\n255\n0 0 0\n");          // binary magic
    reject("P3\n1\n255\n0 0 0\n");            // header cut short
    reject("P3\n1 1\n65535\n0 0 0\n");        // wrong depth
    reject("P3\n0 1\n255\n");                 // zero dimension
    reject("P3\n2 1\n255\n0 0 0\n");          // truncated pixels
    reject("P3\n1 1\n255\n0 0 999\n");        // out of range
    reject("P3\n1 1\n255\n0 0 -4\n");         // negative
    reject("P3\n1 1\n255\n0 0 x\n");          // non-numeric
    reject("P3\n1 1\n255\n0 0 0 7\n");        // trailing data
}

TEST_CASE("spectral csv uses six decimal places, one channel per line") {
    SpectralReading r;
    r.channels[0] = 0.5;
    r.channels[1] = 0.123456789;  // written on the 1e-6 grid
    const std::string text = encode_spectral_csv(r);
    std::istringstream in(text);
    std::string first, second;
    std::getline(in, first);
    std::getline(in, second);
    CHECK(first == "0.500000");
    CHECK(second == "0.123457");
    int lines = 0;
    std::string line;
    std::istringstream all(text);
    while (std::getline(all, line)) ++lines;
    CHECK(lines == kSpectralChannels);
}

TEST_CASE("quantized readings survive the csv round trip exactly") {
    Rng rng(402);
    SpectralReading r;
    for (double& c : r.channels) c = quantize_channel(rng.uniform(0.0, 2.0));
    const SpectralReading back = decode_spectral_csv(encode_spectral_csv(r), "spec.csv");
    for (int i = 0; i < kSpectralChannels; ++i) CHECK(back.channels[i] == r.channels[i]);
}

TEST_CASE("spectral csv decoding rejects malformed documents") {
    const auto reject = [](const std::string& text) {
        CHECK_THROWS_WITH_AS(decode_spectral_csv(text, "bad.csv"), doctest::Contains("bad.csv"),
                             ValidationError);
    };
    reject("");                                       // empty
    reject("0.5\n");                                  // too few
    std::string nineteen;
    for (int i = 0; i < 19; ++i) nineteen += "0.100000\n";
    reject(nineteen);                                 // too many
    std::string bad;
    for (int i = 0; i < 17; ++i) bad += "0.100000\n";
    reject(bad + "zebra\n");                          // non-numeric
    reject(std::string(17 * 9, ' '));                 // whitespace only
    SpectralReading calibrated;
    calibrated.kind = SpectralKind::CALIBRATED;
    CHECK_THROWS_AS(encode_spectral_csv(calibrated), ValidationError);
}

TEST_CASE("a dataset round-trips through the directory layout bit for bit") {
    const std::vector<FruitSample> samples = tiny_dataset();
    const std::filesystem::path dir = fresh_dir("ds_roundtrip");
    write_dataset(dir, samples, tiny_config(), 7001);

    CHECK(std::filesystem::exists(dir / "manifest.json"));
    CHECK(std::filesystem::exists(dir / "img" / "0.ppm"));
    CHECK(std::filesystem::exists(dir / "spec" / "4.csv"));

    const StoredDataset back = read_dataset(dir);
    CHECK(back.seed == 7001);
    CHECK(back.config.canvas == 24);
    CHECK(back.config.spoilage_prob == 0.5);
    REQUIRE(back.samples.size() == samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) CHECK(back.samples[i] == samples[i]);
}

TEST_CASE("writing the same dataset twice produces identical bytes") {
    const std::vector<FruitSample> samples = tiny_dataset();
    const std::filesystem::path a = fresh_dir("ds_det_a");
    const std::filesystem::path b = fresh_dir("ds_det_b");
    write_dataset(a, samples, tiny_config(), 7001);
    write_dataset(b, samples, tiny_config(), 7001);
    CHECK(slurp(a / "manifest.json") == slurp(b / "manifest.json"));
    for (const FruitSample& s : samples) {
        const std::string id = std::to_string(s.id);
        CHECK(slurp(a / "img" / (id + ".ppm")) == slurp(b / "img" / (id + ".ppm")));
        CHECK(slurp(a / "spec" / (id + ".csv")) == slurp(b / "spec" / (id + ".csv")));
    }
}

TEST_CASE("write_dataset rejects empty input and duplicate ids") {
    CHECK_THROWS_AS(write_dataset(fresh_dir("ds_empty"), {}, tiny_config(), 1), ValidationError);
    std::vector<FruitSample> samples = tiny_dataset();
    samples[1].id = samples[0].id;
    CHECK_THROWS_WITH_AS(write_dataset(fresh_dir("ds_dup"), samples, tiny_config(), 1),
                         doctest::Contains("duplicate"), ValidationError);
}

TEST_CASE("reading a broken dataset directory names the failing piece") {
    const std::vector<FruitSample> samples = tiny_dataset();

    SUBCASE("missing manifest") {
        const std::filesystem::path dir = fresh_dir("ds_nomanifest");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("manifest"), ValidationError);
    }
    SUBCASE("manifest is not json") {
        const std::filesystem::path dir = fresh_dir("ds_badjson");
        write_dataset(dir, samples, tiny_config(), 7001);
        spit(dir / "manifest.json", "{not json");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("manifest.json"), ValidationError);
    }
    SUBCASE("wrong layout tag") {
        const std::filesystem::path dir = fresh_dir("ds_badlayout");
        write_dataset(dir, samples, tiny_config(), 7001);
        std::string text = slurp(dir / "manifest.json");
        const std::string tag = "\"dsdata1\"";
        text.replace(text.find(tag), tag.size(), "\"dsdata9\"");
        spit(dir / "manifest.json", text);
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("layout"), ValidationError);
    }
    SUBCASE("missing spectral csv cites the sample id") {
        const std::filesystem::path dir = fresh_dir("ds_nospec");
        write_dataset(dir, samples, tiny_config(), 7001);
        std::filesystem::remove(dir / "spec" / "2.csv");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("sample id 2"), ValidationError);
    }
    SUBCASE("missing image cites the sample id") {
        const std::filesystem::path dir = fresh_dir("ds_noimg");
        write_dataset(dir, samples, tiny_config(), 7001);
        std::filesystem::remove(dir / "img" / "3.ppm");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("sample id 3"), ValidationError);
    }
    SUBCASE("corrupted image names the file") {
        const std::filesystem::path dir = fresh_dir("ds_corruptimg");
        write_dataset(dir, samples, tiny_config(), 7001);
        spit(dir / "img" / "1.ppm", "P3\n4 4\n255\n0 0\n");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("1.ppm"), ValidationError);
    }
    SUBCASE("corrupted spectral file names the file") {
        const std::filesystem::path dir = fresh_dir("ds_corruptspec");
        write_dataset(dir, samples, tiny_config(), 7001);
        spit(dir / "spec" / "0.csv", "0.25\nbroken\n");
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("0.csv"), ValidationError);
    }
    SUBCASE("inconsistent shelf life is rejected") {
        const std::filesystem::path dir = fresh_dir("ds_badshelf");
        std::vector<FruitSample> bent = samples;
        bent[0].attrs.spoiled = true;
        bent[0].attrs.days_to_expiry = 12;
        write_dataset(dir, bent, tiny_config(), 7001);
        CHECK_THROWS_WITH_AS(read_dataset(dir), doctest::Contains("shelf life"), ValidationError);
    }
}
