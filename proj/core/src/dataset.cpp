#include "scm/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "config_json.hpp"

namespace scm {

namespace {

constexpr double kTwoPi = 6.283185307179586477;

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
    return splitmix64(seed ^ splitmix64(index + 1));
}

int clamp_int(int v, int lo, int hi) { return std::min(std::max(v, lo), hi); }

}  // namespace

void SceneSpec::validate() const {
    if (image_size < 16) throw ConfigError("scene spec: image_size must be >= 16");
    if (min_defects < 0 || max_defects < min_defects) {
        throw ConfigError("scene spec: invalid defects-per-image range");
    }
    double total = 0.0;
    for (double p : class_proportions) {
        if (p < 0.0) throw ConfigError("scene spec: negative class proportion");
        total += p;
    }
    if (total <= 0.0) throw ConfigError("scene spec: class proportions sum to zero");
}

namespace {

int sample_class(const std::array<double, kClassCount>& proportions, std::mt19937_64& rng) {
    double total = 0.0;
    for (double p : proportions) total += p;
    std::uniform_real_distribution<double> uni(0.0, total);
    const double u = uni(rng);
    double acc = 0.0;
    for (int c = 0; c < kClassCount; ++c) {
        acc += proportions[static_cast<std::size_t>(c)];
        if (u < acc) return c;
    }
    return kClassCount - 1;
}

void darken(std::vector<double>& canvas, int size, int r, int c, double delta) {
    if (r < 0 || r >= size || c < 0 || c >= size) return;
    canvas[static_cast<std::size_t>(r) * size + c] += delta;
}

void set_pixel(Mask& mask, int r, int c) {
    if (r < 0 || r >= mask.height || c < 0 || c >= mask.width) return;
    mask.at(r, c) = 1;
}

Mask draw_pothole(std::vector<double>& canvas, int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double radius = size * (0.05 + 0.07 * uni(rng));
    const int cx = clamp_int(static_cast<int>(size * (0.15 + 0.7 * uni(rng))), 0, size - 1);
    const int cy = clamp_int(static_cast<int>(size * (0.15 + 0.7 * uni(rng))), 0, size - 1);
    const int harmonics = 3;
    double amp[harmonics], phase[harmonics];
    for (int k = 0; k < harmonics; ++k) {
        amp[k] = 0.05 + 0.15 * uni(rng);
        phase[k] = kTwoPi * uni(rng);
    }
    const double depth = -45.0 - 20.0 * uni(rng);
    Mask mask(size, size);
    const int reach = static_cast<int>(std::ceil(radius * 1.6)) + 1;
    for (int r = cy - reach; r <= cy + reach; ++r) {
        for (int c = cx - reach; c <= cx + reach; ++c) {
            if (r < 0 || r >= size || c < 0 || c >= size) continue;
            const double dy = r - cy, dx = c - cx;
            const double dist = std::sqrt(dx * dx + dy * dy);
            const double theta = std::atan2(dy, dx);
            double boundary = radius;
            for (int k = 0; k < harmonics; ++k) {
                boundary *= 1.0 + amp[k] * std::sin((k + 2) * theta + phase[k]) / harmonics;
            }
            if (dist <= boundary) {
                set_pixel(mask, r, c);
                darken(canvas, size, r, c, depth);
            }
        }
    }
    return mask;
}

Mask draw_manhole(std::vector<double>& canvas, int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const double radius = size * (0.04 + 0.06 * uni(rng));
    const int cx = clamp_int(static_cast<int>(size * (0.15 + 0.7 * uni(rng))), 0, size - 1);
    const int cy = clamp_int(static_cast<int>(size * (0.15 + 0.7 * uni(rng))), 0, size - 1);
    Mask mask(size, size);
    const int reach = static_cast<int>(std::ceil(radius)) + 1;
    for (int r = cy - reach; r <= cy + reach; ++r) {
        for (int c = cx - reach; c <= cx + reach; ++c) {
            if (r < 0 || r >= size || c < 0 || c >= size) continue;
            const double dy = r - cy, dx = c - cx;
            const double dist = std::sqrt(dx * dx + dy * dy);
            if (dist <= radius) {
                set_pixel(mask, r, c);
                // darker plate with a brighter rim
                darken(canvas, size, r, c, dist > radius - 1.8 ? 18.0 : -32.0);
            }
        }
    }
    return mask;
}

Mask draw_crack(std::vector<double>& canvas, int size, std::mt19937_64& rng, bool vertical) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> wobble(0.0, 0.7);
    const int length = static_cast<int>(size * (0.35 + 0.5 * uni(rng)));
    const int start_along = static_cast<int>((size - length) * uni(rng));
    double across = size * (0.1 + 0.8 * uni(rng));
    const int thickness = uni(rng) < 0.5 ? 1 : 2;
    const double depth = -40.0 - 15.0 * uni(rng);
    Mask mask(size, size);
    for (int step = 0; step < length; ++step) {
        across += wobble(rng);
        across = std::min(std::max(across, 1.0), size - 2.0);
        const int a = start_along + step;
        const int b = static_cast<int>(across);
        for (int t = 0; t < thickness; ++t) {
            const int r = vertical ? a : b + t;
            const int c = vertical ? b + t : a;
            if (r < 0 || r >= size || c < 0 || c >= size) continue;
            if (!mask.at(r, c)) darken(canvas, size, r, c, depth);
            set_pixel(mask, r, c);
        }
    }
    return mask;
}

Mask draw_joint(std::vector<double>& canvas, int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const bool vertical = uni(rng) < 0.5;
    const int offset = clamp_int(static_cast<int>(size * (0.1 + 0.8 * uni(rng))), 1, size - 3);
    const int thickness = uni(rng) < 0.5 ? 1 : 2;
    Mask mask(size, size);
    for (int along = 0; along < size; ++along) {
        for (int t = 0; t < thickness; ++t) {
            const int r = vertical ? along : offset + t;
            const int c = vertical ? offset + t : along;
            set_pixel(mask, r, c);
            darken(canvas, size, r, c, -28.0);
        }
    }
    return mask;
}

Mask draw_wheel(std::vector<double>& canvas, int size, std::mt19937_64& rng) {
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    const int band = std::max(2, static_cast<int>(size * (0.02 + 0.02 * uni(rng))));
    const int gap = static_cast<int>(size * (0.08 + 0.08 * uni(rng)));
    const int length = static_cast<int>(size * (0.45 + 0.45 * uni(rng)));
    const int top = static_cast<int>((size - length) * uni(rng));
    const int left = clamp_int(static_cast<int>(size * (0.1 + 0.6 * uni(rng))), 0,
                               std::max(0, size - (2 * band + gap) - 1));
    Mask mask(size, size);
    for (int r = top; r < top + length; ++r) {
        for (int t = 0; t < band; ++t) {
            for (int side = 0; side < 2; ++side) {
                const int c = left + t + side * (band + gap);
                if (r < 0 || r >= size || c < 0 || c >= size) continue;
                set_pixel(mask, r, c);
                darken(canvas, size, r, c, -20.0);
            }
        }
    }
    return mask;
}

}  // namespace

DatasetRecord generate_scene(const SceneSpec& spec, int index) {
    spec.validate();
    std::mt19937_64 rng(mix_seed(spec.seed, static_cast<std::uint64_t>(index)));
    const int size = spec.image_size;

    std::vector<double> canvas(static_cast<std::size_t>(size) * size, 128.0);
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::normal_distribution<double> noise(0.0, spec.noise_stddev);
    const double fx = 1.0 + 2.0 * uni(rng), fy = 1.0 + 2.0 * uni(rng);
    const double px = kTwoPi * uni(rng), py = kTwoPi * uni(rng);
    for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
            const double texture = 0.5 * spec.texture_amplitude *
                                   (std::sin(kTwoPi * fx * c / size + px) +
                                    std::sin(kTwoPi * fy * r / size + py));
            canvas[static_cast<std::size_t>(r) * size + c] += texture + noise(rng);
        }
    }

    DatasetRecord record;
    record.id = index;
    record.image_size = size;

    std::uniform_int_distribution<int> count_dist(spec.min_defects, spec.max_defects);
    const int defects = count_dist(rng);
    for (int d = 0; d < defects; ++d) {
        const int cls = sample_class(spec.class_proportions, rng);
        Mask mask;
        switch (cls) {
            case 0: mask = draw_pothole(canvas, size, rng); break;
            case 1: mask = draw_manhole(canvas, size, rng); break;
            case 2: mask = draw_crack(canvas, size, rng, /*vertical=*/true); break;
            case 3: mask = draw_crack(canvas, size, rng, /*vertical=*/false); break;
            case 4: mask = draw_joint(canvas, size, rng); break;
            default: mask = draw_wheel(canvas, size, rng); break;
        }
        if (mask.empty()) continue;
        InstanceRecord inst;
        inst.class_id = cls;
        inst.box = mask.bounding_box();
        inst.mask = std::move(mask);
        inst.confidence = 1.0;
        record.annotations.push_back(std::move(inst));
    }

    record.image.resize(canvas.size());
    for (std::size_t i = 0; i < canvas.size(); ++i) {
        record.image[i] = static_cast<std::uint8_t>(
            clamp_int(static_cast<int>(std::lround(canvas[i])), 0, 255));
    }
    return record;
}

Dataset generate_dataset(const SceneSpec& spec, int count, int first_index) {
    Dataset ds;
    ds.spec = spec;
    ds.records.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) ds.records.push_back(generate_scene(spec, first_index + i));
    return ds;
}

std::vector<std::int64_t> rle_encode(const Mask& mask) {
    std::vector<std::int64_t> runs;
    std::uint8_t current = 0;  // runs start with background
    std::int64_t length = 0;
    for (std::uint8_t v : mask.data) {
        const std::uint8_t bit = v ? 1 : 0;
        if (bit == current) {
            ++length;
        } else {
            runs.push_back(length);
            current = bit;
            length = 1;
        }
    }
    runs.push_back(length);
    return runs;
}

Mask rle_decode(const std::vector<std::int64_t>& runs, int height, int width) {
    Mask mask(height, width);
    std::int64_t pos = 0;
    std::uint8_t current = 0;
    for (std::int64_t run : runs) {
        if (run < 0 || pos + run > static_cast<std::int64_t>(mask.data.size())) {
            throw ParseError("rle_decode: runs exceed mask size");
        }
        if (current) {
            std::fill_n(mask.data.begin() + pos, run, static_cast<std::uint8_t>(1));
        }
        pos += run;
        current = current ? 0 : 1;
    }
    if (pos != static_cast<std::int64_t>(mask.data.size())) {
        throw ParseError("rle_decode: runs do not cover the mask");
    }
    return mask;
}

void write_pgm(const std::string& path, const std::vector<std::uint8_t>& pixels, int height,
               int width) {
    if (static_cast<std::int64_t>(pixels.size()) !=
        static_cast<std::int64_t>(height) * width) {
        throw ShapeError("write_pgm: pixel count does not match extents");
    }
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw ParseError(path + ": cannot open for writing");
    os << "P5\n" << width << " " << height << "\n255\n";
    os.write(reinterpret_cast<const char*>(pixels.data()),
             static_cast<std::streamsize>(pixels.size()));
    if (!os) throw ParseError(path + ": write failed");
}

std::vector<std::uint8_t> read_pgm(const std::string& path, int& height, int& width) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw ParseError(path + ": cannot open");
    std::string magic;
    is >> magic;
    if (magic != "P5") throw ParseError(path + ": not a binary PGM (P5)");
    int maxval = 0;
    is >> width >> height >> maxval;
    if (!is || width <= 0 || height <= 0) throw ParseError(path + ": bad PGM header");
    if (maxval != 255) throw ParseError(path + ": unsupported maxval");
    is.get();  // the single whitespace after the header
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(height) * width);
    is.read(reinterpret_cast<char*>(pixels.data()),
            static_cast<std::streamsize>(pixels.size()));
    if (!is) throw ParseError(path + ": truncated pixel data");
    return pixels;
}

namespace {

std::string image_filename(int id) {
    std::ostringstream os;
    os << "images/";
    std::string n = std::to_string(id);
    while (n.size() < 4) n.insert(n.begin(), '0');
    os << n << ".pgm";
    return os.str();
}

}  // namespace

void write_dataset(const Dataset& dataset, const std::string& directory) {
    namespace fs = std::filesystem;
    fs::create_directories(fs::path(directory) / "images");

    nlohmann::json manifest;
    manifest["format"] = "scmseg-dataset";
    manifest["version"] = 1;
    manifest["count"] = dataset.records.size();
    manifest["classes"] = std::vector<std::string>(kClassNames, kClassNames + kClassCount);
    manifest["spec"] = detail::scene_spec_to_json(dataset.spec);
    {
        std::ofstream os(fs::path(directory) / "manifest.json");
        if (!os) throw ParseError(directory + "/manifest.json: cannot open for writing");
        os << manifest.dump(2) << "\n";
    }

    std::ofstream ann(fs::path(directory) / "annotations.jsonl", std::ios::trunc);
    if (!ann) throw ParseError(directory + "/annotations.jsonl: cannot open for writing");
    for (const DatasetRecord& record : dataset.records) {
        const std::string image_rel = image_filename(record.id);
        write_pgm((fs::path(directory) / image_rel).string(), record.image, record.image_size,
                  record.image_size);
        nlohmann::json line;
        line["id"] = record.id;
        line["image"] = image_rel;
        nlohmann::json instances = nlohmann::json::array();
        for (const InstanceRecord& inst : record.annotations) {
            nlohmann::json ji;
            ji["class"] = kClassNames[inst.class_id];
            ji["box"] = {inst.box.x0, inst.box.y0, inst.box.x1, inst.box.y1};
            ji["rle"] = rle_encode(inst.mask);
            instances.push_back(std::move(ji));
        }
        line["instances"] = std::move(instances);
        ann << line.dump() << "\n";
    }
    if (!ann) throw ParseError(directory + "/annotations.jsonl: write failed");
}

namespace {

int class_id_from_name(const std::string& name) {
    for (int c = 0; c < kClassCount; ++c) {
        if (name == kClassNames[c]) return c;
    }
    throw ParseError("unknown class name '" + name + "'");
}

}  // namespace

Dataset read_dataset(const std::string& directory) {
    namespace fs = std::filesystem;
    Dataset dataset;

    {
        std::ifstream is(fs::path(directory) / "manifest.json");
        if (!is) throw ParseError(directory + "/manifest.json: cannot open");
        nlohmann::json manifest;
        try {
            is >> manifest;
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(directory + "/manifest.json: " + e.what());
        }
        if (manifest.value("format", "") != "scmseg-dataset") {
            throw ParseError(directory + "/manifest.json: not a dataset manifest");
        }
        dataset.spec = detail::scene_spec_from_json(manifest.at("spec"));
    }

    const std::string ann_path = (fs::path(directory) / "annotations.jsonl").string();
    std::ifstream ann(ann_path);
    if (!ann) throw ParseError(ann_path + ": cannot open");
    std::string line;
    int line_number = 0;
    while (std::getline(ann, line)) {
        ++line_number;
        if (line.empty()) continue;
        nlohmann::json j;
        try {
            j = nlohmann::json::parse(line);
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ann_path + ":" + std::to_string(line_number) + ": " + e.what());
        }
        try {
            DatasetRecord record;
            record.id = j.at("id").get<int>();
            int h = 0, w = 0;
            record.image =
                read_pgm((fs::path(directory) / j.at("image").get<std::string>()).string(), h, w);
            if (h != w) throw ParseError("non-square image");
            record.image_size = h;
            for (const auto& ji : j.at("instances")) {
                InstanceRecord inst;
                inst.class_id = class_id_from_name(ji.at("class").get<std::string>());
                const auto& box = ji.at("box");
                inst.box = {box.at(0).get<double>(), box.at(1).get<double>(),
                            box.at(2).get<double>(), box.at(3).get<double>()};
                inst.mask = rle_decode(ji.at("rle").get<std::vector<std::int64_t>>(), h, w);
                inst.confidence = 1.0;
                record.annotations.push_back(std::move(inst));
            }
            dataset.records.push_back(std::move(record));
        } catch (const nlohmann::json::exception& e) {
            throw ParseError(ann_path + ":" + std::to_string(line_number) + ": " + e.what());
        }
    }
    return dataset;
}

Tensor image_to_tensor(const DatasetRecord& record) {
    const int s = record.image_size;
    Tensor t({s, s, 1});
    for (std::int64_t i = 0; i < t.numel(); ++i) {
        t[i] = record.image[static_cast<std::size_t>(i)] / 255.0;
    }
    return t;
}

Mask binary_ground_truth(const DatasetRecord& record) {
    Mask mask(record.image_size, record.image_size);
    for (const InstanceRecord& inst : record.annotations) {
        for (std::size_t i = 0; i < mask.data.size(); ++i) {
            mask.data[i] = mask.data[i] || inst.mask.data[i];
        }
    }
    return mask;
}

}  // namespace scm
