#include "fsm/synth.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <vector>

#include "fsm/error.hpp"
#include "fsm/rng.hpp"

namespace fsm {

namespace {

constexpr double kPi = 3.14159265358979323846;

void write_records(const std::string& path, int64_t records, Rng& rng) {
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot open " + path + " for writing");

    std::vector<unsigned char> rec(3073);
    for (int64_t r = 0; r < records; ++r) {
        int k = static_cast<int>(r % 10);
        rec[0] = static_cast<unsigned char>(k);

        double theta = kPi * k / 10.0;
        double u = std::cos(theta), v = std::sin(theta);
        double freq = 1.5 + static_cast<double>(k % 4);
        double phase = rng.uniform() * 2.0 * kPi;
        double gain = 0.85 + 0.3 * rng.uniform();
        double pal[3];
        for (int c = 0; c < 3; ++c)
            pal[c] = 0.55 + 0.35 * std::cos(2.0 * kPi * (0.1 * k + c / 3.0));

        bool occl = rng.uniform() < 0.35;
        int64_t oy = rng.uniform_int(25), ox = rng.uniform_int(25);

        for (int y = 0; y < 32; ++y) {
            double wy = v * y;
            for (int x = 0; x < 32; ++x) {
                double wave =
                    0.5 + 0.5 * std::sin(2.0 * kPi * freq * (u * x + wy) / 32.0 + phase);
                bool hidden = occl && y >= oy && y < oy + 8 && x >= ox && x < ox + 8;
                for (int c = 0; c < 3; ++c) {
                    double val = hidden ? 0.5 : gain * pal[c] * (0.35 + 0.65 * wave);
                    val += 0.24 * (rng.uniform() - 0.5);
                    int b = static_cast<int>(std::lround(val * 255.0));
                    rec[static_cast<size_t>(1 + c * 1024 + y * 32 + x)] =
                        static_cast<unsigned char>(std::clamp(b, 0, 255));
                }
            }
        }
        f.write(reinterpret_cast<const char*>(rec.data()), static_cast<std::streamsize>(rec.size()));
    }
    if (!f) throw IoError("short write on " + path);
}

}  // namespace

void synth_cifar_dir(const std::string& dir, int64_t train_records, int64_t test_records,
                     uint64_t seed) {
    if (train_records < 0 || test_records < 0)
        throw ConfigError("record counts must be nonnegative");
    std::filesystem::create_directories(dir);
    {
        Rng rng(seed);
        write_records((std::filesystem::path(dir) / "data_batch_1.bin").string(), train_records,
                      rng);
    }
    {
        Rng rng(seed ^ 0x9E3779B97F4A7C15ull);
        write_records((std::filesystem::path(dir) / "test_batch.bin").string(), test_records, rng);
    }
}

}  // namespace fsm
