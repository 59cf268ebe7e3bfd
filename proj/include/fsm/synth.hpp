#pragma once

#include <cstdint>
#include <string>

namespace fsm {

/// Writes a procedurally generated 10-class image set in the CIFAR-10 binary
/// layout: <dir>/data_batch_1.bin with `train_records` records and
/// <dir>/test_batch.bin with `test_records`. Classes are oriented gratings
/// with class-specific color palettes, degraded by noise and occluders so a
/// small convnet neither saturates nor flatlines. Deterministic in `seed`.
void synth_cifar_dir(const std::string& dir, int64_t train_records, int64_t test_records,
                     uint64_t seed);

}  // namespace fsm
