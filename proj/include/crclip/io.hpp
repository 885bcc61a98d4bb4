#pragma once

#include <string>
#include <utility>
#include <vector>

#include "crclip/tensor.hpp"

namespace crclip {

// Matrix file: "CRMX", version u16, rows u32, cols u32, dtype u8
// (0x01 = float64), then row-major little-endian payload. 15-byte header.
void write_matrix(const std::string& path, const Tensor& m);
Tensor read_matrix(const std::string& path);

// Checkpoint: tensor count u32, then per tensor (name length u32, utf-8
// name, rank u32, dims u32 each, dtype u8, payload), and a trailing CRC32
// (little-endian u32) of all preceding bytes. Names must be unique.
void save_checkpoint(const std::string& path,
                     const std::vector<std::pair<std::string, Tensor>>& named);
std::vector<std::pair<std::string, Tensor>> load_checkpoint(const std::string& path);

// Copies loaded values into the given parameter tensors. Key sets must
// match exactly; mismatches raise IoError(KeyMismatch) listing the
// missing/extra names, shape conflicts raise IoError(KeyMismatch) too.
void restore_into(std::vector<std::pair<std::string, Tensor>>& params,
                  const std::vector<std::pair<std::string, Tensor>>& loaded);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

}  // namespace crclip
