#pragma once

// File formats:
//   .flo   Middlebury flow: "PIEH", int32 LE width, height, then (u, v)
//          float32 LE pairs, row-major.
//   .pfm   grayscale "Pf" depth, scale -1.0 (little-endian), rows stored
//          bottom to top.
//   .png   8-bit RGB frames, value v stands for v / 255.
//   .pgm   binary "P5" masks, 255 = occluded/invalid, 0 = clear.
//   latents.f64 + latents.json: raw float64 LE dump of T x [3,H,W] with a
//          JSON sidecar holding count, shape and level.
//
// Every reader throws DataError with a stable kind tag on malformed input.

#include <filesystem>
#include <string>
#include <vector>

#include "tempoflow/diffusion.hpp"
#include "tempoflow/flow.hpp"
#include "tempoflow/tensor.hpp"

namespace tempoflow::io {

namespace fs = std::filesystem;

void write_flo(const fs::path& path, const FlowField& flow);
FlowField read_flo(const fs::path& path);

void write_pfm(const fs::path& path, const DepthMap& depth);
DepthMap read_pfm(const fs::path& path);

// Values are quantized with round-half-up after clamping to [0,1].
void write_png(const fs::path& path, const Tensor& frame);
Tensor read_png(const fs::path& path);

void write_pgm(const fs::path& path, const OcclusionMask& mask);
OcclusionMask read_pgm(const fs::path& path);

void write_latents(const fs::path& dir, const LatentSequence& latents);
LatentSequence read_latents(const fs::path& dir);

// "<prefix>_0003.<ext>"
fs::path indexed_name(const std::string& prefix, int index, const std::string& ext);

// Files named <prefix>_NNNN.<ext> in `dir`, sorted by index. Throws
// DataError("missing_files") when there are none.
std::vector<fs::path> list_indexed(const fs::path& dir, const std::string& prefix, const std::string& ext);

std::string read_file(const fs::path& path);
void write_file(const fs::path& path, const std::string& bytes);

}  // namespace tempoflow::io
