#pragma once

// Config files, binary checkpoints, PGM export and CSV reports.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "convformer/trainer.hpp"

namespace convformer {

// ---------------------------------------------------------------------------
// Files

// Writes to a sibling temporary file, then renames it over `path`.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);
std::string read_file(const std::filesystem::path& path);

// Shortest decimal text that parses back to the same double.
std::string format_double(double v);

// ---------------------------------------------------------------------------
// Config: flat "key = value" lines, '#' starts a comment.

class ConfigParseError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

TrainConfig parse_config(std::string_view text);
std::string serialize_config(const TrainConfig& config);
std::vector<std::string> config_keys();

// ---------------------------------------------------------------------------
// Checkpoints
//
//   "CFRM"  u16 version  u64 count
//   count x { u32 name_len, name bytes, u8 rank, rank x u64 extent, numel x f64 }
//   u64 FNV-1a of every preceding byte
//
// All integers and doubles little-endian.

inline constexpr std::uint16_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
public:
    enum class Kind { io, truncated, bad_magic, version, checksum, content };
    CheckpointError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

std::string encode_checkpoint(const NamedTensors& tensors);
NamedTensors decode_checkpoint(std::string_view bytes);

// Model tensors in visit order, preceded by the architecture as
// "config.<field>" one-element tensors.
NamedTensors model_tensors(const SegModel& model);
SegModel model_from_tensors(const NamedTensors& tensors);

void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
SegModel load_checkpoint(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Images

struct GrayImage {
    std::size_t height = 0, width = 0;
    std::vector<std::uint8_t> pixels;  // row-major
};

// A[i, j, :, :] of one head as an h' x w' image, v -> round(255 (v + 1) / 2)
// clamped to [0, 255]. Throws std::out_of_range for a bad head or query.
GrayImage export_attention(const AttentionField& attn, std::size_t head, std::size_t i, std::size_t j);
inline constexpr const char* kAttentionPgmComment = "value v in [-1,1] stored as round(255*(v+1)/2)";

// [1, H, W] image in [0, 1] -> round(255 v); class masks -> evenly spaced grays.
GrayImage image_to_gray(const Tensor& image);
GrayImage mask_to_gray(const std::vector<int>& mask, std::size_t height, std::size_t width, std::size_t num_classes);

std::string encode_pgm(const GrayImage& image, std::string_view comment);

// ---------------------------------------------------------------------------
// CSV

void write_history_csv(std::ostream& os, const std::vector<EpochRecord>& history);
void write_eval_csv(std::ostream& os, const EvalResult& eval);
void write_ablation_csv(std::ostream& os, const std::vector<AblationRow>& rows);

}  // namespace convformer
