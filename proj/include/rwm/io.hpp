#pragma once

#include "rwm/detector.hpp"

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace rwm {

// RTNS tensor container, little endian:
//   "RTNS" u16 version u32 count
//   per tensor: u32 name_len, name, u32 ndim, u32 dims[ndim], f32 data[]
// RSWT checkpoint:
//   "RSWT" u16 version u32 header_len, JSON header, then an RTNS body
//   (u32 count and tensor records) holding the parameters in order.

inline constexpr std::uint16_t kTensorFileVersion = 1;
inline constexpr std::uint16_t kCheckpointVersion = 1;

std::string encode_tensors(const std::vector<NamedTensor<Real>>& tensors);
/// FormatError carries the byte offset of the failure.
std::vector<NamedTensor<Real>> decode_tensors(const std::string& bytes);

void save_tensor_file(const std::filesystem::path& path, const std::vector<NamedTensor<Real>>& tensors);
std::vector<NamedTensor<Real>> load_tensor_file(const std::filesystem::path& path);

/// The tensor called `name`, or the only tensor when `name` is empty.
Tensor<Real> find_tensor(const std::vector<NamedTensor<Real>>& tensors, const std::string& name = "");

struct Checkpoint {
  DetectorModel<Real> model;
  std::map<std::string, std::string> metadata;  // training settings, epsilon, seed
};

std::string encode_checkpoint(const DetectorModel<Real>& model, const std::map<std::string, std::string>& metadata = {});
Checkpoint decode_checkpoint(const std::string& bytes);

void save_checkpoint(const DetectorModel<Real>& model, const std::filesystem::path& path,
                     const std::map<std::string, std::string>& metadata = {});
Checkpoint load_checkpoint(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

}  // namespace rwm
