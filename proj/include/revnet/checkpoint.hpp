#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "revnet/arch.hpp"
#include "revnet/data.hpp"

namespace revnet {

/// Checkpoint file layout (all integers little-endian):
///   magic   8 bytes  "RVNCKPT1"
///   version u32      1
///   prec    u8       4 = f32, 8 = f64
///   count   u32      number of parameter records
/// then per parameter:
///   name_len u32, name bytes (UTF-8, no terminator),
///   dims     4 x u64 (n, c, h, w),
///   data     n*c*h*w scalars, little-endian IEEE-754
namespace ckpt {

struct Blob {
  std::string name;
  std::array<std::uint64_t, 4> dims;
  std::vector<std::uint8_t> bytes;
};

void write_file(const std::string& path, std::uint8_t precision,
                const std::vector<Blob>& blobs);
std::vector<Blob> read_file(const std::string& path,
                            std::uint8_t& precision_out);

}  // namespace ckpt

template <typename Scalar>
void save_checkpoint(const NetworkPlan<Scalar>& plan,
                     const std::string& path) {
  auto& mut = const_cast<NetworkPlan<Scalar>&>(plan);
  auto tensors = collect_param_tensors(mut);
  auto names = collect_param_names(plan);
  std::vector<ckpt::Blob> blobs(tensors.size());
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const Tensor<Scalar>& t = *tensors[i];
    blobs[i].name = names[i];
    blobs[i].dims = {static_cast<std::uint64_t>(t.shape().n),
                     static_cast<std::uint64_t>(t.shape().c),
                     static_cast<std::uint64_t>(t.shape().h),
                     static_cast<std::uint64_t>(t.shape().w)};
    blobs[i].bytes.resize(t.bytes());
    std::memcpy(blobs[i].bytes.data(), t.data(), t.bytes());
  }
  ckpt::write_file(path, sizeof(Scalar), blobs);
}

/// Loads parameters into an already-built plan; every record must match an
/// existing parameter's name and shape.
template <typename Scalar>
void load_checkpoint(NetworkPlan<Scalar>& plan, const std::string& path) {
  std::uint8_t precision = 0;
  auto blobs = ckpt::read_file(path, precision);
  if (precision != sizeof(Scalar))
    throw IoError("checkpoint: precision f" +
                  std::to_string(precision * 8) + " does not match plan f" +
                  std::to_string(sizeof(Scalar) * 8));
  auto tensors = collect_param_tensors(plan);
  auto names = collect_param_names(plan);
  if (blobs.size() != tensors.size())
    throw IoError("checkpoint: " + std::to_string(blobs.size()) +
                  " records for a plan with " +
                  std::to_string(tensors.size()) + " parameters");
  for (std::size_t i = 0; i < blobs.size(); ++i) {
    if (blobs[i].name != names[i])
      throw IoError("checkpoint: record '" + blobs[i].name +
                    "' where '" + names[i] + "' was expected");
    Tensor<Scalar>& t = *tensors[i];
    const auto& d = blobs[i].dims;
    if (static_cast<Index>(d[0]) != t.shape().n ||
        static_cast<Index>(d[1]) != t.shape().c ||
        static_cast<Index>(d[2]) != t.shape().h ||
        static_cast<Index>(d[3]) != t.shape().w)
      throw IoError("checkpoint: shape mismatch for '" + names[i] + "'");
    if (blobs[i].bytes.size() != t.bytes())
      throw IoError("checkpoint: byte count mismatch for '" + names[i] + "'");
    std::memcpy(t.data(), blobs[i].bytes.data(), t.bytes());
  }
}

}  // namespace revnet
