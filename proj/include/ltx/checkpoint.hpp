#pragma once

#include <bit>
#include <cstdint>
#include <string>
#include <vector>

#include "ltx/architecture.hpp"
#include "ltx/init.hpp"
#include "ltx/params.hpp"
#include "ltx/pruning.hpp"
#include "ltx/serial.hpp"

namespace ltx {

namespace detail {

constexpr uint16_t kCheckpointVersion = 1;

template <typename T>
void write_tensor_payload(std::ostream& os, const Tensor<T>& t) {
  if constexpr (std::endian::native == std::endian::little) {
    serial::write_bytes(os, t.data(), sizeof(T) * static_cast<size_t>(t.numel()));
  } else {
    for (int64_t i = 0; i < t.numel(); ++i) serial::write_le<T>(os, t.data()[i]);
  }
}

template <typename T>
void read_tensor_payload(std::istream& is, Tensor<T>& t) {
  if constexpr (std::endian::native == std::endian::little) {
    serial::read_bytes(is, t.data(), sizeof(T) * static_cast<size_t>(t.numel()),
                       "tensor payload");
  } else {
    for (int64_t i = 0; i < t.numel(); ++i)
      t.data()[i] = serial::read_le<T>(is, "tensor payload");
  }
}

}  // namespace detail

// LTCK file (little-endian): magic "LTCK", version u16, tensor count u32,
// per tensor: name (u16 length + UTF-8), dtype u8 (0=f32, 1=f64), rank u8,
// extents u32 each, raw payload.
template <typename T>
void save_checkpoint(const std::string& path, const ParameterSet<T>& params) {
  serial::atomic_write_file(path, [&](std::ostream& os) {
    serial::write_magic(os, "LTCK");
    serial::write_le<uint16_t>(os, detail::kCheckpointVersion);
    serial::write_le<uint32_t>(os, static_cast<uint32_t>(params.entries().size()));
    for (const auto& e : params.entries()) {
      serial::write_string(os, e.name);
      serial::write_le<uint8_t>(os, static_cast<uint8_t>(dtype_of<T>()));
      serial::write_le<uint8_t>(os, static_cast<uint8_t>(e.value.rank()));
      for (int64_t ext : e.value.shape())
        serial::write_le<uint32_t>(os, static_cast<uint32_t>(ext));
      detail::write_tensor_payload(os, e.value);
    }
  });
}

// Loads into the given layout: tensor names, order, shapes, and dtype must
// match exactly; flags come from the layout (the file stores none).
template <typename T>
ParameterSet<T> load_checkpoint(const std::string& path,
                                const std::vector<ParamDecl>& layout) {
  auto is = serial::open_input(path);
  serial::expect_magic(is, "LTCK", "checkpoint");
  const auto version = serial::read_le<uint16_t>(is, "checkpoint version");
  if (version != detail::kCheckpointVersion)
    throw io_error(io_error::Kind::bad_version,
                   "unsupported checkpoint version " + std::to_string(version));
  const auto count = serial::read_le<uint32_t>(is, "tensor count");
  if (count != layout.size())
    throw io_error(io_error::Kind::bad_value,
                   "checkpoint has " + std::to_string(count) +
                       " tensors, architecture expects " +
                       std::to_string(layout.size()));
  ParameterSet<T> out;
  for (const auto& decl : layout) {
    std::string name = serial::read_string(is, "tensor name");
    if (name != decl.name)
      throw io_error(io_error::Kind::bad_value,
                     "checkpoint tensor \"" + name + "\" where \"" +
                         decl.name + "\" expected");
    const auto dtype = serial::read_le<uint8_t>(is, "dtype");
    if (dtype != static_cast<uint8_t>(dtype_of<T>()))
      throw io_error(io_error::Kind::bad_value,
                     "checkpoint dtype mismatch for " + name);
    const auto rank = serial::read_le<uint8_t>(is, "rank");
    Shape shape(rank);
    for (auto& ext : shape) ext = serial::read_le<uint32_t>(is, "extent");
    if (shape != decl.shape)
      throw io_error(io_error::Kind::bad_value,
                     "checkpoint shape mismatch for " + name);
    Tensor<T> t(shape);
    detail::read_tensor_payload(is, t);
    out.add(std::move(name), std::move(t), decl.flags);
  }
  return out;
}

struct CheckpointInfo {
  int64_t step = 0;
  double val_loss = 0.0;
  std::string filename;
};

// Disk-backed record of one training run's parameter trajectory. One writer;
// checkpoints become visible to readers only after their rename commits.
class TrajectoryStore {
 public:
  // Creates `dir` if needed and resumes from an existing manifest.
  explicit TrajectoryStore(std::string dir);

  template <typename T>
  void record(int64_t step, const ParameterSet<T>& params, double val_loss) {
    const std::string filename = filename_for(step);
    check_recordable(step, val_loss);
    save_checkpoint(dir_ + "/" + filename, params);
    append(step, val_loss, filename);
  }

  template <typename T>
  ParameterSet<T> load_step(int64_t step,
                            const std::vector<ParamDecl>& layout) const {
    return load_checkpoint<T>(dir_ + "/" + info_at_step(step).filename, layout);
  }

  bool empty() const { return records_.empty(); }
  bool has_step(int64_t step) const;
  const std::vector<CheckpointInfo>& records() const { return records_; }
  const std::string& dir() const { return dir_; }

  // Earliest checkpoint of minimum validation loss.
  const CheckpointInfo& best() const;
  int64_t final_step() const;

  // Deletes every checkpoint file except step 0, the best step, and the
  // final step, and rewrites the manifest accordingly (disk budget for
  // experiment grids; the three retained points are all any reset needs).
  void retain_essentials();

 private:
  static std::string filename_for(int64_t step);
  void check_recordable(int64_t step, double val_loss) const;
  void append(int64_t step, double val_loss, std::string filename);
  const CheckpointInfo& info_at_step(int64_t step) const;
  void write_manifest() const;

  std::string dir_;
  std::vector<CheckpointInfo> records_;
};

// The three initializations a pruned network can restart from, plus the
// exploratory arbitrary-step variant.
struct ResetMode {
  enum class Kind { ticket, late, random, at_step };
  Kind kind = Kind::late;
  uint64_t seed = 0;    // random: fresh-draw stream
  int64_t step = -1;    // at_step
  InitDist dist{};      // random: distribution for the fresh draw
};

const char* reset_mode_name(ResetMode::Kind k);
ResetMode::Kind reset_mode_from_name(const std::string& name);

// Masked restart weights: ticket = m ⊙ θ₀, late = m ⊙ θ_S (best source
// checkpoint), random = m ⊙ θ′ with θ′ freshly drawn. Non-prunable tensors
// come from the same source, unmasked.
template <typename T>
ParameterSet<T> reset(const Architecture& arch, const TrajectoryStore& traj,
                      const ResetMode& mode, const MaskSet& masks) {
  const auto layout = param_layout(arch);
  ParameterSet<T> base = [&] {
    switch (mode.kind) {
      case ResetMode::Kind::ticket:
        if (!traj.has_step(0))
          throw contract_error("trajectory is missing step 0");
        return traj.load_step<T>(0, layout);
      case ResetMode::Kind::late:
        if (traj.empty()) throw contract_error("empty trajectory");
        return traj.load_step<T>(traj.best().step, layout);
      case ResetMode::Kind::random:
        return init_params<T>(arch, mode.dist, mode.seed);
      case ResetMode::Kind::at_step:
        return traj.load_step<T>(mode.step, layout);
    }
    throw contract_error("unknown reset mode");
  }();
  apply_mask_inplace(base, masks);
  return base;
}

}  // namespace ltx
