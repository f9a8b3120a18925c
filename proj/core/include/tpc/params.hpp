#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "tpc/tensor.hpp"

namespace tpc {

/// Named parameter store with a trainable flag per entry.
///
/// Names are dotted paths ("backbone.layer0.attn.wq"); the first component is
/// the parameter group used for accounting. Registration order is preserved
/// and is the order used by optimizers and checkpoints.
class ParamRegistry {
 public:
  struct Entry {
    std::string name;
    Tensor tensor;
    bool trainable = false;
  };

  /// Registers a leaf. Throws ContractError on a duplicate name.
  Tensor& add(std::string name, Tensor tensor, bool trainable);

  bool contains(std::string_view name) const;
  Tensor& get(std::string_view name);
  const Tensor& get(std::string_view name) const;
  bool trainable(std::string_view name) const;

  /// Sets the trainable flag of every parameter whose name starts with
  /// `prefix`. Returns how many entries matched.
  std::size_t set_trainable(std::string_view prefix, bool trainable);
  /// Sets the flag of exactly one named parameter.
  void set_entry_trainable(std::string_view name, bool trainable);

  const std::vector<Entry>& entries() const noexcept { return entries_; }
  std::vector<Tensor> trainable_tensors() const;

  void zero_grad();
  std::size_t total_count() const;
  std::size_t trainable_count() const;

  /// FNV-1a over names, shapes and value bytes of the matching entries.
  std::uint64_t fingerprint(std::string_view prefix = {}) const;

  /// Copies values (not flags) from `other`, which must hold the same names
  /// and shapes.
  void copy_values_from(const ParamRegistry& other);
  /// Deep copy of all values and flags.
  ParamRegistry clone() const;

 private:
  std::size_t index_of(std::string_view name) const;

  std::vector<Entry> entries_;
  std::map<std::string, std::size_t, std::less<>> index_;
};

/// Group of a parameter name: the text before the first '.'.
std::string_view param_group(std::string_view name);

// Checkpoint container, little-endian:
//   magic "TPCCKPT1" | u32 version | u64 metadata length | metadata bytes |
//   u64 entry count | entries
// entry: u32 name length | name | u8 trainable | u64 rows | u64 cols |
//   rows*cols IEEE-754 doubles
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  std::string metadata;
  struct Item {
    std::string name;
    bool trainable = false;
    std::size_t rows = 0;
    std::size_t cols = 0;
    std::vector<double> values;
  };
  std::vector<Item> items;
};

Checkpoint snapshot(const ParamRegistry& registry, std::string metadata);
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint read_checkpoint(const std::filesystem::path& path);
/// Loads values and trainable flags into an existing registry. Names and
/// shapes must match exactly.
void restore(ParamRegistry& registry, const Checkpoint& checkpoint);

}  // namespace tpc
