#pragma once

#include <array>
#include <condition_variable>
#include <cstdint>
#include <deque>
#include <exception>
#include <filesystem>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "rtsmono/camera.hpp"
#include "rtsmono/losses.hpp"

namespace rtsmono {

std::filesystem::path frame_path(const std::filesystem::path& sequence_dir, int index);
std::filesystem::path depth_path(const std::filesystem::path& sequence_dir, int index);

/// One line per frame: `frame r00 r01 r02 r10 r11 r12 r20 r21 r22 tx ty tz` (camera to world).
void write_trajectory(const std::filesystem::path& path, const std::vector<PoseSE3>& camera_to_world);
std::vector<PoseSE3> read_trajectory(const std::filesystem::path& path);

struct SplitEntry {
  std::string sequence;
  int index = 0;
  bool operator==(const SplitEntry&) const = default;
};

/// Lines `<sequence> <frame_index>`; blank lines and `#` comments are ignored.
std::vector<SplitEntry> read_split(const std::filesystem::path& path);
void write_split(const std::filesystem::path& path, const std::vector<SplitEntry>& entries);
/// Every frame of every sequence under root, in sorted order.
std::vector<SplitEntry> list_frames(const std::filesystem::path& root);

struct FrameTriplet {
  SplitEntry entry;
  Tensor<float> prev, target, next;  // [3,H,W] in [0,1]
  Intrinsics K;
  std::optional<DepthMap> gt_depth;
  /// Ground-truth transforms taking target-frame points into the prev / next frames.
  std::optional<std::array<PoseSE3, 2>> gt_poses;
};

struct DatasetOptions {
  int width = 0;   // 0 keeps the stored resolution
  int height = 0;
  bool load_gt = true;
};

/// Triplet loader. Entries whose neighbours are missing are dropped with a warning.
class Dataset {
 public:
  Dataset(std::filesystem::path root, const std::vector<SplitEntry>& entries, DatasetOptions options = {});

  std::size_t size() const { return entries_.size(); }
  const std::vector<SplitEntry>& entries() const { return entries_; }
  const std::filesystem::path& root() const { return root_; }
  FrameTriplet load(std::size_t i) const;

 private:
  std::filesystem::path root_;
  std::vector<SplitEntry> entries_;
  DatasetOptions options_;
};

/// Bilinear (half-pixel) resize of a [C,H,W] image.
Tensor<float> resize_image(const Tensor<float>& image, int width, int height);

struct AugmentOptions {
  bool flip = false;
  double brightness = 0.0;  // multiplicative jitter amplitude, 0 disables
};

struct Batch {
  Tensor<float> prev, target, next;  // [N,3,H,W]
  Intrinsics K;
  std::vector<SplitEntry> entries;
};

/// Batch indices for a step, drawn from (seed, step) alone so that resumed runs see the same data.
std::vector<std::size_t> sample_indices(std::size_t dataset_size, int batch_size, std::uint64_t seed,
                                        std::int64_t step);
/// Stacks triplets into a batch. All items must share intrinsics and resolution.
Batch make_batch(const Dataset& data, const std::vector<std::size_t>& indices, const AugmentOptions& aug,
                 std::uint64_t seed, std::int64_t step);

/// Affine pixel map from one scale into M-scale pixel coordinates: x_m = sx * x + ox.
struct ScaleMap {
  int width = 0, height = 0;
  double sx = 1, ox = 0, sy = 1, oy = 0;

  std::array<double, 2> to_mid(double x, double y) const { return {sx * x + ox, sy * y + oy}; }
  std::array<double, 2> from_mid(double xm, double ym) const { return {(xm - ox) / sx, (ym - oy) / sy}; }
};

struct MultiScaleConfig {
  double low_scale = 0.75;  // I_L: downscale, then centre crop to a multiple of 16
  double high_area = 0.8;   // I_H: centre crop of this area fraction, upscaled back
};

/// Scale maps for an M-scale resolution; rejects sizes that cannot be made divisible by 16.
std::array<ScaleMap, 2> multi_scale_maps(int width, int height, const MultiScaleConfig& cfg = {});

template <typename T>
struct MultiScaleInputs {
  Var<T> low, mid, high;  // [N,3,*,*]
  ScaleMap low_map, high_map;
  RegionPair<T> lm;  // a = L lattice, b = its M coordinates
  RegionPair<T> mh;  // a = M coordinates of the H lattice, b = H lattice
};

template <typename T>
MultiScaleInputs<T> multi_scale_inputs(const Var<T>& image, const MultiScaleConfig& cfg = {});

/// Bounded, order-preserving producer queue driven by a background thread.
template <typename Item>
class Prefetcher {
 public:
  Prefetcher(std::function<Item(std::int64_t)> produce, std::int64_t begin, std::int64_t end, std::size_t capacity)
      : produce_(std::move(produce)), next_(begin), end_(end), capacity_(capacity ? capacity : 1) {
    worker_ = std::thread([this] { run(); });
  }
  ~Prefetcher() {
    {
      std::lock_guard lock(mu_);
      stop_ = true;
    }
    cv_.notify_all();
    worker_.join();
  }
  Prefetcher(const Prefetcher&) = delete;
  Prefetcher& operator=(const Prefetcher&) = delete;

  /// Next item in order, or nullopt once the range is exhausted. Rethrows producer errors.
  std::optional<Item> next() {
    std::unique_lock lock(mu_);
    cv_.wait(lock, [this] { return !queue_.empty() || done_; });
    if (!queue_.empty()) {
      Item item = std::move(queue_.front());
      queue_.pop_front();
      cv_.notify_all();
      return item;
    }
    if (error_) std::rethrow_exception(error_);
    return std::nullopt;
  }
  std::size_t buffered() const {
    std::lock_guard lock(mu_);
    return queue_.size();
  }

 private:
  void run() {
    for (;;) {
      std::int64_t step;
      {
        std::unique_lock lock(mu_);
        cv_.wait(lock, [this] { return stop_ || queue_.size() < capacity_; });
        if (stop_ || next_ >= end_) break;
        step = next_++;
      }
      try {
        Item item = produce_(step);
        std::lock_guard lock(mu_);
        queue_.push_back(std::move(item));
      } catch (...) {
        std::lock_guard lock(mu_);
        error_ = std::current_exception();
        break;
      }
      cv_.notify_all();
    }
    std::lock_guard lock(mu_);
    done_ = true;
    cv_.notify_all();
  }

  std::function<Item(std::int64_t)> produce_;
  std::int64_t next_, end_;
  std::size_t capacity_;
  mutable std::mutex mu_;
  std::condition_variable cv_;
  std::deque<Item> queue_;
  std::exception_ptr error_;
  bool stop_ = false, done_ = false;
  std::thread worker_;
};

}  // namespace rtsmono
