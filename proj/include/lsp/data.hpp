#pragma once

// Dataset manifests (JSON lines), SPEED-style label ingestion, synthetic
// dataset generation, splitting and network-input preprocessing.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "lsp/geometry.hpp"
#include "lsp/heatmap.hpp"
#include "lsp/network.hpp"
#include "lsp/render.hpp"
#include "lsp/tensor.hpp"

namespace lsp {

enum class QuatOrder { wxyz, xyzw };
enum class SplitTag { train, val, test, all };
enum class DataSource { speed_format, synthetic };

QuatOrder parse_quat_order(const std::string& s);
std::string to_string(QuatOrder o);
std::string to_string(SplitTag s);
std::string to_string(DataSource s);

/// Builds a quaternion from four file values in the given order.
Quatd quat_from_file(const std::array<double, 4>& v, QuatOrder order);

inline constexpr const char* kManifestFormat = "lsp-manifest/1";

struct Sample {
  std::string filename;  // relative to the manifest directory, or absolute
  Posed pose;
  CameraIntrinsics intrinsics;
  PixelCoord center_px;  // cached project_center(pose.t, intrinsics)
  std::optional<bool> clutter;
};

struct Manifest {
  std::vector<Sample> samples;
  SplitTag split = SplitTag::all;
  QuatOrder quaternion_order = QuatOrder::wxyz;
  DataSource source = DataSource::synthetic;
  std::filesystem::path root;  // directory that relative filenames resolve against
  std::uint64_t seed = 0;

  std::filesystem::path image_path(const Sample& s) const;
  std::size_t size() const { return samples.size(); }
};

/// Reads a manifest; center_px is recomputed from the labels. With
/// check_files, missing images and duplicate paths are errors.
Manifest read_manifest(const std::filesystem::path& path, bool check_files = true);

/// Writes header + one line per sample. Filenames are rewritten relative to
/// the destination directory.
void write_manifest(const std::filesystem::path& path, const Manifest& m);

/// Vendor key names for SPEED-style label files.
struct SpeedKeyMap {
  std::string filename_key = "filename";
  std::string q_key = "q";
  std::string t_key = "t";

  static SpeedKeyMap from_file(const std::filesystem::path& path);
};

struct IngestResult {
  Manifest manifest;
  std::vector<std::string> rejected;  // per-record diagnostics for skipped records
};

/// Parses a JSON array of {filename, q[4], t[3]} records (keys per `keys`).
/// Records with t.z <= 0 are rejected individually; structural problems and
/// missing images raise DataError listing every offending record.
IngestResult ingest_speed_format(const std::filesystem::path& root_dir,
                                 const std::filesystem::path& label_file, QuatOrder order,
                                 const CameraIntrinsics& camera, const SpeedKeyMap& keys = {});

/// Renders n samples into out_dir/images and writes out_dir/manifest.jsonl.
/// Each sample draws from its own (seed, index) stream.
Manifest generate_synthetic(int n, const SceneConfig& cfg, std::uint64_t seed,
                            const std::filesystem::path& out_dir);

/// Disjoint seeded split into (train, val).
std::pair<Manifest, Manifest> split_manifest(const Manifest& m, std::size_t n_train,
                                             std::size_t n_val, std::uint64_t seed);

struct Preprocessed {
  Tensor<float> image;  // 1 x C x target_h x target_w
  Vec3d t;              // meters, never rescaled
  Vec2<double> center;  // normalized DSNT coordinates of the rescaled center
  Quatd q;
  ImageFrame original;
};

Preprocessed preprocess(const Manifest& m, const Sample& s, int target_h, int target_w,
                        int channels = 1);

/// Camera roll by `alpha` radians about the optical axis: the pose seen by
/// the rolled camera (t and q both pre-multiplied by Rz(alpha)).
Posed roll_pose(const Posed& pose, double alpha);

/// Where a pixel moves when the camera rolls by `alpha`: K Rz(alpha) K^-1 p.
PixelCoord roll_pixel(const PixelCoord& p, const CameraIntrinsics& k, double alpha);

/// Image seen by the rolled camera: each output pixel samples the source
/// along K Rz(-alpha) K^-1 (bilinear, zero outside). `k` must describe the
/// image's own pixel grid.
Tensor<float> roll_image(const Tensor<float>& image, const CameraIntrinsics& k, double alpha);

/// Returns one message per violated invariant (cached center, file presence).
std::vector<std::string> validate_manifest(const Manifest& m);

struct KoCalibration {
  double k_object = 0;
  std::size_t used = 0;
  std::size_t skipped = 0;
};

/// Estimates K_O from images with uncluttered backgrounds: for each sample,
/// the side of the square centered on the true center that contains every
/// pixel brighter than `threshold`, times z; K_O is the median divided by
/// `fill` (the fraction of the box the target should span).
KoCalibration calibrate_k_object(const Manifest& m, double fill = 0.8, double threshold = 0.06,
                                 std::size_t max_samples = 256);

}  // namespace lsp
