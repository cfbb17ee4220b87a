// synth.hpp
//
// Synthetic ground truth for controlled experiments: a Gaussian scene whose
// features are exact class embeddings, optional per-Gaussian motion, a pool of
// candidate cameras plus held-out test cameras, and every frame rendered by the
// same renderer that is being trained.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include <nlohmann/json.hpp>

#include "nbvsplat/frame.hpp"
#include "nbvsplat/semantic.hpp"
#include "nbvsplat/trainer.hpp"

namespace nbv {

enum class MotionKind { None, Linear, Sinusoidal };

struct Motion {
  int gaussian = 0;
  MotionKind kind = MotionKind::None;
  Eigen::Vector3d vector = Eigen::Vector3d::Zero();  // velocity (linear) or amplitude (sinusoidal)
  double frequency = 1.0;                            // cycles over t in [0, 1]

  Eigen::Vector3d offset(double t) const;
};

struct CameraPoolSpec {
  std::string layout = "hemisphere";  // "ring" or "hemisphere"
  int count = 12;                     // views spread around the scene
  double radius = 4.0;
  double elevation_deg = 20.0;  // ring elevation, and the lowest hemisphere elevation
  int cluster_count = 0;        // extra near-duplicate views around one direction
  double cluster_azimuth_deg = 30.0;
  double cluster_elevation_deg = 25.0;
  double cluster_spread_deg = 3.0;
  int test_count = 8;
  int image_size = 32;
  double fov_deg = 45.0;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  int gaussians = 30;
  double extent = 1.0;  // positions stay inside [-extent, extent]^3
  // "shell": flattened Gaussians tiling a sphere of radius 0.7 * extent, so each
  // camera sees only the near side; "volume": blobs scattered through the cube.
  std::string arrangement = "shell";
  int classes = 4;
  int supervision_dim = kDefaultSupervisionDim;
  int feature_dim = kDefaultFeatureDim;
  int timesteps = 8;
  double log_scale_min = -2.0;
  double log_scale_max = -1.3;
  double opacity_min = 0.6;
  double opacity_max = 0.95;
  std::vector<Motion> motions;
  CameraPoolSpec cameras;

  void validate() const;
};

void to_json(nlohmann::json& j, const SceneSpec& s);
void from_json(const nlohmann::json& j, SceneSpec& s);

struct SyntheticData {
  SceneSpec spec;
  GaussianSet canonical;      // ground truth at t = 0, features are class embeddings
  std::vector<int> classes;   // per Gaussian
  ClassEmbedding embedding;
  std::vector<CameraView> pool_cameras;
  std::vector<CameraView> test_cameras;
  std::vector<Frame> pool;  // id = camera * timesteps + timestep
  std::vector<Frame> test;  // ids start at test_id_base

  static constexpr int kTestIdBase = 1000000;

  double time_of(int timestep) const;
  GaussianSet scene_at(int timestep) const;
  const Frame& pool_frame(int camera, int timestep) const;
  std::vector<Frame> test_frames_at(int timestep) const;
};

SyntheticData generate(const SceneSpec& spec);

/// Writes scene.json, cams.json, frames/, feats/ and labels/ under dir.
void write_dataset(const SyntheticData& data, const std::filesystem::path& dir);

struct ModelInitSpec {
  double position_noise = 0.08;
  double log_scale_noise = 0.15;
  double initial_color = 0.5;
  double initial_opacity = 0.5;
  double feature_std = 0.1;
  std::uint64_t seed = 0;
};

/// Starting model: ground-truth geometry at t = 0 perturbed by noise, flat gray
/// colors, small random features and a random decoder. Dynamic data gets a
/// zero-initialized deformation network.
Model initial_model(const SyntheticData& data, const ModelInitSpec& init, bool dynamic,
                    const DeformationConfig& deformation = {});

/// For each candidate: copy the trainer, train `iterations` steps on the
/// training frames plus that candidate, and report test PSNR after minus before.
std::vector<double> oracle_error_drop(const Trainer& trainer, std::span<const Frame* const> train,
                                      std::span<const Frame* const> candidates, std::span<const Frame> test,
                                      int iterations);

}  // namespace nbv
