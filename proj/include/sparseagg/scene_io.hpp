#pragma once

#include <string>
#include <vector>

#include "sparseagg/config.hpp"
#include "sparseagg/sampling.hpp"
#include "sparseagg/scene.hpp"

namespace sparseagg {

// Scene files are JSON documents with the schema
//   {seed, clock: {timestamps, nominal_interval},
//    cameras: [{intrinsics, rotation, translation, width, height, strides}],
//    ego_poses: [{rotation, translation}], boxes: [{center, dims, yaw,
//    velocity, class_id}], features_file?}
// Serialization is byte-stable for a given scene.
std::string scene_to_json(const Scene& scene, const std::string& features_file = "");
Scene scene_from_json(const std::string& text, std::string* features_file = nullptr);

void save_scene(const Scene& scene, const std::string& path, const std::string& features_file = "");
Scene load_scene(const std::string& path, std::string* features_file = nullptr);

// Raw little-endian float payload of all maps in queue order, preceded by the
// per-map dimensions; referenced from a scene file via features_file.
void save_feature_cache(const FeatureQueue<float>& queue, const std::string& path);

// Rebuilds the queue for `scene`, reading map values from the cache instead
// of rendering.
FeatureQueue<float> load_feature_cache(const Scene& scene, const RunConfig& cfg,
                                       const std::string& path);

// Renders or loads the cached queue depending on the scene file contents.
FeatureQueue<float> queue_for_scene(const Scene& scene, const RunConfig& cfg,
                                    const std::string& features_file);

}  // namespace sparseagg
