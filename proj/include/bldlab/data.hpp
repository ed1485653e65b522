#pragma once

#include <map>
#include <string>

#include "bldlab/image.hpp"
#include "bldlab/mask.hpp"
#include "bldlab/optim.hpp"
#include "bldlab/schedule.hpp"

namespace bldlab {

// ---------------------------------------------------------------------------
// synthetic scenes
// ---------------------------------------------------------------------------

constexpr int kSceneSize = 64;
constexpr int kSceneClasses = 8;

struct Scene {
    Image image;
    PixelMask train_mask;
    Box fg_box;          // tight bounds of all foreground pixels
    int cls = 0;         // shape-count/type bucket in [0,8)
    uint64_t seed = 0;
};

// Pure function of the scene seed: smooth 2-color gradient background plus
// 1-3 foreground shapes, with a training mask sampled in the background.
Scene generate_scene(uint64_t scene_seed);

// Scene i uses the seed derived from (root_seed, "scene", i).
std::vector<Scene> generate_scenes(int count, uint64_t root_seed, int first_index = 0,
                                   int threads = 1);

// Writes <stem>.ppm, <stem>_mask.pgm per scene plus manifest.json.
void write_dataset(const std::string& dir, const std::vector<Scene>& scenes,
                   int count, uint64_t root_seed);

struct DatasetEntry {
    std::string stem;
    uint64_t seed = 0;
    int cls = 0;
    Box fg_box;
};

struct Dataset {
    std::string dir;
    uint64_t root_seed = 0;
    std::vector<DatasetEntry> entries;
};

Dataset read_manifest(const std::string& dir);
Image load_dataset_image(const Dataset& ds, size_t index);
PixelMask load_dataset_mask(const Dataset& ds, size_t index);

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

struct TensorRecord {
    std::string name;
    Shape shape;
    std::vector<float> data;
};

struct Checkpoint {
    uint32_t version = 1;
    std::vector<double> schedule_betas;  // empty when no schedule applies
    std::vector<TensorRecord> tensors;
    std::map<std::string, std::string> config;
};

// Versioned little-endian binary layout with a trailing FNV-1a checksum;
// round trips are bit-exact.
void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);

Checkpoint checkpoint_from_params(const ParameterSet<float>& params,
                                  const NoiseSchedule* schedule,
                                  std::map<std::string, std::string> config);

// Assigns stored tensors into the set by name; missing names or shape
// mismatches are rejected naming the failing field.
void assign_params_from_checkpoint(ParameterSet<float>& params, const Checkpoint& ck);

int config_int(const Checkpoint& ck, const std::string& key);
double config_double(const Checkpoint& ck, const std::string& key);
std::string config_str(const Checkpoint& ck, const std::string& key);

}  // namespace bldlab
