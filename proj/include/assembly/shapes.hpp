#pragma once

#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "assembly/world.hpp"

namespace assembly {

/// Two pillars of height H-1 on fixed anchors 2U apart, bridged by a 3U bar.
struct ArchSpec {
  int height = 3;
  Cell anchor_left{6, 11};
  Cell anchor_right{8, 11};

  Site site() const { return {{anchor_left, anchor_right}, true}; }
};

/// n cubes stacked on the anchor: green at the bottom, then yellow / red alternating.
struct TowerSpec {
  int n_cubes = 3;
  Cell anchor{7, 11};

  Site site() const { return {{anchor}, false}; }
};

struct PiecePose {
  int length = 1;
  Orientation orientation = Orientation::kAlongX;
  Vec3 position;
  int color = color::kRed;
};

/// A buildable goal layout. Pieces are listed in one valid assembly order.
struct CategoryInstance {
  std::string id;
  std::vector<PiecePose> pieces;

  std::vector<int> sorted_lengths() const;
};

nlohmann::ordered_json to_json(const CategoryInstance& instance);
CategoryInstance instance_from_json(const nlohmann::json& j);

class UnsupportedHeight : public std::invalid_argument {
 public:
  explicit UnsupportedHeight(int h);
};

enum class ArchVariant {
  kProgress,        // loose primitives elsewhere on the table are ignored
  kEpisodeSuccess,  // every primitive must be part of the arch
};

/// Ordered compositions of `total` into parts from {1, 2, 3}.
std::vector<std::vector<int>> compositions(int total);

int arch_piece_color(int length);
int tower_color(int level);

bool classify_arch(const WorldState& state, const ArchSpec& spec,
                   ArchVariant variant = ArchVariant::kProgress);
std::vector<CategoryInstance> enumerate_category(const ArchSpec& spec);
double completion_score(const WorldState& state, const ArchSpec& spec);
/// Same as above against a precomputed instance list.
double completion_score(const WorldState& state, const std::vector<CategoryInstance>& instances);
bool classify_tower(const WorldState& state, const TowerSpec& spec);
CategoryInstance tower_instance(const TowerSpec& spec);

/// Assembled state with primitive ids 0..n-1 in piece order.
WorldState instantiate(const CategoryInstance& instance, const Site& site);
/// The arch standing in `state`, when classify_arch (progress) holds.
std::optional<CategoryInstance> extract_arch_instance(const WorldState& state, const ArchSpec& spec);

/// (length, color) of a primitive to be scattered on the table.
using PieceKind = std::pair<int, int>;

/// Places `kinds` at random free loose table poses (ids start at `first_id`),
/// on top of the primitives already in `base`.
WorldState scatter(const std::vector<PieceKind>& kinds, const WorldState& base, std::mt19937_64& rng,
                   int first_id = 0);

/// Binds a shape category to the rest of the toolkit: layout, classifier,
/// instances and progress score.
class Task {
 public:
  enum class Kind { kArch, kTower };

  static Task arch(int height);
  /// One category spanning several arch heights on the same anchors.
  static Task multi_arch(std::vector<int> heights);
  static Task tower(int n_cubes);
  /// "arch3", "arch3,4,5", "tower5".
  static Task parse(const std::string& name);

  Kind kind() const { return kind_; }
  const std::string& name() const { return name_; }
  const Site& site() const { return site_; }
  const std::vector<int>& heights() const { return heights_; }
  const std::vector<CategoryInstance>& instances() const { return instances_; }
  int tower_cubes() const { return tower_.n_cubes; }

  bool is_goal(const WorldState& state, ArchVariant variant = ArchVariant::kProgress) const;
  double completion(const WorldState& state) const;
  std::optional<CategoryInstance> extract_instance(const WorldState& state) const;
  const CategoryInstance* find_instance(const std::string& id) const;

  /// Episode start: the instance's pieces scattered loose on the table.
  WorldState scatter_instance(const CategoryInstance& instance, std::mt19937_64& rng) const;
  /// Minimum piece count over instances whose multiset equals the state's.
  std::optional<int> oracle_steps(const WorldState& state) const;

 private:
  Kind kind_ = Kind::kArch;
  std::string name_;
  Site site_;
  std::vector<int> heights_;
  TowerSpec tower_;
  std::vector<CategoryInstance> instances_;
};

}  // namespace assembly
