#pragma once

// Desk-scale experiment recipes. Every cell (variant x seed x fraction) is
// fully described by a JSON snapshot; replaying the snapshot retrains the
// teacher and student from scratch and reproduces the cell exactly.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "bssd/dataset.hpp"
#include "bssd/distill.hpp"
#include "bssd/metrics.hpp"
#include "bssd/model.hpp"

namespace bssd {

struct TaskConfig {
  // spiral | gaussian2 | gaussian3 | idx
  std::string dataset = "spiral";
  std::size_t num_classes = 2;
  std::size_t train_per_class = 150;
  std::size_t test_per_class = 1000;
  double noise = 0.06;
  double spiral_turns = 1.25;
  double gaussian_separation = 2.0;
  std::uint64_t data_seed = 7;
  // IDX inputs (test files optional; otherwise the last 20% is held out).
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;

  // MLP hidden widths; ignored for idx, which uses the tiny CNN.
  std::vector<std::size_t> teacher_hidden{64, 64, 64};
  std::vector<std::size_t> student_hidden{16, 16};
  std::size_t teacher_conv1 = 8, teacher_conv2 = 16;
  std::size_t student_conv1 = 2, student_conv2 = 4;
  std::uint64_t teacher_seed = 1000;
  std::size_t teacher_epochs = 150;
};

struct Variant {
  std::string name;
  Method method = Method::Bss;
  SelectionPolicy selection = SelectionPolicy::Proposed;
  TargetPolicy target = TargetPolicy::TeacherProbability;
  SampleKind sample_kind = SampleKind::Bss;
};

// Named variants: original, hinton, bss (alias proposed), all-selection,
// random-selection, random-target, random-noise, fgsm, deepfool, l2-minimize.
Variant variant_by_name(const std::string& name);

// Distillation knobs scaled to the desk datasets (a few hundred samples):
// batch 64 with 16 base samples keeps the 1:4 selection ratio, and the
// learning rate is halved since the small MLPs carry no normalization layers.
DistillConfig desk_distill_defaults();

struct ExperimentConfig {
  TaskConfig task;
  DistillConfig distill = desk_distill_defaults();
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  std::vector<double> fractions{1.0, 0.8, 0.6, 0.4, 0.2};
  std::vector<std::string> variants;  // empty: the recipe's default set
  AttackConfig similarity_attack{0.3, 0.01, 50, false};
  std::size_t similarity_samples = 200;
  std::filesystem::path teacher_cache;  // optional model file
  std::filesystem::path output_dir;     // per-cell logs and dumps when set
  std::size_t grid_resolution = 101;
  double grid_extent = 2.5;
};

struct CellSpec {
  std::string recipe;
  Variant variant;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  bool measure_similarity = false;
  TaskConfig task;
  DistillConfig distill;
  AttackConfig similarity_attack;
  std::size_t similarity_samples = 0;
};

struct ExperimentResult {
  std::string recipe;
  std::string method;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  double train_accuracy = 0.0;
  double test_accuracy = 0.0;
  double teacher_test_accuracy = 0.0;
  std::optional<double> magsim;
  std::optional<double> angsim;
  std::size_t similarity_pairs = 0;
  double attack_success_rate = 0.0;
  std::string config_snapshot;  // JSON; replay input
  double runtime_seconds = 0.0;
};

struct Aggregate {
  std::string method;
  double fraction = 1.0;
  std::size_t runs = 0;
  double mean_accuracy = 0.0;
  double stddev_accuracy = 0.0;
  std::optional<double> mean_magsim;
  std::optional<double> mean_angsim;
};

Dataset build_dataset(const TaskConfig& task);
ClassifierSpec teacher_spec(const TaskConfig& task, const Dataset& data);
ClassifierSpec student_spec(const TaskConfig& task, const Dataset& data);
// Trains (or loads from `cache` when it exists) the task's teacher.
ClassifierModel obtain_teacher(const TaskConfig& task, const DistillConfig& base,
                               const std::filesystem::path& cache = {});
// Drops teachers memoized in this process; later calls retrain or reload.
void clear_teacher_memo();
// Supervised training recipe for the teacher derived from the distill knobs.
DistillConfig teacher_training_config(const TaskConfig& task, const DistillConfig& base);

// `trained`, when given, receives the trained student.
ExperimentResult run_cell(const CellSpec& cell, const ClassifierModel* teacher = nullptr,
                          const std::filesystem::path& output_dir = {}, ClassifierModel* trained = nullptr);
ExperimentResult replay(const std::string& config_snapshot);

// Recipes: main, sweep, similarity, attacks, ablation, grid-dump.
std::vector<std::string> recipe_names();
std::vector<CellSpec> plan_recipe(const std::string& recipe, const ExperimentConfig& config);

using ProgressFn = std::function<void(const ExperimentResult&)>;
std::vector<ExperimentResult> run_experiment(const std::string& recipe, const ExperimentConfig& config,
                                             const ProgressFn& progress = {});

std::vector<Aggregate> aggregate(const std::vector<ExperimentResult>& results);

// Mean BSS perturbation norm of the teacher over up to `limit` training samples.
double mean_bss_perturbation_norm(const ClassifierModel& teacher, const Split& split, const AttackConfig& attack,
                                  std::size_t limit, std::uint64_t seed);

// Logits of each model over a square grid of 2-D inputs:
// x,y,model,logit_0..logit_{K-1}
void write_grid_dump(std::ostream& out, std::span<const std::pair<std::string, const ClassifierModel*>> models,
                     std::size_t resolution, double extent);

void write_results_json(std::ostream& out, const std::vector<ExperimentResult>& results,
                        const std::vector<Aggregate>& aggregates);
void write_results_csv(std::ostream& out, const std::vector<ExperimentResult>& results);

// JSON round-trip of the configuration structures (strings hold JSON text).
std::string to_json(const ExperimentConfig& config);
ExperimentConfig experiment_config_from_json(const std::string& text);
std::string to_json(const CellSpec& cell);
CellSpec cell_from_json(const std::string& text);
std::string to_json(const DistillConfig& config);
DistillConfig distill_config_from_json(const std::string& text);

// Writes via a temporary file and rename.
void write_file_atomic(const std::filesystem::path& path, const std::string& contents);

}  // namespace bssd
