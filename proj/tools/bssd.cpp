// bssd: command-line front end for teacher training, distillation runs and
// the experiment recipes.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "bssd/error.hpp"
#include "bssd/experiment.hpp"

namespace fs = std::filesystem;
using namespace bssd;

namespace {

// Flags left unset keep the preset (or config-file) value.
struct Overrides {
  std::string preset = "desk";
  std::string config_file;

  std::optional<std::string> dataset;
  std::optional<std::size_t> classes, train_per_class, test_per_class, teacher_epochs;
  std::optional<double> noise, spiral_turns, separation;
  std::optional<std::uint64_t> data_seed, teacher_seed;
  std::optional<std::vector<std::size_t>> teacher_hidden, student_hidden;
  std::string idx_train_images, idx_train_labels, idx_test_images, idx_test_labels;

  std::optional<double> temperature, alpha_start, alpha_end, beta_start, beta_zero;
  std::optional<std::size_t> base_samples, batch_size, epochs, max_iterations;
  std::optional<double> eta, epsilon, lr, lr_decay, momentum, weight_decay;
  std::optional<double> noise_norm, fgsm_step;

  std::optional<std::vector<std::uint64_t>> seeds;
  std::optional<std::vector<double>> fractions;
  std::optional<std::vector<std::string>> variants;
  std::optional<std::size_t> similarity_samples, grid_resolution;
  std::string teacher_cache;
  std::string out_dir;
};

void add_task_flags(CLI::App& app, Overrides& o) {
  app.add_option("--config", o.config_file, "JSON experiment config (flags override it)")->check(CLI::ExistingFile);
  app.add_option("--preset", o.preset, "Base defaults: full-scale training values or the desk-scale recipe")
      ->check(CLI::IsMember({"full", "desk"}));
  app.add_option("--dataset", o.dataset, "spiral | gaussian2 | gaussian3 | idx");
  app.add_option("--classes", o.classes, "Class count K");
  app.add_option("--train-per-class", o.train_per_class);
  app.add_option("--test-per-class", o.test_per_class);
  app.add_option("--noise", o.noise, "Spiral noise");
  app.add_option("--spiral-turns", o.spiral_turns);
  app.add_option("--separation", o.separation, "Gaussian center distance from the origin");
  app.add_option("--data-seed", o.data_seed);
  app.add_option("--teacher-hidden", o.teacher_hidden)->delimiter(',');
  app.add_option("--student-hidden", o.student_hidden)->delimiter(',');
  app.add_option("--teacher-seed", o.teacher_seed);
  app.add_option("--teacher-epochs", o.teacher_epochs);
  app.add_option("--idx-train-images", o.idx_train_images);
  app.add_option("--idx-train-labels", o.idx_train_labels);
  app.add_option("--idx-test-images", o.idx_test_images);
  app.add_option("--idx-test-labels", o.idx_test_labels);
  app.add_option("--teacher-cache", o.teacher_cache, "Model file used to cache the teacher");
}

void add_distill_flags(CLI::App& app, Overrides& o) {
  app.add_option("--temperature", o.temperature, "T (full preset: 3)");
  app.add_option("--alpha-start", o.alpha_start, "(full preset: 4)");
  app.add_option("--alpha-end", o.alpha_end, "(full preset: 1)");
  app.add_option("--beta-start", o.beta_start, "(full preset: 2)");
  app.add_option("--beta-zero", o.beta_zero, "Epoch fraction where beta reaches 0 (full preset: 0.75)");
  app.add_option("--base-samples", o.base_samples, "N (full preset: 64)");
  app.add_option("--batch-size", o.batch_size, "(full preset: 256)");
  app.add_option("--eta", o.eta, "Attack learning rate (full preset: 0.3)");
  app.add_option("--epsilon", o.epsilon, "Attack offset (default 0.01)");
  app.add_option("--max-iterations", o.max_iterations, "Attack iteration budget (full preset: 10)");
  app.add_option("--epochs", o.epochs, "(full preset: 80)");
  app.add_option("--lr", o.lr, "Initial learning rate (full preset: 0.1)");
  app.add_option("--lr-decay", o.lr_decay, "(full preset: 0.1 at 1/2 and 3/4)");
  app.add_option("--momentum", o.momentum, "(full preset: 0.9)");
  app.add_option("--weight-decay", o.weight_decay, "(full preset: 1e-4)");
  app.add_option("--noise-norm", o.noise_norm, "Random-noise norm; 0 matches the mean BSS norm");
  app.add_option("--fgsm-step", o.fgsm_step);
}

void add_grid_flags(CLI::App& app, Overrides& o) {
  app.add_option("--seeds", o.seeds, "Seed list")->delimiter(',');
  app.add_option("--variants", o.variants, "Variant names")->delimiter(',');
  app.add_option("--similarity-samples", o.similarity_samples);
  app.add_option("--out-dir", o.out_dir, "Directory for results and per-epoch logs");
}

template <class T>
void apply(const std::optional<T>& v, T& field) {
  if (v) field = *v;
}

ExperimentConfig resolve(const Overrides& o) {
  ExperimentConfig c;
  if (o.preset == "full") c.distill = DistillConfig{};
  if (!o.config_file.empty()) {
    std::ifstream in(o.config_file);
    std::stringstream ss;
    ss << in.rdbuf();
    // Keys in the file replace the preset; everything else keeps it.
    auto merged = nlohmann::json::parse(to_json(c));
    merged.merge_patch(nlohmann::json::parse(ss.str()));
    c = experiment_config_from_json(merged.dump());
  }
  auto& t = c.task;
  apply(o.dataset, t.dataset);
  apply(o.classes, t.num_classes);
  apply(o.train_per_class, t.train_per_class);
  apply(o.test_per_class, t.test_per_class);
  apply(o.noise, t.noise);
  apply(o.spiral_turns, t.spiral_turns);
  apply(o.separation, t.gaussian_separation);
  apply(o.data_seed, t.data_seed);
  apply(o.teacher_hidden, t.teacher_hidden);
  apply(o.student_hidden, t.student_hidden);
  apply(o.teacher_seed, t.teacher_seed);
  apply(o.teacher_epochs, t.teacher_epochs);
  if (!o.idx_train_images.empty()) t.idx_train_images = o.idx_train_images;
  if (!o.idx_train_labels.empty()) t.idx_train_labels = o.idx_train_labels;
  if (!o.idx_test_images.empty()) t.idx_test_images = o.idx_test_images;
  if (!o.idx_test_labels.empty()) t.idx_test_labels = o.idx_test_labels;

  auto& d = c.distill;
  apply(o.temperature, d.temperature);
  apply(o.alpha_start, d.alpha_start);
  apply(o.alpha_end, d.alpha_end);
  apply(o.beta_start, d.beta_start);
  apply(o.beta_zero, d.beta_zero_fraction);
  apply(o.base_samples, d.base_samples);
  apply(o.batch_size, d.batch_size);
  apply(o.eta, d.attack.learning_rate);
  apply(o.epsilon, d.attack.offset);
  apply(o.max_iterations, d.attack.max_iterations);
  apply(o.epochs, d.epochs);
  apply(o.lr, d.learning_rate);
  apply(o.lr_decay, d.lr_decay);
  apply(o.momentum, d.momentum);
  apply(o.weight_decay, d.weight_decay);
  apply(o.noise_norm, d.alt.noise_norm);
  apply(o.fgsm_step, d.alt.fgsm_step);
  d.validate();

  apply(o.seeds, c.seeds);
  apply(o.fractions, c.fractions);
  apply(o.variants, c.variants);
  apply(o.similarity_samples, c.similarity_samples);
  apply(o.grid_resolution, c.grid_resolution);
  if (!o.teacher_cache.empty()) c.teacher_cache = o.teacher_cache;
  if (!o.out_dir.empty()) c.output_dir = o.out_dir;
  return c;
}

void emit(const fs::path& out_dir, const std::string& name, const std::string& contents) {
  if (out_dir.empty()) return;
  write_file_atomic(out_dir / name, contents);
}

int run_recipe(const std::string& recipe, const Overrides& o) {
  const ExperimentConfig cfg = resolve(o);
  const auto results = run_experiment(recipe, cfg, [](const ExperimentResult& r) {
    std::cerr << r.method << " seed " << r.seed << " fraction " << r.fraction << " test_acc " << r.test_accuracy
              << '\n';
  });
  const auto aggs = aggregate(results);
  std::ostringstream js, csv;
  write_results_json(js, results, aggs);
  write_results_csv(csv, results);
  emit(cfg.output_dir, "results.json", js.str());
  emit(cfg.output_dir, "results.csv", csv.str());
  emit(cfg.output_dir, "config.json", to_json(cfg));
  for (const auto& a : aggs) {
    std::cout << a.method << " fraction=" << a.fraction << " runs=" << a.runs << " acc=" << a.mean_accuracy << " +- "
              << a.stddev_accuracy;
    if (a.mean_magsim) std::cout << " magsim=" << *a.mean_magsim << " angsim=" << *a.mean_angsim;
    std::cout << '\n';
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Boundary supporting sample distillation toolkit"};
  app.require_subcommand(1);
  Overrides o;

  auto* teacher_cmd = app.add_subcommand("train-teacher", "Train the task's teacher and save it");
  std::string teacher_out;
  add_task_flags(*teacher_cmd, o);
  add_distill_flags(*teacher_cmd, o);
  teacher_cmd->add_option("--out", teacher_out, "Model file")->required();

  auto* distill_cmd = app.add_subcommand("distill", "Distill one student");
  std::string method = "bss", student_out;
  std::uint64_t seed = 0;
  double fraction = 1.0;
  bool with_similarity = false;
  add_task_flags(*distill_cmd, o);
  add_distill_flags(*distill_cmd, o);
  distill_cmd->add_option("--method", method, "original | hinton | bss | ablation or attack variant");
  distill_cmd->add_option("--seed", seed);
  distill_cmd->add_option("--fraction", fraction, "Training-set fraction")->check(CLI::Range(0.0, 1.0));
  distill_cmd->add_option("--out-dir", o.out_dir);
  distill_cmd->add_option("--save-student", student_out);
  distill_cmd->add_flag("--similarity", with_similarity, "Also measure MagSim/AngSim against the teacher");

  auto* sim_cmd = app.add_subcommand("similarity", "Boundary similarity of two saved models, or the similarity recipe");
  std::string first_model, second_model;
  add_task_flags(*sim_cmd, o);
  add_distill_flags(*sim_cmd, o);
  add_grid_flags(*sim_cmd, o);
  sim_cmd->add_option("--first", first_model, "First model file");
  sim_cmd->add_option("--second", second_model, "Second model file");

  auto* sweep_cmd = app.add_subcommand("sweep", "Reduced-data sweep");
  add_task_flags(*sweep_cmd, o);
  add_distill_flags(*sweep_cmd, o);
  add_grid_flags(*sweep_cmd, o);
  sweep_cmd->add_option("--fractions", o.fractions)->delimiter(',');

  auto* main_cmd = app.add_subcommand("compare", "Main comparison: original, hinton, bss");
  auto* attacks_cmd = app.add_subcommand("compare-attacks", "Boundary samples from alternative attacks");
  auto* ablate_cmd = app.add_subcommand("ablate", "Selection and target-class ablation");
  auto* grid_cmd = app.add_subcommand("grid-dump", "Logits of teacher and students over a 2-D grid");
  for (auto* cmd : {main_cmd, attacks_cmd, ablate_cmd, grid_cmd}) {
    add_task_flags(*cmd, o);
    add_distill_flags(*cmd, o);
    add_grid_flags(*cmd, o);
  }
  grid_cmd->add_option("--resolution", o.grid_resolution);

  auto* replay_cmd = app.add_subcommand("replay", "Re-run one cell from its JSON snapshot");
  std::string snapshot;
  replay_cmd->add_option("snapshot", snapshot, "Snapshot JSON file")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (*teacher_cmd) {
      const ExperimentConfig cfg = resolve(o);
      const ClassifierModel teacher = obtain_teacher(cfg.task, cfg.distill);
      save_model(teacher, teacher_out);
      const Dataset data = build_dataset(cfg.task);
      nlohmann::json j{{"model", teacher_out},
                       {"parameters", teacher.parameter_count()},
                       {"train_accuracy", accuracy(teacher, data.train)},
                       {"test_accuracy", accuracy(teacher, data.test)}};
      std::cout << j.dump(2) << '\n';
      return 0;
    }
    if (*distill_cmd) {
      const ExperimentConfig cfg = resolve(o);
      CellSpec cell;
      cell.recipe = "distill";
      cell.variant = variant_by_name(method);
      cell.seed = seed;
      cell.fraction = fraction;
      cell.measure_similarity = with_similarity;
      cell.task = cfg.task;
      cell.distill = cfg.distill;
      cell.similarity_attack = cfg.similarity_attack;
      cell.similarity_samples = cfg.similarity_samples;
      if (fraction <= 0.0) throw ValidationError("--fraction must be positive");
      const ClassifierModel teacher = obtain_teacher(cfg.task, cfg.distill, cfg.teacher_cache);
      ClassifierModel student = teacher;
      const ExperimentResult r = run_cell(cell, &teacher, cfg.output_dir, &student);
      std::ostringstream js;
      write_results_json(js, {r}, aggregate({r}));
      emit(cfg.output_dir, "summary.json", js.str());
      emit(cfg.output_dir, "snapshot.json", r.config_snapshot);
      if (!student_out.empty()) save_model(student, student_out);
      std::cout << js.str();
      return 0;
    }
    if (*sim_cmd) {
      if (first_model.empty() != second_model.empty()) throw ValidationError("--first and --second go together");
      if (first_model.empty()) return run_recipe("similarity", o);
      const ExperimentConfig cfg = resolve(o);
      const ClassifierModel a = load_model(first_model), b = load_model(second_model);
      const Dataset data = build_dataset(cfg.task);
      const SimilarityReport rep = compare_classifiers(a, b, data.test, cfg.similarity_attack);
      std::ostringstream js, csv;
      write_similarity_json(js, rep);
      write_similarity_csv(csv, rep);
      emit(cfg.output_dir, "similarity.json", js.str());
      emit(cfg.output_dir, "similarity_pairs.csv", csv.str());
      std::cout << js.str();
      return 0;
    }
    if (*sweep_cmd) return run_recipe("sweep", o);
    if (*main_cmd) return run_recipe("main", o);
    if (*attacks_cmd) return run_recipe("attacks", o);
    if (*ablate_cmd) return run_recipe("ablation", o);
    if (*grid_cmd) return run_recipe("grid-dump", o);
    if (*replay_cmd) {
      std::ifstream in(snapshot);
      std::stringstream ss;
      ss << in.rdbuf();
      const ExperimentResult r = replay(ss.str());
      std::ostringstream js;
      write_results_json(js, {r}, aggregate({r}));
      std::cout << js.str();
      return 0;
    }
  } catch (const ValidationError& e) {
    std::cerr << "invalid input: " << e.what() << '\n';
    return 2;
  } catch (const nlohmann::json::exception& e) {
    std::cerr << "invalid config: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
