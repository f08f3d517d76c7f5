#include "bssd/experiment.hpp"

#include <chrono>
#include <cmath>
#include <fstream>
#include <map>
#include <mutex>
#include <numeric>
#include <ostream>
#include <sstream>

#include "bssd/error.hpp"
#include "bssd/stats.hpp"
#include "json.hpp"

namespace bssd {

using nlohmann::json;

// ---------------------------------------------------------------------------
// JSON mapping. Missing keys keep their defaults.

namespace {

template <class T>
void read(const json& j, const char* key, T& field) {
  if (j.contains(key)) field = j.at(key).get<T>();
}

json attack_json(const AttackConfig& a) {
  return {{"learning_rate", a.learning_rate},
          {"offset", a.offset},
          {"max_iterations", a.max_iterations},
          {"record_trajectory", a.record_trajectory}};
}

AttackConfig attack_from(const json& j, AttackConfig a = {}) {
  read(j, "learning_rate", a.learning_rate);
  read(j, "offset", a.offset);
  read(j, "max_iterations", a.max_iterations);
  read(j, "record_trajectory", a.record_trajectory);
  return a;
}

json alt_json(const AltSampleConfig& a) {
  return {{"noise_norm", a.noise_norm},
          {"fgsm_step", a.fgsm_step},
          {"deepfool_overshoot", a.deepfool_overshoot},
          {"deepfool_max_iterations", a.deepfool_max_iterations},
          {"l2_penalty", a.l2_penalty}};
}

AltSampleConfig alt_from(const json& j) {
  AltSampleConfig a;
  read(j, "noise_norm", a.noise_norm);
  read(j, "fgsm_step", a.fgsm_step);
  read(j, "deepfool_overshoot", a.deepfool_overshoot);
  read(j, "deepfool_max_iterations", a.deepfool_max_iterations);
  read(j, "l2_penalty", a.l2_penalty);
  return a;
}

json distill_json(const DistillConfig& c) {
  return {{"method", to_string(c.method)},
          {"temperature", c.temperature},
          {"alpha_start", c.alpha_start},
          {"alpha_end", c.alpha_end},
          {"beta_start", c.beta_start},
          {"beta_zero_fraction", c.beta_zero_fraction},
          {"base_samples", c.base_samples},
          {"batch_size", c.batch_size},
          {"attack", attack_json(c.attack)},
          {"epochs", c.epochs},
          {"learning_rate", c.learning_rate},
          {"lr_decay", c.lr_decay},
          {"lr_drop_fractions", c.lr_drop_fractions},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"seed", c.seed},
          {"selection", to_string(c.selection)},
          {"target", to_string(c.target)},
          {"sample_kind", to_string(c.sample_kind)},
          {"alt", alt_json(c.alt)}};
}

DistillConfig distill_from(const json& j, DistillConfig c = {}) {
  if (j.contains("method")) c.method = parse_method(j.at("method").get<std::string>());
  read(j, "temperature", c.temperature);
  read(j, "alpha_start", c.alpha_start);
  read(j, "alpha_end", c.alpha_end);
  read(j, "beta_start", c.beta_start);
  read(j, "beta_zero_fraction", c.beta_zero_fraction);
  read(j, "base_samples", c.base_samples);
  read(j, "batch_size", c.batch_size);
  if (j.contains("attack")) c.attack = attack_from(j.at("attack"));
  read(j, "epochs", c.epochs);
  read(j, "learning_rate", c.learning_rate);
  read(j, "lr_decay", c.lr_decay);
  read(j, "lr_drop_fractions", c.lr_drop_fractions);
  read(j, "momentum", c.momentum);
  read(j, "weight_decay", c.weight_decay);
  read(j, "seed", c.seed);
  if (j.contains("selection")) c.selection = parse_selection(j.at("selection").get<std::string>());
  if (j.contains("target")) c.target = parse_target(j.at("target").get<std::string>());
  if (j.contains("sample_kind")) c.sample_kind = parse_sample_kind(j.at("sample_kind").get<std::string>());
  if (j.contains("alt")) c.alt = alt_from(j.at("alt"));
  return c;
}

json task_json(const TaskConfig& t) {
  return {{"dataset", t.dataset},
          {"num_classes", t.num_classes},
          {"train_per_class", t.train_per_class},
          {"test_per_class", t.test_per_class},
          {"noise", t.noise},
          {"spiral_turns", t.spiral_turns},
          {"gaussian_separation", t.gaussian_separation},
          {"data_seed", t.data_seed},
          {"idx_train_images", t.idx_train_images},
          {"idx_train_labels", t.idx_train_labels},
          {"idx_test_images", t.idx_test_images},
          {"idx_test_labels", t.idx_test_labels},
          {"teacher_hidden", t.teacher_hidden},
          {"student_hidden", t.student_hidden},
          {"teacher_conv1", t.teacher_conv1},
          {"teacher_conv2", t.teacher_conv2},
          {"student_conv1", t.student_conv1},
          {"student_conv2", t.student_conv2},
          {"teacher_seed", t.teacher_seed},
          {"teacher_epochs", t.teacher_epochs}};
}

TaskConfig task_from(const json& j) {
  TaskConfig t;
  read(j, "dataset", t.dataset);
  read(j, "num_classes", t.num_classes);
  read(j, "train_per_class", t.train_per_class);
  read(j, "test_per_class", t.test_per_class);
  read(j, "noise", t.noise);
  read(j, "spiral_turns", t.spiral_turns);
  read(j, "gaussian_separation", t.gaussian_separation);
  read(j, "data_seed", t.data_seed);
  read(j, "idx_train_images", t.idx_train_images);
  read(j, "idx_train_labels", t.idx_train_labels);
  read(j, "idx_test_images", t.idx_test_images);
  read(j, "idx_test_labels", t.idx_test_labels);
  read(j, "teacher_hidden", t.teacher_hidden);
  read(j, "student_hidden", t.student_hidden);
  read(j, "teacher_conv1", t.teacher_conv1);
  read(j, "teacher_conv2", t.teacher_conv2);
  read(j, "student_conv1", t.student_conv1);
  read(j, "student_conv2", t.student_conv2);
  read(j, "teacher_seed", t.teacher_seed);
  read(j, "teacher_epochs", t.teacher_epochs);
  return t;
}

json variant_json(const Variant& v) {
  return {{"name", v.name},
          {"method", to_string(v.method)},
          {"selection", to_string(v.selection)},
          {"target", to_string(v.target)},
          {"sample_kind", to_string(v.sample_kind)}};
}

Variant variant_from(const json& j) {
  Variant v;
  read(j, "name", v.name);
  if (j.contains("method")) v.method = parse_method(j.at("method").get<std::string>());
  if (j.contains("selection")) v.selection = parse_selection(j.at("selection").get<std::string>());
  if (j.contains("target")) v.target = parse_target(j.at("target").get<std::string>());
  if (j.contains("sample_kind")) v.sample_kind = parse_sample_kind(j.at("sample_kind").get<std::string>());
  return v;
}

json parse(const std::string& text, const char* what) {
  try {
    return json::parse(text);
  } catch (const json::exception& e) {
    throw ValidationError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

std::string to_json(const DistillConfig& config) { return distill_json(config).dump(2); }

DistillConfig distill_config_from_json(const std::string& text) {
  try {
    return distill_from(parse(text, "distill config"));
  } catch (const json::exception& e) {
    throw ValidationError(std::string("distill config: ") + e.what());
  }
}

std::string to_json(const ExperimentConfig& c) {
  json j{{"task", task_json(c.task)},
         {"distill", distill_json(c.distill)},
         {"seeds", c.seeds},
         {"fractions", c.fractions},
         {"variants", c.variants},
         {"similarity_attack", attack_json(c.similarity_attack)},
         {"similarity_samples", c.similarity_samples},
         {"teacher_cache", c.teacher_cache.string()},
         {"output_dir", c.output_dir.string()},
         {"grid_resolution", c.grid_resolution},
         {"grid_extent", c.grid_extent}};
  return j.dump(2);
}

ExperimentConfig experiment_config_from_json(const std::string& text) {
  const json j = parse(text, "experiment config");
  try {
    ExperimentConfig c;
    if (j.contains("task")) c.task = task_from(j.at("task"));
    if (j.contains("distill")) c.distill = distill_from(j.at("distill"), c.distill);
    read(j, "seeds", c.seeds);
    read(j, "fractions", c.fractions);
    read(j, "variants", c.variants);
    if (j.contains("similarity_attack")) c.similarity_attack = attack_from(j.at("similarity_attack"), c.similarity_attack);
    read(j, "similarity_samples", c.similarity_samples);
    if (j.contains("teacher_cache")) c.teacher_cache = j.at("teacher_cache").get<std::string>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    read(j, "grid_resolution", c.grid_resolution);
    read(j, "grid_extent", c.grid_extent);
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("experiment config: ") + e.what());
  }
}

std::string to_json(const CellSpec& cell) {
  json j{{"recipe", cell.recipe},
         {"variant", variant_json(cell.variant)},
         {"seed", cell.seed},
         {"fraction", cell.fraction},
         {"measure_similarity", cell.measure_similarity},
         {"task", task_json(cell.task)},
         {"distill", distill_json(cell.distill)},
         {"similarity_attack", attack_json(cell.similarity_attack)},
         {"similarity_samples", cell.similarity_samples}};
  return j.dump();
}

CellSpec cell_from_json(const std::string& text) {
  const json j = parse(text, "cell snapshot");
  try {
    CellSpec c;
    read(j, "recipe", c.recipe);
    if (j.contains("variant")) c.variant = variant_from(j.at("variant"));
    read(j, "seed", c.seed);
    read(j, "fraction", c.fraction);
    read(j, "measure_similarity", c.measure_similarity);
    if (j.contains("task")) c.task = task_from(j.at("task"));
    if (j.contains("distill")) c.distill = distill_from(j.at("distill"));
    if (j.contains("similarity_attack")) c.similarity_attack = attack_from(j.at("similarity_attack"));
    read(j, "similarity_samples", c.similarity_samples);
    return c;
  } catch (const json::exception& e) {
    throw ValidationError(std::string("cell snapshot: ") + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& contents) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + tmp.string());
    out << contents;
    if (!out) throw Error("write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

// ---------------------------------------------------------------------------
// Tasks and models.

DistillConfig desk_distill_defaults() {
  DistillConfig c;
  c.batch_size = 64;
  c.base_samples = 16;
  c.learning_rate = 0.05;
  c.epochs = 60;
  return c;
}

Variant variant_by_name(const std::string& name) {
  Variant v;
  v.name = name;
  if (name == "original") {
    v.method = Method::Original;
  } else if (name == "hinton") {
    v.method = Method::Hinton;
  } else if (name == "bss" || name == "proposed") {
    v.name = "bss";
  } else if (name == "all-selection") {
    v.selection = SelectionPolicy::All;
  } else if (name == "random-selection") {
    v.selection = SelectionPolicy::Random;
  } else if (name == "random-target") {
    v.target = TargetPolicy::Uniform;
  } else if (name == "random-noise" || name == "fgsm" || name == "deepfool" || name == "l2-minimize") {
    v.sample_kind = parse_sample_kind(name);
  } else {
    throw ValidationError("unknown variant '" + name + "'");
  }
  return v;
}

Dataset build_dataset(const TaskConfig& task) {
  Dataset ds;
  if (task.dataset == "spiral") {
    SpiralOptions opt;
    opt.turns = task.spiral_turns;
    ds = generate_spirals(task.num_classes, task.train_per_class, task.noise, task.data_seed, task.test_per_class, opt);
  } else if (task.dataset == "gaussian2" || task.dataset == "gaussian3") {
    const std::size_t k = task.dataset == "gaussian2" ? 2 : 3;
    Tensor centers(Shape{k, 2});
    for (std::size_t c = 0; c < k; ++c) {
      const double angle = 2.0 * 3.14159265358979323846 * static_cast<double>(c) / static_cast<double>(k);
      centers[c * 2] = task.gaussian_separation * std::cos(angle);
      centers[c * 2 + 1] = task.gaussian_separation * std::sin(angle);
    }
    if (k == 2) {
      centers = Tensor::matrix({{task.gaussian_separation, 0.0}, {-task.gaussian_separation, 0.0}});
    }
    ds = generate_gaussians(k, task.train_per_class, centers, Tensor::matrix({{1.0, 0.0}, {0.0, 1.0}}), task.data_seed,
                            task.test_per_class);
  } else if (task.dataset == "idx") {
    Dataset train = load_idx(task.idx_train_images, task.idx_train_labels, task.num_classes);
    if (!task.idx_test_images.empty()) {
      Dataset test = load_idx(task.idx_test_images, task.idx_test_labels, task.num_classes);
      ds.train = std::move(train.train);
      ds.test = std::move(test.train);
    } else {
      const std::size_t n = train.train.size();
      const std::size_t cut = n - n / 5;
      std::vector<std::size_t> a(cut), b(n - cut);
      std::iota(a.begin(), a.end(), 0);
      std::iota(b.begin(), b.end(), cut);
      ds.train.inputs = train.train.inputs.gather_rows(a);
      ds.test.inputs = train.train.inputs.gather_rows(b);
      ds.train.labels.assign(train.train.labels.begin(), train.train.labels.begin() + static_cast<std::ptrdiff_t>(cut));
      ds.test.labels.assign(train.train.labels.begin() + static_cast<std::ptrdiff_t>(cut), train.train.labels.end());
    }
    ds.num_classes = task.num_classes;
    ds.train = with_channel_axis(std::move(ds.train));
    ds.test = with_channel_axis(std::move(ds.test));
  } else {
    throw ValidationError("unknown dataset '" + task.dataset + "'");
  }
  return normalize(std::move(ds));
}

namespace {

bool is_image(const Dataset& data) { return data.train.feature_shape().size() == 3; }

}  // namespace

ClassifierSpec teacher_spec(const TaskConfig& task, const Dataset& data) {
  const Shape fs = data.train.feature_shape();
  if (is_image(data)) {
    return tiny_cnn_spec(fs[0], fs[1], fs[2], task.teacher_conv1, task.teacher_conv2, data.num_classes);
  }
  return mlp_spec(volume(fs), task.teacher_hidden, data.num_classes);
}

ClassifierSpec student_spec(const TaskConfig& task, const Dataset& data) {
  const Shape fs = data.train.feature_shape();
  if (is_image(data)) {
    return tiny_cnn_spec(fs[0], fs[1], fs[2], task.student_conv1, task.student_conv2, data.num_classes);
  }
  return mlp_spec(volume(fs), task.student_hidden, data.num_classes);
}

DistillConfig teacher_training_config(const TaskConfig& task, const DistillConfig& base) {
  DistillConfig c = base;
  c.method = Method::Original;
  c.epochs = task.teacher_epochs;
  c.seed = task.teacher_seed;
  return c;
}

namespace {

std::mutex& teacher_mutex() {
  static std::mutex m;
  return m;
}

std::map<std::string, ClassifierModel>& teacher_memo() {
  static std::map<std::string, ClassifierModel> memo;
  return memo;
}

std::string teacher_key(const TaskConfig& task, const DistillConfig& tcfg) {
  return task_json(task).dump() + distill_json(tcfg).dump();
}

}  // namespace

void clear_teacher_memo() {
  std::lock_guard lock(teacher_mutex());
  teacher_memo().clear();
}

ClassifierModel obtain_teacher(const TaskConfig& task, const DistillConfig& base, const std::filesystem::path& cache) {
  const DistillConfig tcfg = teacher_training_config(task, base);
  const std::string key = teacher_key(task, tcfg);
  {
    std::lock_guard lock(teacher_mutex());
    if (auto it = teacher_memo().find(key); it != teacher_memo().end()) {
      if (!cache.empty() && !std::filesystem::exists(cache)) save_model(it->second, cache);
      return it->second;
    }
  }
  const Dataset data = build_dataset(task);
  std::optional<ClassifierModel> teacher;
  if (!cache.empty() && std::filesystem::exists(cache)) {
    ClassifierModel loaded = load_model(cache);
    if (loaded.provenance().run_id == key) teacher = std::move(loaded);
  }
  if (!teacher) {
    ClassifierModel init = ClassifierModel::init(teacher_spec(task, data), task.teacher_seed);
    teacher = train_supervised(std::move(init), data, tcfg).model;
    teacher->set_run_id(key);
    if (!cache.empty()) save_model(*teacher, cache);
  }
  std::lock_guard lock(teacher_mutex());
  teacher_memo().emplace(key, *teacher);
  return *teacher;
}

double mean_bss_perturbation_norm(const ClassifierModel& teacher, const Split& split, const AttackConfig& attack,
                                  std::size_t limit, std::uint64_t seed) {
  const auto pred = teacher.predict_batch(split.inputs);
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> rows, bases, targets;
  const std::size_t k = teacher.num_classes();
  for (std::size_t i = 0; i < split.size() && rows.size() < limit; ++i) {
    if (pred[i] != split.labels[i]) continue;
    std::size_t t = std::uniform_int_distribution<std::size_t>(0, k - 2)(rng);
    if (t >= split.labels[i]) ++t;
    rows.push_back(i);
    bases.push_back(split.labels[i]);
    targets.push_back(t);
  }
  if (rows.empty()) return 0.0;
  const auto res = find_bss_batch(teacher, split.inputs.gather_rows(rows), bases, targets, attack);
  double s = 0.0;
  std::size_t n = 0;
  for (const auto& r : res) {
    if (!r.succeeded()) continue;
    s += l2_norm(r.perturbation);
    ++n;
  }
  return n ? s / static_cast<double>(n) : 0.0;
}

namespace {

Split evaluation_subset(const Split& test, std::size_t n) {
  if (n == 0 || n >= test.size()) return test;
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < n; ++i) idx.push_back(i * test.size() / n);
  Split s;
  s.inputs = test.inputs.gather_rows(idx);
  for (std::size_t i : idx) s.labels.push_back(test.labels[i]);
  return s;
}

std::string cell_stem(const CellSpec& cell) {
  std::ostringstream os;
  os << cell.recipe << '_' << cell.variant.name << "_s" << cell.seed << "_f" << static_cast<int>(std::lround(cell.fraction * 100));
  return os.str();
}

ExperimentResult run_cell_impl(const CellSpec& cell, const ClassifierModel* teacher_in,
                               const std::filesystem::path& output_dir, ClassifierModel* trained_out) {
  const auto started = std::chrono::steady_clock::now();
  const Dataset full = build_dataset(cell.task);
  std::optional<ClassifierModel> owned;
  if (!teacher_in) owned = obtain_teacher(cell.task, cell.distill);
  const ClassifierModel& teacher = teacher_in ? *teacher_in : *owned;

  const Dataset data = cell.fraction < 1.0 ? subsample(full, cell.fraction, cell.seed) : full;

  DistillConfig cfg = cell.distill;
  cfg.method = cell.variant.method;
  cfg.selection = cell.variant.selection;
  cfg.target = cell.variant.target;
  cfg.sample_kind = cell.variant.sample_kind;
  cfg.seed = cell.seed;
  if (cfg.sample_kind == SampleKind::RandomNoise && cfg.alt.noise_norm <= 0.0) {
    cfg.alt.noise_norm = mean_bss_perturbation_norm(teacher, data.train, cfg.attack, 512, cell.seed);
  }

  ClassifierModel student = ClassifierModel::init(student_spec(cell.task, data), cell.seed);
  TrainResult tr = train(teacher, std::move(student), data, cfg);

  ExperimentResult r;
  r.recipe = cell.recipe;
  r.method = cell.variant.name;
  r.seed = cell.seed;
  r.fraction = cell.fraction;
  r.train_accuracy = accuracy(tr.model, data.train);
  r.test_accuracy = accuracy(tr.model, data.test);
  r.teacher_test_accuracy = accuracy(teacher, data.test);
  std::size_t attempted = 0, succeeded = 0;
  for (const auto& e : tr.log) {
    attempted += e.loss.attempted;
    succeeded += e.loss.succeeded;
  }
  r.attack_success_rate = attempted ? static_cast<double>(succeeded) / static_cast<double>(attempted) : 0.0;
  if (cell.measure_similarity) {
    const SimilarityReport rep =
        compare_classifiers(teacher, tr.model, evaluation_subset(data.test, cell.similarity_samples), cell.similarity_attack);
    r.similarity_pairs = rep.pairs_included;
    if (rep.pairs_included > 0) {
      r.magsim = rep.magsim;
      r.angsim = rep.angsim;
    }
  }
  r.config_snapshot = to_json(cell);
  r.runtime_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

  if (!output_dir.empty()) {
    std::ostringstream log;
    write_training_log_csv(log, tr.log);
    write_file_atomic(output_dir / (cell_stem(cell) + "_log.csv"), log.str());
  }
  if (trained_out) *trained_out = std::move(tr.model);
  return r;
}

}  // namespace

ExperimentResult run_cell(const CellSpec& cell, const ClassifierModel* teacher, const std::filesystem::path& output_dir,
                          ClassifierModel* trained) {
  return run_cell_impl(cell, teacher, output_dir, trained);
}

ExperimentResult replay(const std::string& config_snapshot) { return run_cell(cell_from_json(config_snapshot)); }

// ---------------------------------------------------------------------------
// Recipes.

std::vector<std::string> recipe_names() { return {"main", "sweep", "similarity", "attacks", "ablation", "grid-dump"}; }

std::vector<CellSpec> plan_recipe(const std::string& recipe, const ExperimentConfig& config) {
  std::vector<std::string> variants = config.variants;
  std::vector<double> fractions{1.0};
  bool similarity = false;
  std::vector<std::uint64_t> seeds = config.seeds;
  if (recipe == "main") {
    if (variants.empty()) variants = {"original", "hinton", "bss"};
  } else if (recipe == "sweep") {
    if (variants.empty()) variants = {"original", "bss"};
    fractions = config.fractions;
  } else if (recipe == "similarity") {
    if (variants.empty()) variants = {"original", "hinton", "bss"};
    similarity = true;
  } else if (recipe == "attacks") {
    if (variants.empty()) variants = {"original", "random-noise", "fgsm", "deepfool", "l2-minimize", "bss"};
  } else if (recipe == "ablation") {
    if (variants.empty()) variants = {"bss", "all-selection", "random-selection", "random-target", "original"};
  } else if (recipe == "grid-dump") {
    if (variants.empty()) variants = {"original", "hinton", "bss"};
    if (!seeds.empty()) seeds.resize(1);
  } else {
    throw ValidationError("unknown recipe '" + recipe + "'");
  }
  if (seeds.empty()) throw ValidationError("recipe needs at least one seed");
  for (double f : fractions) {
    if (!(f > 0.0 && f <= 1.0)) throw ValidationError("fractions must lie in (0, 1]");
  }

  std::vector<CellSpec> cells;
  for (double f : fractions)
    for (const auto& name : variants)
      for (std::uint64_t s : seeds) {
        CellSpec c;
        c.recipe = recipe;
        c.variant = variant_by_name(name);
        c.seed = s;
        c.fraction = f;
        c.measure_similarity = similarity;
        c.task = config.task;
        c.distill = config.distill;
        c.similarity_attack = config.similarity_attack;
        c.similarity_samples = config.similarity_samples;
        cells.push_back(std::move(c));
      }
  return cells;
}

std::vector<ExperimentResult> run_experiment(const std::string& recipe, const ExperimentConfig& config,
                                             const ProgressFn& progress) {
  const auto cells = plan_recipe(recipe, config);
  const ClassifierModel teacher = obtain_teacher(config.task, config.distill, config.teacher_cache);
  std::vector<ExperimentResult> results;
  std::vector<std::pair<std::string, ClassifierModel>> trained;
  for (const auto& cell : cells) {
    ClassifierModel model = teacher;
    results.push_back(run_cell_impl(cell, &teacher, config.output_dir, recipe == "grid-dump" ? &model : nullptr));
    if (recipe == "grid-dump") trained.emplace_back(cell.variant.name, std::move(model));
    if (progress) progress(results.back());
  }
  if (recipe == "grid-dump") {
    if (teacher.spec().input_shape != Shape{2}) throw ValidationError("grid-dump needs a 2-D input task");
    std::vector<std::pair<std::string, const ClassifierModel*>> models{{"teacher", &teacher}};
    for (const auto& [name, m] : trained) models.emplace_back(name, &m);
    std::ostringstream os;
    write_grid_dump(os, models, config.grid_resolution, config.grid_extent);
    const auto dir = config.output_dir.empty() ? std::filesystem::path(".") : config.output_dir;
    write_file_atomic(dir / "grid.csv", os.str());
  }
  return results;
}

std::vector<Aggregate> aggregate(const std::vector<ExperimentResult>& results) {
  std::vector<Aggregate> out;
  std::vector<std::vector<double>> acc, mag, ang;
  for (const auto& r : results) {
    std::size_t i = 0;
    while (i < out.size() && !(out[i].method == r.method && out[i].fraction == r.fraction)) ++i;
    if (i == out.size()) {
      out.push_back({r.method, r.fraction, 0, 0.0, 0.0, {}, {}});
      acc.emplace_back();
      mag.emplace_back();
      ang.emplace_back();
    }
    acc[i].push_back(r.test_accuracy);
    if (r.magsim) mag[i].push_back(*r.magsim);
    if (r.angsim) ang[i].push_back(*r.angsim);
  }
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i].runs = acc[i].size();
    out[i].mean_accuracy = stats::mean(acc[i]);
    out[i].stddev_accuracy = stats::stddev(acc[i]);
    if (!mag[i].empty()) out[i].mean_magsim = stats::mean(mag[i]);
    if (!ang[i].empty()) out[i].mean_angsim = stats::mean(ang[i]);
  }
  return out;
}

void write_grid_dump(std::ostream& out, std::span<const std::pair<std::string, const ClassifierModel*>> models,
                     std::size_t resolution, double extent) {
  if (resolution < 2) throw ValidationError("grid-dump: resolution must be at least 2");
  Tensor grid(Shape{resolution * resolution, 2});
  for (std::size_t i = 0; i < resolution; ++i)
    for (std::size_t j = 0; j < resolution; ++j) {
      const std::size_t r = i * resolution + j;
      grid[r * 2] = -extent + 2.0 * extent * static_cast<double>(j) / static_cast<double>(resolution - 1);
      grid[r * 2 + 1] = -extent + 2.0 * extent * static_cast<double>(i) / static_cast<double>(resolution - 1);
    }
  const std::size_t k = models.empty() ? 0 : models.front().second->num_classes();
  out << "x,y,model";
  for (std::size_t c = 0; c < k; ++c) out << ",logit_" << c;
  out << '\n';
  const auto prec = out.precision(10);
  for (const auto& [name, model] : models) {
    const Tensor z = model->logits(grid);
    for (std::size_t r = 0; r < grid.rows(); ++r) {
      out << grid[r * 2] << ',' << grid[r * 2 + 1] << ',' << name;
      for (std::size_t c = 0; c < k; ++c) out << ',' << z[r * k + c];
      out << '\n';
    }
  }
  out.precision(prec);
}

void write_results_json(std::ostream& out, const std::vector<ExperimentResult>& results,
                        const std::vector<Aggregate>& aggregates) {
  json rows = json::array();
  for (const auto& r : results) {
    json j{{"recipe", r.recipe},
           {"method", r.method},
           {"seed", r.seed},
           {"fraction", r.fraction},
           {"train_accuracy", r.train_accuracy},
           {"test_accuracy", r.test_accuracy},
           {"teacher_test_accuracy", r.teacher_test_accuracy},
           {"attack_success_rate", r.attack_success_rate},
           {"similarity_pairs", r.similarity_pairs},
           {"runtime_seconds", r.runtime_seconds},
           {"config", json::parse(r.config_snapshot)}};
    if (r.magsim) j["magsim"] = *r.magsim;
    if (r.angsim) j["angsim"] = *r.angsim;
    rows.push_back(std::move(j));
  }
  json aggs = json::array();
  for (const auto& a : aggregates) {
    json j{{"method", a.method},
           {"fraction", a.fraction},
           {"runs", a.runs},
           {"mean_accuracy", a.mean_accuracy},
           {"stddev_accuracy", a.stddev_accuracy}};
    if (a.mean_magsim) j["mean_magsim"] = *a.mean_magsim;
    if (a.mean_angsim) j["mean_angsim"] = *a.mean_angsim;
    aggs.push_back(std::move(j));
  }
  out << json{{"results", rows}, {"aggregates", aggs}}.dump(2) << '\n';
}

void write_results_csv(std::ostream& out, const std::vector<ExperimentResult>& results) {
  out << "recipe,method,seed,fraction,train_acc,test_acc,teacher_test_acc,magsim,angsim,attack_success_rate,runtime_s\n";
  const auto prec = out.precision(10);
  for (const auto& r : results) {
    out << r.recipe << ',' << r.method << ',' << r.seed << ',' << r.fraction << ',' << r.train_accuracy << ','
        << r.test_accuracy << ',' << r.teacher_test_accuracy << ',';
    if (r.magsim) out << *r.magsim;
    out << ',';
    if (r.angsim) out << *r.angsim;
    out << ',' << r.attack_success_rate << ',' << r.runtime_seconds << '\n';
  }
  out.precision(prec);
}

}  // namespace bssd
